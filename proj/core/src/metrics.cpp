#include "d3ood/metrics.hpp"

#include "d3ood/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace d3ood::metrics {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DataError(std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " + std::to_string(b) +
                    ")");
  }
}

double norm2(std::span<const double> v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

double checked_norm(std::span<const double> v, const char* what) {
  const double n = norm2(v);
  if (!(n > 0.0)) throw NumericalError(std::string(what) + ": zero-norm feature vector");
  return n;
}

}  // namespace

ProbabilityVector ProbabilityVector::from_values(std::vector<double> values) {
  if (values.size() < 2) throw DataError("probability vector needs C >= 2");
  double sum = 0.0;
  for (double v : values) {
    if (!(v >= 0.0) || v > 1.0) throw DataError("probability entry outside [0, 1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DataError("probability vector does not sum to 1");
  return ProbabilityVector(std::move(values));
}

ProbabilityVector ProbabilityVector::uniform(std::size_t num_classes) {
  if (num_classes < 2) throw DataError("probability vector needs C >= 2");
  return ProbabilityVector(std::vector<double>(num_classes, 1.0 / static_cast<double>(num_classes)));
}

double log_sum_exp(std::span<const double> logits) {
  if (logits.empty()) throw DataError("log_sum_exp of an empty vector");
  const double peak = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(peak)) throw NumericalError("non-finite logit");
  double acc = 0.0;
  for (double z : logits) {
    if (!std::isfinite(z)) throw NumericalError("non-finite logit");
    acc += std::exp(z - peak);
  }
  return peak + std::log(acc);
}

ProbabilityVector softmax(std::span<const double> logits) {
  if (logits.size() < 2) throw DataError("softmax needs C >= 2");
  const double lse = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::max(std::exp(logits[i] - lse), kProbabilityFloor);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return ProbabilityVector::from_values(std::move(p));
}

double kl_div(const ProbabilityVector& p, const ProbabilityVector& q) {
  require_same_size(p.size(), q.size(), "kl_div");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) acc += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(acc, 0.0);
}

double kl_to_uniform(const ProbabilityVector& p) { return kl_div(p, ProbabilityVector::uniform(p.size())); }

double eps_l2(std::span<const double> h_x, std::span<const double> h_gen) {
  require_same_size(h_x.size(), h_gen.size(), "eps_l2");
  const double nx = checked_norm(h_x, "eps_l2");
  const double ng = checked_norm(h_gen, "eps_l2");
  double acc = 0.0;
  for (std::size_t i = 0; i < h_x.size(); ++i) {
    const double d = h_gen[i] / ng - h_x[i] / nx;
    acc += d * d;
  }
  return std::min(std::sqrt(acc), 2.0);
}

double eps_cos(std::span<const double> h_x, std::span<const double> h_gen) {
  require_same_size(h_x.size(), h_gen.size(), "eps_cos");
  const double nx = checked_norm(h_x, "eps_cos");
  const double ng = checked_norm(h_gen, "eps_cos");
  const double dot = std::inner_product(h_x.begin(), h_x.end(), h_gen.begin(), 0.0);
  return std::clamp(dot / (nx * ng), -1.0, 1.0);
}

KlRatio eps_kl(const ProbabilityVector& g_x, const ProbabilityVector& g_gen) {
  require_same_size(g_x.size(), g_gen.size(), "eps_kl");
  const double numerator = kl_to_uniform(g_gen);
  const double denominator = kl_to_uniform(g_x);
  if (denominator < kDivisionGuard) return {numerator / kDivisionGuard, true};
  return {numerator / denominator, false};
}

double eps_kl_alt(const ProbabilityVector& g_x, const ProbabilityVector& g_gen) { return kl_div(g_gen, g_x); }

std::string_view to_string(MetricKind kind) noexcept {
  switch (kind) {
    case MetricKind::EpsL2: return "eps_l2";
    case MetricKind::EpsKl: return "eps_kl";
    case MetricKind::EpsKlAlt: return "eps_kl_alt";
    case MetricKind::EpsCos: return "eps_cos";
  }
  return "?";
}

MetricKind parse_metric_kind(std::string_view name) {
  for (auto kind : {MetricKind::EpsL2, MetricKind::EpsKl, MetricKind::EpsKlAlt, MetricKind::EpsCos}) {
    if (to_string(kind) == name) return kind;
  }
  throw UsageError("unknown metric '" + std::string(name) + "'");
}

MetricValue evaluate(MetricKind kind, std::span<const double> h_x, std::span<const double> logits_x,
                     std::span<const double> h_gen, std::span<const double> logits_gen) {
  switch (kind) {
    case MetricKind::EpsL2: return {kind, eps_l2(h_x, h_gen)};
    case MetricKind::EpsCos: return {kind, eps_cos(h_x, h_gen)};
    case MetricKind::EpsKl: return {kind, eps_kl(softmax(logits_x), softmax(logits_gen)).value};
    case MetricKind::EpsKlAlt: return {kind, eps_kl_alt(softmax(logits_x), softmax(logits_gen))};
  }
  return {kind, 0.0};
}

}  // namespace d3ood::metrics
