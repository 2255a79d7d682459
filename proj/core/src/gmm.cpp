#include "d3ood/error.hpp"
#include "d3ood/toydiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace d3ood::toy {

namespace {

/// One diffused component with its log mixture weight (class prior folded in).
struct DiffusedComponent {
  int class_index = 0;
  double log_weight = 0.0;
  Point mean;
  double variance = 1.0;
};

std::vector<DiffusedComponent> diffuse(const GmmSpec& spec, double alpha_bar, std::optional<int> class_condition) {
  const double scale = std::sqrt(alpha_bar);
  std::vector<DiffusedComponent> out;
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    if (class_condition && *class_condition != static_cast<int>(c)) continue;
    const auto& cls = spec.classes[c];
    const double log_prior = class_condition ? 0.0 : std::log(cls.prior);
    for (const auto& comp : cls.components) {
      DiffusedComponent d;
      d.class_index = static_cast<int>(c);
      d.log_weight = log_prior + std::log(comp.weight);
      d.mean.resize(comp.mean.size());
      for (std::size_t j = 0; j < comp.mean.size(); ++j) d.mean[j] = scale * comp.mean[j];
      d.variance = alpha_bar * comp.variance + (1.0 - alpha_bar);
      out.push_back(std::move(d));
    }
  }
  return out;
}

/// log w_i + log N(x; m_i, v_i I) for every diffused component.
std::vector<double> joint_log_terms(std::span<const double> x, const std::vector<DiffusedComponent>& comps) {
  const double d = static_cast<double>(x.size());
  std::vector<double> terms(comps.size());
  for (std::size_t i = 0; i < comps.size(); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double diff = x[j] - comps[i].mean[j];
      sq += diff * diff;
    }
    terms[i] = comps[i].log_weight - 0.5 * d * std::log(2.0 * std::numbers::pi * comps[i].variance) -
               0.5 * sq / comps[i].variance;
  }
  return terms;
}

double log_sum(const std::vector<double>& terms) {
  const double peak = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - peak);
  return peak + std::log(acc);
}

void check_class(const GmmSpec& spec, int class_index) {
  if (class_index < 0 || class_index >= static_cast<int>(spec.num_classes())) {
    throw UsageError("class index " + std::to_string(class_index) + " out of range");
  }
}

void check_point(const GmmSpec& spec, std::span<const double> x) {
  if (x.size() != spec.dim()) throw DataError("point dimension does not match the mixture");
}

}  // namespace

std::size_t GmmSpec::dim() const {
  if (classes.empty() || classes.front().components.empty()) return 0;
  return classes.front().components.front().mean.size();
}

void GmmSpec::validate() const {
  if (classes.size() < 2) throw UsageError("mixture needs at least 2 classes");
  const auto d = dim();
  if (d == 0) throw UsageError("mixture needs a non-empty first component");
  double prior_sum = 0.0;
  for (const auto& cls : classes) {
    if (!(cls.prior > 0.0)) throw UsageError("class priors must be positive");
    prior_sum += cls.prior;
    if (cls.components.empty()) throw UsageError("every class needs a component");
    double weight_sum = 0.0;
    for (const auto& comp : cls.components) {
      if (!(comp.weight > 0.0)) throw UsageError("component weights must be positive");
      if (!(comp.variance > 0.0)) throw UsageError("component variances must be positive");
      if (comp.mean.size() != d) throw UsageError("component dimensions differ");
      weight_sum += comp.weight;
    }
    if (std::abs(weight_sum - 1.0) > 1e-9) throw UsageError("component weights of a class must sum to 1");
  }
  if (std::abs(prior_sum - 1.0) > 1e-9) throw UsageError("class priors must sum to 1");
}

GmmSpec default_ind_spec() {
  constexpr int kClasses = 3;
  constexpr double kRadius = 2.5;
  constexpr double kSigma = 0.5;
  GmmSpec spec;
  for (int c = 0; c < kClasses; ++c) {
    ClassMixture cls;
    cls.prior = 1.0 / kClasses;
    // Each class owns two adjacent points of a hexagon.
    for (int k : {2 * c, 2 * c + 1}) {
      const double angle = 2.0 * std::numbers::pi * k / (2 * kClasses);
      cls.components.push_back({0.5, {kRadius * std::cos(angle), kRadius * std::sin(angle)}, kSigma * kSigma});
    }
    spec.classes.push_back(std::move(cls));
  }
  return spec;
}

GmmSpec shifted_spec(const GmmSpec& spec, std::span<const double> shift, double variance_scale) {
  if (shift.size() != spec.dim()) throw UsageError("shift dimension does not match the mixture");
  if (!(variance_scale > 0.0)) throw UsageError("variance scale must be positive");
  GmmSpec out = spec;
  for (auto& cls : out.classes) {
    for (auto& comp : cls.components) {
      for (std::size_t j = 0; j < shift.size(); ++j) comp.mean[j] += shift[j];
      comp.variance *= variance_scale;
    }
  }
  return out;
}

GmmSpec default_ood_spec() {
  const double shift[] = {5.0, 5.0};
  return shifted_spec(default_ind_spec(), shift, 1.5);
}

LabeledPoints sample_gmm(const GmmSpec& spec, std::size_t n, std::uint64_t seed, std::uint32_t split) {
  spec.validate();
  LabeledPoints out;
  out.points.reserve(n);
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng(seed, {split, static_cast<std::uint32_t>(i), 0xFFFFu});
    double u = rng.uniform();
    std::size_t c = 0;
    while (c + 1 < spec.classes.size() && u > spec.classes[c].prior) u -= spec.classes[c++].prior;
    const auto& cls = spec.classes[c];
    double v = rng.uniform();
    std::size_t k = 0;
    while (k + 1 < cls.components.size() && v > cls.components[k].weight) v -= cls.components[k++].weight;
    const auto& comp = cls.components[k];
    const double sd = std::sqrt(comp.variance);
    Point x(comp.mean.size());
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = comp.mean[j] + sd * rng.normal();
    out.points.push_back(std::move(x));
    out.labels.push_back(static_cast<int>(c));
  }
  return out;
}

double gmm_log_density(std::span<const double> x, int t, const GmmSpec& spec, const DiffusionSchedule& schedule,
                       std::optional<int> class_condition) {
  check_point(spec, x);
  if (class_condition) check_class(spec, *class_condition);
  const auto comps = diffuse(spec, schedule.alpha_bar(t), class_condition);
  return log_sum(joint_log_terms(x, comps));
}

Point gmm_score(std::span<const double> x, int t, const GmmSpec& spec, const DiffusionSchedule& schedule,
                std::optional<int> class_condition) {
  check_point(spec, x);
  if (class_condition) check_class(spec, *class_condition);
  const auto comps = diffuse(spec, schedule.alpha_bar(t), class_condition);
  const auto terms = joint_log_terms(x, comps);
  const double total = log_sum(terms);
  Point score(x.size(), 0.0);
  for (std::size_t i = 0; i < comps.size(); ++i) {
    const double resp = std::exp(terms[i] - total);
    for (std::size_t j = 0; j < x.size(); ++j) score[j] += resp * (comps[i].mean[j] - x[j]) / comps[i].variance;
  }
  return score;
}

Point class_log_posterior_gradient(std::span<const double> x, int t, const GmmSpec& spec,
                                   const DiffusionSchedule& schedule, int class_index) {
  auto conditional = gmm_score(x, t, spec, schedule, class_index);
  const auto marginal = gmm_score(x, t, spec, schedule);
  for (std::size_t j = 0; j < conditional.size(); ++j) conditional[j] -= marginal[j];
  return conditional;
}

std::vector<double> class_posterior(std::span<const double> x, int t, const GmmSpec& spec,
                                    const DiffusionSchedule& schedule) {
  check_point(spec, x);
  const auto comps = diffuse(spec, schedule.alpha_bar(t), std::nullopt);
  const auto terms = joint_log_terms(x, comps);
  const double total = log_sum(terms);
  std::vector<double> posterior(spec.num_classes(), 0.0);
  for (std::size_t i = 0; i < comps.size(); ++i) {
    posterior[static_cast<std::size_t>(comps[i].class_index)] += std::exp(terms[i] - total);
  }
  return posterior;
}

}  // namespace d3ood::toy
