#pragma once

#include <span>
#include <string_view>
#include <vector>

namespace d3ood::metrics {

/// Every softmax output is clamped to this floor and renormalized before
/// any logarithm is taken.
inline constexpr double kProbabilityFloor = 1e-12;
/// Lower clamp for the denominator D_KL(g_x ‖ u) of the KL ratio.
inline constexpr double kDivisionGuard = 1e-12;

/// A categorical distribution over C >= 2 classes. Only constructible from
/// validated values, so every instance sums to one within 1e-9.
class ProbabilityVector {
 public:
  static ProbabilityVector from_values(std::vector<double> values);
  static ProbabilityVector uniform(std::size_t num_classes);

  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

 private:
  explicit ProbabilityVector(std::vector<double> values) : values_(std::move(values)) {}
  std::vector<double> values_;
};

/// Max-stabilized softmax, floored at kProbabilityFloor and renormalized.
ProbabilityVector softmax(std::span<const double> logits);

/// log Σ exp(z_i), max-stabilized.
double log_sum_exp(std::span<const double> logits);

/// D_KL(p ‖ q) = Σ p_i log(p_i / q_i); never negative.
double kl_div(const ProbabilityVector& p, const ProbabilityVector& q);

/// D_KL(p ‖ u) against the uniform distribution on p's classes.
double kl_to_uniform(const ProbabilityVector& p);

/// ‖h_gen/‖h_gen‖ − h_x/‖h_x‖‖₂ ∈ [0, 2]. Zero-norm input is a NumericalError.
double eps_l2(std::span<const double> h_x, std::span<const double> h_gen);

/// Cosine similarity ∈ [−1, 1]. Zero-norm input is a NumericalError.
double eps_cos(std::span<const double> h_x, std::span<const double> h_gen);

struct KlRatio {
  double value = 0.0;
  bool denominator_clamped = false;
};

/// D_KL(g_gen ‖ u) / D_KL(g_x ‖ u), with the denominator clamped to
/// kDivisionGuard. The clamp is reported rather than thrown.
KlRatio eps_kl(const ProbabilityVector& g_x, const ProbabilityVector& g_gen);

/// D_KL(g_gen ‖ g_x): the reference-free alternative to eps_kl.
double eps_kl_alt(const ProbabilityVector& g_x, const ProbabilityVector& g_gen);

enum class MetricKind { EpsL2, EpsKl, EpsKlAlt, EpsCos };

std::string_view to_string(MetricKind kind) noexcept;
MetricKind parse_metric_kind(std::string_view name);

struct MetricValue {
  MetricKind kind = MetricKind::EpsL2;
  double value = 0.0;
};

/// Evaluates one metric between the (features, logits) outputs of x and x̂.
MetricValue evaluate(MetricKind kind, std::span<const double> h_x, std::span<const double> logits_x,
                     std::span<const double> h_gen, std::span<const double> logits_gen);

}  // namespace d3ood::metrics
