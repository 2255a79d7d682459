#include "d3ood/error.hpp"
#include "d3ood/toydiff.hpp"

#include <cmath>
#include <string>

namespace d3ood::toy {

double DiffusionSchedule::alpha_bar(int t) const {
  if (t < 0 || t > T()) throw UsageError("time step " + std::to_string(t) + " outside [0, " + std::to_string(T()) + "]");
  return t == 0 ? 1.0 : alpha_bar_values[static_cast<std::size_t>(t - 1)];
}

double DiffusionSchedule::beta_at(int t) const {
  if (t < 1 || t > T()) throw UsageError("time step " + std::to_string(t) + " outside [1, " + std::to_string(T()) + "]");
  return beta[static_cast<std::size_t>(t - 1)];
}

DiffusionSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw UsageError("diffusion schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw UsageError("diffusion schedule needs 0 < beta_start <= beta_end < 1");
  }
  DiffusionSchedule schedule;
  schedule.beta.resize(static_cast<std::size_t>(T));
  schedule.alpha_bar_values.resize(static_cast<std::size_t>(T));
  double running = 1.0;
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
    const double b = beta_start + frac * (beta_end - beta_start);
    running *= 1.0 - b;
    schedule.beta[static_cast<std::size_t>(i)] = b;
    schedule.alpha_bar_values[static_cast<std::size_t>(i)] = running;
  }
  return schedule;
}

std::string_view to_string(Sampler sampler) noexcept { return sampler == Sampler::Ddim ? "ddim" : "ancestral"; }

Sampler parse_sampler(std::string_view name) {
  if (name == "ddim") return Sampler::Ddim;
  if (name == "ancestral") return Sampler::Ancestral;
  throw UsageError("unknown sampler '" + std::string(name) + "' (expected ddim or ancestral)");
}

Point forward_marginal_sample(std::span<const double> x0, int t, const DiffusionSchedule& schedule,
                              RngStream& rng) {
  const double ab = schedule.alpha_bar(t);
  const double mean_scale = std::sqrt(ab);
  const double sd = std::sqrt(1.0 - ab);
  Point x(x0.size());
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = mean_scale * x0[j] + sd * rng.normal();
  return x;
}

namespace {

Point guided_score(std::span<const double> x, int t, const GmmSpec& spec, const DiffusionSchedule& schedule,
                   const Guidance& guidance) {
  auto score = gmm_score(x, t, spec, schedule);
  if (guidance.active() && guidance.scale != 0.0) {
    const auto grad = class_log_posterior_gradient(x, t, spec, schedule, *guidance.class_index);
    for (std::size_t j = 0; j < score.size(); ++j) score[j] += guidance.scale * grad[j];
  }
  return score;
}

}  // namespace

Point reverse_sample(std::span<const double> x_input, const GmmSpec& spec, const DiffusionSchedule& schedule,
                     const ReverseConfig& cfg, const SampleKey& key) {
  if (x_input.size() != spec.dim()) throw DataError("reverse_sample: input dimension does not match the mixture");
  if (cfg.guidance.scale < 0.0) throw UsageError("guidance scale must be >= 0");
  if (cfg.guidance.active()) {
    const int c = *cfg.guidance.class_index;
    if (c < 0 || c >= static_cast<int>(spec.num_classes())) throw UsageError("guidance class out of range");
  }
  const int t_start = cfg.t_start < 0 ? schedule.T() : cfg.t_start;
  if (t_start > schedule.T()) throw UsageError("t_start exceeds the schedule length");
  if (t_start == 0) return Point(x_input.begin(), x_input.end());

  RngStream forward_rng(key.seed, {key.split, key.index, 0});
  Point x = forward_marginal_sample(x_input, t_start, schedule, forward_rng);

  for (int t = t_start; t >= 1; --t) {
    const auto score = guided_score(x, t, spec, schedule, cfg.guidance);
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t - 1);
    if (cfg.sampler == Sampler::Ddim) {
      // Deterministic (eta = 0) update through the predicted clean sample.
      const double noise_sd = std::sqrt(1.0 - ab);
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double eps = -noise_sd * score[j];
        const double x0 = (x[j] - noise_sd * eps) / std::sqrt(ab);
        x[j] = std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps;
      }
    } else {
      const double b = schedule.beta_at(t);
      const double posterior_var = t > 1 ? b * (1.0 - ab_prev) / (1.0 - ab) : 0.0;
      RngStream step_rng(key.seed, {key.split, key.index, static_cast<std::uint32_t>(t)});
      const double scale = 1.0 / std::sqrt(1.0 - b);
      for (std::size_t j = 0; j < x.size(); ++j) {
        x[j] = scale * (x[j] + b * score[j]);
        if (posterior_var > 0.0) x[j] += std::sqrt(posterior_var) * step_rng.normal();
      }
    }
  }
  return x;
}

}  // namespace d3ood::toy
