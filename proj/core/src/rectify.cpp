#include "d3ood/rectify.hpp"

#include "d3ood/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace d3ood::rectify {

namespace {

void require_finite(std::span<const double> h) {
  if (!std::all_of(h.begin(), h.end(), [](double v) { return std::isfinite(v); })) {
    throw NumericalError("rectify: non-finite feature value");
  }
}

}  // namespace

std::string_view to_string(Mode mode) noexcept {
  switch (mode) {
    case Mode::None: return "none";
    case Mode::React: return "react";
    case Mode::Vra: return "vra";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  for (auto mode : {Mode::None, Mode::React, Mode::Vra}) {
    if (to_string(mode) == name) return mode;
  }
  throw UsageError("unknown rectify mode '" + std::string(name) + "' (expected none, react or vra)");
}

std::string_view to_string(RemovalTarget target) noexcept {
  switch (target) {
    case RemovalTarget::Generation: return "generation";
    case RemovalTarget::Input: return "input";
    case RemovalTarget::Both: return "both";
    case RemovalTarget::None: return "none";
  }
  return "?";
}

RemovalTarget parse_removal_target(std::string_view name) {
  for (auto t : {RemovalTarget::Generation, RemovalTarget::Input, RemovalTarget::Both, RemovalTarget::None}) {
    if (to_string(t) == name) return t;
  }
  throw UsageError("unknown removal target '" + std::string(name) + "' (expected generation, input, both or none)");
}

void RectifyConfig::validate() const {
  if (mode == Mode::Vra && !(alpha < beta)) {
    throw UsageError("vra clipping needs alpha < beta (got alpha=" + std::to_string(alpha) +
                     ", beta=" + std::to_string(beta) + ")");
  }
  if (!std::isfinite(c) || !std::isfinite(alpha) || !std::isfinite(beta)) {
    throw UsageError("rectify constants must be finite");
  }
}

std::vector<double> react_clip(std::span<const double> h, double c) {
  require_finite(h);
  std::vector<double> out(h.begin(), h.end());
  for (double& v : out) v = std::min(v, c);
  return out;
}

std::vector<double> vra_clip(std::span<const double> h, double alpha, double beta) {
  if (!(alpha < beta)) throw UsageError("vra_clip: alpha must be < beta");
  require_finite(h);
  std::vector<double> out(h.begin(), h.end());
  for (double& v : out) {
    if (v < alpha) {
      v = 0.0;
    } else if (v > beta) {
      v = beta;
    }
  }
  return out;
}

RectifiedOutputs rectified_outputs(const RepresentationRecord& record, const ClassifierHead& head,
                                   const RectifyConfig& cfg) {
  cfg.validate();
  RectifiedOutputs out;
  switch (cfg.mode) {
    case Mode::None:
      require_finite(record.features);
      out.features = record.features;
      break;
    case Mode::React: out.features = react_clip(record.features, cfg.c); break;
    case Mode::Vra: out.features = vra_clip(record.features, cfg.alpha, cfg.beta); break;
  }
  out.logits = head.logits(out.features);
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty set");
  if (!(q >= 0.0 && q <= 100.0)) throw UsageError("percentile rank must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

RectifyConfig percentile_clip_levels(std::span<const RepresentationRecord> ind_records, Mode mode) {
  std::vector<double> pooled;
  for (const auto& rec : ind_records) pooled.insert(pooled.end(), rec.features.begin(), rec.features.end());
  RectifyConfig cfg;
  cfg.mode = mode;
  const double p10 = percentile(pooled, 10.0);
  const double p90 = percentile(std::move(pooled), 90.0);
  cfg.c = p90;
  cfg.alpha = p10;
  cfg.beta = p90;
  if (mode == Mode::Vra && !(p10 < p90)) {
    throw NumericalError("InD features too concentrated for a vra band (10th == 90th percentile)");
  }
  return cfg;
}

}  // namespace d3ood::rectify
