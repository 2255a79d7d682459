#include "d3ood/detectors.hpp"
#include "d3ood/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace d3ood::detectors {

using rectify::RemovalTarget;

std::string flags_to_string(std::uint32_t flags) {
  std::string out;
  const auto append = [&](const char* name) {
    if (!out.empty()) out += ';';
    out += name;
  };
  if (flags & kKlDenominatorClamped) append("kl_denominator_clamped");
  if (flags & kNormalizationDegenerate) append("normalization_degenerate");
  return out;
}

std::uint32_t parse_flags(std::string_view text) {
  std::uint32_t flags = kNoFlags;
  while (!text.empty()) {
    const auto sep = text.find(';');
    const auto token = text.substr(0, sep);
    if (token == "kl_denominator_clamped") {
      flags |= kKlDenominatorClamped;
    } else if (token == "normalization_degenerate") {
      flags |= kNormalizationDegenerate;
    } else if (!token.empty()) {
      throw DataError("unknown score flag '" + std::string(token) + "'");
    }
    if (sep == std::string_view::npos) break;
    text.remove_prefix(sep + 1);
  }
  return flags;
}

void D3Config::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("lambda must lie in [0, 1]");
  rectify.validate();
}

PairOutputs pair_outputs(const PairedRecord& pair, const ClassifierHead& head, const D3Config& cfg) {
  cfg.validate();
  const bool on_input = cfg.removal_target == RemovalTarget::Input || cfg.removal_target == RemovalTarget::Both;
  const bool on_generation =
      cfg.removal_target == RemovalTarget::Generation || cfg.removal_target == RemovalTarget::Both;
  PairOutputs out;
  if (on_input) {
    auto r = rectify::rectified_outputs(pair.input, head, cfg.rectify);
    out.input_features = std::move(r.features);
    out.input_logits = std::move(r.logits);
  } else {
    out.input_features = pair.input.features;
    out.input_logits = pair.input.logits;
  }
  if (on_generation) {
    auto r = rectify::rectified_outputs(pair.generation, head, cfg.rectify);
    out.generation_features = std::move(r.features);
    out.generation_logits = std::move(r.logits);
  } else {
    out.generation_features = pair.generation.features;
    out.generation_logits = pair.generation.logits;
  }
  return out;
}

RawDisparity raw_disparity(const PairedRecord& pair, const ClassifierHead& head, const D3Config& cfg) {
  const auto out = pair_outputs(pair, head, cfg);
  const auto kl = metrics::eps_kl(metrics::softmax(out.input_logits), metrics::softmax(out.generation_logits));
  return {kl.value, metrics::eps_l2(out.input_features, out.generation_features), kl.denominator_clamped};
}

CalibrationStats calibrate(std::span<const PairedRecord> ind_pairs, const ClassifierHead& head, const D3Config& cfg) {
  if (ind_pairs.size() < 2) {
    throw UsageError("calibration needs at least 2 InD pairs (got " + std::to_string(ind_pairs.size()) + ")");
  }
  CalibrationStats stats;
  stats.count = ind_pairs.size();
  bool first = true;
  for (const auto& pair : ind_pairs) {
    const auto raw = raw_disparity(pair, head, cfg);
    if (first) {
      stats.kl_min = stats.kl_max = raw.eps_kl;
      stats.l2_min = stats.l2_max = raw.eps_l2;
      first = false;
      continue;
    }
    stats.kl_min = std::min(stats.kl_min, raw.eps_kl);
    stats.kl_max = std::max(stats.kl_max, raw.eps_kl);
    stats.l2_min = std::min(stats.l2_min, raw.eps_l2);
    stats.l2_max = std::max(stats.l2_max, raw.eps_l2);
  }
  stats.kl_degenerate = !(stats.kl_max > stats.kl_min);
  stats.l2_degenerate = !(stats.l2_max > stats.l2_min);
  return stats;
}

double normalize(double raw, double lo, double hi, bool degenerate) noexcept {
  return degenerate ? raw : (raw - lo) / (hi - lo);
}

double ensemble(double lambda, double kl_normalized, double l2_normalized) noexcept {
  return lambda / std::max(kl_normalized, kScoreFloor) + (1.0 - lambda) / std::max(l2_normalized, kScoreFloor);
}

ScoreRecord d3_score(const PairedRecord& pair, const ClassifierHead& head, const D3Config& cfg,
                     const CalibrationStats& stats) {
  const auto raw = raw_disparity(pair, head, cfg);
  D3Components parts;
  parts.eps_kl_raw = raw.eps_kl;
  parts.eps_l2_raw = raw.eps_l2;
  parts.eps_kl_normalized = normalize(raw.eps_kl, stats.kl_min, stats.kl_max, stats.kl_degenerate);
  parts.eps_l2_normalized = normalize(raw.eps_l2, stats.l2_min, stats.l2_max, stats.l2_degenerate);

  ScoreRecord rec;
  rec.id = pair.input.id;
  rec.score = ensemble(cfg.lambda, parts.eps_kl_normalized, parts.eps_l2_normalized);
  rec.components = parts;
  if (raw.kl_denominator_clamped) rec.flags |= kKlDenominatorClamped;
  if (stats.kl_degenerate || stats.l2_degenerate) rec.flags |= kNormalizationDegenerate;
  if (!std::isfinite(rec.score)) throw NumericalError("d3 score is not finite for '" + rec.id + "'");
  return rec;
}

Decision decide(double score, double threshold) noexcept {
  return score > threshold ? Decision::InD : Decision::OoD;
}

}  // namespace d3ood::detectors
