#pragma once

#include "d3ood/repr_store.hpp"

#include <span>
#include <string_view>
#include <vector>

namespace d3ood::rectify {

enum class Mode { None, React, Vra };

std::string_view to_string(Mode mode) noexcept;
Mode parse_mode(std::string_view name);

/// Which side of a pair gets its features truncated before scoring.
enum class RemovalTarget { Generation, Input, Both, None };

std::string_view to_string(RemovalTarget target) noexcept;
RemovalTarget parse_removal_target(std::string_view name);

struct RectifyConfig {
  Mode mode = Mode::React;
  double c = 0.1;
  double alpha = 0.1;
  double beta = 0.5;

  /// Throws UsageError unless alpha < beta (checked for Mode::Vra only).
  void validate() const;
};

/// Elementwise min(h_i, c).
std::vector<double> react_clip(std::span<const double> h, double c);

/// 0 below alpha, identity on [alpha, beta], beta above.
std::vector<double> vra_clip(std::span<const double> h, double alpha, double beta);

struct RectifiedOutputs {
  std::vector<double> features;
  std::vector<double> logits;
};

/// Clips the record's features per cfg and re-projects them through the
/// head. Mode::None keeps the features and still recomputes the logits.
RectifiedOutputs rectified_outputs(const RepresentationRecord& record, const ClassifierHead& head,
                                   const RectifyConfig& cfg);

/// Linear-interpolated percentile (q in [0, 100]) of the given values.
double percentile(std::vector<double> values, double q);

/// Clip levels derived from InD features pooled over all coordinates:
/// c and beta at the 90th percentile, alpha at the 10th.
RectifyConfig percentile_clip_levels(std::span<const RepresentationRecord> ind_records, Mode mode);

}  // namespace d3ood::rectify
