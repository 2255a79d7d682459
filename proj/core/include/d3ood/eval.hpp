#pragma once

#include "d3ood/detectors.hpp"
#include "d3ood/rectify.hpp"
#include "d3ood/toydiff.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace d3ood::eval {

struct EvalReport {
  std::string detector;
  std::string ood_dataset;
  double fpr_at_95tpr = 0.0;
  double auroc = 0.0;
  double threshold_s = 0.0;
  std::size_t n_ind = 0;
  std::size_t n_ood = 0;
};

/// Mann-Whitney AUROC with ties credited 0.5: the probability that a random
/// InD score beats a random OoD score. O((n+m) log(n+m)).
double auroc(std::span<const double> ind_scores, std::span<const double> ood_scores);

struct FprAtTpr {
  double fpr = 0.0;
  double threshold_s = 0.0;
  double tpr = 0.0;
};

/// Picks the largest threshold s with |{ind > s}| / n_ind >= tpr_target and
/// reports the fraction of OoD scores above it.
FprAtTpr fpr_at_tpr(std::span<const double> ind_scores, std::span<const double> ood_scores,
                    double tpr_target = 0.95);

EvalReport evaluate(std::string detector, std::string ood_dataset, std::span<const double> ind_scores,
                    std::span<const double> ood_scores);

std::vector<double> score_values(std::span<const detectors::ScoreRecord> scores);

/// Delimited table mirroring the usual OoD results layout: one row per
/// detector, FPR@95 and AUROC per OoD dataset, then their averages.
void write_report_csv(std::span<const EvalReport> reports, const std::filesystem::path& path);
void write_report_json(std::span<const EvalReport> reports, const std::filesystem::path& path);
std::vector<EvalReport> read_report_json(const std::filesystem::path& path);
/// Markdown rendering of the same table with percentages.
std::string render_table(std::span<const EvalReport> reports);

// ---------------------------------------------------------------------------
// Ablation sweeps on the toy benchmark

struct SweepGrid {
  std::vector<double> lambdas{0.5};
  std::vector<int> time_steps{24};
  std::vector<rectify::Mode> modes{rectify::Mode::React};
  std::vector<rectify::RemovalTarget> targets{rectify::RemovalTarget::Generation};
  std::vector<bool> conditional{true};

  std::size_t size() const noexcept {
    return lambdas.size() * time_steps.size() * modes.size() * targets.size() * conditional.size();
  }
  void validate() const;
};

struct SweepPoint {
  double lambda = 0.5;
  int T = 24;
  rectify::Mode mode = rectify::Mode::React;
  rectify::RemovalTarget target = rectify::RemovalTarget::Generation;
  bool conditional = true;
};

struct SweepResult {
  SweepPoint point;
  EvalReport report;
};

/// D³ configuration used on the toy benchmark for one grid point: clip
/// levels from InD bank percentiles, the given mode, target and λ.
detectors::D3Config toy_d3_config(const toy::Benchmark& bench, rectify::Mode mode, rectify::RemovalTarget target,
                                  double lambda);

/// Evaluates D³ on an already-built benchmark.
EvalReport evaluate_d3(const toy::ToyPipeline& pipeline, const detectors::D3Config& cfg);

/// One report per grid point, ordered T, conditional, mode, target, λ
/// (λ innermost). Every point is generated from the same base seed so
/// contrasts between points are paired; the benchmark for each (T,
/// conditional) combination is built once.
std::vector<SweepResult> sweep(const SweepGrid& grid, const toy::ToyPipelineConfig& base);

void write_sweep_csv(std::span<const SweepResult> results, const std::filesystem::path& path);

}  // namespace d3ood::eval
