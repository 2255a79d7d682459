#include "d3ood/error.hpp"
#include "d3ood/eval.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <tuple>

namespace d3ood::eval {

void SweepGrid::validate() const {
  if (size() == 0) throw UsageError("sweep grid has an empty axis");
  for (double l : lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw UsageError("sweep lambda values must lie in [0, 1]");
  }
  for (int t : time_steps) {
    if (t < 1) throw UsageError("sweep time steps must be >= 1");
  }
}

detectors::D3Config toy_d3_config(const toy::Benchmark& bench, rectify::Mode mode, rectify::RemovalTarget target,
                                  double lambda) {
  detectors::D3Config cfg;
  cfg.lambda = lambda;
  cfg.removal_target = target;
  if (mode == rectify::Mode::None) {
    cfg.rectify.mode = rectify::Mode::None;
  } else {
    cfg.rectify = rectify::percentile_clip_levels(bench.bank, mode);
  }
  return cfg;
}

EvalReport evaluate_d3(const toy::ToyPipeline& pipeline, const detectors::D3Config& cfg) {
  const auto& bench = pipeline.benchmark;
  const auto& head = pipeline.classifier.head;
  const auto stats = detectors::calibrate(bench.calibration.pairs, head, cfg);
  std::vector<double> ind;
  std::vector<double> ood;
  for (const auto& p : bench.ind_test.pairs) ind.push_back(detectors::d3_score(p, head, cfg, stats).score);
  for (const auto& p : bench.ood_test.pairs) ood.push_back(detectors::d3_score(p, head, cfg, stats).score);
  return evaluate("d3", bench.ood_test.name, ind, ood);
}

std::vector<SweepResult> sweep(const SweepGrid& grid, const toy::ToyPipelineConfig& base) {
  grid.validate();
  std::vector<SweepResult> results;
  results.reserve(grid.size());
  const double guided_scale = base.sampler.guidance_scale > 0.0 ? base.sampler.guidance_scale : 1.0;
  for (int T : grid.time_steps) {
    for (bool conditional : grid.conditional) {
      auto cfg = base;
      cfg.T = T;
      cfg.sampler.guidance_scale = conditional ? guided_scale : 0.0;
      // t_start follows T unless pinned below it.
      if (cfg.sampler.t_start > T) cfg.sampler.t_start = -1;
      const auto pipeline = toy::run_toy_pipeline(cfg);
      const auto& head = pipeline.classifier.head;
      const auto& bench = pipeline.benchmark;
      for (auto mode : grid.modes) {
        for (auto target : grid.targets) {
          // Calibration does not depend on lambda; compute it once.
          const auto d3cfg = toy_d3_config(bench, mode, target, 0.5);
          const auto stats = detectors::calibrate(bench.calibration.pairs, head, d3cfg);
          std::vector<detectors::D3Components> ind_parts;
          std::vector<detectors::D3Components> ood_parts;
          for (const auto& p : bench.ind_test.pairs) ind_parts.push_back(*detectors::d3_score(p, head, d3cfg, stats).components);
          for (const auto& p : bench.ood_test.pairs) ood_parts.push_back(*detectors::d3_score(p, head, d3cfg, stats).components);
          for (double lambda : grid.lambdas) {
            std::vector<double> ind;
            std::vector<double> ood;
            for (const auto& c : ind_parts) ind.push_back(detectors::ensemble(lambda, c.eps_kl_normalized, c.eps_l2_normalized));
            for (const auto& c : ood_parts) ood.push_back(detectors::ensemble(lambda, c.eps_kl_normalized, c.eps_l2_normalized));
            SweepResult r;
            r.point = {lambda, T, mode, target, conditional};
            r.report = evaluate("d3", bench.ood_test.name, ind, ood);
            results.push_back(std::move(r));
          }
        }
      }
    }
  }
  return results;
}

void write_sweep_csv(std::span<const SweepResult> results, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  const auto num = [](double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
  };
  out << "lambda,T,rectify,removal_target,conditional,auroc,fpr95,threshold_s,n_ind,n_ood\n";
  for (const auto& r : results) {
    out << num(r.point.lambda) << ',' << r.point.T << ',' << rectify::to_string(r.point.mode) << ','
        << rectify::to_string(r.point.target) << ',' << (r.point.conditional ? 1 : 0) << ',' << num(r.report.auroc)
        << ',' << num(r.report.fpr_at_95tpr) << ',' << num(r.report.threshold_s) << ',' << r.report.n_ind << ','
        << r.report.n_ood << '\n';
  }
}

}  // namespace d3ood::eval
