#include "d3ood/error.hpp"
#include "d3ood/eval.hpp"
#include "support/oracles.hpp"
#include "support/tmpdir.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

using namespace d3ood;
using namespace d3ood::eval;
using d3ood::oracle::TempDir;

namespace {

std::vector<double> iota_scores(int lo, int hi) {
  std::vector<double> v(static_cast<std::size_t>(hi - lo + 1));
  std::iota(v.begin(), v.end(), static_cast<double>(lo));
  return v;
}

std::size_t count_above(std::span<const double> v, double s) {
  return static_cast<std::size_t>(std::ranges::count_if(v, [s](double x) { return x > s; }));
}

}  // namespace

TEST(Auroc, ClosedForms) {
  EXPECT_EQ(auroc(std::vector<double>{2, 3}, std::vector<double>{0, 1}), 1.0);
  EXPECT_EQ(auroc(std::vector<double>{0, 1}, std::vector<double>{2, 3}), 0.0);
  const std::vector<double> same{1, 2, 2, 3, 5};
  EXPECT_EQ(auroc(same, same), 0.5);
  EXPECT_THROW(auroc(std::vector<double>{}, same), Error);
  EXPECT_THROW(auroc(same, std::vector<double>{}), Error);
}

TEST(Auroc, MatchesPairwiseOracle) {
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> coarse(0, 9);
  for (int trial = 0; trial < 50; ++trial) {
    auto ind = oracle::random_vector(gen, 50);
    auto ood = oracle::random_vector(gen, 50, -1.3, 0.7);
    if (trial % 2 == 1) {
      // Coarse scores force many ties.
      for (double& x : ind) x = coarse(gen);
      for (double& x : ood) x = coarse(gen) - 1;
    }
    EXPECT_NEAR(auroc(ind, ood), oracle::pairwise_auroc(ind, ood), 1e-12);
    EXPECT_EQ(auroc(ind, ood) + auroc(ood, ind), 1.0);
  }
}

TEST(FprAtTpr, SeparatedIntegers) {
  const auto ind = iota_scores(1, 100);
  const std::vector<double> ood{-3, -2, 0, 0.5};
  const auto r = fpr_at_tpr(ind, ood);
  EXPECT_EQ(count_above(ind, r.threshold_s), 95u);
  EXPECT_EQ(r.tpr, 0.95);
  EXPECT_EQ(r.fpr, 0.0);
  EXPECT_LT(r.threshold_s, 6.0);
  EXPECT_GE(r.threshold_s, 5.0);
}

TEST(FprAtTpr, SingleInDScore) {
  const auto r = fpr_at_tpr(std::vector<double>{5.0}, std::vector<double>{5.0, 4.0});
  EXPECT_LT(r.threshold_s, 5.0);
  EXPECT_EQ(r.tpr, 1.0);
  EXPECT_EQ(r.fpr, 0.5);
}

TEST(FprAtTpr, DuplicatedSetsWithinOneRankStep) {
  std::mt19937_64 gen(2);
  for (std::size_t n : {20u, 100u, 997u}) {
    const auto s = oracle::random_vector(gen, n);
    const auto r = fpr_at_tpr(s, s);
    EXPECT_LE(std::abs(r.fpr - 0.95), 1.0 / static_cast<double>(n)) << n;
  }
}

TEST(FprAtTpr, ThresholdIsMaximal) {
  std::mt19937_64 gen(3);
  std::uniform_int_distribution<int> coarse(0, 20);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 37);
    std::vector<double> ind(n);
    for (double& x : ind) x = trial % 2 ? coarse(gen) : oracle::random_vector(gen, 1)[0];
    const auto ood = oracle::random_vector(gen, 10);
    for (double target : {0.5, 0.9, 0.95, 1.0}) {
      const auto r = fpr_at_tpr(ind, ood, target);
      const double tpr = static_cast<double>(count_above(ind, r.threshold_s)) / static_cast<double>(n);
      EXPECT_EQ(r.tpr, tpr);
      EXPECT_GE(tpr, target);
      const double raised = std::nextafter(r.threshold_s, INFINITY);
      EXPECT_LT(static_cast<double>(count_above(ind, raised)) / static_cast<double>(n), target);
      EXPECT_EQ(r.fpr, static_cast<double>(count_above(ood, r.threshold_s)) / 10.0);
    }
  }
}

TEST(FprAtTpr, Errors) {
  const std::vector<double> some{1, 2};
  EXPECT_THROW(fpr_at_tpr(std::vector<double>{}, some), Error);
  EXPECT_THROW(fpr_at_tpr(some, std::vector<double>{}), Error);
  EXPECT_THROW(fpr_at_tpr(some, some, 0.0), Error);
  EXPECT_THROW(fpr_at_tpr(some, some, 1.5), Error);
}

TEST(Evaluate, InvariantUnderMonotoneTransforms) {
  std::mt19937_64 gen(4);
  const auto ind = oracle::random_vector(gen, 300, -0.5, 1.0);
  const auto ood = oracle::random_vector(gen, 200, -1.0, 0.5);
  const auto base = evaluate("d", "o", ind, ood);
  const auto transform = [](std::span<const double> v, auto f) {
    std::vector<double> out;
    for (double x : v) out.push_back(f(x));
    return out;
  };
  const auto cube = [](double x) { return x * x * x; };
  const auto expo = [](double x) { return std::exp(3.0 * x) - 7.0; };
  for (const auto& r : {evaluate("d", "o", transform(ind, cube), transform(ood, cube)),
                        evaluate("d", "o", transform(ind, expo), transform(ood, expo))}) {
    EXPECT_EQ(r.auroc, base.auroc);
    EXPECT_EQ(r.fpr_at_95tpr, base.fpr_at_95tpr);
  }
  EXPECT_EQ(base.n_ind, 300u);
  EXPECT_EQ(base.n_ood, 200u);
}

TEST(Reports, JsonRoundTripAndCsvLayout) {
  TempDir dir;
  const std::vector<EvalReport> reports{
      {"d3", "ood_a", 0.125, 0.975, 1.5, 100, 80},
      {"d3", "ood_b", 0.25, 0.9, 1.5, 100, 60},
      {"msp", "ood_a", 0.5, 0.8, 0.7, 100, 80},
      {"msp", "ood_b", 0.375, 0.85, 0.7, 100, 60},
  };
  write_report_json(reports, dir / "r.json");
  const auto back = read_report_json(dir / "r.json");
  ASSERT_EQ(back.size(), reports.size());
  for (std::size_t i = 0; i < reports.size(); ++i) {
    EXPECT_EQ(back[i].detector, reports[i].detector);
    EXPECT_EQ(back[i].ood_dataset, reports[i].ood_dataset);
    EXPECT_EQ(back[i].fpr_at_95tpr, reports[i].fpr_at_95tpr);
    EXPECT_EQ(back[i].auroc, reports[i].auroc);
    EXPECT_EQ(back[i].threshold_s, reports[i].threshold_s);
    EXPECT_EQ(back[i].n_ind, reports[i].n_ind);
    EXPECT_EQ(back[i].n_ood, reports[i].n_ood);
  }
  write_report_csv(reports, dir / "r.csv");
  std::ifstream in(dir / "r.csv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 3u);  // header plus one row per detector
  EXPECT_NE(lines[0].find("ood_a"), std::string::npos);
  EXPECT_NE(lines[0].find("ood_b"), std::string::npos);
  EXPECT_EQ(lines[1].rfind("d3,", 0), 0u);
  EXPECT_EQ(lines[2].rfind("msp,", 0), 0u);
  const auto table = render_table(reports);
  EXPECT_NE(table.find("97.50"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

toy::ToyPipelineConfig small_config() {
  toy::ToyPipelineConfig cfg;
  cfg.n_per_split = 80;
  cfg.n_bank = 200;
  cfg.n_train = 600;
  cfg.train.steps = 600;
  return cfg;
}

}  // namespace

TEST(Sweep, SingletonEqualsDirectRun) {
  const auto base = small_config();
  SweepGrid grid;
  const auto results = sweep(grid, base);
  ASSERT_EQ(results.size(), 1u);
  const auto pipeline = toy::run_toy_pipeline(base);
  const auto cfg = toy_d3_config(pipeline.benchmark, rectify::Mode::React, rectify::RemovalTarget::Generation, 0.5);
  const auto direct = evaluate_d3(pipeline, cfg);
  EXPECT_EQ(results[0].report.auroc, direct.auroc);
  EXPECT_EQ(results[0].report.fpr_at_95tpr, direct.fpr_at_95tpr);
  EXPECT_EQ(results[0].report.threshold_s, direct.threshold_s);
}

TEST(Sweep, LambdaEndpointsEqualSingleMetrics) {
  const auto base = small_config();
  SweepGrid grid;
  grid.lambdas = {0.0, 1.0};
  const auto results = sweep(grid, base);
  ASSERT_EQ(results.size(), 2u);
  EXPECT_EQ(results[0].point.lambda, 0.0);
  EXPECT_EQ(results[1].point.lambda, 1.0);

  const auto pipeline = toy::run_toy_pipeline(base);
  detectors::DetectorContext ctx;
  ctx.head = &pipeline.classifier.head;
  ctx.calibration = pipeline.benchmark.calibration.pairs;
  ctx.d3 = toy_d3_config(pipeline.benchmark, rectify::Mode::React, rectify::RemovalTarget::Generation, 0.5);
  for (const auto& [name, idx] : {std::pair{"eps_l2", 0}, std::pair{"eps_kl", 1}}) {
    const auto det = detectors::make_detector(name, ctx);
    const auto ind = score_values(detectors::score_all(*det, pipeline.benchmark.ind_test.pairs));
    const auto ood = score_values(detectors::score_all(*det, pipeline.benchmark.ood_test.pairs));
    EXPECT_NEAR(results[static_cast<std::size_t>(idx)].report.auroc, auroc(ind, ood), 1e-12) << name;
  }
}

TEST(Sweep, ElevenLambdasAreDeterministic) {
  const auto base = small_config();
  SweepGrid grid;
  grid.lambdas.clear();
  for (int i = 0; i <= 10; ++i) grid.lambdas.push_back(i / 10.0);
  const auto a = sweep(grid, base);
  const auto b = sweep(grid, base);
  ASSERT_EQ(a.size(), 11u);
  ASSERT_EQ(b.size(), 11u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].report.auroc, b[i].report.auroc);
    EXPECT_EQ(a[i].report.fpr_at_95tpr, b[i].report.fpr_at_95tpr);
    EXPECT_EQ(a[i].point.lambda, grid.lambdas[i]);
  }
}

TEST(Sweep, GridOrderAndValidation) {
  SweepGrid grid;
  grid.lambdas = {0.2, 0.8};
  grid.time_steps = {2, 6};
  EXPECT_EQ(grid.size(), 4u);
  const auto results = sweep(grid, small_config());
  ASSERT_EQ(results.size(), 4u);
  EXPECT_EQ(results[0].point.T, 2);
  EXPECT_EQ(results[1].point.T, 2);
  EXPECT_EQ(results[1].point.lambda, 0.8);
  EXPECT_EQ(results[2].point.T, 6);

  SweepGrid bad;
  bad.lambdas = {1.5};
  EXPECT_THROW(bad.validate(), UsageError);
  bad.lambdas = {};
  EXPECT_THROW(bad.validate(), UsageError);
}
