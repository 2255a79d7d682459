#include "d3ood/detectors.hpp"
#include "d3ood/eval.hpp"
#include "d3ood/metrics.hpp"
#include "d3ood/toydiff.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace d3ood;

namespace {

std::vector<double> random_vector(std::mt19937_64& gen, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(gen);
  return v;
}

ClassifierHead random_head(std::size_t m, std::size_t c) {
  ClassifierHead head;
  head.weights = Eigen::MatrixXd::Random(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(c));
  head.bias = Eigen::VectorXd::Random(static_cast<Eigen::Index>(c));
  return head;
}

RepresentationRecord record(std::mt19937_64& gen, const ClassifierHead& head, std::size_t m) {
  auto f = random_vector(gen, m);
  for (double& x : f) x = std::abs(x);
  auto z = head.logits(f);
  return {"r", std::move(f), std::move(z)};
}

}  // namespace

static void BM_Softmax(benchmark::State& state) {
  std::mt19937_64 gen(1);
  const auto z = random_vector(gen, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::softmax(z));
}
BENCHMARK(BM_Softmax)->Arg(10)->Arg(1000);

static void BM_D3Score(benchmark::State& state) {
  std::mt19937_64 gen(2);
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto head = random_head(m, 10);
  std::vector<PairedRecord> cal;
  for (int i = 0; i < 64; ++i) cal.push_back({record(gen, head, m), record(gen, head, m), {}});
  detectors::D3Config cfg;
  const auto stats = detectors::calibrate(cal, head, cfg);
  const PairedRecord pair{record(gen, head, m), record(gen, head, m), {}};
  for (auto _ : state) benchmark::DoNotOptimize(detectors::d3_score(pair, head, cfg, stats));
}
BENCHMARK(BM_D3Score)->Arg(16)->Arg(512);

static void BM_GradNorm(benchmark::State& state) {
  std::mt19937_64 gen(3);
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto head = random_head(m, 10);
  const auto rec = record(gen, head, m);
  for (auto _ : state) benchmark::DoNotOptimize(detectors::gradnorm_score(rec, head, 1.0));
}
BENCHMARK(BM_GradNorm)->Arg(16)->Arg(512);

static void BM_KnnScore(benchmark::State& state) {
  std::mt19937_64 gen(4);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < state.range(0); ++i) rows.push_back(random_vector(gen, 64));
  const auto bank = detectors::knn_fit(rows, 5);
  const RepresentationRecord q{"q", random_vector(gen, 64), {0, 0}};
  for (auto _ : state) benchmark::DoNotOptimize(detectors::knn_score(q, bank));
}
BENCHMARK(BM_KnnScore)->Arg(1000)->Arg(10000);

static void BM_VimScore(benchmark::State& state) {
  std::mt19937_64 gen(5);
  const auto head = random_head(64, 10);
  std::vector<RepresentationRecord> bank;
  for (int i = 0; i < 2000; ++i) bank.push_back(record(gen, head, 64));
  const auto model = detectors::vim_fit(bank, 32, &head);
  const auto q = record(gen, head, 64);
  for (auto _ : state) benchmark::DoNotOptimize(detectors::vim_score(q, model));
}
BENCHMARK(BM_VimScore);

static void BM_Auroc(benchmark::State& state) {
  std::mt19937_64 gen(6);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto ind = random_vector(gen, n);
  const auto ood = random_vector(gen, n);
  for (auto _ : state) benchmark::DoNotOptimize(eval::auroc(ind, ood));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Auroc)->RangeMultiplier(10)->Range(100, 100000)->Complexity(benchmark::oNLogN);

static void BM_FprAtTpr(benchmark::State& state) {
  std::mt19937_64 gen(7);
  const auto ind = random_vector(gen, 10000);
  const auto ood = random_vector(gen, 10000);
  for (auto _ : state) benchmark::DoNotOptimize(eval::fpr_at_tpr(ind, ood));
}
BENCHMARK(BM_FprAtTpr);

static void BM_GmmScore(benchmark::State& state) {
  const auto spec = toy::default_ind_spec();
  const auto sched = toy::make_schedule(24, 1e-4, 0.25);
  const std::vector<double> x{0.7, -1.3};
  for (auto _ : state) benchmark::DoNotOptimize(toy::gmm_score(x, 12, spec, sched));
}
BENCHMARK(BM_GmmScore);

static void BM_ReverseSample(benchmark::State& state) {
  const auto spec = toy::default_ind_spec();
  const auto sched = toy::make_schedule(static_cast<int>(state.range(0)), 1e-4, 0.25);
  const std::vector<double> x{0.7, -1.3};
  toy::ReverseConfig cfg;
  cfg.guidance = {1.0, 1};
  std::uint32_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(toy::reverse_sample(x, spec, sched, cfg, {0, 0, i++}));
}
BENCHMARK(BM_ReverseSample)->Arg(2)->Arg(24);
BENCHMARK_MAIN();
