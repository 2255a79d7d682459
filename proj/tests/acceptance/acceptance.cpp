// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "cli.hpp"
#include "d3ood/detectors.hpp"
#include "d3ood/error.hpp"
#include "d3ood/eval.hpp"
#include "d3ood/metrics.hpp"
#include "d3ood/rectify.hpp"
#include "d3ood/rng.hpp"
#include "d3ood/toydiff.hpp"
#include "support/oracles.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace d3ood;
namespace fs = std::filesystem;

namespace {

class Criterion {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  void near(double got, double want, double tol, const std::string& what) {
    std::ostringstream s;
    s << what << ": got " << std::setprecision(17) << got << ", want " << want << " ± " << tol;
    expect(std::abs(got - want) <= tol, s.str());
  }
  void note(std::string text) { notes_.push_back(std::move(text)); }

  bool passed() const { return failed_ == 0 && checks_ > 0; }
  std::size_t checks() const { return checks_; }
  std::size_t failed() const { return failed_; }
  const std::vector<std::string>& failures() const { return failures_; }
  const std::vector<std::string>& notes() const { return notes_; }

 private:
  std::size_t checks_ = 0;
  std::size_t failed_ = 0;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

RepresentationRecord with_head(std::string id, std::vector<double> features, const ClassifierHead& head) {
  auto logits = head.logits(features);
  return {std::move(id), std::move(features), std::move(logits)};
}

template <class F>
void expect_throws(Criterion& c, F&& f, const std::string& what) {
  bool threw = false;
  try {
    f();
  } catch (const Error&) {
    threw = true;
  }
  c.expect(threw, what + " should raise");
}

// ---------------------------------------------------------------------------
// 1. Closed-form examples of the metric layer and the scoring functions built on it.

void metric_examples(Criterion& c) {
  using namespace metrics;
  constexpr double closed = 1e-6;
  constexpr double ident = 1e-12;

  const auto quarter = softmax(std::vector<double>{0, 0, 0, 0});
  for (double p : quarter.values()) c.near(p, 0.25, ident, "softmax zeros");
  const auto two = softmax(std::vector<double>{std::log(2.0), 0.0});
  c.near(two[0], 2.0 / 3.0, closed, "softmax [ln2,0][0]");
  c.near(two[1], 1.0 / 3.0, closed, "softmax [ln2,0][1]");

  const auto u2 = ProbabilityVector::uniform(2);
  const auto u4 = ProbabilityVector::uniform(4);
  c.near(kl_div(u4, u4), 0.0, ident, "KL(u||u)");
  const auto peaked = ProbabilityVector::from_values({1.0 - kProbabilityFloor, kProbabilityFloor});
  c.near(kl_div(peaked, u2), std::numbers::ln2, closed, "KL(peaked||u)");

  const std::vector<double> h{0.3, -1.2, 2.5};
  c.near(eps_l2(h, h), 0.0, ident, "eps_l2 identity");
  c.near(eps_l2(std::vector<double>{1, 0}, std::vector<double>{0, 1}), std::numbers::sqrt2, closed, "eps_l2 orthogonal");
  c.near(eps_l2(h, std::vector<double>{3.7 * h[0], 3.7 * h[1], 3.7 * h[2]}), 0.0, ident, "eps_l2 scale invariance");
  expect_throws(c, [] { eps_l2(std::vector<double>{0, 0}, std::vector<double>{1, 0}); }, "eps_l2 zero norm");

  const auto g = softmax(std::vector<double>{1.5, -0.3, 0.2});
  c.near(eps_kl(g, ProbabilityVector::uniform(3)).value, 0.0, ident, "eps_kl g_gen = u");
  c.near(eps_kl(g, g).value, 1.0, ident, "eps_kl equal");
  c.near(eps_kl_alt(g, g), 0.0, ident, "eps_kl_alt equal");
  c.near(eps_kl_alt(u2, peaked), std::numbers::ln2, closed, "eps_kl_alt closed form");
  c.expect(eps_kl(u2, peaked).denominator_clamped, "eps_kl flags a uniform g_x");

  c.near(eps_cos(h, h), 1.0, ident, "eps_cos equal");
  c.near(eps_cos(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0, ident, "eps_cos orthogonal");

  // Rectification.
  c.expect(rectify::react_clip(std::vector<double>{0.05, 0.2, -1}, 0.1) == std::vector<double>{0.05, 0.1, -1},
           "react_clip example");
  c.expect(rectify::vra_clip(std::vector<double>{0.05, 0.3, 0.9}, 0.1, 0.5) == std::vector<double>{0, 0.3, 0.5},
           "vra_clip example");

  // Scoring functions.
  c.near(detectors::msp_score({"u", {}, {0, 0, 0, 0}}), 0.25, ident, "msp uniform");
  c.near(detectors::msp_score({"d", {}, {1000, 0, 0, 0}}), 1.0, 1e-9, "msp saturated");
  c.near(detectors::energy_score({"z", {}, {0, 0, 0, 0}}), std::log(4.0), closed, "energy zeros");
  c.near(detectors::energy_score({"a", {}, {1.25, -0.5, 3.0}}) + 2.0, detectors::energy_score({"b", {}, {3.25, 1.5, 5.0}}),
         ident, "energy shift");
  c.near(detectors::mls_score({"m", {}, {1, 2, 3}}), 3.0, ident, "mls");
  c.near(detectors::ensemble(0.5, 0.5, 0.25), 3.0, ident, "ensemble arithmetic");
  c.expect(detectors::decide(0.9, 0.5) == detectors::Decision::InD, "decide above");
  c.expect(detectors::decide(0.5, 0.5) == detectors::Decision::OoD, "decide boundary");

  const auto bank = detectors::knn_fit(std::vector<std::vector<double>>{{1, 0}, {0, 1}}, 2);
  c.near(detectors::knn_score({"q", {1, 0}, {0, 0}}, bank), -std::numbers::sqrt2, closed, "knn closed form");
  const auto self = detectors::knn_fit(std::vector<std::vector<double>>{{1, 2}, {3, 1}}, 1);
  c.near(detectors::knn_score({"q", {3, 1}, {0, 0}}, self), 0.0, ident, "knn self");

  c.near(eval::auroc(std::vector<double>{2, 3}, std::vector<double>{0, 1}), 1.0, ident, "auroc separated");
  c.near(eval::auroc(std::vector<double>{1, 2, 2}, std::vector<double>{1, 2, 2}), 0.5, ident, "auroc identical");
  const auto single = eval::fpr_at_tpr(std::vector<double>{5.0}, std::vector<double>{1.0});
  c.expect(single.threshold_s < 5.0 && single.tpr == 1.0, "fpr@95 single InD score");

  const auto s2 = toy::make_schedule(2, 0.1, 0.2);
  c.near(s2.alpha_bar(1), 0.9, ident, "alpha_bar 1");
  c.near(s2.alpha_bar(2), 0.72, ident, "alpha_bar 2");
}

// ---------------------------------------------------------------------------
// 2. Optimized implementations against exhaustive or dense references.

void oracle_equivalence(Criterion& c) {
  std::mt19937_64 gen(2024);

  std::size_t knn_instances = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + static_cast<std::size_t>(trial % 9);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 150; ++i) rows.push_back(oracle::random_vector(gen, m));
    const std::size_t k = 1 + static_cast<std::size_t>(trial % 25);
    const auto bank = detectors::knn_fit(rows, k);
    for (int q = 0; q < 5; ++q) {
      const auto query = oracle::random_vector(gen, m);
      c.expect(detectors::knn_score({"q", query, {0, 0}}, bank) == oracle::knn_bruteforce(query, rows, k),
               "knn exact, trial " + std::to_string(trial));
      ++knn_instances;
    }
  }

  std::uniform_int_distribution<int> coarse(0, 12);
  for (int trial = 0; trial < 100; ++trial) {
    auto ind = oracle::random_vector(gen, 40 + static_cast<std::size_t>(trial), -1.0, 1.2);
    auto ood = oracle::random_vector(gen, 30 + static_cast<std::size_t>(trial % 17), -1.4, 0.8);
    if (trial % 2) {
      for (double& x : ind) x = coarse(gen);
      for (double& x : ood) x = coarse(gen) - 2;
    }
    c.near(eval::auroc(ind, ood), oracle::pairwise_auroc(ind, ood), 1e-12, "auroc trial " + std::to_string(trial));
  }

  double worst_vim = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 4 + static_cast<std::size_t>(trial % 5);
    const std::size_t cls = 3;
    const auto head = oracle::random_head(gen, m, cls);
    std::vector<RepresentationRecord> bank;
    for (int i = 0; i < 80; ++i) {
      auto f = oracle::random_vector(gen, m);
      for (std::size_t j = 0; j < m; ++j) f[j] *= static_cast<double>(j + 1);
      bank.push_back(with_head("b", std::move(f), head));
    }
    const std::size_t dim = m / 2;
    const auto model = detectors::vim_fit(bank, dim, trial % 2 ? &head : nullptr);
    std::vector<std::vector<double>> rows;
    for (const auto& r : bank) rows.push_back(r.features);
    for (int q = 0; q < 3; ++q) {
      const auto query = oracle::random_vector(gen, m, -3.0, 3.0);
      const double diff = std::abs(detectors::vim_residual_norm(query, model) -
                                   oracle::vim_residual_oracle(rows, query, dim, model.offset));
      worst_vim = std::max(worst_vim, diff);
      c.expect(diff <= 1e-8, "vim trial " + std::to_string(trial));
    }
  }
  std::ostringstream s;
  s << knn_instances << " knn queries, 100 auroc sets, 300 vim queries; worst vim diff " << std::scientific
    << std::setprecision(2) << worst_vim;
  c.note(s.str());
}

// ---------------------------------------------------------------------------
// 3. Analytic gradients against central finite differences.

void gradient_checks(Criterion& c) {
  std::mt19937_64 gen(77);
  std::uniform_real_distribution<double> temp(0.5, 2.0);
  double worst_gn = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 3 + static_cast<std::size_t>(trial % 6);
    const std::size_t cls = 2 + static_cast<std::size_t>(trial % 4);
    const auto head = oracle::random_head(gen, m, cls);
    const auto rec = with_head("r", oracle::random_vector(gen, m), head);
    const double t = temp(gen);
    const auto analytic = detectors::gradnorm_gradient(rec, head, t);
    std::vector<double> w(head.weights.data(), head.weights.data() + head.weights.size());
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& ww) { return oracle::gradnorm_loss(ww, head.bias, rec.features, t, true); }, w,
        1e-5);
    for (std::size_t j = 0; j < cls; ++j) {
      for (std::size_t i = 0; i < m; ++i) {
        const double a = analytic(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        const double b = fd[j * m + i];
        const double scale = std::max(std::abs(a), std::abs(b));
        const double err = std::abs(a - b);
        worst_gn = std::max(worst_gn, scale > 1e-5 ? err / scale : 0.0);
        c.expect(err <= 1e-5 * scale + 1e-10, "gradnorm trial " + std::to_string(trial));
      }
    }
  }

  const auto sched = toy::make_schedule(24, 1e-4, 0.25);
  std::uniform_int_distribution<int> tdist(0, 24);
  double worst_score = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto spec = oracle::random_mixture(gen, 2 + static_cast<std::size_t>(trial % 3), 3, 2);
    const auto x = oracle::random_vector(gen, spec.dim(), -4.0, 4.0);
    const int t = tdist(gen);
    const auto analytic = toy::gmm_score(x, t, spec, sched);
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& p) { return toy::gmm_log_density(p, t, spec, sched); }, x, 1e-5);
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double err = std::abs(analytic[j] - fd[j]) / std::max(1.0, std::abs(fd[j]));
      worst_score = std::max(worst_score, err);
      c.expect(err <= 1e-6, "gmm_score trial " + std::to_string(trial));
    }
  }
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << "worst gradnorm rel " << worst_gn << ", worst score err "
    << worst_score;
  c.note(s.str());
}

// ---------------------------------------------------------------------------
// 4. DDIM reconstructions of a single Gaussian.

void sampler_statistics(Criterion& c) {
  const std::vector<double> mean{2.0, -1.0};
  const double variance = 1.0;
  const auto spec = oracle::single_gaussian(mean, variance);
  const auto sched = toy::make_schedule(24, 1e-4, 0.25);
  constexpr std::size_t n = 10000;

  std::vector<std::array<double, 2>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng(99, {7, static_cast<std::uint32_t>(i), 0});
    const std::vector<double> x{mean[0] + std::sqrt(variance) * rng.normal(),
                                mean[1] + std::sqrt(variance) * rng.normal()};
    const auto g = toy::reverse_sample(x, spec, sched, toy::ReverseConfig{}, {0, 0, static_cast<std::uint32_t>(i)});
    out[i] = {g[0], g[1]};
  }
  std::array<double, 2> m{0, 0};
  for (const auto& p : out) {
    m[0] += p[0];
    m[1] += p[1];
  }
  m[0] /= n;
  m[1] /= n;
  double cov[2][2] = {{0, 0}, {0, 0}};
  for (const auto& p : out) {
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) cov[a][b] += (p[a] - m[a]) * (p[b] - m[b]);
    }
  }
  double err2 = 0.0;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      cov[a][b] /= n - 1;
      const double target = a == b ? variance : 0.0;
      err2 += (cov[a][b] - target) * (cov[a][b] - target);
    }
  }
  const double rel = std::sqrt(err2) / (variance * std::numbers::sqrt2);
  for (int j = 0; j < 2; ++j) {
    const double se = std::sqrt(cov[j][j] / n);
    c.near(m[j], mean[static_cast<std::size_t>(j)], 3.0 * se, "mean coordinate " + std::to_string(j));
  }
  c.expect(rel <= 0.10, "covariance Frobenius-relative error " + std::to_string(rel));
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << "mean (" << m[0] << ", " << m[1] << "), cov diag (" << cov[0][0] << ", "
    << cov[1][1] << "), Frobenius-relative error " << rel;
  c.note(s.str());
}

// ---------------------------------------------------------------------------
// 5 and 6. Toy benchmark at the default geometry, seed 0.

struct ToyRuns {
  toy::ToyPipeline base;
  double d3 = 0, eps_kl = 0, eps_l2 = 0;
  double input_removal = 0, unconditional = 0, t2 = 0;
};

double detector_auroc(const toy::ToyPipeline& p, const std::string& name) {
  detectors::DetectorContext ctx;
  ctx.head = &p.classifier.head;
  ctx.calibration = p.benchmark.calibration.pairs;
  ctx.bank = p.benchmark.bank;
  ctx.d3 = eval::toy_d3_config(p.benchmark, rectify::Mode::React, rectify::RemovalTarget::Generation, 0.5);
  const auto det = detectors::make_detector(name, ctx);
  const auto ind = eval::score_values(detectors::score_all(*det, p.benchmark.ind_test.pairs));
  const auto ood = eval::score_values(detectors::score_all(*det, p.benchmark.ood_test.pairs));
  return eval::auroc(ind, ood);
}

double d3_auroc(const toy::ToyPipeline& p, rectify::RemovalTarget target) {
  return eval::evaluate_d3(p, eval::toy_d3_config(p.benchmark, rectify::Mode::React, target, 0.5)).auroc;
}

const ToyRuns& toy_runs() {
  static const ToyRuns runs = [] {
    ToyRuns r;
    const toy::ToyPipelineConfig cfg;
    r.base = toy::run_toy_pipeline(cfg);
    r.d3 = d3_auroc(r.base, rectify::RemovalTarget::Generation);
    r.eps_kl = detector_auroc(r.base, "eps_kl");
    r.eps_l2 = detector_auroc(r.base, "eps_l2");
    r.input_removal = d3_auroc(r.base, rectify::RemovalTarget::Input);
    auto uncond = cfg;
    uncond.sampler.guidance_scale = 0.0;
    r.unconditional = d3_auroc(toy::run_toy_pipeline(uncond), rectify::RemovalTarget::Generation);
    auto coarse = cfg;
    coarse.T = 2;
    r.t2 = d3_auroc(toy::run_toy_pipeline(coarse), rectify::RemovalTarget::Generation);
    return r;
  }();
  return runs;
}

// Values observed on the pilot run of this exact configuration.
constexpr double kPinnedD3 = 0.9905;
constexpr double kPinnedEpsKl = 0.9991;
constexpr double kPinnedEpsL2 = 0.7436;
constexpr double kPinnedInputRemoval = 0.9886;
constexpr double kPinnedUnconditional = 0.9802;
constexpr double kPinnedT2 = 0.8681;
constexpr double kPinTolerance = 0.01;

std::string fmt4(double x) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << x;
  return s.str();
}

void end_to_end(Criterion& c) {
  const auto& r = toy_runs();
  c.expect(r.d3 > 0.9, "D3 AUROC " + fmt4(r.d3) + " > 0.9");
  c.expect(r.d3 >= std::max(r.eps_kl, r.eps_l2) - 0.02,
           "D3 " + fmt4(r.d3) + " >= max(eps_kl " + fmt4(r.eps_kl) + ", eps_l2 " + fmt4(r.eps_l2) + ") - 0.02");
  c.near(r.d3, kPinnedD3, kPinTolerance, "pinned D3");
  c.near(r.eps_kl, kPinnedEpsKl, kPinTolerance, "pinned eps_kl");
  c.near(r.eps_l2, kPinnedEpsL2, kPinTolerance, "pinned eps_l2");
  c.note("AUROC d3 " + fmt4(r.d3) + ", eps_kl " + fmt4(r.eps_kl) + ", eps_l2 " + fmt4(r.eps_l2));
}

void ablation_directions(Criterion& c) {
  const auto& r = toy_runs();
  c.expect(r.d3 >= r.input_removal - 0.02, "generation removal " + fmt4(r.d3) + " vs input " + fmt4(r.input_removal));
  c.expect(r.d3 >= r.unconditional - 0.02, "conditional " + fmt4(r.d3) + " vs unconditional " + fmt4(r.unconditional));
  c.expect(r.d3 >= r.t2 - 0.02, "T=24 " + fmt4(r.d3) + " vs T=2 " + fmt4(r.t2));
  c.near(r.input_removal, kPinnedInputRemoval, kPinTolerance, "pinned input removal");
  c.near(r.unconditional, kPinnedUnconditional, kPinTolerance, "pinned unconditional");
  c.near(r.t2, kPinnedT2, kPinTolerance, "pinned T=2");
  c.note("AUROC generation " + fmt4(r.d3) + " / input " + fmt4(r.input_removal) + "; cond " + fmt4(r.d3) +
         " / uncond " + fmt4(r.unconditional) + "; T24 " + fmt4(r.d3) + " / T2 " + fmt4(r.t2));
}

// ---------------------------------------------------------------------------
// 7. ε_ℓ2 and 1 − ε_cos order pairs identically.

void rank_equivalence(Criterion& c) {
  std::mt19937_64 gen(7);
  std::vector<double> l2, one_minus_cos;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t m = 8;
    const auto a = oracle::random_vector(gen, m);
    const auto b = oracle::random_vector(gen, m);
    l2.push_back(metrics::eps_l2(a, b));
    one_minus_cos.push_back(1.0 - metrics::eps_cos(a, b));
  }
  const double rho = oracle::spearman(l2, one_minus_cos);
  c.expect(rho == 1.0, "Spearman " + std::to_string(rho));
  c.note("Spearman rho = " + std::to_string(rho) + " on 1000 pairs");
}

// ---------------------------------------------------------------------------
// 8. gen-toy, score and eval twice into the same directory.

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    files[fs::relative(e.path(), root).string()] = s.str();
  }
  return files;
}

void determinism(Criterion& c) {
  const fs::path root = fs::temp_directory_path() / "d3ood-acceptance";
  const auto run_once = [&] {
    fs::remove_all(root);
    const std::string bench = (root / "bench").string();
    const std::string scores = (root / "scores").string();
    std::ostringstream sink;
    auto* old = std::cout.rdbuf(sink.rdbuf());
    int codes = cli::run({"gen-toy", "--seed", "0", "--out", bench});
    codes += cli::run({"score", "--benchmark", bench, "--detector",
                       "msp,odin,energy,mls,gradnorm,knn,vim,d3,d3plus,eps_kl,eps_l2,eps_kl_alt,eps_cos", "--out",
                       scores});
    codes += cli::run({"eval", "--scores", scores, "--out", (root / "eval").string()});
    std::cout.rdbuf(old);
    c.expect(codes == 0, "pipeline exit codes");
    return snapshot(root);
  };
  const auto first = run_once();
  const auto second = run_once();
  c.expect(first.size() > 20, "pipeline produced " + std::to_string(first.size()) + " files");
  c.expect(first.size() == second.size(), "same file set");
  for (const auto& [name, bytes] : first) {
    const auto it = second.find(name);
    c.expect(it != second.end() && it->second == bytes, name + " differs between runs");
  }
  c.note(std::to_string(first.size()) + " files compared byte for byte");
  fs::remove_all(root);
}

}  // namespace

int main() {
  struct Entry {
    const char* name;
    double budget_s;
    std::function<void(Criterion&)> body;
  };
  const std::vector<Entry> entries{
      {"1 metric closed forms", 1.0, metric_examples},
      {"2 oracle equivalence", 30.0, oracle_equivalence},
      {"3 gradient checks", 30.0, gradient_checks},
      {"4 sampler statistics", 120.0, sampler_statistics},
      {"5 end-to-end toy benchmark", 300.0, end_to_end},
      {"6 ablation directions", 300.0, ablation_directions},
      {"7 rank equivalence", 1.0, rank_equivalence},
      {"8 determinism", 300.0, determinism},
  };
  int failed = 0;
  for (const auto& e : entries) {
    Criterion c;
    const auto start = std::chrono::steady_clock::now();
    try {
      e.body(c);
    } catch (const std::exception& ex) {
      c.expect(false, std::string("exception: ") + ex.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    c.expect(seconds < e.budget_s, "runtime " + std::to_string(seconds) + " s over budget");
    const bool ok = c.passed();
    failed += ok ? 0 : 1;
    std::cout << (ok ? "PASS" : "FAIL") << "  " << e.name << "  (" << c.checks() << " checks, " << std::fixed
              << std::setprecision(2) << seconds << " s)\n";
    for (const auto& n : c.notes()) std::cout << "      " << n << '\n';
    for (const auto& f : c.failures()) std::cout << "      failed: " << f << '\n';
    if (c.failed() > c.failures().size()) std::cout << "      ... " << c.failed() - c.failures().size() << " more\n";
  }
  std::cout << (failed == 0 ? "ALL PASS" : std::to_string(failed) + " FAILED") << '\n';
  return failed == 0 ? 0 : 1;
}
