#include "d3ood/error.hpp"
#include "d3ood/metrics.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace d3ood;
using namespace d3ood::metrics;

namespace {

ProbabilityVector pv(std::vector<double> v) { return ProbabilityVector::from_values(std::move(v)); }

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(Softmax, UniformLogits) {
  const auto p = softmax(std::vector<double>{0, 0, 0, 0});
  for (double x : p.values()) EXPECT_NEAR(x, 0.25, 1e-12);
}

TEST(Softmax, ClosedForm) {
  const auto p = softmax(std::vector<double>{std::numbers::ln2, 0.0});
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-12);
}

TEST(Softmax, ShiftInvariance) {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 100; ++trial) {
    auto z = oracle::random_vector(gen, 6, -5, 5);
    auto shifted = z;
    for (double& x : shifted) x += 1000.0;
    const auto a = softmax(z);
    const auto b = softmax(shifted);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    const auto naive = oracle::softmax_naive(z);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(a[i], naive[i], 1e-12);
  }
}

TEST(Softmax, FloorsAndRejectsNonFinite) {
  const auto p = softmax(std::vector<double>{0.0, -2000.0});
  EXPECT_GE(p[1], kProbabilityFloor * 0.999);
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-15);
  EXPECT_THROW(softmax(std::vector<double>{0.0, std::nan("")}), Error);
  EXPECT_THROW(softmax(std::vector<double>{0.0, INFINITY}), Error);
}

TEST(ProbabilityVector, Validation) {
  EXPECT_THROW(pv({0.5, 0.6}), Error);
  EXPECT_THROW(pv({1.0}), Error);
  EXPECT_THROW(pv({1.5, -0.5}), Error);
  EXPECT_NO_THROW(pv({0.5, 0.5}));
}

TEST(KlDiv, IdentityIsZero) {
  const auto u = ProbabilityVector::uniform(4);
  EXPECT_EQ(kl_div(u, u), 0.0);
}

TEST(KlDiv, ClosedFormLn2) {
  const auto p = pv({1.0 - kProbabilityFloor, kProbabilityFloor});
  EXPECT_NEAR(kl_div(p, ProbabilityVector::uniform(2)), std::numbers::ln2, 1e-6);
}

TEST(KlDiv, DirectSumOracle) {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = softmax(oracle::random_vector(gen, 5, -3, 3));
    const auto q = softmax(oracle::random_vector(gen, 5, -3, 3));
    const double direct = oracle::kl_direct(p.values(), q.values());
    EXPECT_NEAR(kl_div(p, q), direct, 1e-12);
    EXPECT_GE(kl_div(p, q), 0.0);
  }
  EXPECT_THROW(kl_div(ProbabilityVector::uniform(2), ProbabilityVector::uniform(3)), Error);
}

TEST(KlToUniform, BoundedByLogC) {
  std::mt19937_64 gen(3);
  for (std::size_t c : {2u, 3u, 10u}) {
    for (int trial = 0; trial < 50; ++trial) {
      const auto p = softmax(oracle::random_vector(gen, c, -20, 20));
      const double kl = kl_to_uniform(p);
      EXPECT_GE(kl, 0.0);
      EXPECT_LE(kl, std::log(static_cast<double>(c)));
    }
    // Clamped extreme: one-hot after flooring.
    std::vector<double> z(c, -1e4);
    z[0] = 1e4;
    const double kl = kl_to_uniform(softmax(z));
    EXPECT_LE(kl, std::log(static_cast<double>(c)));
    EXPECT_NEAR(kl, std::log(static_cast<double>(c)), 1e-9);
  }
}

TEST(EpsL2, ClosedForms) {
  const std::vector<double> a{1, 0}, b{0, 1};
  EXPECT_EQ(eps_l2(a, a), 0.0);
  EXPECT_NEAR(eps_l2(a, b), std::numbers::sqrt2, 1e-15);
  std::vector<double> h{0.3, -1.2, 2.0};
  std::vector<double> scaled{0.3 * 3.7, -1.2 * 3.7, 2.0 * 3.7};
  EXPECT_NEAR(eps_l2(h, scaled), 0.0, 1e-15);
  const std::vector<double> neg{-1, 0};
  EXPECT_NEAR(eps_l2(a, neg), 2.0, 1e-15);
}

TEST(EpsL2, ZeroNormIsHardError) {
  const std::vector<double> z{0, 0}, a{1, 0};
  EXPECT_THROW(eps_l2(z, a), NumericalError);
  EXPECT_THROW(eps_l2(a, z), NumericalError);
  EXPECT_THROW(eps_cos(z, a), NumericalError);
}

TEST(EpsL2, SymmetricAndScaleInvariant) {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = oracle::random_vector(gen, 8);
    const auto b = oracle::random_vector(gen, 8);
    const double v = eps_l2(a, b);
    EXPECT_NEAR(v, eps_l2(b, a), 1e-15);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 2.0);
    auto as = a, bs = b;
    const double s1 = scale(gen), s2 = scale(gen);
    for (double& x : as) x *= s1;
    for (double& x : bs) x *= s2;
    EXPECT_NEAR(eps_l2(as, bs), v, 1e-12);
  }
}

TEST(EpsKl, Identities) {
  const auto g = pv({0.7, 0.2, 0.1});
  const auto r = eps_kl(g, ProbabilityVector::uniform(3));
  EXPECT_EQ(r.value, 0.0);
  EXPECT_FALSE(r.denominator_clamped);
  EXPECT_NEAR(eps_kl(g, g).value, 1.0, 1e-15);
}

TEST(EpsKl, DirectSumOracle) {
  const std::vector<double> gx{0.7, 0.2, 0.1}, gg{0.5, 0.3, 0.2}, u{1.0 / 3, 1.0 / 3, 1.0 / 3};
  const double expected = oracle::kl_direct(gg, u) / oracle::kl_direct(gx, u);
  EXPECT_NEAR(eps_kl(pv(gx), pv(gg)).value, expected, 1e-12);
}

TEST(EpsKl, GuardClampsUniformDenominator) {
  const auto r = eps_kl(ProbabilityVector::uniform(3), pv({0.7, 0.2, 0.1}));
  EXPECT_TRUE(r.denominator_clamped);
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_NEAR(r.value, kl_to_uniform(pv({0.7, 0.2, 0.1})) / kDivisionGuard, 1e-6 * r.value);
}

TEST(EpsKlAlt, ClosedForms) {
  const auto g = pv({0.6, 0.4});
  EXPECT_EQ(eps_kl_alt(g, g), 0.0);
  EXPECT_NEAR(eps_kl_alt(ProbabilityVector::uniform(2), pv({1 - kProbabilityFloor, kProbabilityFloor})),
              std::numbers::ln2, 1e-6);
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = softmax(oracle::random_vector(gen, 4, -2, 2));
    const auto b = softmax(oracle::random_vector(gen, 4, -2, 2));
    EXPECT_NEAR(eps_kl_alt(a, b), oracle::kl_direct(b.values(), a.values()), 1e-12);
  }
}

TEST(KlMetrics, AreNotSymmetric) {
  const auto a = pv({0.9, 0.05, 0.05});
  const auto b = pv({0.4, 0.4, 0.2});
  EXPECT_GT(std::abs(eps_kl(a, b).value - eps_kl(b, a).value), 1e-3);
  EXPECT_GT(std::abs(eps_kl_alt(a, b) - eps_kl_alt(b, a)), 1e-3);
}

TEST(EpsCos, ClosedFormsAndIdentity) {
  const std::vector<double> a{1, 0}, b{0, 1};
  EXPECT_NEAR(eps_cos(a, a), 1.0, 1e-15);
  EXPECT_NEAR(eps_cos(a, b), 0.0, 1e-15);
  std::mt19937_64 gen(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = oracle::random_vector(gen, 5);
    const auto y = oracle::random_vector(gen, 5);
    const double l2 = eps_l2(x, y);
    const double cs = eps_cos(x, y);
    EXPECT_NEAR(l2 * l2 + 2.0 * cs, 2.0, 1e-9);
    EXPECT_NEAR(cs, eps_cos(y, x), 1e-15);
    EXPECT_GE(cs, -1.0);
    EXPECT_LE(cs, 1.0);
  }
}

TEST(EpsL2, RankEquivalentToOneMinusCos) {
  std::mt19937_64 gen(7);
  std::vector<double> l2, one_minus_cos;
  for (int i = 0; i < 1000; ++i) {
    const auto x = oracle::random_vector(gen, 6);
    const auto y = oracle::random_vector(gen, 6);
    l2.push_back(eps_l2(x, y));
    one_minus_cos.push_back(1.0 - eps_cos(x, y));
  }
  EXPECT_EQ(oracle::spearman(l2, one_minus_cos), 1.0);
}

TEST(Evaluate, DispatchesByKind) {
  const std::vector<double> hx{1, 2}, hg{2, 1}, zx{1, 0, 0}, zg{0, 1, 0};
  EXPECT_EQ(evaluate(MetricKind::EpsL2, hx, zx, hg, zg).value, eps_l2(hx, hg));
  EXPECT_EQ(evaluate(MetricKind::EpsCos, hx, zx, hg, zg).value, eps_cos(hx, hg));
  EXPECT_EQ(evaluate(MetricKind::EpsKl, hx, zx, hg, zg).value, eps_kl(softmax(zx), softmax(zg)).value);
  EXPECT_EQ(evaluate(MetricKind::EpsKlAlt, hx, zx, hg, zg).value, eps_kl_alt(softmax(zx), softmax(zg)));
  for (auto k : {MetricKind::EpsL2, MetricKind::EpsKl, MetricKind::EpsKlAlt, MetricKind::EpsCos}) {
    EXPECT_EQ(parse_metric_kind(to_string(k)), k);
  }
}

TEST(LogSumExp, Stable) {
  EXPECT_NEAR(log_sum_exp(std::vector<double>{0, 0, 0, 0}), std::log(4.0), 1e-15);
  EXPECT_NEAR(log_sum_exp(std::vector<double>{1000, 1000}), 1000 + std::numbers::ln2, 1e-12);
  (void)vec;
}
