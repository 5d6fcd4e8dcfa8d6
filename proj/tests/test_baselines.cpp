#include <gtest/gtest.h>

#include <random>

#include "gue/baselines.hpp"

using namespace gue;

namespace {

std::vector<double> beta_draws(std::size_t n, double a, double b, Rng& rng) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  std::vector<double> out(n);
  for (auto& x : out) {
    const double u = ga(rng), v = gb(rng);
    x = u / (u + v);
  }
  return out;
}

}  // namespace

TEST(Prpl, InitialState) {
  const PrplState s;
  EXPECT_EQ(s.mu_hat, 0.5);
  EXPECT_EQ(s.sigma2_hat, 0.25);
  EXPECT_EQ(s.lower, 0.0);
  EXPECT_EQ(s.upper, 1.0);
}

TEST(Prpl, FirstLambdaIsClipped) {
  // √(2 log 40 / (¼ · 1 · log 2)) ≈ 6.5 > ½.
  const auto s = prpl_eb_update(PrplState{}, 0.3, 0.05);
  EXPECT_EQ(s.last_lambda, 0.5);
  EXPECT_EQ(s.t, 1u);
}

TEST(Prpl, HandComputedTwoSteps) {
  // Independent arithmetic for Z = (0.2, 0.9), α = 0.1, c = ½.
  const double l2a = std::log(20.0);
  const double lam1 = std::min(0.5, std::sqrt(2 * l2a / (0.25 * 1 * std::log(2.0))));
  const double mu1 = (0.5 + 0.2) / 2.0;
  const double s21 = (0.25 + (0.2 - mu1) * (0.2 - mu1)) / 2.0;
  const double lam2 = std::min(0.5, std::sqrt(2 * l2a / (s21 * 2 * std::log(3.0))));
  const double psi = [](double l) { return -std::log(1 - l) - l; }(lam1);
  const double psi2 = -std::log(1 - lam2) - lam2;
  const double pen = (0.2 - 0.5) * (0.2 - 0.5) * psi + (0.9 - mu1) * (0.9 - mu1) * psi2;
  const double center = (lam1 * 0.2 + lam2 * 0.9) / (lam1 + lam2);
  const double half = (l2a + pen) / (lam1 + lam2);
  const auto s = prpl_eb(std::vector<double>{0.2, 0.9}, 0.1);
  EXPECT_NEAR(s.lower, std::max(0.0, center - half), 1e-12);
  EXPECT_NEAR(s.upper, std::min(1.0, center + half), 1e-12);
}

TEST(Prpl, BetaTenCoversWholeSupport) {
  // Oracle fraction of n = 10 Beta(5,2) samples whose interval is exactly [0,1]: 0.760.
  const int reps = 4000;
  int full = 0;
  for (int r = 0; r < reps; ++r) {
    Rng rng = make_rng(static_cast<std::uint64_t>(r));
    const auto s = prpl_eb(beta_draws(10, 5, 2, rng), 0.05);
    EXPECT_EQ(s.upper, 1.0);
    EXPECT_LT(s.lower, 0.15);
    full += s.lower == 0.0 && s.upper == 1.0;
  }
  const double p = static_cast<double>(full) / reps;
  EXPECT_NEAR(p, 0.760, 3.0 * stats::proportion_se(0.760, reps));
}

TEST(Prpl, NestedAndInsideUnitInterval) {
  Rng rng = make_rng(99);
  const auto zs = beta_draws(2000, 2, 5, rng);
  PrplState s;
  for (double z : zs) {
    const auto next = prpl_eb_update(s, z, 0.05);
    EXPECT_GE(next.lower, s.lower);
    EXPECT_LE(next.upper, s.upper);
    EXPECT_GE(next.lower, 0.0);
    EXPECT_LE(next.upper, 1.0);
    s = next;
  }
  EXPECT_LT(s.upper - s.lower, 0.1);
  EXPECT_TRUE(s.interval(0.05).contains(2.0 / 7.0));
}

TEST(Prpl, RejectsOutOfRange) {
  EXPECT_THROW(prpl_eb_update(PrplState{}, 1.5, 0.05), Error);
  EXPECT_THROW(prpl_eb_update(PrplState{}, -0.1, 0.05), Error);
}

TEST(Percentile, QuantileRuleArithmetic) {
  const std::vector<ParamPoint> est = {ParamPoint{1.0}, ParamPoint{3.0}};
  const auto iv = percentile_intervals(est, 0.5);
  EXPECT_DOUBLE_EQ(iv[0].lower, 1.5);
  EXPECT_DOUBLE_EQ(iv[0].upper, 2.5);
}

TEST(Percentile, ConstantSampleIsDegenerate) {
  const Sample s = scalar_sample({4, 4, 4, 4, 4});
  const SquaredLoss m;
  const auto iv = bootstrap_percentile_ci(m, s, 0.1, 50, 1);
  EXPECT_EQ(iv[0].lower, 4.0);
  EXPECT_EQ(iv[0].upper, 4.0);
  const auto w = classical_wald_interval(m, s, 0.1, 50, 1);
  EXPECT_EQ(w.lower, 4.0);
  EXPECT_EQ(w.upper, 4.0);
}

TEST(Percentile, SolverAndEstimatorPathsAgree) {
  Rng rng = make_rng(2);
  std::normal_distribution<double> g;
  Sample s;
  for (int i = 0; i < 30; ++i) s.push_back(Datum::scalar(g(rng)));
  const QuantileLoss m("pinball", 0.7);
  const auto a = bootstrap_percentile_ci(m, s, 0.1, 100, 5);
  const auto b = bootstrap_percentile_ci(m, s, 0.1, 100, 5);
  EXPECT_EQ(a[0].lower, b[0].lower);
  EXPECT_EQ(a[0].upper, b[0].upper);
  const auto c = bootstrap_percentile_ci([&](std::span<const Datum> rs) { return solve_erm(m, rs).theta; }, s, 0.1, 100, 5);
  EXPECT_LE(c[0].lower, c[0].upper);
}

TEST(Wald, NormalQuantile) {
  const auto iv = wald_interval(0.0, 1.0, 0.05);
  EXPECT_NEAR(iv.upper, 1.959964, 1e-6);
  EXPECT_NEAR(iv.lower, -1.959964, 1e-6);
  EXPECT_EQ(iv.to_json()["method"], "classical_wald");
}

TEST(Percentile, HeavyTailMeanUndercovers) {
  const SquaredLoss m;
  std::student_t_distribution<double> t3(3.0);
  const int reps = 1000;
  int cover = 0;
  for (int r = 0; r < reps; ++r) {
    Rng rng = make_rng(500 + static_cast<std::uint64_t>(r));
    Sample s;
    for (int i = 0; i < 10; ++i) s.push_back(Datum::scalar(t3(rng)));
    cover += bootstrap_percentile_ci(m, s, 0.05, 200, static_cast<std::uint64_t>(r))[0].contains(0.0);
  }
  const double p = static_cast<double>(cover) / reps;
  EXPECT_LT(p, 0.95 - 3.0 * stats::proportion_se(0.95, reps));
}

TEST(Ellipse, ZeroVarianceClusterIsDegenerate) {
  Sample s;
  for (int i = 0; i < 20; ++i) {
    s.push_back(Datum::vector({0.0, 0.0}));
    s.push_back(Datum::vector({5.0, 5.0}));
  }
  const auto e = kmeans_bootstrap_ellipse(s, 2, 0.05, 30, 1);
  ASSERT_EQ(e.ellipses.size(), 2u);
  for (const auto& el : e.ellipses) {
    EXPECT_EQ(el.cov[0], 0.0);
    EXPECT_EQ(el.cov[3], 0.0);
    EXPECT_TRUE(el.contains(el.center));
    const double off[2] = {el.center[0] + 0.01, el.center[1]};
    EXPECT_FALSE(el.contains(std::span<const double>(off, 2)));
  }
  EXPECT_NEAR(e.ellipses[0].scale, -2.0 * std::log(0.05), 1e-9);  // χ²₂ quantile
}

TEST(Ellipse, MembershipQuadraticForm) {
  Ellipse e;
  e.center = {1.0, 1.0};
  e.cov = {4.0, 0.0, 0.0, 1.0};
  e.scale = 1.0;
  const double in[2] = {2.9, 1.0}, out[2] = {1.0, 2.1};
  EXPECT_TRUE(e.contains(std::span<const double>(in, 2)));
  EXPECT_FALSE(e.contains(std::span<const double>(out, 2)));
}

TEST(Ellipse, BalancedClustersRoughlyNominal) {
  const std::array<std::array<double, 2>, 3> mu = {{{0.0, 0.0}, {4.0, 0.0}, {0.0, 4.0}}};
  const int reps = 60;
  std::array<int, 3> cover{};
  for (int r = 0; r < reps; ++r) {
    Rng rng = make_rng(900 + static_cast<std::uint64_t>(r));
    std::normal_distribution<double> g;
    Sample s;
    for (int i = 0; i < 100; ++i) {
      const auto& c = mu[static_cast<std::size_t>(i % 3)];
      s.push_back(Datum::vector({c[0] + g(rng), c[1] + g(rng)}));
    }
    const auto e = kmeans_bootstrap_ellipse(s, 3, 0.05, 60, static_cast<std::uint64_t>(r));
    for (std::size_t k = 0; k < 3; ++k) {
      // Match each true center to the nearest estimated one.
      std::size_t best = 0;
      double bd = kInf;
      for (std::size_t j = 0; j < 3; ++j) {
        const double d = std::hypot(e.ellipses[j].center[0] - mu[k][0], e.ellipses[j].center[1] - mu[k][1]);
        if (d < bd) {
          bd = d;
          best = j;
        }
      }
      cover[k] += e.ellipses[best].contains(mu[k]);
    }
  }
  for (int c : cover) EXPECT_GE(static_cast<double>(c) / reps, 0.8);
}
