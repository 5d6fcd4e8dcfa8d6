#include <gtest/gtest.h>

#include <random>

#include "gue/losses.hpp"

using namespace gue;

namespace {

const std::vector<double> kX = {0.001, 0.299, -0.274, -0.891, -0.455, -0.992, 0.06, 1.34, -0.492, -0.62, 0.49, 0.357};
const std::vector<double> kY = {1.107, 0.668, 0.423, -0.087, -1.254, -1.442, -0.781, 2.39, -1.826, -0.475, 0.713, 1.985};
const std::vector<double> kLab = {1, 1, -1, -1, -1, -1, 1, 1, 1, 1, 1, 1};

Sample labeled(const std::vector<double>& x, const std::vector<double>& y) {
  Sample s;
  for (std::size_t i = 0; i < x.size(); ++i) s.push_back(Datum::labeled(x[i], y[i]));
  return s;
}

LossModelPtr model(const std::string& name, double q = 0.5) {
  LossSpec spec;
  spec.name = name;
  spec.q = q;
  if (name == "kmeans") {
    spec.k = 2;
    spec.dim = 2;
  }
  return make_loss_model(spec);
}

}  // namespace

TEST(EvalLoss, PointValues) {
  EXPECT_DOUBLE_EQ(eval_loss(*model("l2_mean"), ParamPoint{1.0}, Datum::scalar(3.0)), 4.0);
  EXPECT_DOUBLE_EQ(eval_loss(*model("l1_median"), ParamPoint{0.0}, Datum::scalar(-3.0)), 3.0);
  EXPECT_NEAR(eval_loss(*model("pinball", 0.84), ParamPoint{0.0}, Datum::scalar(-2.0)), 0.32, 1e-12);
  EXPECT_NEAR(eval_loss(*model("pinball", 0.84), ParamPoint{0.0}, Datum::scalar(1.0)), 0.84, 1e-12);
}

TEST(EvalLoss, RestrictedPinballIsInfiniteBelowBoundary) {
  const auto m = model("pinball_restricted", 0.84);
  EXPECT_EQ(eval_loss(*m, ParamPoint{-0.1}, Datum::scalar(1.0)), kInf);
  EXPECT_TRUE(std::isfinite(eval_loss(*m, ParamPoint{0.0}, Datum::scalar(1.0))));
}

TEST(EvalLoss, ThresholdAndHinge) {
  const auto t = model("zero_one_threshold");
  EXPECT_EQ(eval_loss(*t, ParamPoint{0.0}, Datum::labeled(-1.0, 1.0)), 1.0);
  EXPECT_EQ(eval_loss(*t, ParamPoint{0.0}, Datum::labeled(-1.0, 0.0)), 0.0);
  EXPECT_EQ(eval_loss(*t, ParamPoint{0.0}, Datum::labeled(1.0, 0.0)), 1.0);
  EXPECT_EQ(eval_loss(*t, ParamPoint{0.0}, Datum::labeled(0.0, 1.0)), 1.0);
  const auto h = model("hinge_svm");
  EXPECT_DOUBLE_EQ(eval_loss(*h, ParamPoint{0.0, 1.0}, Datum::labeled(0.25, 1.0)), 0.75);
  EXPECT_DOUBLE_EQ(eval_loss(*h, ParamPoint{0.0, 1.0}, Datum::labeled(2.0, 1.0)), 0.0);
}

TEST(EvalLoss, KMeansIsDistanceToNearestCentroid) {
  const auto k = model("kmeans");
  EXPECT_DOUBLE_EQ(eval_loss(*k, ParamPoint{0, 0, 10, 10}, Datum::vector({9.0, 8.0})), 5.0);
}

TEST(EvalLoss, Errors) {
  EXPECT_THROW(eval_loss(*model("l2_mean"), ParamPoint{1.0, 2.0}, Datum::scalar(1.0)), Error);
  EXPECT_THROW(eval_loss(*model("l1_median"), ParamPoint{1.0}, Datum::labeled(1.0, 1.0)), Error);
  EXPECT_THROW(eval_loss(*model("zero_one_threshold"), ParamPoint{1.0}, Datum::labeled(1.0, 2.0)), Error);
  LossSpec bad;
  bad.name = "nope";
  EXPECT_THROW(make_loss_model(bad), Error);
  const Sample empty;
  EXPECT_THROW(empirical_risk(*model("l2_mean"), ParamPoint{0.0}, empty), Error);
  try {
    solve_erm(*model("l2_mean"), empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_sample);
  }
}

TEST(SolveErm, ClosedFormQuantiles) {
  EXPECT_DOUBLE_EQ(solve_erm(*model("l2_mean"), scalar_sample({1, 2, 6})).theta[0], 3.0);
  EXPECT_DOUBLE_EQ(solve_erm(*model("l1_median"), scalar_sample({3, 1, 2})).theta[0], 2.0);
  EXPECT_DOUBLE_EQ(solve_erm(*model("l1_median"), scalar_sample({0, 2})).theta[0], 1.0);
  EXPECT_DOUBLE_EQ(solve_erm(*model("pinball", 0.84), scalar_sample({1, 2, 3, 4, 5, 6, 7, 8, 9, 10})).theta[0], 9.0);
  // Restricted: the unconstrained 0.84-quantile is negative, so it clamps to 0.
  EXPECT_DOUBLE_EQ(solve_erm(*model("pinball_restricted", 0.84), scalar_sample({-5, -4, -3})).theta[0], 0.0);
}

TEST(SolveErm, ThresholdPicksLeftmostMinimalIntervalMidpoint) {
  const auto m = model("zero_one_threshold");
  const Sample s = labeled({1, 2, 3, 4}, {0, 0, 1, 1});
  EXPECT_DOUBLE_EQ(solve_erm(*m, s).theta[0], 2.5);
  // Risk 1 on (1,2), (2,3) and (3,4); leftmost is (1,2).
  const Sample t = labeled({1, 2, 3, 4}, {0, 1, 0, 1});
  EXPECT_DOUBLE_EQ(solve_erm(*m, t).theta[0], 1.5);
  // All positive: everything should sit above θ, so θ left of the data.
  const Sample u = labeled({1, 3}, {1, 1});
  EXPECT_DOUBLE_EQ(solve_erm(*m, u).theta[0], 1.0 - 0.5);
}

TEST(SolveErm, QuantileRegressionMatchesLinearProgram) {
  const Sample s = labeled(kX, kY);
  const auto m50 = model("quantile_regression", 0.5);
  const auto m20 = model("quantile_regression", 0.2);
  EXPECT_NEAR(empirical_risk(*m50, solve_erm(*m50, s).theta, s), 0.317368567753, 1e-9);
  EXPECT_NEAR(empirical_risk(*m20, solve_erm(*m20, s).theta, s), 0.218684196843, 1e-9);
}

TEST(SolveErm, HingeNearLinearProgramOptimum) {
  const Sample s = labeled(kX, kLab);
  const auto m = model("hinge_svm");
  const auto res = solve_erm(*m, s);
  EXPECT_LT(empirical_risk(*m, res.theta, s) - 0.404895366218, 1e-2);
  EXPECT_GE(res.certificate.achieved_gap, -1e-12 - 1.0);  // reported, may be negative vs grid
}

TEST(SolveErm, KMeansRecoversSeparatedClusters) {
  Rng rng = make_rng(11);
  std::normal_distribution<double> noise(0.0, 0.1);
  Sample s;
  for (int i = 0; i < 60; ++i) {
    const double cx = (i % 2 == 0) ? 0.0 : 5.0;
    s.push_back(Datum::vector({cx + noise(rng), cx + noise(rng)}));
  }
  const auto theta = solve_erm(*model("kmeans"), s, 3).theta;
  EXPECT_NEAR(theta[0], 0.0, 0.1);
  EXPECT_NEAR(theta[1], 0.0, 0.1);
  EXPECT_NEAR(theta[2], 5.0, 0.1);
  EXPECT_NEAR(theta[3], 5.0, 0.1);
}

TEST(SolveErm, KMeansDegenerateSample) {
  Sample s(5, Datum::vector({1.0, 2.0}));
  const auto theta = solve_erm(*model("kmeans"), s).theta;
  EXPECT_EQ(theta, (ParamPoint{1, 2, 1, 2}));
}

TEST(SolveErm, DeterministicUnderSeed) {
  Rng rng = make_rng(5);
  std::normal_distribution<double> g;
  Sample s;
  for (int i = 0; i < 40; ++i) s.push_back(Datum::vector({g(rng), g(rng)}));
  const auto m = model("kmeans");
  EXPECT_EQ(solve_erm(*m, s, 9).theta, solve_erm(*m, s, 9).theta);
}

// Risk at the ERM is no larger than at any grid point, up to the declared slack.
TEST(SolveErm, OptimalOnGridForEveryModel) {
  Rng rng = make_rng(21);
  std::normal_distribution<double> g;
  std::bernoulli_distribution coin(0.5);
  for (const auto& name : registered_losses()) {
    const auto m = model(name, 0.3);
    Sample s;
    for (int i = 0; i < 30; ++i) {
      const double x = g(rng);
      if (name == "kmeans") {
        s.push_back(Datum::vector({x, g(rng) + (i % 2) * 4.0}));
      } else if (name == "zero_one_threshold") {
        s.push_back(Datum::labeled(x, coin(rng) ? 1.0 : 0.0));
      } else if (name == "hinge_svm") {
        s.push_back(Datum::labeled(x, x + g(rng) > 0 ? 1.0 : -1.0));
      } else if (name == "quantile_regression") {
        s.push_back(Datum::labeled(x, 2.0 * x + g(rng)));
      } else {
        s.push_back(Datum::scalar(x));
      }
    }
    const auto res = solve_erm(*m, s, 1);
    const double at = empirical_risk(*m, res.theta, s);
    const double slack = std::max(0.0, res.certificate.achieved_gap) + 1e-9;
    const ParamGrid grid(m->bounding_box(s), m->param_dim() <= 2 ? std::size_t{101} : std::size_t{5});
    for (std::size_t i = 0; i < grid.size(); ++i) {
      ASSERT_LE(at, empirical_risk(*m, grid.point(i), s) + slack) << name;
    }
  }
}

TEST(VerifyAerm, ExactAndPerturbed) {
  const auto m = model("l2_mean");
  const Sample s = scalar_sample({0, 1, 2, 3});
  EXPECT_TRUE(verify_aerm(*m, s, ParamPoint{1.5}, 0.0, 0.0));
  // Risk gap of θ = 1.5 + d is d²; with d = 0.1 it is 0.01 ≤ δ/n = 0.04/4.
  EXPECT_TRUE(verify_aerm(*m, s, ParamPoint{1.6}, 0.0, 0.04 + 1e-9));
  EXPECT_FALSE(verify_aerm(*m, s, ParamPoint{1.6}, 0.0, 0.03));
}

TEST(OnlineErm, LaggedEstimatesUseOnlyThePast) {
  const auto m = model("l2_mean");
  const Sample path = scalar_sample({1, 3, 5});
  const auto lag = m->lagged_estimates(path, ParamPoint{0.0}, 0);
  ASSERT_EQ(lag.size(), 3u);
  EXPECT_DOUBLE_EQ(lag[0][0], 0.0);
  EXPECT_DOUBLE_EQ(lag[1][0], 1.0);
  EXPECT_DOUBLE_EQ(lag[2][0], 2.0);
}

TEST(OnlineErm, QuantileIncrementalMatchesBatch) {
  Rng rng = make_rng(3);
  std::exponential_distribution<double> e(1.0);
  const auto m = model("pinball", 0.3);
  Sample path;
  for (int i = 0; i < 50; ++i) path.push_back(Datum::scalar(e(rng)));
  const auto lag = m->lagged_estimates(path, ParamPoint{7.0}, 0);
  EXPECT_EQ(lag[0][0], 7.0);
  for (std::size_t i = 1; i < path.size(); ++i) {
    EXPECT_EQ(lag[i][0], solve_erm(*m, std::span<const Datum>(path.data(), i)).theta[0]);
  }
}

TEST(OnlineErm, ThresholdSegmentTreeMatchesBruteForce) {
  const auto m = model("zero_one_threshold");
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng = make_rng(seed);
    std::uniform_int_distribution<int> xv(0, 6);  // many ties
    std::bernoulli_distribution coin(0.4);
    Sample path;
    for (int i = 0; i < 60; ++i) path.push_back(Datum::labeled(xv(rng) * 0.5, coin(rng) ? 1.0 : 0.0));
    const auto batch = m->lagged_estimates(path, ParamPoint{-9.0}, 0);
    EXPECT_EQ(batch[0][0], -9.0);
    for (std::size_t i = 1; i < path.size(); ++i) {
      const double brute = solve_erm(*m, std::span<const Datum>(path.data(), i)).theta[0];
      ASSERT_NEAR(batch[i][0], brute, 1e-12) << "seed " << seed << " step " << i;
    }
  }
}

TEST(OnlineErm, ThresholdBatchIsFutureIndependent) {
  const auto m = model("zero_one_threshold");
  Sample a = labeled({1, 5, 3, 2, 8}, {0, 1, 0, 1, 1});
  Sample b = a;
  b[4] = Datum::labeled(-100.0, 0.0);
  const auto la = m->lagged_estimates(a, ParamPoint{0.0}, 0);
  const auto lb = m->lagged_estimates(b, ParamPoint{0.0}, 0);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(la[i][0], lb[i][0]);
}

TEST(ResampleSolver, MatchesRefitOnExpandedSample) {
  Rng rng = make_rng(8);
  std::normal_distribution<double> g;
  std::bernoulli_distribution coin(0.5);
  Sample scalars, labels;
  for (int i = 0; i < 25; ++i) {
    scalars.push_back(Datum::scalar(std::round(g(rng) * 4.0) / 4.0));
    labels.push_back(Datum::labeled(std::round(g(rng) * 4.0) / 4.0, coin(rng) ? 1.0 : 0.0));
  }
  std::uniform_int_distribution<std::size_t> pick(0, 24);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::uint32_t> counts(25, 0);
    for (int i = 0; i < 25; ++i) ++counts[pick(rng)];
    for (const auto& [name, sample] : {std::pair{"l2_mean", &scalars}, std::pair{"l1_median", &scalars},
                                       std::pair{"pinball", &scalars}, std::pair{"zero_one_threshold", &labels}}) {
      const auto m = model(name, 0.84);
      const auto fast = m->resample_solver(*sample, 0)->solve(counts);
      Sample expanded;
      for (std::size_t i = 0; i < counts.size(); ++i) {
        for (std::uint32_t c = 0; c < counts[i]; ++c) expanded.push_back((*sample)[i]);
      }
      EXPECT_NEAR(fast[0], solve_erm(*m, expanded).theta[0], 1e-12) << name;
    }
  }
}
