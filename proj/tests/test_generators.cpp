#include <gtest/gtest.h>

#include "gue/generators.hpp"
#include "gue/stats.hpp"

using namespace gue;

namespace {

LossModelPtr loss(const std::string& name, double q = 0.5) {
  LossSpec s;
  s.name = name;
  s.q = q;
  return make_loss_model(s);
}

double erm_at(const DataGenerator& g, const LossModel& m, std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const Sample s = g.sample(n, rng);
  return solve_erm(m, s).theta[0];
}

/// ERM on 10⁶ draws against the declared truth; the SE comes from the spread
/// of ten ERMs at 10⁵ scaled by 1/√10.
void expect_brute_force_truth(const DataGenerator& g, const LossModel& m, std::uint64_t seed) {
  std::vector<double> small;
  for (std::uint64_t k = 0; k < 10; ++k) small.push_back(erm_at(g, m, 100000, derive_seed(seed, "small", k)));
  const double se = stats::stddev(small) / std::sqrt(10.0);
  const double big = erm_at(g, m, 1000000, derive_seed(seed, "big"));
  const double truth = g.truth(m)[0];
  EXPECT_LE(std::abs(big - truth), 3.0 * se + 1e-12) << g.name() << " / " << m.name() << ": " << big << " vs " << truth;
}

}  // namespace

TEST(GeneratorTruth, GaussianMean) {
  expect_brute_force_truth(GaussianGenerator(2.0, 4.0), *loss("l2_mean"), 1);
  EXPECT_EQ(GaussianGenerator(2.0, 4.0).truth(*loss("l2_mean"))[0], 2.0);
}

TEST(GeneratorTruth, MixtureMeanAndMedian) {
  const auto g = make_generator({"gaussian_mixture", {5.0, 10.0, 1e4}, {}, {}});
  EXPECT_DOUBLE_EQ(g->truth(*loss("l2_mean"))[0], 7.5);
  EXPECT_NEAR(g->truth(*loss("l1_median"))[0], 7.5, 1e-8);
  expect_brute_force_truth(*g, *loss("l2_mean"), 2);
  expect_brute_force_truth(*g, *loss("l1_median"), 3);
}

TEST(GeneratorTruth, UnequalMixtureQuantile) {
  const GaussianMixtureGenerator g({0.0, 3.0}, 1.0, {0.2, 0.8});
  expect_brute_force_truth(g, *loss("pinball", 0.3), 4);
}

TEST(GeneratorTruth, BetaMeanAndMedian) {
  const BetaGenerator g(5.0, 2.0);
  EXPECT_NEAR(g.truth(*loss("l2_mean"))[0], 5.0 / 7.0, 1e-12);
  expect_brute_force_truth(g, *loss("l2_mean"), 5);
  expect_brute_force_truth(g, *loss("l1_median"), 6);
}

TEST(GeneratorTruth, ExponentialMedian) {
  const ExponentialGenerator g(1.0);
  EXPECT_NEAR(g.truth(*loss("l1_median"))[0], std::log(2.0), 1e-12);
  expect_brute_force_truth(g, *loss("l1_median"), 7);
}

TEST(GeneratorTruth, TriangularAndStudentT) {
  const TriangularGenerator tri(0.0, 1.0, 2.0);
  EXPECT_NEAR(tri.truth(*loss("l1_median"))[0], 1.0, 1e-12);
  expect_brute_force_truth(tri, *loss("pinball", 0.8), 8);
  const StudentTGenerator t3(3.0);
  EXPECT_NEAR(t3.truth(*loss("l1_median"))[0], 0.0, 1e-12);
  expect_brute_force_truth(t3, *loss("l1_median"), 9);
}

TEST(GeneratorTruth, RestrictedQuantileAtBoundary) {
  // Unrestricted 0.84-quantile of N(−3, 9) is −0.0166, so the projection onto [0, ∞) is 0.
  const GaussianGenerator g(-3.0, 9.0);
  EXPECT_NEAR(g.truth(*loss("pinball", 0.84))[0], -0.016620, 1e-5);
  LossSpec s;
  s.name = "pinball_restricted";
  s.q = 0.84;
  const auto m = make_loss_model(s);
  EXPECT_EQ(g.truth(*m)[0], 0.0);
  expect_brute_force_truth(g, *m, 10);
}

TEST(GeneratorTruth, ThresholdMidpointAndWeights) {
  const auto m = loss("zero_one_threshold");
  const auto wide = make_generator({"labeled_threshold", {}, {}, {}});
  EXPECT_DOUBLE_EQ(wide->truth(*m)[0], 7.5);
  expect_brute_force_truth(*wide, *m, 11);
  const LabeledThresholdGenerator g(0.0, 2.0, 1.0, 0.3);
  EXPECT_NEAR(g.truth(*m)[0], 1.0 + std::log(0.3 / 0.7) / 2.0, 1e-12);
  expect_brute_force_truth(g, *m, 12);
}

TEST(GeneratorTruth, LogisticSvmSlope) {
  const LogisticSvmGenerator g;
  const auto m = loss("hinge_svm");
  const auto t = g.truth(*m);
  EXPECT_EQ(t[0], 0.0);
  EXPECT_NEAR(t[1], 1.0357443, 1e-4);
  EXPECT_NEAR(LogisticSvmGenerator::slope_risk(t[1]), 0.72979, 1e-4);
  // Empirical subgradient at θ* is mean zero.
  Rng rng = make_rng(13);
  const std::size_t n = 1000000;
  std::vector<double> g0(n), g1(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Datum z = g.draw(rng);
    const double y = z.label(), x = z.x()[0];
    const bool active = y * (t[0] + t[1] * x) < 1.0;
    g0[i] = active ? -y : 0.0;
    g1[i] = active ? -y * x : 0.0;
  }
  EXPECT_LE(std::abs(stats::mean(g0)), 3.0 * stats::stddev(g0) / std::sqrt(double(n)));
  EXPECT_LE(std::abs(stats::mean(g1)), 3.0 * stats::stddev(g1) / std::sqrt(double(n)));
}

TEST(GeneratorTruth, KMeansCenters) {
  const auto g = make_generator({"kmeans_clusters", {}, {}, {}});
  LossSpec s;
  s.name = "kmeans";
  s.k = 3;
  s.dim = 2;
  const auto m = make_loss_model(s);
  const auto t = g->truth(*m);
  ASSERT_EQ(t.size(), 6u);
  Rng rng = make_rng(14);
  const Sample data = g->sample(30000, rng);
  const auto fit = solve_erm(*m, data, 0, false).theta;
  // Two true centers share x = −0.5, so compare up to relabeling.
  for (std::size_t k = 0; k < 3; ++k) {
    double best = kInf;
    for (std::size_t j = 0; j < 3; ++j) best = std::min(best, std::hypot(fit[2 * j] - t[2 * k], fit[2 * j + 1] - t[2 * k + 1]));
    EXPECT_LT(best, 0.01) << "center " << k;
  }
}

TEST(GeneratorTruth, AnovaGrandMean) {
  const AnovaTwoWayGenerator g;
  Rng rng = make_rng(15);
  EXPECT_EQ(g.sample(20, rng).size(), 400u);
  std::vector<double> means;
  for (int r = 0; r < 2000; ++r) {
    const auto v = scalar_values(g.sample(20, rng));
    means.push_back(stats::mean(v));
  }
  EXPECT_LE(std::abs(stats::mean(means) - 10.0), 3.0 * stats::stddev(means) / std::sqrt(2000.0));
  EXPECT_THROW(g.draw(rng), Error);
}

TEST(Generators, QuartilesMatchSample) {
  for (const auto& spec : std::vector<GeneratorSpec>{{"gaussian", {1.0, 4.0}, {}, {}},
                                                     {"gaussian_mixture", {5.0, 10.0, 1e4}, {}, {}},
                                                     {"exponential", {2.0}, {}, {}},
                                                     {"student_t", {3.0}, {}, {}}}) {
    const auto g = make_generator(spec);
    const auto q = g->quartiles();
    ASSERT_TRUE(q.has_value()) << spec.name;
    Rng rng = make_rng(16);
    auto v = scalar_values(g->sample(200000, rng));
    std::sort(v.begin(), v.end());
    const double scale = q->second - q->first;
    EXPECT_NEAR(stats::quantile_sorted(v, 0.25), q->first, 0.02 * scale) << spec.name;
    EXPECT_NEAR(stats::quantile_sorted(v, 0.75), q->second, 0.02 * scale) << spec.name;
  }
}

TEST(Generators, LabelsAndErrors) {
  Rng rng = make_rng(17);
  const LabeledThresholdGenerator th(5.0, 10.0, 1.0);
  const LogisticSvmGenerator svm;
  for (int i = 0; i < 100; ++i) {
    const double a = th.draw(rng).label();
    EXPECT_TRUE(a == 0.0 || a == 1.0);
    const double b = svm.draw(rng).label();
    EXPECT_TRUE(b == -1.0 || b == 1.0);
  }
  EXPECT_THROW(make_generator({"nope", {}, {}, {}}), Error);
  EXPECT_THROW(th.truth(*loss("l2_mean")), Error);
  EXPECT_THROW(LabeledThresholdGenerator(2.0, 1.0, 1.0), Error);
  EXPECT_THROW(GaussianGenerator(0.0, -1.0), Error);
}

TEST(Generators, SameSeedSameDraws) {
  const auto g = make_generator({"beta", {5.0, 2.0}, {}, {}});
  Rng a = make_rng(18), b = make_rng(18);
  EXPECT_EQ(scalar_values(g->sample(50, a)), scalar_values(g->sample(50, b)));
}
