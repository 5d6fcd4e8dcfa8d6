#pragma once

// Data-generating processes with known risk minimizers.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/exponential.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/distributions/triangular.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

#include "gue/core.hpp"
#include "gue/evidence.hpp"
#include "gue/losses.hpp"
#include "gue/random.hpp"

namespace gue {

class DataGenerator {
 public:
  virtual ~DataGenerator() = default;

  virtual std::string name() const = 0;
  virtual Datum draw(Rng& rng) const = 0;

  /// n i.i.d. draws.
  virtual Sample sample(std::size_t n, Rng& rng) const {
    Sample out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(draw(rng));
    return out;
  }

  /// Population risk minimizer of `model` under this distribution.
  virtual ParamPoint truth(const LossModel& model) const = 0;

  /// True first and third quartiles of scalar data.
  virtual std::optional<std::pair<double, double>> quartiles() const { return std::nullopt; }

  virtual Json to_json() const { return {{"name", name()}}; }

 protected:
  [[noreturn]] void unsupported(const LossModel& model) const {
    throw Error(ErrorCode::invalid_argument, "generator " + name() + " has no declared truth for loss " + model.name());
  }
};

using GeneratorPtr = std::shared_ptr<const DataGenerator>;

/// Scalar distributions: mean, quantile, restricted quantile.
class ScalarGenerator : public DataGenerator {
 public:
  virtual double draw_value(Rng& rng) const = 0;
  virtual double mean() const = 0;
  virtual double quantile(double p) const = 0;

  Datum draw(Rng& rng) const override { return Datum::scalar(draw_value(rng)); }

  ParamPoint truth(const LossModel& model) const override {
    const std::string n = model.name();
    if (n == "l2_mean") return ParamPoint{mean()};
    if (n == "l1_median") return ParamPoint{quantile(0.5)};
    if (const auto* ql = dynamic_cast<const QuantileLoss*>(&model)) {
      // The pinball risk is convex, so the restricted minimizer is the projection.
      double t = quantile(ql->level());
      if (auto region = model.feasible_region()) t = std::clamp(t, region->lo[0], region->hi[0]);
      return ParamPoint{t};
    }
    unsupported(model);
  }

  std::optional<std::pair<double, double>> quartiles() const override {
    return std::make_pair(quantile(0.25), quantile(0.75));
  }
};

class GaussianGenerator final : public ScalarGenerator {
 public:
  GaussianGenerator(double mu, double sigma2) : mu_(mu), sigma_(std::sqrt(sigma2)) {
    if (!(sigma2 > 0.0)) throw Error(ErrorCode::invalid_argument, "gaussian variance must be positive");
  }
  std::string name() const override { return "gaussian"; }
  double draw_value(Rng& rng) const override { return std::normal_distribution<double>(mu_, sigma_)(rng); }
  double mean() const override { return mu_; }
  double quantile(double p) const override {
    return boost::math::quantile(boost::math::normal_distribution<double>(mu_, sigma_), p);
  }
  Json to_json() const override { return {{"name", name()}, {"mu", mu_}, {"sigma2", sigma_ * sigma_}}; }

 private:
  double mu_, sigma_;
};

/// Σ w_k N(μ_k, σ²).
class GaussianMixtureGenerator final : public ScalarGenerator {
 public:
  GaussianMixtureGenerator(std::vector<double> mus, double sigma2, std::vector<double> weights)
      : mus_(std::move(mus)), sigma_(std::sqrt(sigma2)), weights_(std::move(weights)) {
    if (mus_.empty() || mus_.size() != weights_.size()) {
      throw Error(ErrorCode::invalid_argument, "mixture needs one weight per component");
    }
    if (!(sigma2 > 0.0)) throw Error(ErrorCode::invalid_argument, "mixture variance must be positive");
    double s = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0)) throw Error(ErrorCode::invalid_argument, "mixture weights must be nonnegative");
      s += w;
    }
    if (!(s > 0.0)) throw Error(ErrorCode::invalid_argument, "mixture weights sum to zero");
    for (double& w : weights_) w /= s;
  }
  std::string name() const override { return "gaussian_mixture"; }

  std::size_t component(Rng& rng) const {
    return std::discrete_distribution<std::size_t>(weights_.begin(), weights_.end())(rng);
  }
  double draw_value(Rng& rng) const override {
    return std::normal_distribution<double>(mus_[component(rng)], sigma_)(rng);
  }
  double mean() const override {
    double m = 0.0;
    for (std::size_t k = 0; k < mus_.size(); ++k) m += weights_[k] * mus_[k];
    return m;
  }
  double cdf(double x) const {
    double c = 0.0;
    for (std::size_t k = 0; k < mus_.size(); ++k) {
      c += weights_[k] * boost::math::cdf(boost::math::normal_distribution<double>(mus_[k], sigma_), x);
    }
    return c;
  }
  double quantile(double p) const override {
    const auto [lo_it, hi_it] = std::minmax_element(mus_.begin(), mus_.end());
    const double z = boost::math::quantile(boost::math::normal_distribution<double>(), std::max(p, 1.0 - p));
    const double lo = *lo_it - (z + 1.0) * sigma_, hi = *hi_it + (z + 1.0) * sigma_;
    const auto r = boost::math::tools::bisect([&](double x) { return cdf(x) - p; }, lo, hi,
                                              boost::math::tools::eps_tolerance<double>(50));
    return 0.5 * (r.first + r.second);
  }
  const std::vector<double>& means() const { return mus_; }
  const std::vector<double>& weights() const { return weights_; }
  double sigma() const { return sigma_; }
  Json to_json() const override {
    return {{"name", name()}, {"mus", mus_}, {"sigma2", sigma_ * sigma_}, {"weights", weights_}};
  }

 private:
  std::vector<double> mus_;
  double sigma_;
  std::vector<double> weights_;
};

class BetaGenerator final : public ScalarGenerator {
 public:
  BetaGenerator(double a, double b) : a_(a), b_(b) {
    if (!(a > 0.0 && b > 0.0)) throw Error(ErrorCode::invalid_argument, "beta shapes must be positive");
  }
  std::string name() const override { return "beta"; }
  double draw_value(Rng& rng) const override {
    const double u = std::gamma_distribution<double>(a_, 1.0)(rng);
    const double v = std::gamma_distribution<double>(b_, 1.0)(rng);
    return u / (u + v);
  }
  double mean() const override { return a_ / (a_ + b_); }
  double quantile(double p) const override {
    return boost::math::quantile(boost::math::beta_distribution<double>(a_, b_), p);
  }
  Json to_json() const override { return {{"name", name()}, {"a", a_}, {"b", b_}}; }

 private:
  double a_, b_;
};

class ExponentialGenerator final : public ScalarGenerator {
 public:
  explicit ExponentialGenerator(double rate) : rate_(rate) {
    if (!(rate > 0.0)) throw Error(ErrorCode::invalid_argument, "exponential rate must be positive");
  }
  std::string name() const override { return "exponential"; }
  double draw_value(Rng& rng) const override { return std::exponential_distribution<double>(rate_)(rng); }
  double mean() const override { return 1.0 / rate_; }
  double quantile(double p) const override {
    return boost::math::quantile(boost::math::exponential_distribution<double>(rate_), p);
  }
  Json to_json() const override { return {{"name", name()}, {"rate", rate_}}; }

 private:
  double rate_;
};

class TriangularGenerator final : public ScalarGenerator {
 public:
  TriangularGenerator(double lo = 0.0, double mode = 1.0, double hi = 2.0) : dist_(lo, mode, hi) {}
  std::string name() const override { return "triangular"; }
  double draw_value(Rng& rng) const override {
    return boost::math::quantile(dist_, std::uniform_real_distribution<double>(0.0, 1.0)(rng));
  }
  double mean() const override { return boost::math::mean(dist_); }
  double quantile(double p) const override { return boost::math::quantile(dist_, p); }
  Json to_json() const override {
    return {{"name", name()}, {"lo", dist_.lower()}, {"mode", dist_.mode()}, {"hi", dist_.upper()}};
  }

 private:
  boost::math::triangular_distribution<double> dist_;
};

class StudentTGenerator final : public ScalarGenerator {
 public:
  explicit StudentTGenerator(double df) : df_(df) {
    if (!(df > 0.0)) throw Error(ErrorCode::invalid_argument, "degrees of freedom must be positive");
  }
  std::string name() const override { return "student_t"; }
  double draw_value(Rng& rng) const override { return std::student_t_distribution<double>(df_)(rng); }
  double mean() const override {
    if (!(df_ > 1.0)) throw Error(ErrorCode::invalid_argument, "student t mean needs df > 1");
    return 0.0;
  }
  double quantile(double p) const override {
    return boost::math::quantile(boost::math::students_t_distribution<double>(df_), p);
  }
  Json to_json() const override { return {{"name", name()}, {"df", df_}}; }

 private:
  double df_;
};

/// (x, y) with y the component label: N(μ₁, σ²) for y = 0, N(μ₂, σ²) for y = 1.
class LabeledThresholdGenerator final : public DataGenerator {
 public:
  LabeledThresholdGenerator(double mu1, double mu2, double sigma2, double w1 = 0.5)
      : mu1_(mu1), mu2_(mu2), sigma_(std::sqrt(sigma2)), w1_(w1) {
    if (!(mu1 < mu2)) throw Error(ErrorCode::invalid_argument, "threshold generator needs mu1 < mu2");
    if (!(sigma2 > 0.0)) throw Error(ErrorCode::invalid_argument, "threshold generator variance must be positive");
    if (!(w1 > 0.0 && w1 < 1.0)) throw Error(ErrorCode::invalid_argument, "component weight must lie in (0,1)");
  }
  std::string name() const override { return "labeled_threshold"; }
  Datum draw(Rng& rng) const override {
    const bool second = std::uniform_real_distribution<double>(0.0, 1.0)(rng) >= w1_;
    const double x = std::normal_distribution<double>(second ? mu2_ : mu1_, sigma_)(rng);
    return Datum::labeled(x, second ? 1.0 : 0.0);
  }
  /// Point where the weighted densities cross; (μ₁+μ₂)/2 for equal weights.
  ParamPoint truth(const LossModel& model) const override {
    if (model.name() != "zero_one_threshold") unsupported(model);
    const double w2 = 1.0 - w1_;
    return ParamPoint{0.5 * (mu1_ + mu2_) + sigma_ * sigma_ * std::log(w1_ / w2) / (mu2_ - mu1_)};
  }
  Json to_json() const override {
    return {{"name", name()}, {"mu1", mu1_}, {"mu2", mu2_}, {"sigma2", sigma_ * sigma_}, {"w1", w1_}};
  }

 private:
  double mu1_, mu2_, sigma_, w1_;
};

/// x ~ N(0,1), P(Y = 1 | x) = expit(x), labels ±1.
class LogisticSvmGenerator final : public DataGenerator {
 public:
  std::string name() const override { return "logistic_svm"; }
  Datum draw(Rng& rng) const override {
    const double x = std::normal_distribution<double>(0.0, 1.0)(rng);
    const double p = 1.0 / (1.0 + std::exp(-x));
    return Datum::labeled(x, std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p ? 1.0 : -1.0);
  }

  /// Population hinge risk of (0, b); the design is symmetric under
  /// (x, y) → (−x, −y), so the optimal intercept is 0.
  static double slope_risk(double b) {
    auto f = [b](double x) {
      const double p = 1.0 / (1.0 + std::exp(-x));
      const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
      return phi * (p * std::max(0.0, 1.0 - b * x) + (1.0 - p) * std::max(0.0, 1.0 + b * x));
    };
    // Split at the hinge kinks ±1/b for accuracy.
    const double k = b > 0.0 ? 1.0 / b : 50.0;
    using Q = boost::math::quadrature::gauss_kronrod<double, 61>;
    return Q::integrate(f, -50.0, -k, 10, 1e-12) + Q::integrate(f, -k, k, 10, 1e-12) +
           Q::integrate(f, k, 50.0, 10, 1e-12);
  }

  ParamPoint truth(const LossModel& model) const override {
    if (model.name() != "hinge_svm") unsupported(model);
    const auto r = boost::math::tools::brent_find_minima(slope_risk, 0.01, 20.0, 50);
    return ParamPoint{0.0, r.first};
  }
};

/// Isotropic 2-D Gaussian clusters.
class KMeansClustersGenerator final : public DataGenerator {
 public:
  KMeansClustersGenerator(std::vector<std::array<double, 2>> centers, double sigma2, std::vector<double> probs)
      : centers_(std::move(centers)), sigma_(std::sqrt(sigma2)), probs_(std::move(probs)) {
    if (centers_.empty() || centers_.size() != probs_.size()) {
      throw Error(ErrorCode::invalid_argument, "kmeans generator needs one probability per center");
    }
    if (!(sigma2 > 0.0)) throw Error(ErrorCode::invalid_argument, "cluster variance must be positive");
  }
  std::string name() const override { return "kmeans_clusters"; }
  Datum draw(Rng& rng) const override {
    const auto k = std::discrete_distribution<std::size_t>(probs_.begin(), probs_.end())(rng);
    std::normal_distribution<double> g(0.0, sigma_);
    return Datum::vector({centers_[k][0] + g(rng), centers_[k][1] + g(rng)});
  }
  /// The population centers, in the model's canonical order.
  ParamPoint truth(const LossModel& model) const override {
    const auto* km = dynamic_cast<const KMeansLoss*>(&model);
    if (!km || km->clusters() != centers_.size() || km->data_dim() != 2) unsupported(model);
    ParamPoint t;
    for (const auto& c : centers_) {
      t.push_back(c[0]);
      t.push_back(c[1]);
    }
    return km->canonical(t);
  }
  const std::vector<std::array<double, 2>>& centers() const { return centers_; }
  Json to_json() const override {
    Json c = Json::array();
    for (const auto& p : centers_) c.push_back({p[0], p[1]});
    return {{"name", name()}, {"centers", c}, {"sigma2", sigma_ * sigma_}, {"probs", probs_}};
  }

 private:
  std::vector<std::array<double, 2>> centers_;
  double sigma_;
  std::vector<double> probs_;
};

/// Z_ij = μ + α_i + β_j + ε_ij on a side × side table with centered
/// exponential effects. sample(side) returns the table row-major; the cells
/// are exchangeable but not independent, so single draws are not defined.
class AnovaTwoWayGenerator final : public DataGenerator {
 public:
  AnovaTwoWayGenerator(double mu = 10.0, double var_a = 0.1, double var_b = 0.05, double var_e = 1.0)
      : mu_(mu), sa_(std::sqrt(var_a)), sb_(std::sqrt(var_b)), se_(std::sqrt(var_e)) {
    if (!(var_a > 0.0 && var_b > 0.0 && var_e > 0.0)) {
      throw Error(ErrorCode::invalid_argument, "ANOVA variance components must be positive");
    }
  }
  std::string name() const override { return "anova_two_way"; }
  Datum draw(Rng&) const override {
    throw Error(ErrorCode::invalid_argument, "anova_two_way draws whole tables; use sample(side)");
  }
  Sample sample(std::size_t side, Rng& rng) const override {
    auto centered = [&rng](double s) { return std::exponential_distribution<double>(1.0 / s)(rng) - s; };
    std::vector<double> a(side), b(side);
    for (auto& v : a) v = centered(sa_);
    for (auto& v : b) v = centered(sb_);
    Sample out;
    out.reserve(side * side);
    for (std::size_t i = 0; i < side; ++i) {
      for (std::size_t j = 0; j < side; ++j) out.push_back(Datum::scalar(mu_ + a[i] + b[j] + centered(se_)));
    }
    return out;
  }
  ParamPoint truth(const LossModel& model) const override {
    if (model.name() != "l2_mean") unsupported(model);
    return ParamPoint{mu_};
  }
  Json to_json() const override {
    return {{"name", name()}, {"mu", mu_}, {"var_a", sa_ * sa_}, {"var_b", sb_ * sb_}, {"var_e", se_ * se_}};
  }

 private:
  double mu_, sa_, sb_, se_;
};

/// Named generator with numeric parameters, as read from configs.
/// Resampling from a fixed data set; the truth is the ERM on that set.
class EmpiricalGenerator final : public DataGenerator {
 public:
  explicit EmpiricalGenerator(Sample data) : data_(std::move(data)) {
    if (data_.empty()) throw Error(ErrorCode::empty_sample, "empirical generator needs data");
    validate_sample(data_);
  }
  std::string name() const override { return "empirical"; }
  Datum draw(Rng& rng) const override {
    return data_[std::uniform_int_distribution<std::size_t>(0, data_.size() - 1)(rng)];
  }
  ParamPoint truth(const LossModel& model) const override { return solve_erm(model, data_, 0, false).theta; }
  Json to_json() const override { return {{"name", name()}, {"size", data_.size()}}; }

 private:
  Sample data_;
};

struct GeneratorSpec {
  std::string name = "gaussian";
  std::vector<double> params;
  std::vector<double> weights;  // mixture weights / cluster probabilities
  std::vector<double> centers;  // kmeans: x1 y1 x2 y2 ...
};

inline GeneratorPtr make_generator(const GeneratorSpec& s) {
  auto p = [&](std::size_t i, double fallback) { return i < s.params.size() ? s.params[i] : fallback; };
  const std::string& n = s.name;
  if (n == "gaussian") return std::make_shared<GaussianGenerator>(p(0, 0.0), p(1, 1.0));
  if (n == "gaussian_mixture") {
    // params: μ₁ μ₂ σ²
    const std::vector<double> w = s.weights.empty() ? std::vector<double>{0.5, 0.5} : s.weights;
    return std::make_shared<GaussianMixtureGenerator>(std::vector<double>{p(0, 5.0), p(1, 10.0)}, p(2, 1e4), w);
  }
  if (n == "beta") return std::make_shared<BetaGenerator>(p(0, 5.0), p(1, 2.0));
  if (n == "exponential") return std::make_shared<ExponentialGenerator>(p(0, 1.0));
  if (n == "triangular") return std::make_shared<TriangularGenerator>(p(0, 0.0), p(1, 1.0), p(2, 2.0));
  if (n == "student_t") return std::make_shared<StudentTGenerator>(p(0, 3.0));
  if (n == "labeled_threshold") {
    const double w1 = s.weights.empty() ? 0.5 : s.weights[0] / (s.weights[0] + s.weights.at(1));
    return std::make_shared<LabeledThresholdGenerator>(p(0, 5.0), p(1, 10.0), p(2, 1e4), w1);
  }
  if (n == "logistic_svm") return std::make_shared<LogisticSvmGenerator>();
  if (n == "kmeans_clusters") {
    std::vector<std::array<double, 2>> c;
    if (s.centers.empty()) {
      c = {{1.0, 0.0}, {-0.5, std::sqrt(3.0) / 2.0}, {-0.5, -std::sqrt(3.0) / 2.0}};
    } else {
      if (s.centers.size() % 2 != 0) throw Error(ErrorCode::config_error, "kmeans centers need x,y pairs");
      for (std::size_t i = 0; i < s.centers.size(); i += 2) c.push_back({s.centers[i], s.centers[i + 1]});
    }
    std::vector<double> w = s.weights.empty() ? std::vector<double>(c.size(), 1.0 / static_cast<double>(c.size()))
                                              : s.weights;
    return std::make_shared<KMeansClustersGenerator>(c, p(0, 0.01), w);
  }
  if (n == "anova_two_way") return std::make_shared<AnovaTwoWayGenerator>(p(0, 10.0), p(1, 0.1), p(2, 0.05), p(3, 1.0));
  throw Error(ErrorCode::invalid_argument, "unknown generator '" + n + "'");
}

}  // namespace gue
