#pragma once

// Competing interval constructions: predictable plug-in empirical Bernstein,
// bootstrap percentile and Wald intervals, and bootstrap ellipses for
// K-means centroids.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gue/calibration.hpp"
#include "gue/core.hpp"
#include "gue/evidence.hpp"
#include "gue/losses.hpp"
#include "gue/random.hpp"
#include "gue/stats.hpp"

namespace gue {

struct Interval {
  std::string method;
  double alpha = 0.05;
  double lower = 0.0;
  double upper = 0.0;

  bool contains(double x) const { return lower <= x && x <= upper; }
  double width() const { return std::max(0.0, upper - lower); }

  Json to_json() const { return {{"method", method}, {"alpha", alpha}, {"lower", lower}, {"upper", upper}}; }
};

// ---------------------------------------------------------------------------
// PrPl-EB confidence sequence for a mean in [0, 1]

struct PrplState {
  std::size_t t = 0;
  double sum_lw = 0.0;
  double sum_lwz = 0.0;
  double sum_penalty = 0.0;
  double mu_hat = 0.5;
  double sigma2_hat = 0.25;
  double sum_z = 0.0;
  double sum_sq = 0.0;  // Σ (Zᵢ − μ̂ᵢ)²
  double last_lambda = 0.0;
  double lower = 0.0;
  double upper = 1.0;

  bool empty() const { return lower > upper; }
  Interval interval(double alpha) const { return {"prpl_eb", alpha, lower, upper}; }
};

inline PrplState prpl_eb_update(PrplState s, double z, double alpha, double c = 0.5) {
  if (!(z >= 0.0 && z <= 1.0)) throw Error(ErrorCode::data_error, "PrPl-EB observations must lie in [0,1]");
  log_threshold(alpha);
  if (!(c > 0.0 && c < 1.0)) throw Error(ErrorCode::invalid_argument, "PrPl-EB truncation c must lie in (0,1)");
  const double log2a = std::log(2.0 / alpha);
  s.t += 1;
  const double t = static_cast<double>(s.t);
  const double lambda = std::min(c, std::sqrt(2.0 * log2a / (s.sigma2_hat * t * std::log1p(t))));
  const double dev = z - s.mu_hat;  // against μ̂_{t−1}
  s.last_lambda = lambda;
  s.sum_lw += lambda;
  s.sum_lwz += lambda * z;
  s.sum_penalty += dev * dev * (-std::log1p(-lambda) - lambda);

  const double center = s.sum_lwz / s.sum_lw;
  const double half = (log2a + s.sum_penalty) / s.sum_lw;
  s.lower = std::max({s.lower, center - half, 0.0});
  s.upper = std::min({s.upper, center + half, 1.0});

  s.sum_z += z;
  s.mu_hat = (0.5 + s.sum_z) / (t + 1.0);
  s.sum_sq += (z - s.mu_hat) * (z - s.mu_hat);
  s.sigma2_hat = (0.25 + s.sum_sq) / (t + 1.0);
  return s;
}

inline PrplState prpl_eb(std::span<const double> zs, double alpha, double c = 0.5) {
  PrplState s;
  for (double z : zs) s = prpl_eb_update(s, z, alpha, c);
  return s;
}

// ---------------------------------------------------------------------------
// Bootstrap intervals

using Estimator = std::function<ParamPoint(std::span<const Datum>)>;

/// α/2 and 1 − α/2 interpolated quantiles of each coordinate.
inline std::vector<Interval> percentile_intervals(std::span<const ParamPoint> estimates, double alpha) {
  if (estimates.empty()) throw Error(ErrorCode::empty_sample, "no bootstrap estimates");
  log_threshold(alpha);
  std::vector<Interval> out;
  std::vector<double> col(estimates.size());
  for (std::size_t j = 0; j < estimates.front().size(); ++j) {
    for (std::size_t b = 0; b < estimates.size(); ++b) col[b] = estimates[b][j];
    std::sort(col.begin(), col.end());
    out.push_back({"bootstrap_percentile", alpha, stats::quantile_sorted(col, alpha / 2.0),
                   stats::quantile_sorted(col, 1.0 - alpha / 2.0)});
  }
  return out;
}

inline std::vector<ParamPoint> bootstrap_estimates(const Estimator& estimator, std::span<const Datum> sample,
                                                   std::size_t B, std::uint64_t seed) {
  if (B == 0) throw Error(ErrorCode::invalid_argument, "B must be positive");
  if (sample.empty()) throw Error(ErrorCode::empty_sample, "sample is empty");
  std::vector<ParamPoint> out;
  out.reserve(B);
  Sample rs(sample.size());
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng = make_rng(seed, "percentile", b);
    for (auto& z : rs) z = sample[detail::fast_index(rng, sample.size())];
    out.push_back(estimator(rs));
  }
  return out;
}

/// Bootstrap ERMs via the model's count-based solver.
inline std::vector<ParamPoint> bootstrap_estimates(const LossModel& model, std::span<const Datum> sample,
                                                   std::size_t B, std::uint64_t seed) {
  if (B == 0) throw Error(ErrorCode::invalid_argument, "B must be positive");
  check_sample(model, sample);
  const auto solver = model.resample_solver(sample, derive_seed(seed, "solver"));
  const std::size_t n = sample.size();
  std::vector<std::uint32_t> counts(n);
  std::vector<ParamPoint> out;
  out.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng = make_rng(seed, "percentile", b);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t k = 0; k < n; ++k) ++counts[detail::fast_index(rng, n)];
    out.push_back(solver->solve(counts));
  }
  return out;
}

inline std::vector<Interval> bootstrap_percentile_ci(const Estimator& estimator, std::span<const Datum> sample,
                                                     double alpha, std::size_t B, std::uint64_t seed) {
  return percentile_intervals(bootstrap_estimates(estimator, sample, B, seed), alpha);
}

inline std::vector<Interval> bootstrap_percentile_ci(const LossModel& model, std::span<const Datum> sample,
                                                     double alpha, std::size_t B, std::uint64_t seed) {
  return percentile_intervals(bootstrap_estimates(model, sample, B, seed), alpha);
}

inline Interval wald_interval(double estimate, double se, double alpha) {
  const double z = stats::normal_quantile(1.0 - alpha / 2.0);
  return {"classical_wald", alpha, estimate - z * se, estimate + z * se};
}

struct WaldStat {
  double estimate = 0.0;
  double se = 0.0;

  Interval interval(double alpha) const { return wald_interval(estimate, se, alpha); }

  /// Two-sided p-value of H₀: θ = θ₀.
  double p_value(double theta0) const {
    const double d = std::abs(estimate - theta0);
    if (se == 0.0) return d == 0.0 ? 1.0 : 0.0;
    return std::min(1.0, 2.0 * stats::normal_sf(d / se));
  }
};

/// Scalar ERM with the bootstrap standard deviation of the ERM as its SE.
inline WaldStat bootstrap_wald_stat(const LossModel& model, std::span<const Datum> sample, std::size_t B,
                                    std::uint64_t seed) {
  if (model.param_dim() != 1) throw Error(ErrorCode::dimension_mismatch, "Wald interval needs a scalar parameter");
  WaldStat s;
  s.estimate = solve_erm(model, sample, derive_seed(seed, "erm"), false).theta[0];
  const auto boots = bootstrap_estimates(model, sample, B, seed);
  std::vector<double> v;
  v.reserve(boots.size());
  for (const auto& p : boots) v.push_back(p[0]);
  s.se = stats::stddev(v);
  return s;
}

/// θ̂ ± z_{1−α/2}·SE with SE the bootstrap standard deviation of the ERM.
inline Interval classical_wald_interval(const LossModel& model, std::span<const Datum> sample, double alpha,
                                        std::size_t B, std::uint64_t seed) {
  log_threshold(alpha);
  return bootstrap_wald_stat(model, sample, B, seed).interval(alpha);
}

// ---------------------------------------------------------------------------
// K-means bootstrap ellipses

struct Ellipse {
  std::array<double, 2> center{};
  std::array<double, 4> cov{};  // row-major 2×2
  double scale = 0.0;

  /// (μ − c)ᵀ Σ⁻¹ (μ − c) ≤ scale; a singular Σ reduces to its support.
  bool contains(std::span<const double> mu) const {
    const double dx = mu[0] - center[0], dy = mu[1] - center[1];
    const double det = cov[0] * cov[3] - cov[1] * cov[2];
    const double tr = cov[0] + cov[3];
    if (tr <= 0.0) return std::abs(dx) <= kTolerance && std::abs(dy) <= kTolerance;
    if (det <= 1e-14 * tr * tr) {
      // Rank one: allowed only along the principal direction.
      const double nx = cov[0] >= cov[3] ? cov[0] : cov[1];
      const double ny = cov[0] >= cov[3] ? cov[2] : cov[3];
      const double norm = std::hypot(nx, ny);
      const double along = (dx * nx + dy * ny) / norm;
      const double across = (-dx * ny + dy * nx) / norm;
      return std::abs(across) <= kTolerance && along * along / tr <= scale;
    }
    const double q = (cov[3] * dx * dx - (cov[1] + cov[2]) * dx * dy + cov[0] * dy * dy) / det;
    return q <= scale;
  }

  Json to_json() const {
    return {{"center", center}, {"cov", {{cov[0], cov[1]}, {cov[2], cov[3]}}}, {"scale", scale}};
  }
};

struct EllipseSet {
  std::vector<Ellipse> ellipses;
  double alpha = 0.05;
  std::optional<std::string> warning;

  Json to_json() const {
    Json j;
    j["method"] = "kmeans_bootstrap_ellipse";
    j["alpha"] = alpha;
    Json e = Json::array();
    for (const auto& el : ellipses) e.push_back(el.to_json());
    j["ellipses"] = std::move(e);
    if (warning) j["warning"] = *warning;
    return j;
  }
};

/// Per-centroid bootstrap covariance scaled by the χ²₂ quantile at 1 − α.
/// Replicate centroids are matched to the original centroids by nearest
/// center.
inline EllipseSet kmeans_bootstrap_ellipse(std::span<const Datum> sample, std::size_t K, double alpha, std::size_t B,
                                           std::uint64_t seed) {
  if (K == 0) throw Error(ErrorCode::invalid_argument, "K must be positive");
  if (B == 0) throw Error(ErrorCode::invalid_argument, "B must be positive");
  log_threshold(alpha);
  const KMeansLoss model(K, 2);
  check_sample(model, sample);
  const auto base = solve_erm(model, sample, derive_seed(seed, "erm"), false).theta;

  std::vector<std::vector<std::array<double, 2>>> matched(K);
  std::size_t collisions = 0;
  Sample rs(sample.size());
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng = make_rng(seed, "ellipse", b);
    for (auto& z : rs) z = sample[detail::fast_index(rng, sample.size())];
    ErmOptions opts;
    opts.seed = derive_seed(seed, "ellipse-erm", b);
    opts.certify = false;
    const auto theta = model.solve_erm(rs, opts).theta;
    std::vector<bool> used(K, false);
    for (std::size_t k = 0; k < K; ++k) {
      const double c[2] = {theta[2 * k], theta[2 * k + 1]};
      const std::size_t target = model.assign(base, std::span<const double>(c, 2));
      if (used[target]) ++collisions;
      used[target] = true;
      matched[target].push_back({c[0], c[1]});
    }
  }

  EllipseSet out;
  out.alpha = alpha;
  const double scale = stats::chi_squared_quantile(2.0, 1.0 - alpha);
  for (std::size_t k = 0; k < K; ++k) {
    Ellipse e;
    e.center = {base[2 * k], base[2 * k + 1]};
    e.scale = scale;
    const auto& pts = matched[k];
    if (pts.size() >= 2) {
      double mx = 0.0, my = 0.0;
      for (const auto& p : pts) {
        mx += p[0];
        my += p[1];
      }
      mx /= static_cast<double>(pts.size());
      my /= static_cast<double>(pts.size());
      double sxx = 0.0, sxy = 0.0, syy = 0.0;
      for (const auto& p : pts) {
        sxx += (p[0] - mx) * (p[0] - mx);
        sxy += (p[0] - mx) * (p[1] - my);
        syy += (p[1] - my) * (p[1] - my);
      }
      const double d = static_cast<double>(pts.size() - 1);
      e.cov = {sxx / d, sxy / d, sxy / d, syy / d};
    }
    out.ellipses.push_back(e);
  }
  if (collisions > 0) {
    out.warning = std::to_string(collisions) + " replicate centroids collided under nearest-center matching";
  }
  return out;
}

}  // namespace gue
