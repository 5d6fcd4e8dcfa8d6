#pragma once

// Learning-rate calibration: bootstrap coverage matching (nonparametric and
// parametric), the exact normal/L2 rate and the Berry-Esseen safety check.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "gue/core.hpp"
#include "gue/evidence.hpp"
#include "gue/losses.hpp"
#include "gue/random.hpp"
#include "gue/stats.hpp"

namespace gue {

enum class CalibrationMode { offline, online };

inline const char* to_string(CalibrationMode m) { return m == CalibrationMode::offline ? "offline" : "online"; }

struct CalibrationConfig {
  std::vector<double> candidates;  // empty: default grid
  double alpha = 0.05;
  std::size_t bootstrap_reps = 200;
  CalibrationMode mode = CalibrationMode::offline;
  std::uint64_t seed = 0;
  double split_frac = 0.5;
  /// θ̂₀ for online-mode traces; the model default when unset.
  std::optional<ParamPoint> theta0;

  void validate() const {
    log_threshold(alpha);
    if (bootstrap_reps == 0) throw Error(ErrorCode::config_error, "bootstrap_reps must be positive");
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      check_rate(candidates[i]);
      if (i > 0 && candidates[i] < candidates[i - 1]) {
        throw Error(ErrorCode::config_error, "candidate rates must be sorted ascending");
      }
    }
  }
};

struct CalibrationResult {
  std::vector<double> candidates;
  std::vector<double> coverages;
  double chosen = 0.0;
  std::size_t chosen_index = 0;
  double alpha = 0.05;
  CalibrationMode mode = CalibrationMode::offline;
  std::uint64_t seed = 0;
  std::string method;
  std::optional<std::string> warning;

  Json to_json() const {
    Json j;
    j["candidates"] = candidates;
    j["coverages"] = coverages;
    j["chosen"] = chosen;
    j["alpha"] = alpha;
    j["mode"] = to_string(mode);
    j["seed"] = seed;
    j["method"] = method;
    if (warning) j["warning"] = *warning;
    return j;
  }
};

/// Per-resample loss gap E_b with G_b(θ̂) = exp(ω·E_b). Because every rate
/// in a resample is the same ω, one table of gaps answers all candidates.
struct GapTable {
  ParamPoint theta_hat;
  std::vector<double> gaps;
};

/// Coverage of each candidate: fraction of resamples with ω·E_b < log(1/α).
inline std::vector<double> coverage_from_gaps(std::span<const double> gaps, std::span<const double> candidates,
                                              double alpha) {
  const double thr = log_threshold(alpha);
  std::vector<double> out;
  out.reserve(candidates.size());
  for (double w : candidates) {
    std::size_t hit = 0;
    for (double e : gaps) hit += (w * e < thr) ? 1 : 0;
    out.push_back(static_cast<double>(hit) / static_cast<double>(gaps.size()));
  }
  return out;
}

/// argmin over candidates of |coverage − (1 − α)|; ties go to the smaller rate.
inline CalibrationResult select_rate(std::span<const double> gaps, std::span<const double> candidates, double alpha) {
  if (candidates.empty()) throw Error(ErrorCode::config_error, "candidate set is empty");
  CalibrationResult r;
  r.candidates.assign(candidates.begin(), candidates.end());
  r.coverages = coverage_from_gaps(gaps, candidates, alpha);
  r.alpha = alpha;
  double best = kInf;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double d = std::abs(r.coverages[i] - (1.0 - alpha));
    if (d < best - 1e-15) {
      best = d;
      r.chosen_index = i;
    }
  }
  r.chosen = candidates[r.chosen_index];
  const bool degenerate = std::all_of(r.coverages.begin(), r.coverages.end(),
                                      [](double c) { return c == 0.0 || c == 1.0; });
  if (degenerate && candidates.size() > 1) {
    r.warning = "every candidate has bootstrap coverage 0 or 1; the candidate grid is likely mis-scaled";
  }
  return r;
}

/// 40 log-spaced rates on [1e-3, 1e3] divided by the standard deviation of
/// the per-observation losses at the ERM.
inline std::vector<double> default_candidates(const LossModel& model, std::span<const Datum> sample,
                                              std::uint64_t seed = 0) {
  const auto theta = solve_erm(model, sample, seed, false).theta;
  std::vector<double> losses;
  for (const auto& z : sample) losses.push_back(model.loss(theta, z));
  const double sd = stats::stddev(losses);
  double level = 0.0;
  for (double l : losses) level = std::max(level, std::abs(l));
  // Spread at rounding level (e.g. the L1 midpoint of two points) counts as none.
  const double scale = (sd > 1e-9 * std::max(1.0, level) && std::isfinite(sd)) ? 1.0 / sd : 1.0;
  std::vector<double> out(40);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = scale * std::pow(10.0, -3.0 + 6.0 * static_cast<double>(i) / 39.0);
  }
  return out;
}

namespace detail {

/// Uniform integer in [0, n) from one 64-bit draw.
inline std::size_t fast_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

inline std::size_t split_point(std::size_t n, double frac) {
  auto n1 = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
  return std::clamp<std::size_t>(n1, 1, n - 1);
}

/// Gap of one explicit resample.
inline double resample_gap(const LossModel& model, std::span<const Datum> rs, const ParamPoint& theta_hat,
                           const CalibrationConfig& cfg, const ParamPoint& theta0, std::uint64_t seed) {
  double gap = 0.0;
  if (cfg.mode == CalibrationMode::offline) {
    const std::size_t n1 = split_point(rs.size(), cfg.split_frac);
    ErmOptions opts;
    opts.seed = seed;
    opts.certify = false;
    const auto fit = model.solve_erm(rs.first(n1), opts).theta;
    for (std::size_t i = n1; i < rs.size(); ++i) gap += model.loss(theta_hat, rs[i]) - model.loss(fit, rs[i]);
  } else {
    const auto lagged = model.lagged_estimates(rs, theta0, seed);
    for (std::size_t i = 0; i < rs.size(); ++i) gap += model.loss(theta_hat, rs[i]) - model.loss(lagged[i], rs[i]);
  }
  return gap;
}

}  // namespace detail

/// Gap table of the nonparametric bootstrap. Resamples are drawn once and
/// shared by every candidate rate.
inline GapTable nonparam_gaps(const LossModel& model, std::span<const Datum> sample, const CalibrationConfig& cfg) {
  if (sample.size() < 2) throw Error(ErrorCode::empty_sample, "calibration needs at least two observations");
  check_sample(model, sample);
  cfg.validate();
  GapTable t;
  t.theta_hat = solve_erm(model, sample, derive_seed(cfg.seed, "erm"), false).theta;
  const ParamPoint theta0 = cfg.theta0.value_or(model.default_theta0());
  const std::size_t n = sample.size();
  t.gaps.reserve(cfg.bootstrap_reps);

  if (cfg.mode == CalibrationMode::offline) {
    // Only the first part needs an ERM, solved on resample counts.
    const auto solver = model.resample_solver(sample, derive_seed(cfg.seed, "solver"));
    const std::size_t n1 = detail::split_point(n, cfg.split_frac);
    std::vector<double> at_hat(n);
    for (std::size_t i = 0; i < n; ++i) at_hat[i] = model.loss(t.theta_hat, sample[i]);
    std::vector<std::uint32_t> counts(n);
    std::vector<std::size_t> idx(n);
    for (std::size_t b = 0; b < cfg.bootstrap_reps; ++b) {
      Rng rng = make_rng(cfg.seed, "bootstrap", b);
      for (auto& i : idx) i = detail::fast_index(rng, n);
      std::fill(counts.begin(), counts.end(), 0);
      for (std::size_t k = 0; k < n1; ++k) ++counts[idx[k]];
      const auto fit = solver->solve(counts);
      double gap = 0.0;
      for (std::size_t k = n1; k < n; ++k) gap += at_hat[idx[k]] - model.loss(fit, sample[idx[k]]);
      t.gaps.push_back(gap);
    }
  } else {
    Sample rs(n);
    for (std::size_t b = 0; b < cfg.bootstrap_reps; ++b) {
      Rng rng = make_rng(cfg.seed, "bootstrap", b);
      for (auto& z : rs) z = sample[detail::fast_index(rng, n)];
      t.gaps.push_back(detail::resample_gap(model, rs, t.theta_hat, cfg, theta0, derive_seed(cfg.seed, "lag", b)));
    }
  }
  return t;
}

/// Nonparametric bootstrap calibration.
inline CalibrationResult calibrate_nonparam(const LossModel& model, std::span<const Datum> sample,
                                            const CalibrationConfig& cfg) {
  const auto candidates = cfg.candidates.empty() ? default_candidates(model, sample, cfg.seed) : cfg.candidates;
  const auto table = nonparam_gaps(model, sample, cfg);
  auto r = select_rate(table.gaps, candidates, cfg.alpha);
  r.mode = cfg.mode;
  r.seed = cfg.seed;
  r.method = "nonparam_bootstrap";
  return r;
}

// ---------------------------------------------------------------------------
// Parametric families fitted by maximum likelihood

enum class Family { normal, exponential, beta };

inline Family parse_family(const std::string& s) {
  if (s == "normal") return Family::normal;
  if (s == "exponential") return Family::exponential;
  if (s == "beta") return Family::beta;
  throw Error(ErrorCode::invalid_argument, "unknown parametric family '" + s + "' (normal, exponential, beta)");
}

inline const char* to_string(Family f) {
  switch (f) {
    case Family::normal: return "normal";
    case Family::exponential: return "exponential";
    case Family::beta: return "beta";
  }
  return "unknown";
}

struct FittedFamily {
  Family family = Family::normal;
  double p1 = 0.0;  // normal: mean; exponential: rate; beta: a
  double p2 = 0.0;  // normal: sd; beta: b

  double draw(Rng& rng) const {
    switch (family) {
      case Family::normal: return std::normal_distribution<double>(p1, p2)(rng);
      case Family::exponential: return std::exponential_distribution<double>(p1)(rng);
      case Family::beta: {
        const double x = std::gamma_distribution<double>(p1, 1.0)(rng);
        const double y = std::gamma_distribution<double>(p2, 1.0)(rng);
        return x / (x + y);
      }
    }
    return 0.0;
  }
};

inline FittedFamily fit_family(Family family, std::span<const double> xs) {
  if (xs.size() < 2) throw Error(ErrorCode::fit_failure, "need at least two observations to fit");
  const double n = static_cast<double>(xs.size());
  const double m = stats::mean(xs);
  FittedFamily f;
  f.family = family;
  switch (family) {
    case Family::normal: {
      double ss = 0.0;
      for (double x : xs) ss += (x - m) * (x - m);
      f.p1 = m;
      f.p2 = std::sqrt(ss / n);
      if (!(f.p2 > 0.0)) throw Error(ErrorCode::fit_failure, "normal fit has zero variance");
      return f;
    }
    case Family::exponential: {
      if (std::any_of(xs.begin(), xs.end(), [](double x) { return x < 0.0; }) || !(m > 0.0)) {
        throw Error(ErrorCode::fit_failure, "exponential fit needs nonnegative data with positive mean");
      }
      f.p1 = 1.0 / m;
      return f;
    }
    case Family::beta: {
      double s1 = 0.0, s2 = 0.0;
      for (double x : xs) {
        if (!(x > 0.0 && x < 1.0)) throw Error(ErrorCode::fit_failure, "beta fit needs data strictly inside (0,1)");
        s1 += std::log(x);
        s2 += std::log1p(-x);
      }
      s1 /= n;
      s2 /= n;
      const double v = stats::variance(xs);
      if (!(v > 0.0)) throw Error(ErrorCode::fit_failure, "beta fit has zero variance");
      const double common = m * (1.0 - m) / v - 1.0;
      double a = std::max(common * m, 0.05);
      double b = std::max(common * (1.0 - m), 0.05);
      using boost::math::digamma;
      using boost::math::trigamma;
      for (int it = 0; it < 200; ++it) {
        const double g1 = digamma(a + b) - digamma(a) + s1;
        const double g2 = digamma(a + b) - digamma(b) + s2;
        const double tab = trigamma(a + b);
        const double h11 = tab - trigamma(a), h22 = tab - trigamma(b), h12 = tab;
        const double det = h11 * h22 - h12 * h12;
        double da = (h22 * g1 - h12 * g2) / det;
        double db = (h11 * g2 - h12 * g1) / det;
        // Newton step on the concave log-likelihood, halved to stay positive.
        double step = 1.0;
        while (a - step * da <= 0.0 || b - step * db <= 0.0) step *= 0.5;
        a -= step * da;
        b -= step * db;
        if (std::abs(da) + std::abs(db) < 1e-12 * (a + b)) {
          f.p1 = a;
          f.p2 = b;
          return f;
        }
      }
      throw Error(ErrorCode::fit_failure, "beta maximum-likelihood iteration did not converge");
    }
  }
  throw Error(ErrorCode::fit_failure, "unknown family");
}

inline GapTable param_gaps(const FittedFamily& fit, const LossModel& model, std::span<const Datum> sample,
                           const CalibrationConfig& cfg) {
  check_sample(model, sample);
  cfg.validate();
  if (sample.front().kind() != DatumKind::scalar) throw Error(ErrorCode::fit_failure, "parametric families fit scalar data only");
  GapTable t;
  t.theta_hat = solve_erm(model, sample, derive_seed(cfg.seed, "erm"), false).theta;
  const ParamPoint theta0 = cfg.theta0.value_or(model.default_theta0());
  Sample rs(sample.size());
  for (std::size_t b = 0; b < cfg.bootstrap_reps; ++b) {
    Rng rng = make_rng(cfg.seed, "parametric", b);
    for (auto& z : rs) z = Datum::scalar(fit.draw(rng));
    t.gaps.push_back(detail::resample_gap(model, rs, t.theta_hat, cfg, theta0, derive_seed(cfg.seed, "lag", b)));
  }
  return t;
}

/// Parametric bootstrap calibration.
inline CalibrationResult calibrate_param(Family family, const LossModel& model, std::span<const Datum> sample,
                                         const CalibrationConfig& cfg) {
  if (sample.size() < 2) throw Error(ErrorCode::empty_sample, "calibration needs at least two observations");
  const auto fit = fit_family(family, scalar_values(sample));
  const auto candidates = cfg.candidates.empty() ? default_candidates(model, sample, cfg.seed) : cfg.candidates;
  const auto table = param_gaps(fit, model, sample, cfg);
  auto r = select_rate(table.gaps, candidates, cfg.alpha);
  r.mode = cfg.mode;
  r.seed = cfg.seed;
  r.method = std::string("param_bootstrap:") + to_string(family);
  return r;
}

// ---------------------------------------------------------------------------
// Exact rate for normal data under squared loss with equal halves

/// Non-coverage probability of the offline set at rate ω:
/// 2 ∫₀^∞ Φ̄(b(z)) φ(z) dz with b(z) = log(1/α)/(2ωσ²z) + z/2, truncated at z = 8.
inline double normal_l2_noncoverage(double omega, double alpha, double sigma2) {
  if (!(omega > 0.0)) return 0.0;
  const double a = log_threshold(alpha) / (2.0 * omega * sigma2);
  auto f = [a](double z) {
    if (z <= 0.0) return 0.0;
    return stats::normal_sf(a / z + 0.5 * z) * stats::normal_pdf(z);
  };
  double err = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 8.0, 15, 1e-12, &err);
  return 2.0 * v;
}

/// ω solving the normal/L2 coverage equation, by bisection on the
/// increasing non-coverage curve.
inline double normal_l2_rate(double alpha, double sigma2) {
  log_threshold(alpha);
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw Error(ErrorCode::invalid_argument, "sigma2 must be positive");
  double lo = 1e-8 / sigma2;
  double hi = 1.0 / sigma2;
  const double hi_cap = 1e8 / sigma2;
  while (normal_l2_noncoverage(hi, alpha, sigma2) < alpha) {
    hi *= 2.0;
    if (hi > hi_cap) {
      throw Error(ErrorCode::no_bracket,
                  "no sign change on the bracket (" + std::to_string(lo) + ", " + std::to_string(hi_cap) +
                      "]: non-coverage stays below alpha = " + std::to_string(alpha));
    }
  }
  if (normal_l2_noncoverage(lo, alpha, sigma2) > alpha) {
    throw Error(ErrorCode::no_bracket, "non-coverage exceeds alpha at the lower bracket end");
  }
  for (int it = 0; it < 200 && (hi - lo) > 1e-13 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (normal_l2_noncoverage(mid, alpha, sigma2) < alpha ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Conservative finite-sample variant: half the exact rate.
inline double normal_l2_half_rate(double alpha, double sigma2) { return 0.5 * normal_l2_rate(alpha, sigma2); }

// ---------------------------------------------------------------------------
// Berry-Esseen safe rate

inline constexpr double kBerryEsseenConstant = 0.4748;

struct BerryEsseenResult {
  std::vector<double> candidates;
  std::vector<double> bounds;
  std::optional<double> chosen;
};

/// Right-hand side of the Berry-Esseen coverage bound at one rate. `n` is the
/// size of each half. β and γ are grid argmaxima on |z| ≤ 8 with 10⁴ points;
/// ties resolve to the first maximizer.
inline double berry_esseen_bound(double omega, double alpha, double sigma2, double rho, std::size_t n) {
  const double kappa = kBerryEsseenConstant * rho / (std::pow(sigma2, 1.5) * std::sqrt(static_cast<double>(n)));
  const double a = omega > 0.0 ? log_threshold(alpha) / (2.0 * omega * sigma2) : kInf;
  auto b = [a](double z) { return a / z + 0.5 * z; };
  auto l = [&](double z) { return std::max(stats::normal_cdf(b(z)) - kappa, 0.0); };
  auto u = [&](double z) { return std::min(stats::normal_cdf(b(z)) + kappa, 1.0); };

  const double constant = 1.0 - std::max(0.5 - kappa, 0.0) - std::max(1.0 - kappa, 0.0) +
                          (std::max(1.0 - kappa, 0.0) + std::min(kappa, 1.0)) * std::min(0.5 + kappa, 1.0);

  constexpr std::size_t m = 10000;
  constexpr double zmax = 8.0;
  std::vector<double> zp(m), lp(m), up(m), zn(m), ln(m), un(m);
  for (std::size_t k = 0; k < m; ++k) {
    zp[k] = zmax * static_cast<double>(k) / static_cast<double>(m - 1);  // 0 .. 8
    zn[k] = -zmax + zmax * static_cast<double>(k) / static_cast<double>(m - 1);  // −8 .. 0
    // Endpoints at z = 0 are the one-sided limits.
    lp[k] = k == 0 ? std::max(1.0 - kappa, 0.0) : l(zp[k]);
    up[k] = k == 0 ? std::min(1.0 + kappa, 1.0) : u(zp[k]);
    ln[k] = k == m - 1 ? std::max(0.0 - kappa, 0.0) : l(zn[k]);
    un[k] = k == m - 1 ? std::min(0.0 + kappa, 1.0) : u(zn[k]);
  }
  const auto beta = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
  const auto gamma = static_cast<std::size_t>(std::max_element(un.begin(), un.end()) - un.begin());

  // ∫₀^β l dl and ∫_{−∞}^γ u du in closed form; the others as Riemann-Stieltjes sums.
  const double i1 = 0.5 * (lp[beta] * lp[beta] - lp[0] * lp[0]);
  double i2 = 0.0;
  for (std::size_t k = beta; k + 1 < m; ++k) i2 += 0.5 * (up[k] + up[k + 1]) * (lp[k + 1] - lp[k]);
  const double u_minus_inf = std::min(kappa, 1.0);
  const double i3 = 0.5 * (un[gamma] * un[gamma] - u_minus_inf * u_minus_inf);
  double i4 = 0.0;
  for (std::size_t k = gamma; k + 1 < m; ++k) i4 += 0.5 * (ln[k] + ln[k + 1]) * (un[k + 1] - un[k]);
  return constant + i1 + i2 + i3 + i4;
}

/// Largest candidate whose bound is at most α, if any.
inline BerryEsseenResult berry_esseen_safe_rate(double alpha, double sigma2, double rho, std::size_t n,
                                                std::span<const double> candidates) {
  log_threshold(alpha);
  if (!(sigma2 > 0.0)) throw Error(ErrorCode::invalid_argument, "sigma2 must be positive");
  if (rho < std::pow(sigma2, 1.5) * (1.0 - 1e-12)) {
    throw Error(ErrorCode::invalid_argument, "third absolute moment violates rho >= sigma^3");
  }
  if (n == 0) throw Error(ErrorCode::invalid_argument, "n must be positive");
  BerryEsseenResult r;
  r.candidates.assign(candidates.begin(), candidates.end());
  for (double w : candidates) {
    check_rate(w);
    const double bound = berry_esseen_bound(w, alpha, sigma2, rho, n);
    r.bounds.push_back(bound);
    if (bound <= alpha && (!r.chosen || w > *r.chosen)) r.chosen = w;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Rate sources as used by the CLI and experiment harness

enum class RateSourceKind { fixed, nonparam, param, normal_l2, normal_l2_half, berry_esseen, random_uniform };

struct RateSource {
  RateSourceKind kind = RateSourceKind::fixed;
  double omega = 0.0;
  Family family = Family::normal;
  /// Known variance for the normal rates; estimated from data when unset.
  std::optional<double> sigma2;
  std::optional<double> rho;
  double lo = 0.0, hi = 1.0;  // random_uniform bounds
  std::vector<double> candidates;
  std::size_t bootstrap_reps = 200;

  static RateSource parse(const std::string& s) {
    RateSource r;
    if (s == "nonparam") {
      r.kind = RateSourceKind::nonparam;
    } else if (s.rfind("param:", 0) == 0) {
      r.kind = RateSourceKind::param;
      r.family = parse_family(s.substr(6));
    } else if (s == "normal-l2") {
      r.kind = RateSourceKind::normal_l2;
    } else if (s == "normal-l2-half") {
      r.kind = RateSourceKind::normal_l2_half;
    } else if (s == "berry-esseen") {
      r.kind = RateSourceKind::berry_esseen;
    } else {
      throw Error(ErrorCode::invalid_argument,
                  "unknown rate source '" + s + "' (nonparam, param:<family>, normal-l2, normal-l2-half, berry-esseen)");
    }
    return r;
  }

  RateProvenance provenance() const {
    switch (kind) {
      case RateSourceKind::fixed: return RateProvenance::user;
      case RateSourceKind::nonparam: return RateProvenance::nonparam_bootstrap;
      case RateSourceKind::param: return RateProvenance::param_bootstrap;
      case RateSourceKind::normal_l2:
      case RateSourceKind::normal_l2_half: return RateProvenance::normal_l2;
      case RateSourceKind::berry_esseen: return RateProvenance::berry_esseen;
      case RateSourceKind::random_uniform: return RateProvenance::random_uniform;
    }
    return RateProvenance::user;
  }

  bool data_dependent() const {
    return kind == RateSourceKind::nonparam || kind == RateSourceKind::param ||
           ((kind == RateSourceKind::normal_l2 || kind == RateSourceKind::normal_l2_half ||
             kind == RateSourceKind::berry_esseen) && !sigma2);
  }
};

/// Resolves a rate from the data it may depend on. `n_half` is the size of
/// each half for the Berry-Esseen check.
inline double resolve_rate(const RateSource& src, const LossModel& model, std::span<const Datum> data, double alpha,
                           CalibrationMode mode, std::uint64_t seed, double split_frac = 0.5,
                           std::optional<ParamPoint> theta0 = std::nullopt) {
  auto variance = [&]() {
    if (src.sigma2) return *src.sigma2;
    const auto xs = scalar_values(data);
    const double v = stats::variance(xs);
    if (!(v > 0.0)) throw Error(ErrorCode::invalid_argument, "cannot estimate a positive variance from the data");
    return v;
  };
  switch (src.kind) {
    case RateSourceKind::fixed: return src.omega;
    case RateSourceKind::random_uniform: {
      Rng rng = make_rng(seed, "random-rate");
      return std::uniform_real_distribution<double>(src.lo, src.hi)(rng);
    }
    case RateSourceKind::normal_l2: return normal_l2_rate(alpha, variance());
    case RateSourceKind::normal_l2_half: return normal_l2_half_rate(alpha, variance());
    case RateSourceKind::berry_esseen: {
      const double s2 = variance();
      double rho = 0.0;
      if (src.rho) {
        rho = *src.rho;
      } else {
        const auto xs = scalar_values(data);
        const double m = stats::mean(xs);
        for (double x : xs) rho += std::pow(std::abs(x - m), 3.0);
        rho = std::max(rho / static_cast<double>(xs.size()), std::pow(s2, 1.5));
      }
      auto cands = src.candidates.empty() ? default_candidates(model, data, seed) : src.candidates;
      const auto r = berry_esseen_safe_rate(alpha, s2, rho, std::max<std::size_t>(1, data.size() / 2), cands);
      return r.chosen.value_or(0.0);
    }
    case RateSourceKind::nonparam:
    case RateSourceKind::param: {
      CalibrationConfig cfg;
      cfg.candidates = src.candidates;
      cfg.alpha = alpha;
      cfg.bootstrap_reps = src.bootstrap_reps;
      cfg.mode = mode;
      cfg.seed = seed;
      cfg.split_frac = split_frac;
      cfg.theta0 = theta0;
      return src.kind == RateSourceKind::nonparam ? calibrate_nonparam(model, data, cfg).chosen
                                                  : calibrate_param(src.family, model, data, cfg).chosen;
    }
  }
  return 0.0;
}

/// Rates for several levels from one data set. Bootstrap sources share one
/// gap table across levels.
inline std::vector<double> rates_for_alphas(const RateSource& src, const LossModel& model, std::span<const Datum> data,
                                            std::span<const double> alphas, CalibrationMode mode, std::uint64_t seed,
                                            double split_frac = 0.5, std::optional<ParamPoint> theta0 = std::nullopt) {
  std::vector<double> out;
  out.reserve(alphas.size());
  if (src.kind == RateSourceKind::nonparam || src.kind == RateSourceKind::param) {
    CalibrationConfig cfg;
    cfg.candidates = src.candidates;
    cfg.bootstrap_reps = src.bootstrap_reps;
    cfg.mode = mode;
    cfg.seed = seed;
    cfg.split_frac = split_frac;
    cfg.theta0 = theta0;
    if (data.size() < 2) throw Error(ErrorCode::empty_sample, "calibration needs at least two observations");
    const auto candidates = cfg.candidates.empty() ? default_candidates(model, data, seed) : cfg.candidates;
    const auto table = src.kind == RateSourceKind::nonparam
                           ? nonparam_gaps(model, data, cfg)
                           : param_gaps(fit_family(src.family, scalar_values(data)), model, data, cfg);
    for (double a : alphas) out.push_back(select_rate(table.gaps, candidates, a).chosen);
    return out;
  }
  for (double a : alphas) out.push_back(resolve_rate(src, model, data, a, mode, seed, split_frac, theta0));
  return out;
}

}  // namespace gue
