#pragma once

// Monte Carlo engines: stopping rules, selection filters, coverage and power
// studies, the unit-dominance diagnostic and learning-rate profiles.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gue/baselines.hpp"
#include "gue/calibration.hpp"
#include "gue/config.hpp"
#include "gue/core.hpp"
#include "gue/evidence.hpp"
#include "gue/generators.hpp"
#include "gue/grid.hpp"
#include "gue/losses.hpp"
#include "gue/random.hpp"
#include "gue/stats.hpp"

namespace gue {

enum class Method { gue_online, gue_offline, prpl_eb, bootstrap, classical_wald };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::gue_online: return "gue_online";
    case Method::gue_offline: return "gue_offline";
    case Method::prpl_eb: return "prpl_eb";
    case Method::bootstrap: return "bootstrap";
    case Method::classical_wald: return "classical_wald";
  }
  return "unknown";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::gue_online, Method::gue_offline, Method::prpl_eb, Method::bootstrap, Method::classical_wald}) {
    if (s == to_string(m)) return m;
  }
  throw Error(ErrorCode::invalid_argument,
              "unknown method '" + s + "' (gue_online, gue_offline, prpl_eb, bootstrap, classical_wald)");
}

// ---------------------------------------------------------------------------
// Stopping rules

struct StoppingRule {
  enum class Kind { fixed_n, until_reject, statistic_threshold };
  Kind kind = Kind::fixed_n;
  std::size_t n = 100;
  std::size_t n_min = 10;
  std::size_t n_max = 1000;
  double null_value = 0.0;  // until_reject: H₀ θ* = null_value
  double threshold = 10.0;  // statistic_threshold: stop once Σ xᵢ² > threshold

  static StoppingRule fixed(std::size_t n) {
    StoppingRule r;
    r.n = n;
    return r;
  }
  static StoppingRule until_reject(double null_value, std::size_t n_min = 10, std::size_t n_max = 1000) {
    StoppingRule r;
    r.kind = Kind::until_reject;
    r.null_value = null_value;
    r.n_min = n_min;
    r.n_max = n_max;
    return r;
  }
  static StoppingRule statistic_threshold(double c, std::size_t n_max = 1000) {
    StoppingRule r;
    r.kind = Kind::statistic_threshold;
    r.threshold = c;
    r.n_max = n_max;
    return r;
  }

  void validate() const {
    if (kind == Kind::fixed_n && n < 2) throw Error(ErrorCode::config_error, "fixed_n needs n ≥ 2");
    if (kind != Kind::fixed_n && (n_max < 2 || n_max > 100'000'000)) {
      throw Error(ErrorCode::config_error, "stopping rule needs a finite n_max ≥ 2");
    }
    if (kind == Kind::until_reject && (n_min < 2 || n_min > n_max)) {
      throw Error(ErrorCode::config_error, "until_reject needs 2 ≤ n_min ≤ n_max");
    }
  }

  const char* kind_name() const {
    switch (kind) {
      case Kind::fixed_n: return "fixed_n";
      case Kind::until_reject: return "until_reject";
      case Kind::statistic_threshold: return "statistic_threshold";
    }
    return "unknown";
  }

  Json to_json() const {
    Json j{{"kind", kind_name()}};
    if (kind == Kind::fixed_n) j["n"] = n;
    if (kind == Kind::until_reject) {
      j["n_min"] = n_min;
      j["null"] = null_value;
    }
    if (kind == Kind::statistic_threshold) j["threshold"] = threshold;
    if (kind != Kind::fixed_n) j["n_max"] = n_max;
    return j;
  }
};

/// p-value of the test under construction on a data prefix.
using PValueFn = std::function<double(std::span<const Datum>)>;

struct StoppedSample {
  Sample data;
  std::size_t stop = 0;
  bool truncated = false;  // n_max reached without the rule firing
};

namespace detail {

inline double first_coordinate(const Datum& z) { return z.kind() == DatumKind::scalar ? z.value() : z.x()[0]; }

/// Stopping times of one data stream for several levels. `p_at(k)` is the
/// test's p-value on the first k points of `stream`.
struct StreamStops {
  std::vector<std::size_t> stop;
  std::vector<bool> truncated;
};

inline StreamStops stop_stream(const StoppingRule& rule, const DataGenerator& gen, Sample& stream, Rng& rng,
                               const std::function<double(std::size_t)>& p_at, std::span<const double> alphas) {
  StreamStops s;
  s.stop.assign(alphas.size(), 0);
  s.truncated.assign(alphas.size(), false);
  switch (rule.kind) {
    case StoppingRule::Kind::fixed_n:
      stream = gen.sample(rule.n, rng);
      std::fill(s.stop.begin(), s.stop.end(), stream.size());
      return s;
    case StoppingRule::Kind::statistic_threshold: {
      double total = 0.0;
      while (stream.size() < rule.n_max && !(total > rule.threshold)) {
        stream.push_back(gen.draw(rng));
        const double x = first_coordinate(stream.back());
        total += x * x;
      }
      const bool trunc = !(total > rule.threshold);
      std::fill(s.stop.begin(), s.stop.end(), stream.size());
      std::fill(s.truncated.begin(), s.truncated.end(), trunc);
      return s;
    }
    case StoppingRule::Kind::until_reject: {
      while (stream.size() < rule.n_min) stream.push_back(gen.draw(rng));
      std::size_t running = alphas.size();
      while (running > 0) {
        const double p = p_at(stream.size());
        for (std::size_t a = 0; a < alphas.size(); ++a) {
          if (s.stop[a] == 0 && p <= alphas[a]) {
            s.stop[a] = stream.size();
            --running;
          }
        }
        if (running == 0) break;
        if (stream.size() >= rule.n_max) {
          for (std::size_t a = 0; a < alphas.size(); ++a) {
            if (s.stop[a] == 0) {
              s.stop[a] = stream.size();
              s.truncated[a] = true;
            }
          }
          break;
        }
        stream.push_back(gen.draw(rng));
      }
      return s;
    }
  }
  return s;
}

}  // namespace detail

/// Draws from `gen` under `rule`, testing each prefix with `test` at level
/// α for until_reject.
inline StoppedSample apply_stopping_rule(const StoppingRule& rule, const DataGenerator& gen, const PValueFn& test,
                                         double alpha, std::uint64_t seed) {
  rule.validate();
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorCode::invalid_argument, "stopping level must lie in (0,1]");
  StoppedSample out;
  Rng rng = make_rng(seed, "stream");
  const double alphas[1] = {alpha};
  const auto s = detail::stop_stream(
      rule, gen, out.data, rng,
      [&](std::size_t k) { return test(std::span<const Datum>(out.data).first(k)); }, alphas);
  out.stop = s.stop[0];
  out.truncated = s.truncated[0];
  out.data.resize(out.stop);
  return out;
}

// ---------------------------------------------------------------------------
// Selection filters

struct SelectionFilter {
  enum class Kind { none, false_rejections_only, tukey };
  Kind kind = Kind::none;
  /// false_rejections_only keeps data whose classical interval lies below
  /// this bound, i.e. that reject H₀: θ* ≥ null_bound.
  double null_bound = -10.0;
  double tukey_k = 1.0;
  std::size_t max_attempts = 100000;

  const char* kind_name() const {
    switch (kind) {
      case Kind::none: return "none";
      case Kind::false_rejections_only: return "false_rejections_only";
      case Kind::tukey: return "tukey";
    }
    return "unknown";
  }

  Json to_json() const {
    Json j{{"kind", kind_name()}};
    if (kind == Kind::false_rejections_only) j["null_bound"] = null_bound;
    if (kind == Kind::tukey) j["k"] = tukey_k;
    return j;
  }
};

/// Keeps points inside [Q1 − k·IQR, Q3 + k·IQR] for the given quartiles.
inline Sample tukey_filter(std::span<const Datum> data, std::pair<double, double> quartiles, double k) {
  const double iqr = quartiles.second - quartiles.first;
  const double lo = quartiles.first - k * iqr, hi = quartiles.second + k * iqr;
  Sample out;
  for (const auto& z : data) {
    const double x = detail::first_coordinate(z);
    if (x >= lo && x <= hi) out.push_back(z);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Online rate schedules

/// When data-dependent rates are recalibrated along a path: at prefix
/// length 2, then at max(m + every, ⌈m·growth⌉) after m.
struct RecalibrationPlan {
  std::size_t every = 1;
  double growth = 1.0;
  CalibrationMode mode = CalibrationMode::online;

  void validate() const {
    if (every == 0) throw Error(ErrorCode::invalid_argument, "recalibration stride must be positive");
    if (!(growth >= 1.0)) throw Error(ErrorCode::invalid_argument, "recalibration growth must be ≥ 1");
  }

  std::size_t next_after(std::size_t m) const {
    return std::max(m + every, static_cast<std::size_t>(std::ceil(static_cast<double>(m) * growth)));
  }

  Json to_json() const { return {{"every", every}, {"growth", growth}, {"mode", to_string(mode)}}; }
};

/// Per-level rates ω̂_1..ω̂_n along `path`; ω̂_i depends on path[0..i−1) only.
/// Data-dependent sources are recalibrated per `plan` and held in between;
/// steps with fewer than two earlier points get rate 0.
inline std::vector<std::vector<double>> online_rate_schedule(const RateSource& src, const LossModel& model,
                                                             std::span<const Datum> path,
                                                             std::span<const double> alphas, std::uint64_t seed,
                                                             const RecalibrationPlan& plan = {},
                                                             std::optional<ParamPoint> theta0 = std::nullopt) {
  plan.validate();
  const std::size_t n = path.size();
  std::vector<std::vector<double>> out(alphas.size(), std::vector<double>(n, 0.0));
  if (src.kind == RateSourceKind::fixed) {
    check_rate(src.omega);
    for (auto& r : out) std::fill(r.begin(), r.end(), src.omega);
    return out;
  }
  if (src.kind == RateSourceKind::random_uniform) {
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = make_rng(seed, "random-rate", i);
      const double w = std::uniform_real_distribution<double>(src.lo, src.hi)(rng);
      for (auto& r : out) r[i] = w;
    }
    return out;
  }
  if (!src.data_dependent()) {
    const auto w = rates_for_alphas(src, model, path.first(std::min<std::size_t>(n, 2)), alphas, plan.mode, seed, 0.5,
                                    theta0);
    for (std::size_t a = 0; a < alphas.size(); ++a) std::fill(out[a].begin(), out[a].end(), w[a]);
    return out;
  }
  std::vector<double> current(alphas.size(), 0.0);
  std::size_t next = 2;
  for (std::size_t i = 0; i < n; ++i) {
    // Step i+1 may use the first i points.
    if (i == next) {
      try {
        current = rates_for_alphas(src, model, path.first(i), alphas, plan.mode,
                                   derive_seed(seed, "online-calibration", i), 0.5, theta0);
      } catch (const Error& e) {
        // Degenerate prefixes (e.g. zero variance) give no usable rate.
        if (e.code() != ErrorCode::invalid_argument && e.code() != ErrorCode::fit_failure) throw;
        std::fill(current.begin(), current.end(), 0.0);
      }
      next = plan.next_after(i);
    }
    for (std::size_t a = 0; a < alphas.size(); ++a) out[a][i] = current[a];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration and reports

struct ExperimentConfig {
  GeneratorSpec generator;
  LossSpec loss = [] {
    LossSpec s;
    s.name = "l2_mean";
    return s;
  }();
  std::vector<Method> methods{Method::gue_offline};
  RateSource rate;
  StoppingRule stopping;
  SelectionFilter filter;
  std::vector<double> alphas{0.05, 0.1, 0.2};
  std::size_t reps = 500;
  std::uint64_t seed = 0;
  double split_frac = 0.5;
  /// Resamples for the bootstrap, Wald and ellipse baselines.
  std::size_t bootstrap_reps = 200;
  /// Grid points per axis for set widths; widths are skipped above two dimensions.
  std::size_t grid_points = 1000;
  bool compute_width = true;
  RecalibrationPlan recalibration;
  std::size_t threads = 1;
  double prpl_c = 0.5;
  std::optional<ParamPoint> truth;

  void validate() const {
    if (methods.empty()) throw Error(ErrorCode::config_error, "at least one method is required");
    if (alphas.empty()) throw Error(ErrorCode::config_error, "at least one alpha is required");
    for (double a : alphas) {
      if (!(a > 0.0 && a < 1.0)) throw Error(ErrorCode::config_error, "alphas must lie in (0,1)");
    }
    if (reps == 0) throw Error(ErrorCode::config_error, "reps must be positive");
    if (!(split_frac > 0.0 && split_frac < 1.0)) throw Error(ErrorCode::config_error, "split_frac must lie in (0,1)");
    if (bootstrap_reps == 0) throw Error(ErrorCode::config_error, "bootstrap_reps must be positive");
    if (threads == 0) throw Error(ErrorCode::config_error, "threads must be positive");
    stopping.validate();
    recalibration.validate();
    if (filter.kind == SelectionFilter::Kind::false_rejections_only && stopping.kind != StoppingRule::Kind::fixed_n) {
      throw Error(ErrorCode::config_error, "false_rejections_only needs a fixed_n stopping rule");
    }
  }

  Json to_json() const {
    Json j;
    Json g = generator_json();
    j["generator"] = g;
    j["loss"] = {{"name", loss.name}, {"q", loss.q}, {"k", loss.k}, {"dim", loss.dim}};
    if (loss.lower) j["loss"]["lower"] = *loss.lower;
    if (loss.upper) j["loss"]["upper"] = *loss.upper;
    Json m = Json::array();
    for (Method x : methods) m.push_back(to_string(x));
    j["methods"] = m;
    j["rate"] = {{"provenance", to_string(rate.provenance())}, {"omega", rate.omega}, {"lo", rate.lo},
                 {"hi", rate.hi}, {"family", to_string(rate.family)}, {"candidates", rate.candidates},
                 {"bootstrap_reps", rate.bootstrap_reps}};
    if (rate.sigma2) j["rate"]["sigma2"] = *rate.sigma2;
    j["stopping"] = stopping.to_json();
    j["filter"] = filter.to_json();
    j["alphas"] = alphas;
    j["reps"] = reps;
    j["seed"] = seed;
    j["split_frac"] = split_frac;
    j["bootstrap_reps"] = bootstrap_reps;
    j["grid_points"] = grid_points;
    j["recalibration"] = recalibration.to_json();
    j["prpl_c"] = prpl_c;
    if (truth) j["truth"] = truth->to_vector();
    return j;
  }

 private:
  Json generator_json() const {
    return {{"name", generator.name}, {"params", generator.params}, {"weights", generator.weights},
            {"centers", generator.centers}};
  }
};

struct CoverageRow {
  Method method = Method::gue_offline;
  double alpha = 0.05;
  double nominal = 0.95;
  double observed = 0.0;
  double se = 0.0;
  double mean_width = 0.0;  // NaN when widths were not computed
  std::size_t used = 0;     // replications entering the coverage estimate
  std::size_t covered = 0;
  std::size_t excluded = 0;  // truncated paths and exhausted selection filters
  double mean_n = 0.0;       // mean realized sample size
};

struct CoverageReport {
  std::vector<CoverageRow> rows;
  std::size_t reps = 0;
  std::size_t failures = 0;
  std::vector<std::string> failure_messages;  // first few, for diagnosis
  std::string config_hash;
  double runtime_seconds = 0.0;  // not serialized, so reports stay byte-identical
  Json config;

  const CoverageRow& row(Method m, double alpha) const {
    for (const auto& r : rows) {
      if (r.method == m && std::abs(r.alpha - alpha) < 1e-12) return r;
    }
    throw Error(ErrorCode::invalid_argument, std::string("no report row for ") + to_string(m));
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "method,alpha,nominal,observed,se,mean_width,used,excluded,mean_n\n";
    for (const auto& r : rows) {
      os << to_string(r.method) << ',' << r.alpha << ',' << r.nominal << ',' << r.observed << ',' << r.se << ',';
      if (std::isfinite(r.mean_width)) os << r.mean_width;
      os << ',' << r.used << ',' << r.excluded << ',' << r.mean_n << '\n';
    }
    return os.str();
  }

  Json to_json() const {
    Json rs = Json::array();
    for (const auto& r : rows) {
      rs.push_back({{"method", to_string(r.method)},
                    {"alpha", r.alpha},
                    {"nominal", r.nominal},
                    {"observed", r.observed},
                    {"se", r.se},
                    {"mean_width", std::isfinite(r.mean_width) ? Json(r.mean_width) : Json(nullptr)},
                    {"used", r.used},
                    {"covered", r.covered},
                    {"excluded", r.excluded},
                    {"mean_n", r.mean_n}});
    }
    return {{"rows", rs},
            {"reps", reps},
            {"failures", failures},
            {"failure_messages", failure_messages},
            {"config_hash", config_hash},
            {"config", config}};
  }
};

namespace detail {

struct CellOutcome {
  bool covered = false;
  double width = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;
};

struct RepOutcome {
  bool failed = false;
  std::string message;
  /// [method][alpha]; empty when the replication was excluded at that level.
  std::vector<std::vector<std::optional<CellOutcome>>> cells;
};

/// Per-replication memo of level-free quantities, keyed by data set and
/// prefix length.
class ReplicateCache {
 public:
  ReplicateCache(const ExperimentConfig& cfg, const LossModel& model, std::uint64_t seed)
      : cfg_(cfg), model_(model), seed_(seed) {}

  const WaldStat& wald(std::size_t pool, std::span<const Datum> data) {
    const auto key = std::make_pair(pool, data.size());
    auto it = wald_.find(key);
    if (it == wald_.end()) {
      it = wald_.emplace(key, bootstrap_wald_stat(model_, data, cfg_.bootstrap_reps,
                                                  derive_seed(seed_, "wald", key.first * 1'000'003 + key.second)))
               .first;
    }
    return it->second;
  }

  const std::vector<ParamPoint>& boots(std::size_t pool, std::span<const Datum> data) {
    const auto key = std::make_pair(pool, data.size());
    auto it = boots_.find(key);
    if (it == boots_.end()) {
      it = boots_.emplace(key, bootstrap_estimates(model_, data, cfg_.bootstrap_reps,
                                                   derive_seed(seed_, "percentile", key.first * 1'000'003 + key.second)))
               .first;
    }
    return it->second;
  }

  double offline_rate(std::size_t pool, std::span<const Datum> data, std::size_t alpha_index) {
    const auto key = std::make_pair(pool, data.size());
    auto it = offline_.find(key);
    if (it == offline_.end()) {
      it = offline_
               .emplace(key, rates_for_alphas(cfg_.rate, model_, data, cfg_.alphas, CalibrationMode::offline,
                                              derive_seed(seed_, "offline-rate", key.first * 1'000'003 + key.second),
                                              cfg_.split_frac))
               .first;
    }
    return it->second[alpha_index];
  }

  /// Lagged estimates and rate schedules over the stream's first `len` points.
  struct OnlinePlan {
    std::vector<ParamPoint> lagged;
    std::vector<std::vector<double>> rates;  // [alpha][i]
  };

  const OnlinePlan& online(std::size_t pool, std::span<const Datum> stream, std::size_t len) {
    auto it = online_.find(pool);
    if (it == online_.end() || it->second.lagged.size() < len) {
      OnlinePlan p;
      const auto path = stream.first(len);
      const ParamPoint theta0 = model_.default_theta0();
      p.lagged = model_.lagged_estimates(path, theta0, derive_seed(seed_, "lagged", pool));
      p.rates = online_rate_schedule(cfg_.rate, model_, path, cfg_.alphas, derive_seed(seed_, "online-rate", pool),
                                     cfg_.recalibration);
      it = online_.insert_or_assign(pool, std::move(p)).first;
    }
    return it->second;
  }

 private:
  const ExperimentConfig& cfg_;
  const LossModel& model_;
  std::uint64_t seed_;
  std::map<std::pair<std::size_t, std::size_t>, WaldStat> wald_;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<ParamPoint>> boots_;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> offline_;
  std::map<std::size_t, OnlinePlan> online_;
};

/// Lebesgue measure of {θ : log G(θ) < log(1/α)} on the model's default grid.
inline double set_measure(const LogGueFn& log_gue, const LossModel& model, std::span<const Datum> data, double alpha,
                          std::size_t points) {
  const std::size_t d = model.param_dim();
  if (d > 2) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t per_axis =
      d == 1 ? points : std::max<std::size_t>(2, static_cast<std::size_t>(std::sqrt(static_cast<double>(points))));
  const ParamGrid grid(model.bounding_box(data), per_axis);
  const double thr = log_threshold(alpha);
  std::size_t members = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) members += log_gue(grid.point(i)) < thr ? 1 : 0;
  return static_cast<double>(members) * grid.cell_volume();
}

}  // namespace detail

inline LossModelPtr experiment_model(const ExperimentConfig& cfg) { return make_loss_model(cfg.loss); }

/// One replication of a coverage study; exposed for tests.
inline detail::RepOutcome run_replication(const ExperimentConfig& cfg, const LossModel& model,
                                          const DataGenerator& gen, const ParamPoint& truth, std::size_t rep) {
  using detail::CellOutcome;
  const std::uint64_t rs = derive_seed(cfg.seed, "replication", rep);
  const std::size_t na = cfg.alphas.size();
  detail::RepOutcome out;
  out.cells.assign(cfg.methods.size(), std::vector<std::optional<CellOutcome>>(na));
  detail::ReplicateCache cache(cfg, model, rs);

  // Data per level: pool index and prefix length, or nothing when excluded.
  std::vector<Sample> pool;
  std::vector<std::optional<std::pair<std::size_t, std::size_t>>> pick(na);

  auto filtered = [&](Sample s) {
    if (cfg.filter.kind != SelectionFilter::Kind::tukey) return s;
    const auto q = gen.quartiles();
    if (!q) throw Error(ErrorCode::config_error, "tukey filter needs a generator with known quartiles");
    s = tukey_filter(s, *q, cfg.filter.tukey_k);
    if (s.size() < 2) throw Error(ErrorCode::empty_sample, "tukey filter left fewer than two points");
    return s;
  };

  if (cfg.filter.kind == SelectionFilter::Kind::false_rejections_only) {
    std::size_t pending = na;
    for (std::size_t k = 0; k < cfg.filter.max_attempts && pending > 0; ++k) {
      Rng rng = make_rng(rs, "attempt", k);
      Sample s = gen.sample(cfg.stopping.n, rng);
      const WaldStat st = bootstrap_wald_stat(model, s, cfg.bootstrap_reps, derive_seed(rs, "attempt-wald", k));
      bool used = false;
      for (std::size_t a = 0; a < na; ++a) {
        if (pick[a] || !(st.interval(cfg.alphas[a]).upper < cfg.filter.null_bound)) continue;
        if (!used) pool.push_back(std::move(s));
        used = true;
        pick[a] = std::make_pair(pool.size() - 1, pool.back().size());
        --pending;
      }
    }
  } else {
    Rng rng = make_rng(rs, "stream");
    pool.emplace_back();
    Sample& stream = pool.back();
    const auto stops = detail::stop_stream(
        cfg.stopping, gen, stream, rng,
        [&](std::size_t k) {
          return cache.wald(0, std::span<const Datum>(stream).first(k)).p_value(cfg.stopping.null_value);
        },
        cfg.alphas);
    if (cfg.filter.kind == SelectionFilter::Kind::tukey) {
      stream = filtered(std::move(stream));
      for (std::size_t a = 0; a < na; ++a) pick[a] = std::make_pair(std::size_t{0}, stream.size());
    } else {
      for (std::size_t a = 0; a < na; ++a) {
        if (!stops.truncated[a]) pick[a] = std::make_pair(std::size_t{0}, stops.stop[a]);
      }
    }
  }

  // Longest prefix used per stream, for the online plan.
  std::vector<std::size_t> longest(pool.size(), 0);
  for (const auto& p : pick) {
    if (p) longest[p->first] = std::max(longest[p->first], p->second);
  }

  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const Method method = cfg.methods[mi];
    for (std::size_t a = 0; a < na; ++a) {
      if (!pick[a]) continue;
      const double alpha = cfg.alphas[a];
      const std::size_t pidx = pick[a]->first;
      const std::span<const Datum> data = std::span<const Datum>(pool[pidx]).first(pick[a]->second);
      CellOutcome cell;
      cell.n = data.size();
      switch (method) {
        case Method::gue_offline: {
          const double w = cache.offline_rate(pidx, data, a);
          const auto split = make_offline_split(model, data, cfg.split_frac, w, derive_seed(rs, "split-erm", pidx));
          const OfflineEvaluator eval(LossModelPtr(&model, [](const LossModel*) {}), split);
          cell.covered = eval(truth) < log_threshold(alpha);
          if (cfg.compute_width) {
            cell.width = detail::set_measure([&](const ParamPoint& t) { return eval(t); }, model, data, alpha,
                                             cfg.grid_points);
          }
          break;
        }
        case Method::gue_online: {
          const auto& plan = cache.online(pidx, pool[pidx], longest[pidx]);
          const std::size_t n = data.size();
          const auto trace = GueTrace::from_lagged(LossModelPtr(&model, [](const LossModel*) {}), data,
                                                   std::span<const ParamPoint>(plan.lagged).first(n),
                                                   std::span<const double>(plan.rates[a]).first(n));
          cell.covered = trace.log_gue_at(truth) < log_threshold(alpha);
          if (cfg.compute_width) {
            cell.width = detail::set_measure([&](const ParamPoint& t) { return trace.log_gue_at(t); }, model, data,
                                             alpha, cfg.grid_points);
          }
          break;
        }
        case Method::prpl_eb: {
          const auto st = prpl_eb(scalar_values(data), alpha, cfg.prpl_c);
          const auto iv = st.interval(alpha);
          cell.covered = iv.contains(truth[0]);
          cell.width = iv.width();
          break;
        }
        case Method::bootstrap: {
          if (const auto* km = dynamic_cast<const KMeansLoss*>(&model)) {
            const auto es = kmeans_bootstrap_ellipse(data, km->clusters(), alpha, cfg.bootstrap_reps,
                                                     derive_seed(rs, "ellipse", pidx * 1'000'003 + data.size()));
            cell.covered = true;
            for (std::size_t k = 0; k < km->clusters(); ++k) {
              const double mu[2] = {truth[2 * k], truth[2 * k + 1]};
              // Nearest estimated centroid to this true center.
              std::size_t best = 0;
              double bd = kInf;
              for (std::size_t j = 0; j < es.ellipses.size(); ++j) {
                const double d = std::hypot(es.ellipses[j].center[0] - mu[0], es.ellipses[j].center[1] - mu[1]);
                if (d < bd) {
                  bd = d;
                  best = j;
                }
              }
              cell.covered = cell.covered && es.ellipses[best].contains(std::span<const double>(mu, 2));
            }
            break;
          }
          const auto ivs = percentile_intervals(cache.boots(pidx, data), alpha);
          cell.covered = true;
          cell.width = 1.0;
          for (std::size_t j = 0; j < ivs.size(); ++j) {
            cell.covered = cell.covered && ivs[j].contains(truth[j]);
            cell.width *= ivs[j].width();
          }
          break;
        }
        case Method::classical_wald: {
          const auto iv = cache.wald(pidx, data).interval(alpha);
          cell.covered = iv.contains(truth[0]);
          cell.width = iv.width();
          break;
        }
      }
      out.cells[mi][a] = cell;
    }
  }
  return out;
}

/// Coverage study: replications under the stopping rule and selection
/// filter, membership of θ* in each method's set, aggregated per level.
inline CoverageReport run_coverage(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto model = experiment_model(cfg);
  const auto gen = make_generator(cfg.generator);
  const ParamPoint truth = cfg.truth ? *cfg.truth : gen->truth(*model);
  check_dim(*model, truth);

  std::vector<detail::RepOutcome> outcomes(cfg.reps);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t r = next++; r < cfg.reps; r = next++) {
      try {
        outcomes[r] = run_replication(cfg, *model, *gen, truth, r);
      } catch (const Error& e) {
        outcomes[r].failed = true;
        outcomes[r].message = e.what();
      }
    }
  };
  const std::size_t nthreads = std::min(cfg.threads, cfg.reps);
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  CoverageReport rep;
  rep.reps = cfg.reps;
  rep.config = cfg.to_json();
  rep.config_hash = [&] {
    std::ostringstream os;
    os << std::hex << fnv1a(rep.config.dump());
    return os.str();
  }();
  for (const auto& o : outcomes) {
    if (!o.failed) continue;
    ++rep.failures;
    if (rep.failure_messages.size() < 5) rep.failure_messages.push_back(o.message);
  }
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
      CoverageRow row;
      row.method = cfg.methods[mi];
      row.alpha = cfg.alphas[a];
      row.nominal = 1.0 - row.alpha;
      double wsum = 0.0, nsum = 0.0;
      std::size_t wcount = 0;
      for (const auto& o : outcomes) {
        if (o.failed) continue;
        const auto& c = o.cells[mi][a];
        if (!c) {
          ++row.excluded;
          continue;
        }
        ++row.used;
        row.covered += c->covered ? 1 : 0;
        nsum += static_cast<double>(c->n);
        if (std::isfinite(c->width)) {
          wsum += c->width;
          ++wcount;
        }
      }
      row.observed = row.used ? static_cast<double>(row.covered) / static_cast<double>(row.used) : 0.0;
      row.se = stats::proportion_se(row.observed, row.used);
      row.mean_width = wcount ? wsum / static_cast<double>(wcount) : std::numeric_limits<double>::quiet_NaN();
      row.mean_n = row.used ? nsum / static_cast<double>(row.used) : 0.0;
      rep.rows.push_back(row);
    }
  }
  rep.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Power

struct PowerPoint {
  std::size_t n = 0;
  double type2 = 0.0;  // fraction of replications retaining H₀
  double se = 0.0;
  std::size_t used = 0;
};

struct PowerCurve {
  std::string alternative;
  ParamPoint truth;
  std::vector<PowerPoint> points;
};

struct PowerReport {
  Method method = Method::gue_online;
  double alpha = 0.05;
  double null_value = 0.0;
  std::size_t failures = 0;
  std::vector<PowerCurve> curves;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "alternative,n,type2,se,used\n";
    for (const auto& c : curves) {
      for (const auto& p : c.points) os << c.alternative << ',' << p.n << ',' << p.type2 << ',' << p.se << ',' << p.used << '\n';
    }
    return os.str();
  }

  Json to_json() const {
    Json cs = Json::array();
    for (const auto& c : curves) {
      Json pts = Json::array();
      for (const auto& p : c.points) pts.push_back({{"n", p.n}, {"type2", p.type2}, {"se", p.se}, {"used", p.used}});
      cs.push_back({{"alternative", c.alternative}, {"truth", c.truth.to_vector()}, {"points", pts}});
    }
    return {{"method", to_string(method)}, {"alpha", alpha}, {"null", null_value}, {"failures", failures},
            {"curves", cs}};
  }
};

/// Type II error of the GUe test of H₀: θ* = null_value at each n, per
/// alternative. Uses cfg.methods[0] (gue_online or gue_offline), cfg.alphas[0],
/// cfg.rate, cfg.reps and cfg.seed. Online tests share one path per
/// replication across n.
inline PowerReport run_power(const ExperimentConfig& cfg, const std::vector<GeneratorSpec>& alternatives,
                             std::vector<std::size_t> n_grid, double null_value) {
  cfg.validate();
  if (n_grid.empty()) throw Error(ErrorCode::config_error, "power study needs sample sizes");
  std::sort(n_grid.begin(), n_grid.end());
  if (n_grid.front() < 2) throw Error(ErrorCode::config_error, "power sample sizes must be ≥ 2");
  const Method method = cfg.methods.front();
  if (method != Method::gue_online && method != Method::gue_offline) {
    throw Error(ErrorCode::config_error, "power studies support gue_online and gue_offline");
  }
  const auto model = experiment_model(cfg);
  if (model->param_dim() != 1) throw Error(ErrorCode::config_error, "power studies need a scalar parameter");
  const double alpha = cfg.alphas.front();
  const double thr = log_threshold(alpha);
  const double alphas[1] = {alpha};
  const ParamPoint theta0{null_value};

  PowerReport rep;
  rep.method = method;
  rep.alpha = alpha;
  rep.null_value = null_value;
  for (std::size_t ai = 0; ai < alternatives.size(); ++ai) {
    const auto gen = make_generator(alternatives[ai]);
    PowerCurve curve;
    curve.alternative = alternatives[ai].name;
    for (double p : alternatives[ai].params) curve.alternative += ":" + Json(p).dump();
    curve.truth = gen->truth(*model);
    std::vector<std::size_t> retained(n_grid.size(), 0), used(n_grid.size(), 0);
    for (std::size_t r = 0; r < cfg.reps; ++r) {
      const std::uint64_t rs = derive_seed(cfg.seed, "power", ai * 1'000'003 + r);
      try {
        Rng rng = make_rng(rs, "stream");
        const Sample path = gen->sample(n_grid.back(), rng);
        if (method == Method::gue_online) {
          const auto lagged = model->lagged_estimates(path, model->default_theta0(), derive_seed(rs, "lagged"));
          const auto rates = online_rate_schedule(cfg.rate, *model, path, alphas, derive_seed(rs, "online-rate"),
                                                  cfg.recalibration);
          const auto trace = GueTrace::from_lagged(LossModelPtr(model.get(), [](const LossModel*) {}), path, lagged,
                                                   rates[0]);
          const auto lg = trace.log_gue_path(theta0);
          for (std::size_t k = 0; k < n_grid.size(); ++k) {
            ++used[k];
            retained[k] += lg[n_grid[k] - 1] < thr ? 1 : 0;
          }
        } else {
          for (std::size_t k = 0; k < n_grid.size(); ++k) {
            const auto data = std::span<const Datum>(path).first(n_grid[k]);
            const double w = rates_for_alphas(cfg.rate, *model, data, alphas, CalibrationMode::offline,
                                              derive_seed(rs, "offline-rate", k), cfg.split_frac)[0];
            const auto split = make_offline_split(*model, data, cfg.split_frac, w, derive_seed(rs, "split-erm", k));
            ++used[k];
            retained[k] += offline_log_gue(*model, split, theta0) < thr ? 1 : 0;
          }
        }
      } catch (const Error&) {
        ++rep.failures;
      }
    }
    for (std::size_t k = 0; k < n_grid.size(); ++k) {
      PowerPoint p;
      p.n = n_grid[k];
      p.used = used[k];
      p.type2 = used[k] ? static_cast<double>(retained[k]) / static_cast<double>(used[k]) : 0.0;
      p.se = stats::proportion_se(p.type2, used[k]);
      curve.points.push_back(p);
    }
    rep.curves.push_back(std::move(curve));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Unit-dominance diagnostic

struct UnitDominanceRow {
  std::size_t n = 0;
  double omega = 0.0;
  double estimate = 1.0;
  double sd = 0.0;
  double lower = 1.0;
  double upper = 1.0;
};

struct UnitDominanceReport {
  std::vector<UnitDominanceRow> rows;
  double joint_level = 0.95;
  std::size_t fresh_draws = 0;

  /// True when some joint lower bound exceeds 1.
  bool violated() const {
    return std::any_of(rows.begin(), rows.end(), [](const UnitDominanceRow& r) { return r.lower > 1.0; });
  }

  double max_lower() const {
    double m = -kInf;
    for (const auto& r : rows) m = std::max(m, r.lower);
    return m;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "n,omega,estimate,sd,lower,upper\n";
    for (const auto& r : rows) {
      os << r.n << ',' << r.omega << ',' << r.estimate << ',' << r.sd << ',' << r.lower << ',' << r.upper << '\n';
    }
    return os.str();
  }

  Json to_json() const {
    Json rs = Json::array();
    for (const auto& r : rows) {
      rs.push_back({{"n", r.n}, {"omega", r.omega}, {"estimate", r.estimate}, {"sd", r.sd},
                    {"lower", std::isfinite(r.lower) ? Json(r.lower) : Json("inf")},
                    {"upper", std::isfinite(r.upper) ? Json(r.upper) : Json("inf")}});
    }
    return {{"rows", rs}, {"joint_level", joint_level}, {"fresh_draws", fresh_draws}, {"violated", violated()}};
  }
};

/// Along one path, estimates E exp(−ω̂_n{ℓ(θ̂_{n−1}; Z) − ℓ(θ*; Z)}) for
/// n = 1..n_max from M fresh draws, with Bonferroni joint bounds across n.
/// ω̂_n is calibrated on the first n − 1 points according to `plan`.
inline UnitDominanceReport unit_dominance_diagnostic(const DataGenerator& gen, const LossModel& model,
                                                     const RateSource& src, std::size_t n_max, std::size_t M,
                                                     std::uint64_t seed, double alpha = 0.05,
                                                     double joint_level = 0.95,
                                                     const RecalibrationPlan& plan = {},
                                                     std::optional<ParamPoint> truth = std::nullopt) {
  if (M < 100) throw Error(ErrorCode::invalid_argument, "unit-dominance diagnostic needs M ≥ 100 fresh draws");
  if (n_max == 0) throw Error(ErrorCode::invalid_argument, "n_max must be positive");
  if (!(joint_level > 0.0 && joint_level < 1.0)) throw Error(ErrorCode::invalid_argument, "joint level must lie in (0,1)");
  const ParamPoint star = truth ? *truth : gen.truth(model);
  Rng rng = make_rng(seed, "stream");
  const Sample path = gen.sample(n_max, rng);
  const auto lagged = model.lagged_estimates(path, model.default_theta0(), derive_seed(seed, "lagged"));
  const double alphas[1] = {alpha};
  const auto rates = online_rate_schedule(src, model, path, alphas, derive_seed(seed, "online-rate"), plan);
  const double z = stats::normal_quantile(1.0 - (1.0 - joint_level) / (2.0 * static_cast<double>(n_max)));

  UnitDominanceReport rep;
  rep.joint_level = joint_level;
  rep.fresh_draws = M;
  std::vector<double> e(M);
  for (std::size_t n = 1; n <= n_max; ++n) {
    UnitDominanceRow row;
    row.n = n;
    row.omega = rates[0][n - 1];
    Rng fresh = make_rng(seed, "fresh", n);
    for (auto& v : e) {
      const Datum zf = gen.draw(fresh);
      v = std::exp(-row.omega * (model.loss(lagged[n - 1], zf) - model.loss(star, zf)));
    }
    row.estimate = stats::mean(e);
    if (!std::isfinite(row.estimate)) {
      row.sd = kInf;
      row.lower = row.upper = kInf;
    } else {
      row.sd = stats::stddev(e);
      const double half = z * row.sd / std::sqrt(static_cast<double>(M));
      row.lower = row.estimate - half;
      row.upper = row.estimate + half;
    }
    rep.rows.push_back(row);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Learning-rate profile

struct RateBand {
  std::size_t n = 0;
  double q10 = 0.0;
  double q50 = 0.0;
  double q90 = 0.0;
};

/// Quantiles over replications of the rate calibrated on samples of size n.
inline std::vector<RateBand> learning_rate_profile(const DataGenerator& gen, const LossModel& model,
                                                   const RateSource& src, std::vector<std::size_t> n_grid,
                                                   std::size_t reps, std::uint64_t seed, double alpha = 0.05,
                                                   CalibrationMode mode = CalibrationMode::online) {
  if (reps == 0) throw Error(ErrorCode::invalid_argument, "reps must be positive");
  std::sort(n_grid.begin(), n_grid.end());
  if (n_grid.empty() || n_grid.front() < 2) throw Error(ErrorCode::invalid_argument, "sample sizes must be ≥ 2");
  const double alphas[1] = {alpha};
  std::vector<std::vector<double>> rates(n_grid.size());
  for (std::size_t r = 0; r < reps; ++r) {
    Rng rng = make_rng(seed, "profile", r);
    const Sample path = gen.sample(n_grid.back(), rng);
    for (std::size_t k = 0; k < n_grid.size(); ++k) {
      rates[k].push_back(rates_for_alphas(src, model, std::span<const Datum>(path).first(n_grid[k]), alphas, mode,
                                          derive_seed(seed, "profile-rate", r * 1'000'003 + k))[0]);
    }
  }
  std::vector<RateBand> out;
  for (std::size_t k = 0; k < n_grid.size(); ++k) {
    out.push_back({n_grid[k], stats::quantile(rates[k], 0.1), stats::quantile(rates[k], 0.5),
                   stats::quantile(rates[k], 0.9)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config files

/// "name:p1:p2" shorthand for generators.
inline GeneratorSpec parse_generator_spec(const std::string& s) {
  GeneratorSpec g;
  std::stringstream ss(s);
  std::string part;
  std::getline(ss, g.name, ':');
  while (std::getline(ss, part, ':')) {
    try {
      g.params.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw Error(ErrorCode::config_error, "bad generator parameter '" + part + "' in '" + s + "'");
    }
  }
  return g;
}

inline const std::set<std::string>& experiment_keys() {
  static const std::set<std::string> keys = {
      "mode",           "generator",        "generator.params", "generator.weights", "generator.centers",
      "loss",           "loss.q",           "loss.k",           "loss.dim",          "loss.lower",
      "loss.upper",     "methods",          "rate",             "rate.omega",        "rate.lo",
      "rate.hi",        "rate.sigma2",      "rate.rho",         "rate.candidates",   "rate.reps",
      "stopping",       "stopping.n",       "stopping.n_min",   "stopping.n_max",    "stopping.null",
      "stopping.threshold", "filter",       "filter.null_bound", "filter.k",         "filter.max_attempts",
      "alphas",         "reps",             "seed",             "split_frac",        "bootstrap_reps",
      "grid_points",    "compute_width",    "recalibrate_every", "recalibration_growth", "rate.mode", "threads",       "prpl_c",
      "truth",          "power.n",          "power.null",       "power.alternatives"};
  return keys;
}

inline RateSource parse_rate_source(const ConfigFile& c) {
  const std::string kind = c.get_string("rate", "nonparam");
  RateSource r;
  if (kind == "fixed") {
    r.kind = RateSourceKind::fixed;
    r.omega = c.get_double("rate.omega", 0.0);
  } else if (kind == "random_uniform") {
    r.kind = RateSourceKind::random_uniform;
    r.lo = c.get_double("rate.lo", 0.0);
    r.hi = c.get_double("rate.hi", 1.0);
    if (!(r.lo >= 0.0 && r.lo <= r.hi)) throw Error(ErrorCode::config_error, "rate.lo and rate.hi must satisfy 0 ≤ lo ≤ hi");
  } else {
    try {
      r = RateSource::parse(kind);
    } catch (const Error& e) {
      throw Error(ErrorCode::config_error, e.what());
    }
  }
  if (c.has("rate.sigma2")) r.sigma2 = c.get_double("rate.sigma2", 1.0);
  if (c.has("rate.rho")) r.rho = c.get_double("rate.rho", 1.0);
  r.candidates = c.get_doubles("rate.candidates");
  std::sort(r.candidates.begin(), r.candidates.end());
  r.bootstrap_reps = c.get_size("rate.reps", r.bootstrap_reps);
  return r;
}

inline ExperimentConfig experiment_from_config(const ConfigFile& c) {
  c.require_known(experiment_keys());
  c.require({"generator", "loss", "methods"});
  ExperimentConfig cfg;
  cfg.generator.name = c.get_string("generator");
  cfg.generator.params = c.get_doubles("generator.params");
  cfg.generator.weights = c.get_doubles("generator.weights");
  cfg.generator.centers = c.get_doubles("generator.centers");
  cfg.loss.name = c.get_string("loss");
  cfg.loss.q = c.get_double("loss.q", 0.5);
  cfg.loss.k = c.get_size("loss.k", 3);
  cfg.loss.dim = c.get_size("loss.dim", 1);
  if (c.has("loss.lower")) cfg.loss.lower = c.get_double("loss.lower", 0.0);
  if (c.has("loss.upper")) cfg.loss.upper = c.get_double("loss.upper", 0.0);
  cfg.methods.clear();
  for (const auto& m : c.get_list("methods")) {
    try {
      cfg.methods.push_back(parse_method(m));
    } catch (const Error& e) {
      throw Error(ErrorCode::config_error, e.what());
    }
  }
  cfg.rate = parse_rate_source(c);

  const std::string stop = c.get_string("stopping", "fixed_n");
  if (stop == "fixed_n") {
    cfg.stopping = StoppingRule::fixed(c.get_size("stopping.n", 100));
  } else if (stop == "until_reject") {
    cfg.stopping = StoppingRule::until_reject(c.get_double("stopping.null", 0.0), c.get_size("stopping.n_min", 10),
                                              c.get_size("stopping.n_max", 1000));
  } else if (stop == "statistic_threshold") {
    cfg.stopping = StoppingRule::statistic_threshold(c.get_double("stopping.threshold", 10.0),
                                                     c.get_size("stopping.n_max", 1000));
  } else {
    throw Error(ErrorCode::config_error, "stopping must be fixed_n, until_reject or statistic_threshold");
  }

  const std::string filter = c.get_string("filter", "none");
  if (filter == "none") {
    cfg.filter.kind = SelectionFilter::Kind::none;
  } else if (filter == "false_rejections_only") {
    cfg.filter.kind = SelectionFilter::Kind::false_rejections_only;
  } else if (filter == "tukey") {
    cfg.filter.kind = SelectionFilter::Kind::tukey;
  } else {
    throw Error(ErrorCode::config_error, "filter must be none, false_rejections_only or tukey");
  }
  cfg.filter.null_bound = c.get_double("filter.null_bound", cfg.filter.null_bound);
  cfg.filter.tukey_k = c.get_double("filter.k", cfg.filter.tukey_k);
  cfg.filter.max_attempts = c.get_size("filter.max_attempts", cfg.filter.max_attempts);

  if (c.has("alphas")) cfg.alphas = c.get_doubles("alphas");
  cfg.reps = c.get_size("reps", cfg.reps);
  cfg.seed = c.get_size("seed", 0);
  cfg.split_frac = c.get_double("split_frac", cfg.split_frac);
  cfg.bootstrap_reps = c.get_size("bootstrap_reps", cfg.bootstrap_reps);
  cfg.grid_points = c.get_size("grid_points", cfg.grid_points);
  cfg.compute_width = c.get_string("compute_width", "true") != "false";
  cfg.recalibration.every = c.get_size("recalibrate_every", cfg.recalibration.every);
  cfg.recalibration.growth = c.get_double("recalibration_growth", cfg.recalibration.growth);
  const std::string mode = c.get_string("rate.mode", "online");
  if (mode != "online" && mode != "offline") throw Error(ErrorCode::config_error, "rate.mode must be online or offline");
  cfg.recalibration.mode = mode == "online" ? CalibrationMode::online : CalibrationMode::offline;
  cfg.threads = c.get_size("threads", cfg.threads);
  cfg.prpl_c = c.get_double("prpl_c", cfg.prpl_c);
  if (c.has("truth")) {
    const auto t = c.get_doubles("truth");
    cfg.truth = ParamPoint(std::span<const double>(t));
  }
  cfg.validate();
  return cfg;
}

}  // namespace gue
