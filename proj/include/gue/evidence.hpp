#pragma once

// Online and offline generalized universal e-values, tests, confidence sets
// and anytime p-values. Everything is computed on the log scale.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gue/core.hpp"
#include "gue/grid.hpp"
#include "gue/losses.hpp"

namespace gue {

using Json = nlohmann::json;

inline double log_threshold(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::invalid_argument, "alpha must lie in (0,1)");
  return -std::log(alpha);
}

inline void check_rate(double rate) {
  if (!(rate >= 0.0) || !std::isfinite(rate)) {
    throw Error(ErrorCode::invalid_argument, "learning rate must be finite and nonnegative");
  }
}

// ---------------------------------------------------------------------------
// Learning-rate schedules

enum class RateKind { fixed, per_step, per_split };
enum class RateProvenance { user, nonparam_bootstrap, param_bootstrap, normal_l2, berry_esseen, random_uniform };

inline const char* to_string(RateProvenance p) {
  switch (p) {
    case RateProvenance::user: return "user";
    case RateProvenance::nonparam_bootstrap: return "nonparam_bootstrap";
    case RateProvenance::param_bootstrap: return "param_bootstrap";
    case RateProvenance::normal_l2: return "normal_l2";
    case RateProvenance::berry_esseen: return "berry_esseen";
    case RateProvenance::random_uniform: return "random_uniform";
  }
  return "unknown";
}

struct LearningRateSchedule {
  RateKind kind = RateKind::fixed;
  std::vector<double> values;
  RateProvenance provenance = RateProvenance::user;

  static LearningRateSchedule fixed(double omega, RateProvenance p = RateProvenance::user) {
    check_rate(omega);
    return {RateKind::fixed, {omega}, p};
  }

  /// Rate applied at step i (1-based). Fixed and per-split schedules repeat
  /// their single value.
  double at(std::size_t i) const {
    if (values.empty()) throw Error(ErrorCode::invalid_argument, "empty learning-rate schedule");
    if (kind != RateKind::per_step) return values.front();
    if (i == 0 || i > values.size()) throw Error(ErrorCode::invalid_argument, "rate index out of range");
    return values[i - 1];
  }

  void validate() const {
    for (double v : values) check_rate(v);
  }
};

// ---------------------------------------------------------------------------
// Offline e-value

struct OfflineSplit {
  Sample s1;
  Sample s2;
  ParamPoint theta_hat_s1;
  double rate = 0.0;
};

/// Splits `sample` into its first round(frac·n) points and the rest, and fits
/// the ERM on the first part.
inline OfflineSplit make_offline_split(const LossModel& model, std::span<const Datum> sample, double split_frac,
                                       double rate, std::uint64_t seed = 0) {
  if (sample.size() < 2) throw Error(ErrorCode::empty_sample, "offline split needs at least two observations");
  if (!(split_frac > 0.0 && split_frac < 1.0)) throw Error(ErrorCode::invalid_argument, "split fraction must lie in (0,1)");
  check_rate(rate);
  auto n1 = static_cast<std::size_t>(std::llround(split_frac * static_cast<double>(sample.size())));
  n1 = std::clamp<std::size_t>(n1, 1, sample.size() - 1);
  OfflineSplit split;
  split.s1.assign(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(n1));
  split.s2.assign(sample.begin() + static_cast<std::ptrdiff_t>(n1), sample.end());
  split.theta_hat_s1 = solve_erm(model, split.s1, seed, false).theta;
  split.rate = rate;
  return split;
}

/// Evaluates log G_off(θ) = ω · Σ_{z∈S₂} {ℓ(θ; z) − ℓ(θ̂_{S₁}; z)} with the
/// training term cached.
class OfflineEvaluator {
 public:
  OfflineEvaluator(LossModelPtr model, OfflineSplit split) : model_(std::move(model)), split_(std::move(split)) {
    if (split_.s1.empty() || split_.s2.empty()) throw Error(ErrorCode::empty_sample, "both halves of the split must be nonempty");
    check_rate(split_.rate);
    check_dim(*model_, split_.theta_hat_s1);
    check_sample(*model_, split_.s2);
    base_ = 0.0;
    for (const auto& z : split_.s2) base_ += model_->loss(split_.theta_hat_s1, z);
    if (!std::isfinite(base_)) {
      throw Error(ErrorCode::infeasible_estimate, "training estimate has infinite loss on the evaluation half");
    }
  }

  double operator()(const ParamPoint& theta) const {
    check_dim(*model_, theta);
    if (!model_->feasible(theta)) return kInf;
    if (split_.rate == 0.0) return 0.0;
    double total = 0.0;
    for (const auto& z : split_.s2) total += model_->loss(theta, z);
    if (total == kInf) return kInf;
    return split_.rate * (total - base_);
  }

  const OfflineSplit& split() const { return split_; }
  const LossModel& model() const { return *model_; }

 private:
  LossModelPtr model_;
  OfflineSplit split_;
  double base_ = 0.0;
};

inline double offline_log_gue(const LossModel& model, const OfflineSplit& split, const ParamPoint& theta) {
  // Non-owning alias; the evaluator does not outlive this call.
  return OfflineEvaluator(LossModelPtr(&model, [](const LossModel*) {}), split)(theta);
}

// ---------------------------------------------------------------------------
// Online e-process

struct GueStepRecord {
  std::size_t index = 0;
  Datum z;
  double rate = 0.0;
  double lagged_loss = 0.0;
  ParamPoint lagged_estimate;
};

class GueTrace {
 public:
  GueTrace(LossModelPtr model, ParamPoint theta0, std::uint64_t seed = 0)
      : model_(std::move(model)), theta0_(theta0), seed_(seed) {
    check_dim(*model_, theta0_);
    if (!model_->feasible(theta0_)) throw Error(ErrorCode::infeasible_estimate, "θ̂₀ lies outside the feasible region");
  }

  /// Builds a trace from lagged estimates computed elsewhere; entry i of
  /// `lagged` must depend on path[0..i) only.
  static GueTrace from_lagged(LossModelPtr model, std::span<const Datum> path, std::span<const ParamPoint> lagged,
                              std::span<const double> rates) {
    if (lagged.size() != path.size() || rates.size() != path.size()) {
      throw Error(ErrorCode::dimension_mismatch, "path, lagged estimates and rates differ in length");
    }
    GueTrace trace(std::move(model), path.empty() ? ParamPoint() : lagged.front());
    for (std::size_t i = 0; i < path.size(); ++i) trace.push_record(path[i], rates[i], lagged[i]);
    return trace;
  }

  /// Appends Z_i with rate ω̂_i; θ̂_{i−1} comes from the data already in the trace.
  void append(const Datum& z, double rate) {
    if (!erm_) {
      if (!records_.empty()) throw Error(ErrorCode::invalid_argument, "trace built from precomputed estimates cannot grow");
      erm_ = model_->online_erm(theta0_, seed_);
    }
    model_->validate(z);
    const ParamPoint lagged = erm_->current();
    push_record(z, rate, lagged);
    erm_->push(z);
  }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<GueStepRecord>& records() const { return records_; }
  const GueStepRecord& operator[](std::size_t i) const { return records_[i]; }
  const ParamPoint& theta0() const { return theta0_; }
  const LossModel& model() const { return *model_; }
  LossModelPtr model_ptr() const { return model_; }

  /// log G over the first `prefix` records (all by default).
  double log_gue_at(const ParamPoint& theta, std::optional<std::size_t> prefix = std::nullopt) const {
    check_dim(*model_, theta);
    if (!model_->feasible(theta)) return kInf;
    const std::size_t k = std::min(prefix.value_or(records_.size()), records_.size());
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const auto& r = records_[i];
      if (r.rate == 0.0) continue;
      total += r.rate * (model_->loss(theta, r.z) - r.lagged_loss);
    }
    return total;
  }

  /// log G after each prefix k = 1..n.
  std::vector<double> log_gue_path(const ParamPoint& theta) const {
    check_dim(*model_, theta);
    std::vector<double> out(records_.size(), kInf);
    if (!model_->feasible(theta)) return out;
    double total = 0.0;
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      if (r.rate != 0.0) total += r.rate * (model_->loss(theta, r.z) - r.lagged_loss);
      out[i] = total;
    }
    return out;
  }

 private:
  void push_record(const Datum& z, double rate, const ParamPoint& lagged) {
    check_rate(rate);
    GueStepRecord r;
    r.index = records_.size() + 1;
    r.z = z;
    r.rate = rate;
    r.lagged_estimate = lagged;
    r.lagged_loss = model_->loss(lagged, z);
    if (!std::isfinite(r.lagged_loss)) throw Error(ErrorCode::infeasible_estimate, "lagged estimate is infeasible");
    records_.push_back(r);
  }

  LossModelPtr model_;
  ParamPoint theta0_;
  std::uint64_t seed_;
  std::unique_ptr<OnlineErm> erm_;
  std::vector<GueStepRecord> records_;
};

inline double online_log_gue_at(const GueTrace& trace, const ParamPoint& theta) {
  if (trace.empty()) throw Error(ErrorCode::empty_sample, "trace is empty");
  return trace.log_gue_at(theta);
}

/// log p = −max_k log G_k(θ), clipped at 0.
inline double anytime_log_p(const GueTrace& trace, const ParamPoint& theta) {
  if (trace.empty()) throw Error(ErrorCode::empty_sample, "trace is empty");
  const auto path = trace.log_gue_path(theta);
  const double peak = *std::max_element(path.begin(), path.end());
  return std::min(0.0, -peak);
}

// ---------------------------------------------------------------------------
// Tests and confidence sets

using LogGueFn = std::function<double(const ParamPoint&)>;

struct TestDecision {
  bool reject = false;
  double inf_log_gue = kInf;
  ParamPoint argmin;
};

/// Rejects iff inf over the Θ₀ grid of log G ≥ log(1/α).
inline TestDecision gue_test(const LogGueFn& evaluator, std::span<const ParamPoint> theta0_grid, double alpha) {
  if (theta0_grid.empty()) throw Error(ErrorCode::invalid_argument, "null grid is empty");
  const double thr = log_threshold(alpha);
  TestDecision d;
  for (const auto& theta : theta0_grid) {
    const double v = evaluator(theta);
    if (v < d.inf_log_gue || d.argmin.empty()) {
      d.inf_log_gue = v;
      d.argmin = theta;
    }
  }
  d.reject = d.inf_log_gue >= thr;
  return d;
}

struct ConfidenceSet {
  std::vector<ParamPoint> grid;
  std::vector<double> log_gue;
  double alpha = 0.05;
  std::vector<bool> members;
  /// Product-grid shape when the grid is regular, else empty.
  std::vector<std::size_t> shape;

  std::size_t member_count() const { return static_cast<std::size_t>(std::count(members.begin(), members.end(), true)); }
  bool empty() const { return member_count() == 0; }

  /// Same evaluations thresholded at another level.
  ConfidenceSet at_alpha(double a) const {
    ConfidenceSet out = *this;
    out.alpha = a;
    const double thr = log_threshold(a);
    for (std::size_t i = 0; i < log_gue.size(); ++i) out.members[i] = log_gue[i] < thr;
    return out;
  }

  /// Smallest and largest member of a 1-D set.
  std::optional<std::pair<double, double>> hull() const {
    if (grid.empty() || grid.front().size() != 1) return std::nullopt;
    std::optional<std::pair<double, double>> h;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (!members[i]) continue;
      const double v = grid[i][0];
      if (!h) {
        h = {v, v};
      } else {
        h->first = std::min(h->first, v);
        h->second = std::max(h->second, v);
      }
    }
    return h;
  }

  /// Per-coordinate extent of the members.
  std::optional<Box> bounding_box() const {
    std::optional<Box> b;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (!members[i]) continue;
      if (!b) {
        b = Box{grid[i], grid[i]};
        continue;
      }
      for (std::size_t j = 0; j < grid[i].size(); ++j) {
        b->lo[j] = std::min(b->lo[j], grid[i][j]);
        b->hi[j] = std::max(b->hi[j], grid[i][j]);
      }
    }
    return b;
  }

  Json to_json() const {
    Json j;
    j["alpha"] = alpha;
    Json g = Json::array();
    for (const auto& p : grid) g.push_back(p.to_vector());
    j["grid"] = std::move(g);
    Json lg = Json::array();
    for (double v : log_gue) lg.push_back(std::isfinite(v) ? Json(v) : Json("inf"));
    j["log_gue"] = std::move(lg);
    j["members"] = members;
    j["empty"] = empty();
    if (!shape.empty()) j["shape"] = shape;
    if (auto h = hull()) j["hull"] = {h->first, h->second};
    return j;
  }
};

inline ConfidenceSet confidence_set(const LogGueFn& evaluator, std::vector<ParamPoint> grid, double alpha) {
  if (grid.empty()) throw Error(ErrorCode::invalid_argument, "confidence-set grid is empty");
  const double thr = log_threshold(alpha);
  ConfidenceSet cs;
  cs.alpha = alpha;
  cs.grid = std::move(grid);
  cs.log_gue.reserve(cs.grid.size());
  cs.members.reserve(cs.grid.size());
  for (const auto& theta : cs.grid) {
    const double v = evaluator(theta);
    cs.log_gue.push_back(v);
    cs.members.push_back(v < thr);
  }
  return cs;
}

inline ConfidenceSet confidence_set(const LogGueFn& evaluator, const ParamGrid& grid, double alpha) {
  auto cs = confidence_set(evaluator, grid.points(), alpha);
  cs.shape = grid.shape();
  return cs;
}

/// Default grid: `points` per axis over the model's bounding box.
inline ParamGrid default_grid(const LossModel& model, std::span<const Datum> sample, std::size_t points = 1000) {
  return ParamGrid(model.bounding_box(sample), points);
}

struct RefinementReport {
  bool stable = true;
  double coarse_measure = 0.0;
  double fine_measure = 0.0;
  double max_boundary_shift = 0.0;
};

/// Compares a set on `grid` with the set on a grid with twice the
/// resolution. 1-D sets are unstable when a hull endpoint moves by more than
/// one coarse spacing; higher-dimensional sets when the member volume
/// changes by more than 10%.
inline RefinementReport refinement_check(const LogGueFn& evaluator, const ParamGrid& grid, double alpha) {
  std::vector<std::size_t> fine_shape;
  for (auto m : grid.shape()) fine_shape.push_back(m > 1 ? 2 * m - 1 : 1);
  const ParamGrid fine(grid.box(), fine_shape);
  const auto a = confidence_set(evaluator, grid, alpha);
  const auto b = confidence_set(evaluator, fine, alpha);
  RefinementReport r;
  r.coarse_measure = static_cast<double>(a.member_count()) * grid.cell_volume();
  r.fine_measure = static_cast<double>(b.member_count()) * fine.cell_volume();
  if (grid.dim() == 1) {
    const auto ha = a.hull();
    const auto hb = b.hull();
    if (ha.has_value() != hb.has_value()) {
      r.stable = false;
      r.max_boundary_shift = kInf;
      return r;
    }
    if (!ha) return r;
    const double spacing = grid.cell_volume();
    r.max_boundary_shift = std::max(std::abs(ha->first - hb->first), std::abs(ha->second - hb->second));
    r.stable = r.max_boundary_shift <= spacing + kTolerance;
    return r;
  }
  const double denom = std::max(r.coarse_measure, r.fine_measure);
  r.stable = denom == 0.0 || std::abs(r.coarse_measure - r.fine_measure) <= 0.1 * denom;
  return r;
}

}  // namespace gue
