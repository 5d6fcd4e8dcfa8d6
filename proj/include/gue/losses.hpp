#pragma once

// Loss models ℓ(θ; z), empirical risk, and (almost-)empirical risk minimizers.
//
// Every model is immutable after construction. Hot loops call the unchecked
// virtual `LossModel::loss`; the free functions at the bottom of this header
// are the checked entry points.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gue/core.hpp"
#include "gue/grid.hpp"
#include "gue/random.hpp"
#include "gue/stats.hpp"

namespace gue {

enum class ErmMethod { closed_form, grid_search, line_search, subgradient_descent, lloyd_kmeans };

inline const char* to_string(ErmMethod m) {
  switch (m) {
    case ErmMethod::closed_form: return "closed_form";
    case ErmMethod::grid_search: return "grid_search";
    case ErmMethod::line_search: return "line_search";
    case ErmMethod::subgradient_descent: return "subgradient_descent";
    case ErmMethod::lloyd_kmeans: return "lloyd_kmeans";
  }
  return "unknown";
}

/// (ε, δ) almost-ERM certificate: achieved_gap ≤ δ / n^(1+ε).
struct AermCertificate {
  double epsilon = 0.0;
  double delta = 0.0;
  double achieved_gap = 0.0;
};

struct ErmResult {
  ParamPoint theta;
  AermCertificate certificate;
};

struct ErmOptions {
  std::uint64_t seed = 0;
  /// Measure iterative solvers against a reference grid.
  bool certify = true;
  /// Reference grid resolution used by the certificate of iterative solvers.
  std::size_t reference_points_per_dim = 101;
};

/// Thrown when an iterative solver hits its cap without converging.
class ErmNonConvergence : public Error {
 public:
  ErmNonConvergence(const std::string& what, ParamPoint best)
      : Error(ErrorCode::non_convergence, what), best_iterate_(best) {}
  const ParamPoint& best_iterate() const { return best_iterate_; }

 private:
  ParamPoint best_iterate_;
};

/// ERM over a growing prefix Z_1..Z_k; `current()` is θ̂_k, and θ̂_0 before
/// any data arrive.
class OnlineErm {
 public:
  virtual ~OnlineErm() = default;
  virtual void push(const Datum& z) = 0;
  virtual ParamPoint current() const = 0;
  virtual std::size_t size() const = 0;
};

/// ERM of the multiset that repeats sample[i] counts[i] times. Lets bootstrap
/// loops reuse one sort of the original sample.
class ResampleSolver {
 public:
  virtual ~ResampleSolver() = default;
  virtual ParamPoint solve(std::span<const std::uint32_t> counts) const = 0;
};

class LossModel {
 public:
  virtual ~LossModel() = default;

  virtual std::string name() const = 0;
  virtual std::size_t param_dim() const = 0;
  virtual ErmMethod erm_method() const = 0;
  virtual std::optional<Box> feasible_region() const { return std::nullopt; }

  /// ℓ(θ; z) without dimension checks. +∞ exactly when θ is infeasible.
  virtual double loss(const ParamPoint& theta, const Datum& z) const = 0;

  /// Throws if z is not a datum this model accepts.
  virtual void validate(const Datum& z) const = 0;

  virtual ErmResult solve_erm(std::span<const Datum> sample, const ErmOptions& options) const = 0;

  /// Default search box for grids built from a sample.
  virtual Box bounding_box(std::span<const Datum> sample) const = 0;

  /// Exact minimizers let AERM checks skip the reference grid.
  bool exact_erm() const {
    return erm_method() == ErmMethod::closed_form || erm_method() == ErmMethod::grid_search;
  }

  bool feasible(const ParamPoint& theta) const {
    const auto region = feasible_region();
    return !region || region->contains(theta);
  }

  /// A feasible parameter to use as θ̂_0 when nothing better is declared.
  virtual ParamPoint default_theta0() const {
    if (auto region = feasible_region()) return region->center();
    return ParamPoint(param_dim(), 0.0);
  }

  virtual std::unique_ptr<OnlineErm> online_erm(const ParamPoint& theta0, std::uint64_t seed) const;

  /// θ̂_0, θ̂_1, ..., θ̂_{n-1} along `path`; entry i uses path[0..i) only.
  virtual std::vector<ParamPoint> lagged_estimates(std::span<const Datum> path,
                                                   const ParamPoint& theta0,
                                                   std::uint64_t seed) const {
    auto erm = online_erm(theta0, seed);
    std::vector<ParamPoint> out;
    out.reserve(path.size());
    for (const auto& z : path) {
      out.push_back(erm->current());
      erm->push(z);
    }
    return out;
  }

  virtual std::unique_ptr<ResampleSolver> resample_solver(std::span<const Datum> sample,
                                                          std::uint64_t seed) const;

  double risk(const ParamPoint& theta, std::span<const Datum> sample) const {
    double total = 0.0;
    for (const auto& z : sample) {
      const double l = loss(theta, z);
      if (l == kInf) return kInf;
      total += l;
    }
    return total / static_cast<double>(sample.size());
  }

 protected:
  /// Gap of `theta` against a reference grid over the bounding box.
  AermCertificate grid_certificate(const ParamPoint& theta, std::span<const Datum> sample,
                                   std::size_t points_per_dim) const {
    const double at_theta = risk(theta, sample);
    double best = at_theta;
    const ParamGrid grid(bounding_box(sample), points_per_dim);
    for (std::size_t i = 0; i < grid.size(); ++i) best = std::min(best, risk(grid.point(i), sample));
    AermCertificate cert;
    cert.achieved_gap = at_theta - best;
    cert.epsilon = 0.0;
    cert.delta = std::max(0.0, cert.achieved_gap) * static_cast<double>(sample.size());
    return cert;
  }
};

using LossModelPtr = std::shared_ptr<const LossModel>;

namespace detail {

inline std::vector<Datum> expand_counts(std::span<const Datum> sample,
                                        std::span<const std::uint32_t> counts) {
  std::vector<Datum> out;
  std::size_t total = 0;
  for (auto c : counts) total += c;
  out.reserve(total);
  for (std::size_t i = 0; i < sample.size(); ++i) {
    for (std::uint32_t c = 0; c < counts[i]; ++c) out.push_back(sample[i]);
  }
  return out;
}

class RefitOnlineErm final : public OnlineErm {
 public:
  RefitOnlineErm(const LossModel& model, ParamPoint theta0, std::uint64_t seed)
      : model_(model), theta0_(theta0), seed_(seed), current_(theta0) {}

  void push(const Datum& z) override {
    data_.push_back(z);
    ErmOptions opts;
    opts.seed = derive_seed(seed_, "online-refit", data_.size());
    opts.certify = false;
    current_ = model_.solve_erm(data_, opts).theta;
  }
  ParamPoint current() const override { return data_.empty() ? theta0_ : current_; }
  std::size_t size() const override { return data_.size(); }

 private:
  const LossModel& model_;
  ParamPoint theta0_;
  std::uint64_t seed_;
  ParamPoint current_;
  std::vector<Datum> data_;
};

class RefitResampleSolver final : public ResampleSolver {
 public:
  RefitResampleSolver(const LossModel& model, std::span<const Datum> sample, std::uint64_t seed)
      : model_(model), sample_(sample.begin(), sample.end()), seed_(seed) {}

  ParamPoint solve(std::span<const std::uint32_t> counts) const override {
    ErmOptions opts;
    opts.seed = derive_seed(seed_, "resample-refit", calls_++);
    opts.certify = false;
    return model_.solve_erm(detail::expand_counts(sample_, counts), opts).theta;
  }

 private:
  const LossModel& model_;
  std::vector<Datum> sample_;
  std::uint64_t seed_;
  mutable std::uint64_t calls_ = 0;
};

/// Box [min - 4 sd, max + 4 sd] of a set of values.
inline std::pair<double, double> padded_range(std::span<const double> xs) {
  const auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
  const double sd = stats::stddev(xs);
  return {*mn - 4.0 * sd, *mx + 4.0 * sd};
}

/// Minimizer of Σ (z - θ)(q - 1{z < θ}) over sorted values: the order
/// statistic at rank ceil(qn), or the midpoint of the flat segment when qn is
/// an integer.
inline double quantile_minimizer(std::span<const double> sorted, double q) {
  const auto n = sorted.size();
  const double t = q * static_cast<double>(n);
  const double r = std::round(t);
  if (std::abs(t - r) < kTolerance && r >= 1.0 && r <= static_cast<double>(n) - 1.0) {
    const auto k = static_cast<std::size_t>(r);
    return 0.5 * (sorted[k - 1] + sorted[k]);
  }
  auto k = static_cast<std::size_t>(std::max(1.0, std::ceil(t - kTolerance)));
  k = std::min(k, n);
  return sorted[k - 1];
}

/// Same rule for a weighted multiset given as sorted values and counts.
inline double quantile_minimizer_counts(std::span<const double> sorted,
                                        std::span<const std::uint32_t> counts, double q) {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  if (n == 0) throw Error(ErrorCode::empty_sample, "quantile of empty resample");
  auto nth = [&](std::size_t rank) {  // 1-based
    std::size_t cum = 0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      cum += counts[i];
      if (cum >= rank) return sorted[i];
    }
    return sorted.back();
  };
  const double t = q * static_cast<double>(n);
  const double r = std::round(t);
  if (std::abs(t - r) < kTolerance && r >= 1.0 && r <= static_cast<double>(n) - 1.0) {
    const auto k = static_cast<std::size_t>(r);
    return 0.5 * (nth(k) + nth(k + 1));
  }
  auto k = static_cast<std::size_t>(std::max(1.0, std::ceil(t - kTolerance)));
  return nth(std::min(k, n));
}

}  // namespace detail

inline std::unique_ptr<OnlineErm> LossModel::online_erm(const ParamPoint& theta0,
                                                        std::uint64_t seed) const {
  return std::make_unique<detail::RefitOnlineErm>(*this, theta0, seed);
}

inline std::unique_ptr<ResampleSolver> LossModel::resample_solver(std::span<const Datum> sample,
                                                                  std::uint64_t seed) const {
  return std::make_unique<detail::RefitResampleSolver>(*this, sample, seed);
}

// ---------------------------------------------------------------------------
// Squared error: ℓ(θ; z) = ‖z − θ‖², minimized by the mean.

class SquaredLoss final : public LossModel {
 public:
  explicit SquaredLoss(std::size_t dim = 1) : dim_(dim) {
    if (dim == 0 || dim > Features::capacity()) {
      throw Error(ErrorCode::invalid_argument, "l2_mean dimension out of range");
    }
  }

  std::string name() const override { return "l2_mean"; }
  std::size_t param_dim() const override { return dim_; }
  ErmMethod erm_method() const override { return ErmMethod::closed_form; }

  double loss(const ParamPoint& theta, const Datum& z) const override {
    const auto x = z.x();
    double s = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      const double d = x[j] - theta[j];
      s += d * d;
    }
    return s;
  }

  void validate(const Datum& z) const override {
    const bool ok = (z.kind() == DatumKind::scalar && dim_ == 1) ||
                    (z.kind() == DatumKind::vector && z.dim() == dim_);
    if (!ok) throw Error(ErrorCode::dimension_mismatch, "l2_mean expects " + std::to_string(dim_) + "-dimensional data");
  }

  ErmResult solve_erm(std::span<const Datum> sample, const ErmOptions&) const override {
    ParamPoint m(dim_, 0.0);
    for (const auto& z : sample) {
      for (std::size_t j = 0; j < dim_; ++j) m[j] += z.x()[j];
    }
    for (std::size_t j = 0; j < dim_; ++j) m[j] /= static_cast<double>(sample.size());
    return {m, {}};
  }

  Box bounding_box(std::span<const Datum> sample) const override {
    Box b{ParamPoint(dim_), ParamPoint(dim_)};
    std::vector<double> col(sample.size());
    for (std::size_t j = 0; j < dim_; ++j) {
      for (std::size_t i = 0; i < sample.size(); ++i) col[i] = sample[i].x()[j];
      std::tie(b.lo[j], b.hi[j]) = detail::padded_range(col);
    }
    return b;
  }

  std::unique_ptr<OnlineErm> online_erm(const ParamPoint& theta0, std::uint64_t) const override {
    return std::make_unique<Running>(theta0);
  }

  std::unique_ptr<ResampleSolver> resample_solver(std::span<const Datum> sample,
                                                  std::uint64_t) const override {
    return std::make_unique<Weighted>(sample, dim_);
  }

 private:
  class Running final : public OnlineErm {
   public:
    explicit Running(ParamPoint theta0) : theta0_(theta0), sum_(theta0.size(), 0.0) {}
    void push(const Datum& z) override {
      for (std::size_t j = 0; j < sum_.size(); ++j) sum_[j] += z.x()[j];
      ++n_;
    }
    ParamPoint current() const override {
      if (n_ == 0) return theta0_;
      ParamPoint m = sum_;
      for (auto& v : m) v /= static_cast<double>(n_);
      return m;
    }
    std::size_t size() const override { return n_; }

   private:
    ParamPoint theta0_;
    ParamPoint sum_;
    std::size_t n_ = 0;
  };

  class Weighted final : public ResampleSolver {
   public:
    Weighted(std::span<const Datum> sample, std::size_t dim) : sample_(sample.begin(), sample.end()), dim_(dim) {}
    ParamPoint solve(std::span<const std::uint32_t> counts) const override {
      ParamPoint m(dim_, 0.0);
      double total = 0.0;
      for (std::size_t i = 0; i < sample_.size(); ++i) {
        if (counts[i] == 0) continue;
        total += counts[i];
        for (std::size_t j = 0; j < dim_; ++j) m[j] += counts[i] * sample_[i].x()[j];
      }
      for (auto& v : m) v /= total;
      return m;
    }

   private:
    std::vector<Datum> sample_;
    std::size_t dim_;
  };

  std::size_t dim_;
};

// ---------------------------------------------------------------------------
// Check (pinball) loss ℓ(θ; z) = scale · (z − θ)(q − 1{z < θ}), optionally
// restricted to an interval outside which the loss is +∞. The absolute loss
// is the q = 1/2, scale = 2 member of this family.

class QuantileLoss final : public LossModel {
 public:
  QuantileLoss(std::string name, double q, double scale = 1.0,
               std::optional<std::pair<double, double>> bounds = std::nullopt)
      : name_(std::move(name)), q_(q), scale_(scale), bounds_(bounds) {
    if (!(q > 0.0 && q < 1.0)) throw Error(ErrorCode::invalid_argument, "quantile level must lie in (0,1)");
    if (bounds_ && !(bounds_->first <= bounds_->second)) {
      throw Error(ErrorCode::invalid_argument, "restricted quantile bounds are inverted");
    }
  }

  std::string name() const override { return name_; }
  std::size_t param_dim() const override { return 1; }
  ErmMethod erm_method() const override { return ErmMethod::closed_form; }
  double level() const { return q_; }

  std::optional<Box> feasible_region() const override {
    if (!bounds_) return std::nullopt;
    return Box{ParamPoint{bounds_->first}, ParamPoint{bounds_->second}};
  }

  ParamPoint default_theta0() const override {
    if (!bounds_) return ParamPoint{0.0};
    return ParamPoint{std::clamp(0.0, bounds_->first, bounds_->second)};
  }

  double loss(const ParamPoint& theta, const Datum& z) const override {
    const double t = theta[0];
    if (bounds_ && (t < bounds_->first || t > bounds_->second)) return kInf;
    const double r = z.value() - t;
    return scale_ * r * (q_ - (r < 0.0 ? 1.0 : 0.0));
  }

  void validate(const Datum& z) const override {
    if (z.kind() != DatumKind::scalar) throw Error(ErrorCode::dimension_mismatch, name_ + " expects scalar data");
  }

  ErmResult solve_erm(std::span<const Datum> sample, const ErmOptions&) const override {
    auto xs = scalar_values(sample);
    std::sort(xs.begin(), xs.end());
    return {ParamPoint{clamp(detail::quantile_minimizer(xs, q_))}, {}};
  }

  Box bounding_box(std::span<const Datum> sample) const override {
    const auto xs = scalar_values(sample);
    auto [lo, hi] = detail::padded_range(xs);
    if (bounds_) {
      lo = std::max(lo, bounds_->first);
      hi = std::min(hi, bounds_->second);
      if (hi < lo) hi = lo;
    }
    return {ParamPoint{lo}, ParamPoint{hi}};
  }

  std::unique_ptr<OnlineErm> online_erm(const ParamPoint& theta0, std::uint64_t) const override {
    return std::make_unique<Running>(*this, theta0);
  }

  std::unique_ptr<ResampleSolver> resample_solver(std::span<const Datum> sample,
                                                  std::uint64_t) const override {
    return std::make_unique<Weighted>(*this, sample);
  }

 private:
  double clamp(double t) const { return bounds_ ? std::clamp(t, bounds_->first, bounds_->second) : t; }

  class Running final : public OnlineErm {
   public:
    Running(const QuantileLoss& model, ParamPoint theta0) : model_(model), theta0_(theta0) {}
    void push(const Datum& z) override {
      sorted_.insert(std::upper_bound(sorted_.begin(), sorted_.end(), z.value()), z.value());
    }
    ParamPoint current() const override {
      if (sorted_.empty()) return theta0_;
      return ParamPoint{model_.clamp(detail::quantile_minimizer(sorted_, model_.q_))};
    }
    std::size_t size() const override { return sorted_.size(); }

   private:
    const QuantileLoss& model_;
    ParamPoint theta0_;
    std::vector<double> sorted_;
  };

  class Weighted final : public ResampleSolver {
   public:
    Weighted(const QuantileLoss& model, std::span<const Datum> sample) : model_(model) {
      order_.resize(sample.size());
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::sort(order_.begin(), order_.end(),
                [&](auto a, auto b) { return sample[a].value() < sample[b].value(); });
      for (auto i : order_) sorted_.push_back(sample[i].value());
      scratch_.resize(sample.size());
    }
    ParamPoint solve(std::span<const std::uint32_t> counts) const override {
      for (std::size_t k = 0; k < order_.size(); ++k) scratch_[k] = counts[order_[k]];
      return ParamPoint{model_.clamp(detail::quantile_minimizer_counts(sorted_, scratch_, model_.q_))};
    }

   private:
    const QuantileLoss& model_;
    std::vector<std::size_t> order_;
    std::vector<double> sorted_;
    mutable std::vector<std::uint32_t> scratch_;
  };

  std::string name_;
  double q_;
  double scale_;
  std::optional<std::pair<double, double>> bounds_;
};

// ---------------------------------------------------------------------------
// Zero-one threshold classifier: ℓ(θ; x, y) = 1{x ≤ θ}1{y = 1} + 1{x > θ}1{y = 0}.
//
// The empirical risk is constant between consecutive distinct x values. The
// ERM picks the leftmost minimizing interval and returns its midpoint; the
// unbounded end intervals are represented by a point half a mean spacing
// beyond the extreme observation.

class ThresholdLoss final : public LossModel {
 public:
  std::string name() const override { return "zero_one_threshold"; }
  std::size_t param_dim() const override { return 1; }
  ErmMethod erm_method() const override { return ErmMethod::grid_search; }

  double loss(const ParamPoint& theta, const Datum& z) const override {
    const bool below = z.value() <= theta[0];
    const bool positive = z.label() == 1.0;
    return (below && positive) || (!below && !positive) ? 1.0 : 0.0;
  }

  void validate(const Datum& z) const override {
    if (z.kind() != DatumKind::labeled || z.dim() != 1) {
      throw Error(ErrorCode::dimension_mismatch, "zero_one_threshold expects (x, y) data with scalar x");
    }
    if (z.label() != 0.0 && z.label() != 1.0) {
      throw Error(ErrorCode::data_error, "zero_one_threshold labels must be 0 or 1");
    }
  }

  ErmResult solve_erm(std::span<const Datum> sample, const ErmOptions&) const override {
    std::vector<std::uint32_t> ones(sample.size(), 1);
    Sorted s(sample);
    return {ParamPoint{s.minimizer(ones)}, {}};
  }

  Box bounding_box(std::span<const Datum> sample) const override {
    const auto xs = scalar_values(sample);
    const auto [lo, hi] = detail::padded_range(xs);
    return {ParamPoint{lo}, ParamPoint{hi}};
  }

  std::unique_ptr<OnlineErm> online_erm(const ParamPoint& theta0, std::uint64_t) const override {
    return std::make_unique<Running>(theta0);
  }

  std::unique_ptr<ResampleSolver> resample_solver(std::span<const Datum> sample,
                                                  std::uint64_t) const override {
    return std::make_unique<Weighted>(sample);
  }

  /// O(n log n) lagged ERMs over a known path using a min segment tree over
  /// the distinct values of the whole path. Only inserted points carry
  /// weight, and interval endpoints are taken from inserted values only, so
  /// entry i never depends on path[i..).
  std::vector<ParamPoint> lagged_estimates(std::span<const Datum> path, const ParamPoint& theta0,
                                           std::uint64_t) const override {
    std::vector<double> values = scalar_values(path);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    const std::size_t m = values.size();

    MinTree tree(m + 1);  // leaf g is the interval between values[g-1] and values[g]
    std::set<std::size_t> inserted;
    std::vector<ParamPoint> out;
    out.reserve(path.size());

    for (const auto& z : path) {
      if (inserted.empty()) {
        out.push_back(theta0);
      } else {
        const std::size_t g = tree.leftmost_argmin();
        const double lo_v = values[*inserted.begin()];
        const double hi_v = values[*inserted.rbegin()];
        const double pad = end_pad(lo_v, hi_v, inserted.size());
        // Left end: the inserted value at index g-1 (g is the start of its run).
        auto succ = inserted.lower_bound(g);
        double theta;
        if (g == 0 || (succ == inserted.begin() && *succ >= g)) {
          theta = (succ == inserted.end() ? hi_v : values[*succ]) - pad;
        } else if (succ == inserted.end()) {
          theta = hi_v + pad;
        } else {
          theta = 0.5 * (values[g - 1] + values[*succ]);
        }
        out.push_back(ParamPoint{theta});
      }
      const auto p = static_cast<std::size_t>(
          std::lower_bound(values.begin(), values.end(), z.value()) - values.begin());
      if (z.label() == 1.0) {
        tree.add(p + 1, m + 1, 1.0);
      } else {
        tree.add(0, p + 1, 1.0);
      }
      inserted.insert(p);
    }
    return out;
  }

 private:
  static double end_pad(double lo, double hi, std::size_t distinct) {
    return distinct >= 2 ? (hi - lo) / (2.0 * static_cast<double>(distinct)) : 0.5;
  }

  /// Sorted distinct values with per-label weights; scans interval risks.
  class Sorted {
   public:
    explicit Sorted(std::span<const Datum> sample) {
      order_.resize(sample.size());
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::sort(order_.begin(), order_.end(),
                [&](auto a, auto b) { return sample[a].value() < sample[b].value(); });
      for (auto i : order_) {
        const double v = sample[i].value();
        if (values_.empty() || values_.back() != v) {
          values_.push_back(v);
        }
        group_.push_back(values_.size() - 1);
        positive_.push_back(sample[i].label() == 1.0);
      }
      w1_.resize(values_.size());
      w0_.resize(values_.size());
    }

    double minimizer(std::span<const std::uint32_t> counts) const {
      std::fill(w1_.begin(), w1_.end(), 0.0);
      std::fill(w0_.begin(), w0_.end(), 0.0);
      double total0 = 0.0;
      for (std::size_t k = 0; k < order_.size(); ++k) {
        const double c = counts[order_[k]];
        if (c == 0) continue;
        if (positive_[k]) {
          w1_[group_[k]] += c;
        } else {
          w0_[group_[k]] += c;
          total0 += c;
        }
      }
      // Interval j sits left of the j-th present value; j == present.size()
      // is the right end.
      present_.clear();
      for (std::size_t g = 0; g < values_.size(); ++g) {
        if (w1_[g] + w0_[g] > 0) present_.push_back(g);
      }
      if (present_.empty()) throw Error(ErrorCode::empty_sample, "threshold ERM of empty resample");
      double risk = total0;
      double best = risk;
      std::size_t best_j = 0;
      for (std::size_t j = 1; j <= present_.size(); ++j) {
        const auto g = present_[j - 1];
        risk += w1_[g] - w0_[g];
        if (risk < best) {
          best = risk;
          best_j = j;
        }
      }
      const double lo = values_[present_.front()];
      const double hi = values_[present_.back()];
      const double pad = end_pad(lo, hi, present_.size());
      if (best_j == 0) return lo - pad;
      if (best_j == present_.size()) return hi + pad;
      return 0.5 * (values_[present_[best_j - 1]] + values_[present_[best_j]]);
    }

   private:
    std::vector<std::size_t> order_;
    std::vector<double> values_;
    std::vector<std::size_t> group_;
    std::vector<bool> positive_;
    mutable std::vector<double> w1_, w0_;
    mutable std::vector<std::size_t> present_;
  };

  class Running final : public OnlineErm {
   public:
    explicit Running(ParamPoint theta0) : theta0_(theta0) {}
    void push(const Datum& z) override { data_.push_back(z); }
    ParamPoint current() const override {
      if (data_.empty()) return theta0_;
      std::vector<std::uint32_t> ones(data_.size(), 1);
      return ParamPoint{Sorted(data_).minimizer(ones)};
    }
    std::size_t size() const override { return data_.size(); }

   private:
    ParamPoint theta0_;
    std::vector<Datum> data_;
  };

  class Weighted final : public ResampleSolver {
   public:
    explicit Weighted(std::span<const Datum> sample) : sorted_(sample) {}
    ParamPoint solve(std::span<const std::uint32_t> counts) const override {
      return ParamPoint{sorted_.minimizer(counts)};
    }

   private:
    Sorted sorted_;
  };

  /// Range add / global leftmost argmin over a fixed number of leaves.
  class MinTree {
   public:
    explicit MinTree(std::size_t leaves) : n_(leaves), min_(4 * leaves, 0.0), add_(4 * leaves, 0.0) {}

    void add(std::size_t lo, std::size_t hi, double v) { add(1, 0, n_, lo, hi, v); }

    std::size_t leftmost_argmin() const {
      std::size_t node = 1, lo = 0, hi = n_;
      while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        if (min_[2 * node] <= min_[2 * node + 1]) {
          node = 2 * node;
          hi = mid;
        } else {
          node = 2 * node + 1;
          lo = mid;
        }
      }
      return lo;
    }

   private:
    void add(std::size_t node, std::size_t lo, std::size_t hi, std::size_t a, std::size_t b, double v) {
      if (b <= lo || hi <= a) return;
      if (a <= lo && hi <= b) {
        add_[node] += v;
        min_[node] += v;
        return;
      }
      const std::size_t mid = (lo + hi) / 2;
      add(2 * node, lo, mid, a, b, v);
      add(2 * node + 1, mid, hi, a, b, v);
      min_[node] = add_[node] + std::min(min_[2 * node], min_[2 * node + 1]);
    }

    std::size_t n_;
    std::vector<double> min_;
    std::vector<double> add_;
  };
};

// ---------------------------------------------------------------------------
// Linear quantile regression with one covariate:
// ℓ(θ; x, y) = r (q − 1{r < 0}),  r = y − θ₀ − θ₁ x.
//
// The profile risk in the slope is convex (the intercept is minimized
// exactly by a residual quantile), so a bracketing golden-section search on
// the slope finds the ERM.

class QuantileRegressionLoss final : public LossModel {
 public:
  explicit QuantileRegressionLoss(double q) : q_(q) {
    if (!(q > 0.0 && q < 1.0)) throw Error(ErrorCode::invalid_argument, "quantile level must lie in (0,1)");
  }

  std::string name() const override { return "quantile_regression"; }
  std::size_t param_dim() const override { return 2; }
  ErmMethod erm_method() const override { return ErmMethod::line_search; }

  double loss(const ParamPoint& theta, const Datum& z) const override {
    const double r = z.label() - theta[0] - theta[1] * z.x()[0];
    return r * (q_ - (r < 0.0 ? 1.0 : 0.0));
  }

  void validate(const Datum& z) const override {
    if (z.kind() != DatumKind::labeled || z.dim() != 1) {
      throw Error(ErrorCode::dimension_mismatch, "quantile_regression expects (x, y) data with scalar x");
    }
  }

  ErmResult solve_erm(std::span<const Datum> sample, const ErmOptions& options) const override {
    std::vector<double> resid(sample.size());
    auto profile = [&](double slope, double* intercept) {
      for (std::size_t i = 0; i < sample.size(); ++i) resid[i] = sample[i].label() - slope * sample[i].x()[0];
      std::vector<double> sorted = resid;
      std::sort(sorted.begin(), sorted.end());
      const double b = detail::quantile_minimizer(sorted, q_);
      if (intercept) *intercept = b;
      double s = 0.0;
      for (double r : resid) {
        const double e = r - b;
        s += e * (q_ - (e < 0.0 ? 1.0 : 0.0));
      }
      return s;
    };

    std::vector<double> xs(sample.size()), ys(sample.size());
    for (std::size_t i = 0; i < sample.size(); ++i) {
      xs[i] = sample[i].x()[0];
      ys[i] = sample[i].label();
    }
    const double sx = stats::stddev(xs);
    const double sy = stats::stddev(ys);
    if (sx <= 0.0) {
      double b = 0.0;
      profile(0.0, &b);
      return {ParamPoint{b, 0.0}, {}};
    }
    // Bracket the slope by expanding until the profile rises on both sides.
    double step = std::max(sy / sx, kTolerance);
    double lo = -step, hi = step;
    const double f0 = profile(0.0, nullptr);
    for (int it = 0; it < 200 && profile(lo, nullptr) <= f0; ++it) lo *= 2.0;
    for (int it = 0; it < 200 && profile(hi, nullptr) <= f0; ++it) hi *= 2.0;

    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = profile(c, nullptr), fd = profile(d, nullptr);
    for (int it = 0; it < 300 && (b - a) > 1e-13 * (1.0 + std::abs(a) + std::abs(b)); ++it) {
      if (fc <= fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - phi * (b - a);
        fc = profile(c, nullptr);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + phi * (b - a);
        fd = profile(d, nullptr);
      }
    }
    const double slope = 0.5 * (a + b);
    double intercept = 0.0;
    profile(slope, &intercept);
    ErmResult out{ParamPoint{intercept, slope}, {}};
    if (options.certify) out.certificate = grid_certificate(out.theta, sample, options.reference_points_per_dim);
    return out;
  }

  Box bounding_box(std::span<const Datum> sample) const override {
    ErmOptions opts;
    opts.certify = false;
    const auto center = solve_erm(sample, opts).theta;
    std::vector<double> xs, ys;
    for (const auto& z : sample) {
      xs.push_back(z.x()[0]);
      ys.push_back(z.label());
    }
    const double sy = std::max(stats::stddev(ys), kTolerance);
    const double sx = std::max(stats::stddev(xs), kTolerance);
    return {ParamPoint{center[0] - 4.0 * sy, center[1] - 4.0 * sy / sx},
            ParamPoint{center[0] + 4.0 * sy, center[1] + 4.0 * sy / sx}};
  }

 private:
  double q_;
};

// ---------------------------------------------------------------------------
// Linear SVM hinge loss: ℓ(θ; x, y) = max{0, 1 − y(θ₀ + θ₁ x)}, y ∈ {−1, +1}.
// Solved by projected subgradient descent with step c/√t.

class HingeLoss final : public LossModel {
 public:
  explicit HingeLoss(std::size_t iterations = 1000, double radius = 1e3)
      : iterations_(iterations), radius_(radius) {}

  std::string name() const override { return "hinge_svm"; }
  std::size_t param_dim() const override { return 2; }
  ErmMethod erm_method() const override { return ErmMethod::subgradient_descent; }

  double loss(const ParamPoint& theta, const Datum& z) const override {
    return std::max(0.0, 1.0 - z.label() * (theta[0] + theta[1] * z.x()[0]));
  }

  void validate(const Datum& z) const override {
    if (z.kind() != DatumKind::labeled || z.dim() != 1) {
      throw Error(ErrorCode::dimension_mismatch, "hinge_svm expects (x, y) data with scalar x");
    }
    if (z.label() != 1.0 && z.label() != -1.0) {
      throw Error(ErrorCode::data_error, "hinge_svm labels must be -1 or +1");
    }
  }

  ErmResult solve_erm(std::span<const Datum> sample, const ErmOptions& options) const override {
    double xmax = 0.0;
    for (const auto& z : sample) xmax = std::max(xmax, std::abs(z.x()[0]));
    const double c = 1.0 / (1.0 + xmax);
    ParamPoint theta{0.0, 0.0};
    ParamPoint best = theta;
    double best_risk = risk(theta, sample);
    const double n = static_cast<double>(sample.size());
    for (std::size_t t = 1; t <= iterations_; ++t) {
      double g0 = 0.0, g1 = 0.0;
      for (const auto& z : sample) {
        const double y = z.label();
        if (y * (theta[0] + theta[1] * z.x()[0]) < 1.0) {
          g0 -= y;
          g1 -= y * z.x()[0];
        }
      }
      const double step = c / std::sqrt(static_cast<double>(t));
      theta[0] = std::clamp(theta[0] - step * g0 / n, -radius_, radius_);
      theta[1] = std::clamp(theta[1] - step * g1 / n, -radius_, radius_);
      if (!std::isfinite(theta[0]) || !std::isfinite(theta[1])) {
        throw ErmNonConvergence("hinge subgradient iterates diverged", best);
      }
      const double r = risk(theta, sample);
      if (r < best_risk) {
        best_risk = r;
        best = theta;
      }
    }
    ErmResult out{best, {}};
    if (options.certify) out.certificate = grid_certificate(best, sample, options.reference_points_per_dim);
    return out;
  }

  Box bounding_box(std::span<const Datum> sample) const override {
    ErmOptions opts;
    opts.certify = false;
    const auto c = solve_erm(sample, opts).theta;
    return {ParamPoint{c[0] - 4.0 * (1.0 + std::abs(c[0])), c[1] - 4.0 * (1.0 + std::abs(c[1]))},
            ParamPoint{c[0] + 4.0 * (1.0 + std::abs(c[0])), c[1] + 4.0 * (1.0 + std::abs(c[1]))}};
  }

 private:
  std::size_t iterations_;
  double radius_;
};

// ---------------------------------------------------------------------------
// K-means with centroid parameterization: ℓ(θ; z) = min_k ‖z − μ_k‖², θ the
// stacked centroids in lexicographic order. Solved by Lloyd iterations from
// k-means++ seeds with restarts.

class KMeansLoss final : public LossModel {
 public:
  KMeansLoss(std::size_t k, std::size_t dim = 2, std::size_t restarts = 10, std::size_t max_iterations = 300)
      : k_(k), dim_(dim), restarts_(restarts), max_iterations_(max_iterations) {
    if (k == 0 || dim == 0 || k * dim > ParamPoint::capacity()) {
      throw Error(ErrorCode::invalid_argument, "kmeans K * dim exceeds parameter capacity");
    }
  }

  std::string name() const override { return "kmeans"; }
  std::size_t param_dim() const override { return k_ * dim_; }
  ErmMethod erm_method() const override { return ErmMethod::lloyd_kmeans; }
  std::size_t clusters() const { return k_; }
  std::size_t data_dim() const { return dim_; }

  double loss(const ParamPoint& theta, const Datum& z) const override {
    const auto x = z.x();
    double best = kInf;
    for (std::size_t k = 0; k < k_; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) {
        const double d = x[j] - theta[k * dim_ + j];
        s += d * d;
      }
      best = std::min(best, s);
    }
    return best;
  }

  void validate(const Datum& z) const override {
    if (z.kind() != DatumKind::vector || z.dim() != dim_) {
      throw Error(ErrorCode::dimension_mismatch, "kmeans expects " + std::to_string(dim_) + "-dimensional vectors");
    }
  }

  /// Index of the centroid nearest to x.
  std::size_t assign(const ParamPoint& theta, std::span<const double> x) const {
    std::size_t arg = 0;
    double best = kInf;
    for (std::size_t k = 0; k < k_; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) {
        const double d = x[j] - theta[k * dim_ + j];
        s += d * d;
      }
      if (s < best) {
        best = s;
        arg = k;
      }
    }
    return arg;
  }

  ErmResult solve_erm(std::span<const Datum> sample, const ErmOptions& options) const override {
    // Degenerate samples short-circuit: every centroid sits on the data.
    std::vector<std::size_t> distinct;
    for (std::size_t i = 0; i < sample.size() && distinct.size() <= k_; ++i) {
      bool seen = false;
      for (auto d : distinct) {
        if (std::equal(sample[i].x().begin(), sample[i].x().end(), sample[d].x().begin())) {
          seen = true;
          break;
        }
      }
      if (!seen) distinct.push_back(i);
    }
    if (distinct.size() <= k_) {
      ParamPoint theta(param_dim());
      for (std::size_t k = 0; k < k_; ++k) {
        const auto& src = sample[distinct[std::min(k, distinct.size() - 1)]];
        for (std::size_t j = 0; j < dim_; ++j) theta[k * dim_ + j] = src.x()[j];
      }
      return {canonical(theta), {}};
    }

    Rng rng = make_rng(options.seed, "kmeans");
    ParamPoint best;
    double best_risk = kInf;
    bool best_converged = false;
    for (std::size_t r = 0; r < restarts_; ++r) {
      auto [theta, converged] = lloyd(sample, seed_plus_plus(sample, rng));
      const double value = risk(theta, sample);
      if (value < best_risk) {
        best_risk = value;
        best = theta;
        best_converged = converged;
      }
    }
    if (!best_converged) {
      throw ErmNonConvergence("Lloyd iterations hit the cap of " + std::to_string(max_iterations_), canonical(best));
    }
    ErmResult out{canonical(best), {}};
    if (options.certify) {
      const std::size_t per_dim = std::max<std::size_t>(
          2, static_cast<std::size_t>(std::floor(std::pow(1e6, 1.0 / static_cast<double>(param_dim())))));
      out.certificate = grid_certificate(out.theta, sample, std::min(per_dim, options.reference_points_per_dim));
    }
    return out;
  }

  Box bounding_box(std::span<const Datum> sample) const override {
    Box b{ParamPoint(param_dim()), ParamPoint(param_dim())};
    std::vector<double> col(sample.size());
    for (std::size_t j = 0; j < dim_; ++j) {
      for (std::size_t i = 0; i < sample.size(); ++i) col[i] = sample[i].x()[j];
      const auto [lo, hi] = detail::padded_range(col);
      for (std::size_t k = 0; k < k_; ++k) {
        b.lo[k * dim_ + j] = lo;
        b.hi[k * dim_ + j] = hi;
      }
    }
    return b;
  }

  /// Sorts centroids lexicographically so θ has one representation.
  ParamPoint canonical(const ParamPoint& theta) const {
    std::vector<std::vector<double>> cs(k_);
    for (std::size_t k = 0; k < k_; ++k) cs[k].assign(theta.begin() + k * dim_, theta.begin() + (k + 1) * dim_);
    std::sort(cs.begin(), cs.end());
    ParamPoint out(param_dim());
    for (std::size_t k = 0; k < k_; ++k) std::copy(cs[k].begin(), cs[k].end(), out.begin() + k * dim_);
    return out;
  }

 private:
  ParamPoint seed_plus_plus(std::span<const Datum> sample, Rng& rng) const {
    ParamPoint theta(param_dim());
    std::uniform_int_distribution<std::size_t> pick(0, sample.size() - 1);
    const auto first = sample[pick(rng)].x();
    std::copy(first.begin(), first.end(), theta.begin());
    std::vector<double> d2(sample.size(), kInf);
    for (std::size_t k = 1; k < k_; ++k) {
      double total = 0.0;
      for (std::size_t i = 0; i < sample.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) {
          const double d = sample[i].x()[j] - theta[(k - 1) * dim_ + j];
          s += d * d;
        }
        d2[i] = std::min(d2[i], s);
        total += d2[i];
      }
      std::size_t chosen = pick(rng);
      if (total > 0.0) {
        double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        for (std::size_t i = 0; i < sample.size(); ++i) {
          u -= d2[i];
          if (u <= 0.0) {
            chosen = i;
            break;
          }
        }
      }
      const auto x = sample[chosen].x();
      std::copy(x.begin(), x.end(), theta.begin() + k * dim_);
    }
    return theta;
  }

  std::pair<ParamPoint, bool> lloyd(std::span<const Datum> sample, ParamPoint theta) const {
    std::vector<std::size_t> label(sample.size(), k_);
    for (std::size_t it = 0; it < max_iterations_; ++it) {
      bool changed = false;
      for (std::size_t i = 0; i < sample.size(); ++i) {
        const auto a = assign(theta, sample[i].x());
        if (a != label[i]) {
          label[i] = a;
          changed = true;
        }
      }
      if (!changed) return {theta, true};
      ParamPoint sum(param_dim(), 0.0);
      std::vector<std::size_t> count(k_, 0);
      for (std::size_t i = 0; i < sample.size(); ++i) {
        ++count[label[i]];
        for (std::size_t j = 0; j < dim_; ++j) sum[label[i] * dim_ + j] += sample[i].x()[j];
      }
      for (std::size_t k = 0; k < k_; ++k) {
        if (count[k] == 0) continue;  // empty cluster keeps its centroid
        for (std::size_t j = 0; j < dim_; ++j) theta[k * dim_ + j] = sum[k * dim_ + j] / count[k];
      }
    }
    return {theta, false};
  }

  std::size_t k_;
  std::size_t dim_;
  std::size_t restarts_;
  std::size_t max_iterations_;
};

// ---------------------------------------------------------------------------
// Registry and checked entry points.

struct LossSpec {
  std::string name;
  double q = 0.5;
  std::size_t k = 3;
  std::size_t dim = 1;
  std::optional<double> lower;
  std::optional<double> upper;
};

inline LossModelPtr make_loss_model(const LossSpec& spec) {
  if (spec.name == "l2_mean") return std::make_shared<SquaredLoss>(spec.dim);
  if (spec.name == "l1_median") return std::make_shared<QuantileLoss>("l1_median", 0.5, 2.0);
  if (spec.name == "pinball") return std::make_shared<QuantileLoss>("pinball", spec.q);
  if (spec.name == "pinball_restricted") {
    const double lo = spec.lower.value_or(0.0);
    const double hi = spec.upper.value_or(kInf);
    return std::make_shared<QuantileLoss>("pinball_restricted", spec.q, 1.0, std::make_pair(lo, hi));
  }
  if (spec.name == "quantile_regression") return std::make_shared<QuantileRegressionLoss>(spec.q);
  if (spec.name == "zero_one_threshold") return std::make_shared<ThresholdLoss>();
  if (spec.name == "hinge_svm") return std::make_shared<HingeLoss>();
  if (spec.name == "kmeans") return std::make_shared<KMeansLoss>(spec.k, spec.dim < 2 ? 2 : spec.dim);
  throw Error(ErrorCode::invalid_argument, "unknown loss model '" + spec.name + "'");
}

inline const std::vector<std::string>& registered_losses() {
  static const std::vector<std::string> names = {"l2_mean",    "l1_median", "pinball", "pinball_restricted",
                                                 "quantile_regression", "zero_one_threshold", "hinge_svm", "kmeans"};
  return names;
}

inline void check_dim(const LossModel& model, const ParamPoint& theta) {
  if (theta.size() != model.param_dim()) {
    throw Error(ErrorCode::dimension_mismatch, model.name() + " expects a " + std::to_string(model.param_dim()) +
                                                   "-dimensional parameter, got " + std::to_string(theta.size()));
  }
}

inline void check_sample(const LossModel& model, std::span<const Datum> sample) {
  if (sample.empty()) throw Error(ErrorCode::empty_sample, "sample is empty");
  validate_sample(sample);
  model.validate(sample.front());
}

/// ℓ(θ; z), +∞ iff θ is infeasible.
inline double eval_loss(const LossModel& model, const ParamPoint& theta, const Datum& z) {
  check_dim(model, theta);
  model.validate(z);
  if (!model.feasible(theta)) return kInf;
  return model.loss(theta, z);
}

/// n⁻¹ Σ ℓ(θ; Zᵢ).
inline double empirical_risk(const LossModel& model, const ParamPoint& theta, std::span<const Datum> sample) {
  check_dim(model, theta);
  check_sample(model, sample);
  if (!model.feasible(theta)) return kInf;
  return model.risk(theta, sample);
}

inline ErmResult solve_erm(const LossModel& model, std::span<const Datum> sample, std::uint64_t seed = 0,
                           bool certify = true) {
  check_sample(model, sample);
  ErmOptions opts;
  opts.seed = seed;
  opts.certify = certify;
  return model.solve_erm(sample, opts);
}

/// Reference infimum of the empirical risk: the exact ERM for closed-form
/// models, otherwise the lower envelope of a dense grid and the solver output.
inline double reference_min_risk(const LossModel& model, std::span<const Datum> sample,
                                 std::size_t points_per_dim = 1000, std::uint64_t seed = 0) {
  check_sample(model, sample);
  ErmOptions opts;
  opts.seed = seed;
  opts.certify = false;
  double best = model.risk(model.solve_erm(sample, opts).theta, sample);
  if (model.exact_erm()) return best;
  const auto d = static_cast<double>(model.param_dim());
  const auto cap = static_cast<std::size_t>(std::floor(std::pow(1e6, 1.0 / d) + kTolerance));
  const ParamGrid grid(model.bounding_box(sample), std::max<std::size_t>(2, std::min(points_per_dim, cap)));
  for (std::size_t i = 0; i < grid.size(); ++i) best = std::min(best, model.risk(grid.point(i), sample));
  return best;
}

/// True iff R̂_n(θ̂) − inf R̂_n ≤ δ / n^(1+ε) + tolerance.
inline bool verify_aerm(const LossModel& model, std::span<const Datum> sample, const ParamPoint& theta_hat,
                        double epsilon, double delta, std::size_t points_per_dim = 1000) {
  const double at = empirical_risk(model, theta_hat, sample);
  const double ref = reference_min_risk(model, sample, points_per_dim);
  const double n = static_cast<double>(sample.size());
  return at - ref <= delta / std::pow(n, 1.0 + epsilon) + kTolerance;
}

}  // namespace gue
