#pragma once

// Core value types shared by every module: fixed-capacity coordinate vectors,
// the Datum tagged union, parameter points and the error hierarchy.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gue {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Absolute tolerance used for all equality-style checks.
inline constexpr double kTolerance = 1e-9;

enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  empty_sample,
  infeasible_estimate,
  non_convergence,
  no_bracket,
  fit_failure,
  data_error,
  config_error,
  io_error,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::empty_sample: return "empty_sample";
    case ErrorCode::infeasible_estimate: return "infeasible_estimate";
    case ErrorCode::non_convergence: return "non_convergence";
    case ErrorCode::no_bracket: return "no_bracket";
    case ErrorCode::fit_failure: return "fit_failure";
    case ErrorCode::data_error: return "data_error";
    case ErrorCode::config_error: return "config_error";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Small vector of doubles with inline storage. Parameters and data in this
/// library are low dimensional, so avoiding the heap matters more than size.
template <std::size_t Capacity>
class InlineVector {
 public:
  InlineVector() = default;

  explicit InlineVector(std::size_t n, double fill = 0.0) : size_(check(n)) {
    std::fill_n(values_.begin(), n, fill);
  }

  InlineVector(std::initializer_list<double> init) : size_(check(init.size())) {
    std::copy(init.begin(), init.end(), values_.begin());
  }

  explicit InlineVector(std::span<const double> init) : size_(check(init.size())) {
    std::copy(init.begin(), init.end(), values_.begin());
  }

  static constexpr std::size_t capacity() { return Capacity; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double* begin() { return values_.data(); }
  double* end() { return values_.data() + size_; }
  const double* begin() const { return values_.data(); }
  const double* end() const { return values_.data() + size_; }

  std::span<const double> span() const { return {values_.data(), size_}; }

  void push_back(double v) {
    check(size_ + 1);
    values_[size_++] = v;
  }

  std::vector<double> to_vector() const { return {begin(), end()}; }

  friend bool operator==(const InlineVector& a, const InlineVector& b) {
    return a.size_ == b.size_ && std::equal(a.begin(), a.end(), b.begin());
  }

 private:
  static std::size_t check(std::size_t n) {
    if (n > Capacity) {
      throw Error(ErrorCode::dimension_mismatch,
                  "dimension " + std::to_string(n) + " exceeds inline capacity " +
                      std::to_string(Capacity));
    }
    return n;
  }

  std::array<double, Capacity> values_{};
  std::size_t size_ = 0;
};

/// A point θ in parameter space. K-means centroids are stored stacked.
using ParamPoint = InlineVector<16>;
using Features = InlineVector<8>;

enum class DatumKind { scalar, labeled, vector };

inline const char* to_string(DatumKind kind) {
  switch (kind) {
    case DatumKind::scalar: return "scalar";
    case DatumKind::labeled: return "labeled";
    case DatumKind::vector: return "vector";
  }
  return "unknown";
}

/// One observation z: a real number, a (features, label) pair, or a vector.
class Datum {
 public:
  Datum() = default;

  static Datum scalar(double value) {
    Datum d;
    d.kind_ = DatumKind::scalar;
    d.x_.push_back(value);
    return d;
  }

  static Datum labeled(std::span<const double> x, double y) {
    Datum d;
    d.kind_ = DatumKind::labeled;
    d.x_ = Features(x);
    d.y_ = y;
    return d;
  }

  static Datum labeled(double x, double y) {
    const double xs[1] = {x};
    return labeled(std::span<const double>(xs, 1), y);
  }

  static Datum vector(std::span<const double> x) {
    Datum d;
    d.kind_ = DatumKind::vector;
    d.x_ = Features(x);
    return d;
  }

  static Datum vector(std::initializer_list<double> x) {
    return vector(std::span<const double>(x.begin(), x.size()));
  }

  DatumKind kind() const { return kind_; }
  std::size_t dim() const { return x_.size(); }

  /// The scalar value, or the first feature for other kinds.
  double value() const { return x_[0]; }
  std::span<const double> x() const { return x_.span(); }
  double label() const { return y_; }

 private:
  DatumKind kind_ = DatumKind::scalar;
  Features x_;
  double y_ = 0.0;
};

using Sample = std::vector<Datum>;

/// Checks that a sample is homogeneous: one kind, one dimension.
inline void validate_sample(std::span<const Datum> sample) {
  if (sample.empty()) return;
  const auto kind = sample.front().kind();
  const auto dim = sample.front().dim();
  for (std::size_t i = 1; i < sample.size(); ++i) {
    if (sample[i].kind() != kind || sample[i].dim() != dim) {
      throw Error(ErrorCode::data_error,
                  "datum " + std::to_string(i) + " differs in kind or dimension from datum 0");
    }
  }
}

inline Sample scalar_sample(std::span<const double> values) {
  Sample out;
  out.reserve(values.size());
  for (double v : values) out.push_back(Datum::scalar(v));
  return out;
}

inline Sample scalar_sample(std::initializer_list<double> values) {
  return scalar_sample(std::span<const double>(values.begin(), values.size()));
}

inline std::vector<double> scalar_values(std::span<const Datum> sample) {
  std::vector<double> out;
  out.reserve(sample.size());
  for (const auto& z : sample) out.push_back(z.value());
  return out;
}

/// Axis-aligned box in parameter space.
struct Box {
  ParamPoint lo;
  ParamPoint hi;

  std::size_t dim() const { return lo.size(); }

  bool contains(const ParamPoint& theta) const {
    for (std::size_t j = 0; j < lo.size(); ++j) {
      if (theta[j] < lo[j] || theta[j] > hi[j]) return false;
    }
    return true;
  }

  ParamPoint center() const {
    ParamPoint c(lo.size());
    for (std::size_t j = 0; j < lo.size(); ++j) {
      if (std::isfinite(lo[j]) && std::isfinite(hi[j])) {
        c[j] = 0.5 * (lo[j] + hi[j]);
      } else if (std::isfinite(lo[j])) {
        c[j] = lo[j];
      } else if (std::isfinite(hi[j])) {
        c[j] = hi[j];
      } else {
        c[j] = 0.0;
      }
    }
    return c;
  }
};

}  // namespace gue
