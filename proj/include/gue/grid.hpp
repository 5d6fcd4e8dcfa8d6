#pragma once

#include <cstddef>
#include <vector>

#include "gue/core.hpp"

namespace gue {

/// Regular product grid over a box. Axes with zero width collapse to a
/// single point.
class ParamGrid {
 public:
  ParamGrid(const Box& box, std::size_t points_per_dim)
      : ParamGrid(box, std::vector<std::size_t>(box.dim(), points_per_dim)) {}

  ParamGrid(const Box& box, std::vector<std::size_t> points) : box_(box) {
    if (points.size() != box.dim()) {
      throw Error(ErrorCode::dimension_mismatch, "grid shape does not match box dimension");
    }
    axes_.resize(box.dim());
    for (std::size_t j = 0; j < box.dim(); ++j) {
      const double lo = box.lo[j];
      const double hi = box.hi[j];
      if (!std::isfinite(lo) || !std::isfinite(hi) || hi < lo) {
        throw Error(ErrorCode::invalid_argument, "grid box must be finite and ordered");
      }
      std::size_t m = points[j];
      if (m == 0) throw Error(ErrorCode::invalid_argument, "grid needs at least one point per axis");
      if (hi - lo <= 0.0) m = 1;
      auto& axis = axes_[j];
      axis.resize(m);
      if (m == 1) {
        axis[0] = 0.5 * (lo + hi);
      } else {
        const double step = (hi - lo) / static_cast<double>(m - 1);
        for (std::size_t k = 0; k < m; ++k) axis[k] = lo + step * static_cast<double>(k);
        axis[m - 1] = hi;
      }
    }
  }

  std::size_t dim() const { return axes_.size(); }

  std::size_t size() const {
    std::size_t n = 1;
    for (const auto& a : axes_) n *= a.size();
    return n;
  }

  std::vector<std::size_t> shape() const {
    std::vector<std::size_t> s;
    for (const auto& a : axes_) s.push_back(a.size());
    return s;
  }

  const std::vector<double>& axis(std::size_t j) const { return axes_[j]; }
  const Box& box() const { return box_; }

  /// Point at flat index; the last axis varies fastest.
  ParamPoint point(std::size_t flat) const {
    ParamPoint p(axes_.size());
    for (std::size_t j = axes_.size(); j-- > 0;) {
      const auto m = axes_[j].size();
      p[j] = axes_[j][flat % m];
      flat /= m;
    }
    return p;
  }

  std::vector<ParamPoint> points() const {
    std::vector<ParamPoint> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back(point(i));
    return out;
  }

  /// Volume of one cell (product of axis spacings; zero-width axes count 1).
  double cell_volume() const {
    double v = 1.0;
    for (const auto& a : axes_) {
      if (a.size() > 1) v *= (a.back() - a.front()) / static_cast<double>(a.size() - 1);
    }
    return v;
  }

 private:
  Box box_;
  std::vector<std::vector<double>> axes_;
};

}  // namespace gue
