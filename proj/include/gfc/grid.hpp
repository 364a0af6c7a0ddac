#pragma once

// Row-major d-dimensional index arithmetic and multi-index helpers.

#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gfc/error.hpp"

namespace gfc {

using Point = Eigen::VectorXd;

/// Partial-derivative multi-index alpha = (alpha_1, ..., alpha_d).
using MultiIndex = std::vector<int>;

inline int order(const MultiIndex& alpha) {
  return std::accumulate(alpha.begin(), alpha.end(), 0);
}

inline MultiIndex zero_index(int d) { return MultiIndex(static_cast<std::size_t>(d), 0); }

inline MultiIndex unit_index(int d, int i) {
  MultiIndex a = zero_index(d);
  a[static_cast<std::size_t>(i)] = 1;
  return a;
}

inline MultiIndex add_indices(const MultiIndex& a, const MultiIndex& b) {
  MultiIndex c(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
  return c;
}

/// Number of multi-indices with |alpha| <= 2 in dimension d.
constexpr int jet_size(int d) { return 1 + d + d * (d + 1) / 2; }

/// Slot of alpha in the canonical ordering: 0, e_0..e_{d-1}, then e_i+e_j (i <= j) row by row.
inline int jet_slot(const MultiIndex& alpha) {
  const int d = static_cast<int>(alpha.size());
  const int ord = order(alpha);
  if (ord == 0) return 0;
  if (ord == 1) {
    for (int i = 0; i < d; ++i)
      if (alpha[i] == 1) return 1 + i;
  }
  if (ord == 2) {
    int first = -1, second = -1;
    for (int i = 0; i < d; ++i) {
      for (int k = 0; k < alpha[i]; ++k) (first < 0 ? first : second) = i;
    }
    int slot = 1 + d;
    for (int i = 0; i < first; ++i) slot += d - i;
    return slot + (second - first);
  }
  throw UnsupportedDerivativeOrder("jet slots cover |alpha| <= 2 only");
}

/// All multi-indices with |alpha| <= max_order (max_order <= 2), in slot order.
inline std::vector<MultiIndex> jet_indices(int d, int max_order) {
  std::vector<MultiIndex> out;
  out.push_back(zero_index(d));
  if (max_order >= 1)
    for (int i = 0; i < d; ++i) out.push_back(unit_index(d, i));
  if (max_order >= 2)
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) out.push_back(add_indices(unit_index(d, i), unit_index(d, j)));
  return out;
}

/// Extents and row-major strides of a d-dimensional array.
class GridShape {
 public:
  GridShape() = default;
  explicit GridShape(std::vector<std::size_t> extents) : extents_(std::move(extents)) {
    strides_.assign(extents_.size(), 1);
    for (int i = static_cast<int>(extents_.size()) - 2; i >= 0; --i)
      strides_[i] = strides_[i + 1] * extents_[i + 1];
  }

  int dim() const { return static_cast<int>(extents_.size()); }
  std::size_t extent(int i) const { return extents_[static_cast<std::size_t>(i)]; }
  std::size_t stride(int i) const { return strides_[static_cast<std::size_t>(i)]; }
  const std::vector<std::size_t>& extents() const { return extents_; }

  std::size_t size() const {
    if (extents_.empty()) return 0;
    return std::accumulate(extents_.begin(), extents_.end(), std::size_t{1},
                           std::multiplies<>());
  }

  std::size_t flat(std::span<const std::size_t> idx) const {
    std::size_t f = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) f += idx[i] * strides_[i];
    return f;
  }

  void unflatten(std::size_t f, std::span<std::size_t> idx) const {
    for (std::size_t i = 0; i < extents_.size(); ++i) {
      idx[i] = f / strides_[i];
      f %= strides_[i];
    }
  }

  bool operator==(const GridShape&) const = default;

 private:
  std::vector<std::size_t> extents_;
  std::vector<std::size_t> strides_;
};

/// Advances a multi-dimensional counter over [lo, hi) per axis; returns false when exhausted.
template <class Int>
bool next_index(std::span<Int> idx, std::span<const Int> lo, std::span<const Int> hi) {
  for (int i = static_cast<int>(idx.size()) - 1; i >= 0; --i) {
    if (++idx[i] < hi[i]) return true;
    idx[i] = lo[i];
  }
  return false;
}

}  // namespace gfc
