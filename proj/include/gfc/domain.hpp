#pragma once

// Axis-aligned integer boxes and their unit-cube stratification.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gfc/error.hpp"
#include "gfc/grid.hpp"

namespace gfc {

using CubeIndex = std::vector<int>;

/// Lexicographic order on Z^d, coordinates compared left to right.
inline bool lex_less(const CubeIndex& u, const CubeIndex& v) {
  return std::lexicographical_compare(u.begin(), u.end(), v.begin(), v.end());
}
inline bool lex_leq(const CubeIndex& u, const CubeIndex& v) { return !lex_less(v, u); }

inline std::string cube_string(const CubeIndex& v) {
  std::string s = "(";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s + ")";
}

/// Open face of the unit-cube stratification: free axes range over (anchor, anchor + 1),
/// fixed axes sit at the integer anchor.
struct Stratum {
  std::vector<int> anchor;
  std::vector<bool> free;

  int dim() const { return static_cast<int>(std::count(free.begin(), free.end(), true)); }
  bool operator==(const Stratum&) const = default;
};

/// Box [lower, upper] with integer corners.
class BoxDomain {
 public:
  BoxDomain() = default;
  BoxDomain(std::vector<int> lower, std::vector<int> upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
    if (lower_.size() != upper_.size() || lower_.empty()) throw InvalidArgument("box corners must have equal, positive dimension");
    for (std::size_t i = 0; i < lower_.size(); ++i)
      if (upper_[i] <= lower_[i]) throw InvalidArgument("box upper corner must exceed lower corner");
  }

  /// Lambda_R = [-R, R]^d.
  static BoxDomain centered_cube(int d, int R) {
    if (R < 1) throw InvalidArgument("R must be >= 1");
    return BoxDomain(std::vector<int>(static_cast<std::size_t>(d), -R), std::vector<int>(static_cast<std::size_t>(d), R));
  }

  int dim() const { return static_cast<int>(lower_.size()); }
  const std::vector<int>& lower() const { return lower_; }
  const std::vector<int>& upper() const { return upper_; }
  int side(int i) const { return upper_[static_cast<std::size_t>(i)] - lower_[static_cast<std::size_t>(i)]; }

  double volume() const {
    double v = 1.0;
    for (int i = 0; i < dim(); ++i) v *= side(i);
    return v;
  }

  double aspect_ratio() const {
    int lo = side(0), hi = side(0);
    for (int i = 1; i < dim(); ++i) {
      lo = std::min(lo, side(i));
      hi = std::max(hi, side(i));
    }
    return static_cast<double>(lo) / hi;
  }

  bool contains(const BoxDomain& inner) const {
    for (int i = 0; i < dim(); ++i)
      if (inner.lower_[static_cast<std::size_t>(i)] < lower_[static_cast<std::size_t>(i)] ||
          inner.upper_[static_cast<std::size_t>(i)] > upper_[static_cast<std::size_t>(i)])
        return false;
    return true;
  }

  bool contains_point(std::span<const double> x) const {
    for (int i = 0; i < dim(); ++i)
      if (x[static_cast<std::size_t>(i)] < lower_[static_cast<std::size_t>(i)] || x[static_cast<std::size_t>(i)] > upper_[static_cast<std::size_t>(i)]) return false;
    return true;
  }

  BoxDomain translated(const std::vector<int>& offset) const {
    BoxDomain b = *this;
    for (int i = 0; i < dim(); ++i) {
      b.lower_[static_cast<std::size_t>(i)] += offset[static_cast<std::size_t>(i)];
      b.upper_[static_cast<std::size_t>(i)] += offset[static_cast<std::size_t>(i)];
    }
    return b;
  }

  /// Intersection with the unit cube B_v = v + [0,1]^d.
  BoxDomain cube_box(const CubeIndex& v) const {
    std::vector<int> hi(v);
    for (auto& c : hi) ++c;
    return BoxDomain(v, hi);
  }

  /// Cube index V: unit cubes B_v whose interior meets the box (v_i in [lower_i, upper_i - 1]).
  std::vector<CubeIndex> cubes() const {
    std::vector<CubeIndex> out;
    CubeIndex v = lower_;
    std::vector<int> hi = upper_;
    do out.push_back(v);
    while (next_index<int>(v, lower_, hi));
    return out;
  }

  bool has_cube(const CubeIndex& v) const {
    for (int i = 0; i < dim(); ++i)
      if (v[static_cast<std::size_t>(i)] < lower_[static_cast<std::size_t>(i)] || v[static_cast<std::size_t>(i)] >= upper_[static_cast<std::size_t>(i)]) return false;
    return true;
  }

  /// Every open face of every dimension 0..d; together they partition the closed box.
  std::vector<Stratum> strata() const {
    std::vector<Stratum> out;
    const int d = dim();
    // Per axis, 2 * side + 1 choices: integer points and open unit intervals.
    std::vector<int> lo(static_cast<std::size_t>(d), 0), hi(static_cast<std::size_t>(d)), c(static_cast<std::size_t>(d), 0);
    for (int i = 0; i < d; ++i) hi[static_cast<std::size_t>(i)] = 2 * side(i) + 1;
    do {
      Stratum s;
      for (int i = 0; i < d; ++i) {
        const int k = c[static_cast<std::size_t>(i)];
        s.anchor.push_back(lower_[static_cast<std::size_t>(i)] + k / 2);
        s.free.push_back(k % 2 == 1);
      }
      out.push_back(std::move(s));
    } while (next_index<int>(c, lo, hi));
    return out;
  }

  /// Stratum containing x (coordinates equal to an integer within tol count as fixed).
  Stratum stratum_of(std::span<const double> x, double tol = 0.0) const {
    Stratum s;
    for (int i = 0; i < dim(); ++i) {
      const double xi = x[static_cast<std::size_t>(i)];
      const double r = std::round(xi);
      if (std::abs(xi - r) <= tol) {
        s.anchor.push_back(static_cast<int>(r));
        s.free.push_back(false);
      } else {
        s.anchor.push_back(static_cast<int>(std::floor(xi)));
        s.free.push_back(true);
      }
    }
    return s;
  }

  bool operator==(const BoxDomain&) const = default;

 private:
  std::vector<int> lower_;
  std::vector<int> upper_;
};

}  // namespace gfc
