#pragma once

// White-noise discretization and grid sampling of f = q * W with all partial
// derivatives up to order 2.
//
// Noise lives on cells of side h (1/h integer). Each unit cube B_v owns its
// cells and draws them from an independent stream keyed by cube_seed(seed, v),
// so a cube can be resampled without touching any other weight. Output nodes
// sit at lower + k * h / refine.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "gfc/domain.hpp"
#include "gfc/error.hpp"
#include "gfc/grid.hpp"
#include "gfc/kernels.hpp"
#include "gfc/rng.hpp"

namespace gfc {

// ============================================================================
// White noise
// ============================================================================

class WhiteNoiseGrid {
 public:
  WhiteNoiseGrid() = default;

  /// Zero noise on the cubes v with cube_lo <= v < cube_hi.
  WhiteNoiseGrid(double h, std::vector<int> cube_lo, std::vector<int> cube_hi, std::uint64_t seed = 0)
      : h_(h), cube_lo_(std::move(cube_lo)), cube_hi_(std::move(cube_hi)), seed_(seed) {
    const double inv = 1.0 / h_;
    m_ = static_cast<int>(std::llround(inv));
    if (m_ < 1 || std::abs(inv - m_) > 1e-9) throw InvalidArgument("1/h must be a positive integer");
    std::vector<std::size_t> ext;
    for (std::size_t i = 0; i < cube_lo_.size(); ++i) {
      if (cube_hi_[i] <= cube_lo_[i]) throw InvalidArgument("empty noise extent");
      ext.push_back(static_cast<std::size_t>(cube_hi_[i] - cube_lo_[i]) * static_cast<std::size_t>(m_));
    }
    shape_ = GridShape(ext);
    values_.assign(shape_.size(), 0.0);
  }

  int dim() const { return static_cast<int>(cube_lo_.size()); }
  double h() const { return h_; }
  int cells_per_unit() const { return m_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<int>& cube_lo() const { return cube_lo_; }
  const std::vector<int>& cube_hi() const { return cube_hi_; }
  const GridShape& shape() const { return shape_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  /// Coordinate of the center of cell j along axis i.
  double cell_center(int i, std::size_t j) const {
    return cube_lo_[static_cast<std::size_t>(i)] + (static_cast<double>(j) + 0.5) * h_;
  }

  bool has_cube(const CubeIndex& v) const {
    if (static_cast<int>(v.size()) != dim()) return false;
    for (int i = 0; i < dim(); ++i)
      if (v[static_cast<std::size_t>(i)] < cube_lo_[static_cast<std::size_t>(i)] || v[static_cast<std::size_t>(i)] >= cube_hi_[static_cast<std::size_t>(i)]) return false;
    return true;
  }

  std::vector<CubeIndex> cubes() const {
    std::vector<CubeIndex> out;
    CubeIndex v = cube_lo_;
    do out.push_back(v);
    while (next_index<int>(v, cube_lo_, cube_hi_));
    return out;
  }

  /// Visits the flat indices of the cells of B_v in row-major order.
  template <class Fn>
  void for_cells_of(const CubeIndex& v, Fn&& fn) const {
    const int d = dim();
    std::vector<std::size_t> base(static_cast<std::size_t>(d)), idx(static_cast<std::size_t>(d), 0);
    for (int i = 0; i < d; ++i)
      base[static_cast<std::size_t>(i)] = static_cast<std::size_t>(v[static_cast<std::size_t>(i)] - cube_lo_[static_cast<std::size_t>(i)]) * static_cast<std::size_t>(m_);
    std::vector<std::size_t> zero(static_cast<std::size_t>(d), 0), hi(static_cast<std::size_t>(d), static_cast<std::size_t>(m_));
    do {
      std::size_t f = 0;
      for (int i = 0; i < d; ++i) f += (base[static_cast<std::size_t>(i)] + idx[static_cast<std::size_t>(i)]) * shape_.stride(i);
      fn(f);
    } while (next_index<std::size_t>(idx, zero, hi));
  }

  /// Redraws the cells of B_v as i.i.d. N(0, h^d) from the stream cube_seed(seed, v).
  void draw_cube(const CubeIndex& v, std::uint64_t seed) {
    if (!has_cube(v)) throw CubeOutOfExtent("cube " + cube_string(v) + " outside noise extent");
    Xoshiro256 rng(cube_seed(seed, v));
    std::normal_distribution<double> normal(0.0, std::pow(h_, 0.5 * dim()));
    for_cells_of(v, [&](std::size_t f) { values_[f] = normal(rng); });
  }

  void zero_cube(const CubeIndex& v) {
    if (!has_cube(v)) throw CubeOutOfExtent("cube " + cube_string(v) + " outside noise extent");
    for_cells_of(v, [&](std::size_t f) { values_[f] = 0.0; });
  }

  /// Fresh noise on every cube of the extent.
  static WhiteNoiseGrid sample(double h, std::vector<int> cube_lo, std::vector<int> cube_hi, std::uint64_t seed) {
    WhiteNoiseGrid w(h, std::move(cube_lo), std::move(cube_hi), seed);
    for (const auto& v : w.cubes()) w.draw_cube(v, seed);
    return w;
  }

 private:
  double h_ = 1.0;
  int m_ = 1;
  std::vector<int> cube_lo_, cube_hi_;
  std::uint64_t seed_ = 0;
  GridShape shape_;
  std::vector<double> values_;
};

/// Padding in whole cubes needed so every cell within sup-distance T of the box is present.
inline int padding_cubes(const KernelSpec& spec) { return static_cast<int>(std::ceil(spec.truncation_radius - 1e-12)); }

/// Noise extent covering the padded box of `domain`.
inline std::pair<std::vector<int>, std::vector<int>> padded_extent(const KernelSpec& spec, const BoxDomain& domain) {
  const int P = padding_cubes(spec);
  std::vector<int> lo = domain.lower(), hi = domain.upper();
  for (auto& c : lo) c -= P;
  for (auto& c : hi) c += P;
  return {lo, hi};
}

// ============================================================================
// Jets
// ============================================================================

namespace detail {
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<double> data;
};
}  // namespace detail

/// Value, gradient and Hessian of a field at a point.
struct Jet {
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

/// Exact pointwise evaluation of a field and its derivatives up to order 2.
class JetSource {
 public:
  virtual ~JetSource() = default;
  virtual int dim() const = 0;
  virtual Jet jet(std::span<const double> x) const = 0;
};

/// Jets of q * W computed directly from stored noise weights.
class NoiseJetSource final : public JetSource {
 public:
  NoiseJetSource(KernelSpec spec, std::shared_ptr<const WhiteNoiseGrid> noise)
      : spec_(std::move(spec)), noise_(std::move(noise)) {}

  int dim() const override { return spec_.d; }
  const std::shared_ptr<const WhiteNoiseGrid>& noise() const { return noise_; }
  const KernelSpec& kernel() const { return spec_; }

  Jet jet(std::span<const double> x) const override {
    const int d = spec_.d;
    const auto& w = *noise_;
    const double T = spec_.truncation_radius;
    const double h = w.h();
    Jet out;
    out.grad = Eigen::VectorXd::Zero(d);
    out.hess = Eigen::MatrixXd::Zero(d, d);
    std::vector<std::size_t> lo(static_cast<std::size_t>(d)), hi(static_cast<std::size_t>(d)), ext(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const double base = w.cube_lo()[ui];
      const double xi = x[ui];
      const double jlo = std::ceil((xi - T - base) / h - 0.5 - 1e-12);
      const double jhi = std::floor((xi + T - base) / h - 0.5 + 1e-12);
      const double n = static_cast<double>(w.shape().extent(i));
      const double a = std::max(jlo, 0.0), b = std::min(jhi, n - 1.0);
      if (b < a) return out;
      lo[ui] = static_cast<std::size_t>(a);
      hi[ui] = static_cast<std::size_t>(b) + 1;
      ext[ui] = hi[ui] - lo[ui];
    }
    const auto slots = jet_indices(d, 2);
    std::vector<double> acc(slots.size(), 0.0);
    if (spec_.separable()) {
      // Axis factors for orders 0..2: c e^{-u^2}, (-1/s) 2u c e^{-u^2}, (1/s^2)(4u^2 - 2) c e^{-u^2}, u = t/s.
      const double s = spec_.scale;
      const double c = std::pow(2.0 / (std::numbers::pi * s * s), 0.25);
      std::vector<std::vector<double>> fac(static_cast<std::size_t>(3 * d));
      for (int i = 0; i < d; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        for (int o = 0; o < 3; ++o) fac[static_cast<std::size_t>(3 * i + o)].resize(ext[ui]);
        for (std::size_t j = 0; j < ext[ui]; ++j) {
          const double t = x[ui] - w.cell_center(i, lo[ui] + j);
          const double u = t / s;
          const double e = std::abs(t) > T ? 0.0 : c * std::exp(-u * u);
          fac[static_cast<std::size_t>(3 * i)][j] = e;
          fac[static_cast<std::size_t>(3 * i + 1)][j] = -2.0 * u / s * e;
          fac[static_cast<std::size_t>(3 * i + 2)][j] = (4.0 * u * u - 2.0) / (s * s) * e;
        }
      }
      if (d <= 2) {
        const std::size_t n0 = d == 2 ? ext[0] : 1;
        const std::size_t n1 = ext[static_cast<std::size_t>(d - 1)];
        const auto& g0 = fac[static_cast<std::size_t>(3 * (d - 1))];
        const auto& g1 = fac[static_cast<std::size_t>(3 * (d - 1) + 1)];
        const auto& g2 = fac[static_cast<std::size_t>(3 * (d - 1) + 2)];
        std::vector<double> a0(n0), a1(n0), a2(n0);
        for (std::size_t r = 0; r < n0; ++r) {
          const std::size_t row = d == 2 ? (lo[0] + r) * w.shape().stride(0) : 0;
          const double* wv = w.values().data() + row + lo[static_cast<std::size_t>(d - 1)];
          double s0 = 0.0, s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < n1; ++j) {
            s0 += g0[j] * wv[j];
            s1 += g1[j] * wv[j];
            s2 += g2[j] * wv[j];
          }
          a0[r] = s0;
          a1[r] = s1;
          a2[r] = s2;
        }
        if (d == 1) {
          out.value = a0[0];
          out.grad(0) = a1[0];
          out.hess(0, 0) = a2[0];
          return out;
        }
        const auto& f0 = fac[0];
        const auto& f1 = fac[1];
        const auto& f2 = fac[2];
        double v = 0, gx = 0, gy = 0, hxx = 0, hxy = 0, hyy = 0;
        for (std::size_t r = 0; r < n0; ++r) {
          v += f0[r] * a0[r];
          gx += f1[r] * a0[r];
          gy += f0[r] * a1[r];
          hxx += f2[r] * a0[r];
          hxy += f1[r] * a1[r];
          hyy += f0[r] * a2[r];
        }
        out.value = v;
        out.grad << gx, gy;
        out.hess << hxx, hxy, hxy, hyy;
        return out;
      }
      // Copy the band, then contract from the last axis to the first with memoized suffixes.
      detail::Tensor band;
      band.dims = ext;
      band.data.resize(GridShape(ext).size());
      {
        std::vector<std::size_t> idx = lo;
        std::size_t f = 0;
        const std::size_t last = static_cast<std::size_t>(d - 1);
        const std::size_t stride_last = w.shape().stride(d - 1);
        do {
          std::size_t src = 0;
          for (int i = 0; i < d; ++i) src += idx[static_cast<std::size_t>(i)] * w.shape().stride(i);
          for (std::size_t j = 0; j < ext[last]; ++j) band.data[f++] = w.values()[src + j * stride_last];
          idx[last] = hi[last] - 1;
        } while (next_index<std::size_t>(idx, lo, hi));
      }
      std::map<std::vector<int>, detail::Tensor> memo;
      std::function<const detail::Tensor&(int, const std::vector<int>&)> get =
          [&](int axis, const std::vector<int>& suffix) -> const detail::Tensor& {
        if (axis == d) return band;
        auto it = memo.find(suffix);
        if (it != memo.end()) return it->second;
        const detail::Tensor& src = get(axis + 1, std::vector<int>(suffix.begin() + 1, suffix.end()));
        // src has dims ext[0..axis]; contract its last axis.
        const std::size_t n = ext[static_cast<std::size_t>(axis)];
        const std::size_t outer = src.data.size() / n;
        const auto& wts = fac[static_cast<std::size_t>(3 * axis + suffix[0])];
        detail::Tensor t;
        t.dims.assign(ext.begin(), ext.begin() + axis);
        t.data.assign(outer, 0.0);
        for (std::size_t o = 0; o < outer; ++o) {
          const double* row = src.data.data() + o * n;
          double sum = 0.0;
          for (std::size_t j = 0; j < n; ++j) sum += wts[j] * row[j];
          t.data[o] = sum;
        }
        return memo.emplace(suffix, std::move(t)).first->second;
      };
      for (std::size_t sl = 0; sl < slots.size(); ++sl) acc[sl] = get(0, slots[sl]).data[0];
    } else {
      std::vector<std::size_t> idx = lo;
      std::vector<double> off(static_cast<std::size_t>(d));
      do {
        std::size_t f = 0;
        for (int i = 0; i < d; ++i) f += idx[static_cast<std::size_t>(i)] * w.shape().stride(i);
        const double wv = w.values()[f];
        if (wv == 0.0) continue;
        for (int i = 0; i < d; ++i) off[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] - w.cell_center(i, idx[static_cast<std::size_t>(i)]);
        for (std::size_t sl = 0; sl < slots.size(); ++sl) acc[sl] += eval_kernel(spec_, off, slots[sl]) * wv;
      } while (next_index<std::size_t>(idx, lo, hi));
    }
    out.value = acc[0];
    for (int i = 0; i < d; ++i) out.grad(i) = acc[static_cast<std::size_t>(1 + i)];
    std::size_t sl = static_cast<std::size_t>(1 + d);
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) out.hess(i, j) = out.hess(j, i) = acc[sl++];
    return out;
  }

 private:
  KernelSpec spec_;
  std::shared_ptr<const WhiteNoiseGrid> noise_;
};

/// Jets from a user-supplied function.
class FunctionJetSource final : public JetSource {
 public:
  FunctionJetSource(int d, std::function<Jet(std::span<const double>)> fn) : d_(d), fn_(std::move(fn)) {}
  int dim() const override { return d_; }
  Jet jet(std::span<const double> x) const override { return fn_(x); }

 private:
  int d_;
  std::function<Jet(std::span<const double>)> fn_;
};

/// a * A + b * B.
class CombinedJetSource final : public JetSource {
 public:
  CombinedJetSource(double a, std::shared_ptr<const JetSource> A, double b, std::shared_ptr<const JetSource> B)
      : a_(a), b_(b), A_(std::move(A)), B_(std::move(B)) {}
  int dim() const override { return A_ ? A_->dim() : B_->dim(); }
  Jet jet(std::span<const double> x) const override {
    Jet out;
    if (A_) {
      out = A_->jet(x);
      out.value *= a_;
      out.grad *= a_;
      out.hess *= a_;
    }
    if (B_) {
      Jet j = B_->jet(x);
      if (!A_) {
        out.value = b_ * j.value;
        out.grad = b_ * j.grad;
        out.hess = b_ * j.hess;
      } else {
        out.value += b_ * j.value;
        out.grad += b_ * j.grad;
        out.hess += b_ * j.hess;
      }
    }
    return out;
  }

 private:
  double a_, b_;
  std::shared_ptr<const JetSource> A_, B_;
};

// ============================================================================
// FieldRealization
// ============================================================================

struct Provenance {
  std::string kernel;
  std::uint64_t seed = 0;
  std::vector<CubeIndex> resampled_cubes;
  std::vector<std::uint64_t> resample_seeds;
};

/// Grid samples of a field and (optionally) its derivatives over a box domain.
class FieldRealization {
 public:
  FieldRealization() = default;
  FieldRealization(BoxDomain domain, double h, int refine, int max_order)
      : domain_(std::move(domain)), h_(h), refine_(refine), max_order_(max_order) {
    const double inv = 1.0 / h;
    if (std::abs(inv - std::round(inv)) > 1e-9 || inv < 1.0 - 1e-9) throw InvalidArgument("1/h must be a positive integer");
    if (refine < 1) throw InvalidArgument("refine must be >= 1");
    if (max_order < 0 || max_order > 2) throw UnsupportedDerivativeOrder("grid arrays hold |alpha| <= 2");
    nodes_per_unit_ = static_cast<int>(std::llround(inv)) * refine;
    std::vector<std::size_t> ext;
    for (int i = 0; i < domain_.dim(); ++i) ext.push_back(static_cast<std::size_t>(domain_.side(i) * nodes_per_unit_ + 1));
    shape_ = GridShape(ext);
    slots_.assign(static_cast<std::size_t>(max_order == 0 ? 1 : (max_order == 1 ? 1 + dim() : jet_size(dim()))),
                  std::vector<double>(shape_.size(), 0.0));
  }

  int dim() const { return domain_.dim(); }
  const BoxDomain& domain() const { return domain_; }
  double h() const { return h_; }
  int refine() const { return refine_; }
  int max_order() const { return max_order_; }
  double node_spacing() const { return 1.0 / nodes_per_unit_; }
  int nodes_per_unit() const { return nodes_per_unit_; }
  const GridShape& shape() const { return shape_; }
  std::size_t slot_count() const { return slots_.size(); }

  double coord(int axis, std::size_t k) const {
    return domain_.lower()[static_cast<std::size_t>(axis)] + static_cast<double>(k) / nodes_per_unit_;
  }

  const std::vector<double>& slot(std::size_t s) const { return slots_.at(s); }
  std::vector<double>& slot(std::size_t s) { return slots_.at(s); }
  const std::vector<double>& values() const { return slots_[0]; }
  std::vector<double>& values() { return slots_[0]; }
  const std::vector<double>& operator[](const MultiIndex& alpha) const {
    const int s = jet_slot(alpha);
    if (static_cast<std::size_t>(s) >= slots_.size()) throw MissingDerivatives("derivative array not sampled");
    return slots_[static_cast<std::size_t>(s)];
  }

  bool has_derivatives() const { return max_order_ >= 2; }
  const std::shared_ptr<const JetSource>& source() const { return source_; }
  void set_source(std::shared_ptr<const JetSource> s) { source_ = std::move(s); }
  const Provenance& provenance() const { return provenance_; }
  Provenance& provenance() { return provenance_; }

  /// Noise behind the realization, if it was sampled from white noise.
  std::shared_ptr<const WhiteNoiseGrid> noise() const {
    auto n = std::dynamic_pointer_cast<const NoiseJetSource>(source_);
    return n ? n->noise() : nullptr;
  }

  Jet jet(std::span<const double> x) const {
    if (!source_) throw MissingDerivatives("realization has no pointwise jet source");
    return source_->jet(x);
  }

  bool same_grid(const FieldRealization& o) const {
    return domain_ == o.domain_ && nodes_per_unit_ == o.nodes_per_unit_;
  }

 private:
  BoxDomain domain_;
  double h_ = 1.0;
  int refine_ = 1;
  int max_order_ = 0;
  int nodes_per_unit_ = 1;
  GridShape shape_;
  std::vector<std::vector<double>> slots_;
  std::shared_ptr<const JetSource> source_;
  Provenance provenance_;
};

/// Node sub-grid of `real` covering `domain`.
struct SubGrid {
  std::vector<std::size_t> offset;
  GridShape shape;
};

inline SubGrid sub_grid(const FieldRealization& real, const BoxDomain& domain) {
  if (domain.dim() != real.dim() || !real.domain().contains(domain))
    throw DomainNotCovered("realization does not cover the requested domain");
  SubGrid g;
  std::vector<std::size_t> ext;
  for (int i = 0; i < domain.dim(); ++i) {
    g.offset.push_back(static_cast<std::size_t>(domain.lower()[static_cast<std::size_t>(i)] - real.domain().lower()[static_cast<std::size_t>(i)]) *
                       static_cast<std::size_t>(real.nodes_per_unit()));
    ext.push_back(static_cast<std::size_t>(domain.side(i) * real.nodes_per_unit() + 1));
  }
  g.shape = GridShape(ext);
  return g;
}

/// a * A + b * B on the same grid; derivative arrays kept up to the smaller order.
inline FieldRealization combine(double a, const FieldRealization& A, double b, const FieldRealization& B) {
  if (!A.same_grid(B)) throw GridMismatch("fields live on different grids");
  FieldRealization out(A.domain(), A.h(), A.refine(), std::min(A.max_order(), B.max_order()));
  for (std::size_t s = 0; s < out.slot_count(); ++s) {
    const auto& x = A.slot(s);
    const auto& y = B.slot(s);
    auto& z = out.slot(s);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * x[i] + b * y[i];
  }
  if (A.source() && B.source()) out.set_source(std::make_shared<CombinedJetSource>(a, A.source(), b, B.source()));
  out.provenance() = A.provenance();
  return out;
}

inline FieldRealization sum(const FieldRealization& A, const FieldRealization& B) { return combine(1.0, A, 1.0, B); }

inline FieldRealization scaled(double t, const FieldRealization& A) {
  FieldRealization out = A;
  for (std::size_t s = 0; s < out.slot_count(); ++s)
    for (auto& v : out.slot(s)) v *= t;
  if (A.source()) out.set_source(std::make_shared<CombinedJetSource>(t, A.source(), 0.0, nullptr));
  return out;
}

inline FieldRealization negate(const FieldRealization& A) { return scaled(-1.0, A); }

/// Deterministic field sampled from a jet function at every node.
inline FieldRealization from_function(const BoxDomain& domain, double h, int refine, int max_order,
                                      std::function<Jet(std::span<const double>)> fn) {
  FieldRealization out(domain, h, refine, max_order);
  const int d = domain.dim();
  std::vector<std::size_t> idx(static_cast<std::size_t>(d));
  std::vector<double> x(static_cast<std::size_t>(d));
  for (std::size_t f = 0; f < out.shape().size(); ++f) {
    out.shape().unflatten(f, idx);
    for (int i = 0; i < d; ++i) x[static_cast<std::size_t>(i)] = out.coord(i, idx[static_cast<std::size_t>(i)]);
    const Jet j = fn(x);
    out.slot(0)[f] = j.value;
    if (max_order >= 1)
      for (int i = 0; i < d; ++i) out.slot(static_cast<std::size_t>(1 + i))[f] = j.grad(i);
    if (max_order >= 2) {
      std::size_t s = static_cast<std::size_t>(1 + d);
      for (int i = 0; i < d; ++i)
        for (int k = i; k < d; ++k) out.slot(s++)[f] = j.hess(i, k);
    }
  }
  out.set_source(std::make_shared<FunctionJetSource>(d, std::move(fn)));
  out.provenance().kernel = "injected";
  return out;
}

inline FieldRealization constant_field(const BoxDomain& domain, double h, int refine, double c) {
  const int d = domain.dim();
  return from_function(domain, h, refine, 2, [d, c](std::span<const double>) {
    return Jet{c, Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d)};
  });
}

// ============================================================================
// Convolution engine
// ============================================================================

struct SampleOptions {
  int refine = 1;      // output nodes per noise cell, per axis
  int max_order = 2;   // highest derivative order stored on the grid
  std::size_t memory_budget_bytes = std::size_t{3} << 30;
};

namespace detail {

// Taps for one output phase rho: x - c = -(t + 1/2) h + rho h / r for t in [t_first, t_first + w.size()).
struct Taps {
  int t_first = 0;
  std::vector<double> w;
};

inline std::vector<Taps> axis_taps(const KernelSpec& spec, double h, int refine, int order) {
  std::vector<Taps> out(static_cast<std::size_t>(refine));
  const double T = spec.truncation_radius;
  for (int rho = 0; rho < refine; ++rho) {
    const double shift = rho * h / refine;
    const int t_lo = static_cast<int>(std::ceil((shift - T) / h - 0.5 - 1e-12));
    const int t_hi = static_cast<int>(std::floor((shift + T) / h - 0.5 + 1e-12));
    Taps& tp = out[static_cast<std::size_t>(rho)];
    tp.t_first = t_lo;
    for (int t = t_lo; t <= t_hi; ++t) {
      const double off = -(t + 0.5) * h + shift;
      tp.w.push_back(std::abs(off) > T ? 0.0 : gaussian_axis(spec.scale, order, off));
    }
  }
  return out;
}

// Contracts axis `axis` of src (cells along that axis) into outputs k in [k_lo, k_hi).
// shift_cells = (a_axis - cell_lo_axis) * m converts output indices to cell indices.
inline Tensor contract_axis(const Tensor& src, int axis, const std::vector<Taps>& taps, int refine, long shift_cells,
                            long k_lo, long k_hi) {
  Tensor out;
  out.dims = src.dims;
  out.dims[static_cast<std::size_t>(axis)] = static_cast<std::size_t>(k_hi - k_lo);
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= src.dims[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < src.dims.size(); ++i) inner *= src.dims[i];
  const long n_src = static_cast<long>(src.dims[static_cast<std::size_t>(axis)]);
  const std::size_t n_out = out.dims[static_cast<std::size_t>(axis)];
  out.data.assign(outer * n_out * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* s = src.data.data() + o * static_cast<std::size_t>(n_src) * inner;
    double* dst = out.data.data() + o * n_out * inner;
    for (long k = k_lo; k < k_hi; ++k) {
      const long q = k >= 0 ? k / refine : -((-k + refine - 1) / refine);
      const int rho = static_cast<int>(k - q * refine);
      const Taps& tp = taps[static_cast<std::size_t>(rho)];
      double* row = dst + static_cast<std::size_t>(k - k_lo) * inner;
      const long j0 = q + shift_cells + tp.t_first;
      for (std::size_t t = 0; t < tp.w.size(); ++t) {
        const long j = j0 + static_cast<long>(t);
        if (j < 0 || j >= n_src) continue;
        const double wt = tp.w[t];
        const double* col = s + static_cast<std::size_t>(j) * inner;
        if (inner == 1) {
          row[0] += wt * col[0];
        } else {
          for (std::size_t in = 0; in < inner; ++in) row[in] += wt * col[in];
        }
      }
    }
  }
  return out;
}

}  // namespace detail

/// Adds q * (cell values) to the slots of `out` for output nodes in [k_lo, k_hi).
/// cells: tensor over the cell sub-box whose lower corner is the integer point cell_lo.
inline void accumulate_convolution(const KernelSpec& spec, double h, const detail::Tensor& cells,
                                   const std::vector<int>& cell_lo, const std::vector<long>& k_lo,
                                   const std::vector<long>& k_hi, FieldRealization& out) {
  const int d = spec.d;
  const int refine = out.refine();
  const int m = static_cast<int>(std::llround(1.0 / h));
  const auto slots = jet_indices(d, out.max_order());
  std::vector<long> shift(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i)
    shift[static_cast<std::size_t>(i)] = static_cast<long>(out.domain().lower()[static_cast<std::size_t>(i)] - cell_lo[static_cast<std::size_t>(i)]) * m;
  for (int i = 0; i < d; ++i)
    if (k_hi[static_cast<std::size_t>(i)] <= k_lo[static_cast<std::size_t>(i)]) return;

  auto scatter = [&](const detail::Tensor& t, std::vector<double>& dst) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(d), 0), zero(static_cast<std::size_t>(d), 0);
    std::vector<std::size_t> node(static_cast<std::size_t>(d));
    std::size_t f = 0;
    do {
      for (int i = 0; i < d; ++i) node[static_cast<std::size_t>(i)] = static_cast<std::size_t>(k_lo[static_cast<std::size_t>(i)]) + idx[static_cast<std::size_t>(i)];
      dst[out.shape().flat(node)] += t.data[f++];
    } while (next_index<std::size_t>(idx, zero, t.dims));
  };

  if (spec.separable()) {
    std::map<int, std::vector<detail::Taps>> taps;
    for (int o = 0; o <= out.max_order(); ++o) taps[o] = detail::axis_taps(spec, h, refine, o);
    // Memoized contraction from the last axis to the first, keyed by the orders already applied.
    std::map<std::vector<int>, detail::Tensor> memo;
    std::function<const detail::Tensor&(int, const std::vector<int>&)> get =
        [&](int axis, const std::vector<int>& suffix) -> const detail::Tensor& {
      if (axis == d) return cells;
      auto it = memo.find(suffix);
      if (it != memo.end()) return it->second;
      const std::vector<int> rest(suffix.begin() + 1, suffix.end());
      const detail::Tensor& src = get(axis + 1, rest);
      detail::Tensor t = detail::contract_axis(src, axis, taps[suffix[0]], refine, shift[static_cast<std::size_t>(axis)],
                                               k_lo[static_cast<std::size_t>(axis)], k_hi[static_cast<std::size_t>(axis)]);
      return memo.emplace(suffix, std::move(t)).first->second;
    };
    for (std::size_t s = 0; s < slots.size(); ++s) scatter(get(0, slots[s]), out.slot(s));
    return;
  }

  // Dense stencil for non-separable kernels.
  const double T = spec.truncation_radius;
  std::vector<std::size_t> idx(static_cast<std::size_t>(d)), zero(static_cast<std::size_t>(d), 0), ext(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) ext[static_cast<std::size_t>(i)] = static_cast<std::size_t>(k_hi[static_cast<std::size_t>(i)] - k_lo[static_cast<std::size_t>(i)]);
  std::vector<double> x(static_cast<std::size_t>(d)), off(static_cast<std::size_t>(d));
  std::vector<std::size_t> jlo(static_cast<std::size_t>(d)), jhi(static_cast<std::size_t>(d)), j(static_cast<std::size_t>(d)), node(static_cast<std::size_t>(d));
  GridShape cshape(cells.dims);
  std::map<std::vector<long>, double> cache;  // kernel values keyed by (slot, half-offsets in units of h / (2 refine))
  const double unit = h / (2.0 * refine);
  do {
    bool empty = false;
    for (int i = 0; i < d; ++i) {
      node[static_cast<std::size_t>(i)] = static_cast<std::size_t>(k_lo[static_cast<std::size_t>(i)]) + idx[static_cast<std::size_t>(i)];
      x[static_cast<std::size_t>(i)] = out.coord(i, node[static_cast<std::size_t>(i)]);
      const double c0 = cell_lo[static_cast<std::size_t>(i)];
      const double a = std::max(std::ceil((x[static_cast<std::size_t>(i)] - T - c0) / h - 0.5 - 1e-12), 0.0);
      const double b = std::min(std::floor((x[static_cast<std::size_t>(i)] + T - c0) / h - 0.5 + 1e-12), static_cast<double>(cells.dims[static_cast<std::size_t>(i)]) - 1.0);
      if (b < a) { empty = true; break; }
      jlo[static_cast<std::size_t>(i)] = static_cast<std::size_t>(a);
      jhi[static_cast<std::size_t>(i)] = static_cast<std::size_t>(b) + 1;
    }
    if (empty) continue;
    const std::size_t node_flat = out.shape().flat(node);
    for (std::size_t s = 0; s < slots.size(); ++s) {
      double acc = 0.0;
      j = jlo;
      do {
        const double wv = cells.data[cshape.flat(j)];
        if (wv == 0.0) continue;
        std::vector<long> key{static_cast<long>(s)};
        for (int i = 0; i < d; ++i) {
          off[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] - (cell_lo[static_cast<std::size_t>(i)] + (static_cast<double>(j[static_cast<std::size_t>(i)]) + 0.5) * h);
          key.push_back(std::lround(off[static_cast<std::size_t>(i)] / unit));
        }
        auto it = cache.find(key);
        if (it == cache.end()) it = cache.emplace(key, eval_kernel(spec, off, slots[s])).first;
        acc += it->second * wv;
      } while (next_index<std::size_t>(j, jlo, jhi));
      out.slot(s)[node_flat] += acc;
    }
  } while (next_index<std::size_t>(idx, zero, ext));
}

inline std::size_t estimate_bytes(const KernelSpec& spec, const BoxDomain& domain, double h, const SampleOptions& opt) {
  const auto [lo, hi] = padded_extent(spec, domain);
  double cells = 1.0, nodes = 1.0;
  for (int i = 0; i < domain.dim(); ++i) {
    cells *= (hi[static_cast<std::size_t>(i)] - lo[static_cast<std::size_t>(i)]) / h;
    nodes *= domain.side(i) * opt.refine / h + 1.0;
  }
  const double slots = opt.max_order == 0 ? 1 : jet_size(domain.dim());
  return static_cast<std::size_t>(8.0 * (2.0 * cells + (2.0 * slots + 3.0) * nodes + 3.0 * cells * opt.refine));
}

/// Convolves `noise` with d^alpha q for |alpha| <= max_order on the nodes of `domain`.
inline FieldRealization realize(const KernelSpec& spec, std::shared_ptr<const WhiteNoiseGrid> noise,
                                const BoxDomain& domain, const SampleOptions& opt = {}) {
  if (domain.dim() != spec.d || noise->dim() != spec.d) throw InvalidArgument("dimension mismatch between kernel, noise and domain");
  if (estimate_bytes(spec, domain, noise->h(), opt) > opt.memory_budget_bytes)
    throw GridTooLarge("padded arrays exceed the memory budget");
  const auto [need_lo, need_hi] = padded_extent(spec, domain);
  for (int i = 0; i < spec.d; ++i)
    if (noise->cube_lo()[static_cast<std::size_t>(i)] > need_lo[static_cast<std::size_t>(i)] ||
        noise->cube_hi()[static_cast<std::size_t>(i)] < need_hi[static_cast<std::size_t>(i)])
      throw DomainNotCovered("noise extent does not cover the padded domain");
  FieldRealization out(domain, noise->h(), opt.refine, opt.max_order);
  detail::Tensor cells{noise->shape().extents(), noise->values()};
  std::vector<long> k_lo(static_cast<std::size_t>(spec.d), 0), k_hi(static_cast<std::size_t>(spec.d));
  for (int i = 0; i < spec.d; ++i) k_hi[static_cast<std::size_t>(i)] = static_cast<long>(out.shape().extent(i));
  accumulate_convolution(spec, noise->h(), cells, noise->cube_lo(), k_lo, k_hi, out);
  out.set_source(std::make_shared<NoiseJetSource>(spec, noise));
  out.provenance().kernel = family_name(spec.family);
  out.provenance().seed = noise->seed();
  return out;
}

inline std::shared_ptr<const WhiteNoiseGrid> sample_noise(const KernelSpec& spec, const BoxDomain& domain, double h,
                                                          std::uint64_t seed) {
  auto [lo, hi] = padded_extent(spec, domain);
  return std::make_shared<const WhiteNoiseGrid>(WhiteNoiseGrid::sample(h, lo, hi, seed));
}

/// f[alpha](x) = sum over cells of d^alpha q(x - center) * weight; deterministic in (spec, domain, h, seed).
inline FieldRealization sample_field(const KernelSpec& spec, const BoxDomain& domain, double h, std::uint64_t seed,
                                     const SampleOptions& opt = {}) {
  if (estimate_bytes(spec, domain, h, opt) > opt.memory_budget_bytes)
    throw GridTooLarge("padded arrays exceed the memory budget");
  return realize(spec, sample_noise(spec, domain, h, seed), domain, opt);
}

// ============================================================================
// Cube resampling
// ============================================================================

struct ResampledField {
  FieldRealization field;         // f~ = q * W~
  FieldRealization perturbation;  // p = f~ - f, computed locally around the cubes
};

/// Output node range along each axis within sup-distance T of B_v, clipped to the grid.
inline bool local_node_range(const FieldRealization& real, const CubeIndex& v, double T, std::vector<long>& k_lo,
                             std::vector<long>& k_hi) {
  const int d = real.dim();
  k_lo.assign(static_cast<std::size_t>(d), 0);
  k_hi.assign(static_cast<std::size_t>(d), 0);
  const double npu = real.nodes_per_unit();
  for (int i = 0; i < d; ++i) {
    const double a = real.domain().lower()[static_cast<std::size_t>(i)];
    const double lo = (v[static_cast<std::size_t>(i)] - T - a) * npu;
    const double hi = (v[static_cast<std::size_t>(i)] + 1 + T - a) * npu;
    const long n = static_cast<long>(real.shape().extent(i));
    k_lo[static_cast<std::size_t>(i)] = std::max<long>(0, static_cast<long>(std::ceil(lo - 1e-9)));
    k_hi[static_cast<std::size_t>(i)] = std::min<long>(n, static_cast<long>(std::floor(hi + 1e-9)) + 1);
    if (k_hi[static_cast<std::size_t>(i)] <= k_lo[static_cast<std::size_t>(i)]) return false;
  }
  return true;
}

/// Perturbation field q * (new - old) restricted to the listed cubes.
inline FieldRealization cube_perturbation(const KernelSpec& spec, const WhiteNoiseGrid& old_noise,
                                          const WhiteNoiseGrid& new_noise, const std::vector<CubeIndex>& cubes,
                                          const FieldRealization& like) {
  FieldRealization p(like.domain(), like.h(), like.refine(), like.max_order());
  const int d = spec.d;
  const int m = old_noise.cells_per_unit();
  std::vector<long> k_lo, k_hi;
  for (const auto& v : cubes) {
    if (!local_node_range(p, v, spec.truncation_radius, k_lo, k_hi)) continue;
    detail::Tensor cells;
    cells.dims.assign(static_cast<std::size_t>(d), static_cast<std::size_t>(m));
    cells.data.reserve(static_cast<std::size_t>(std::pow(m, d)));
    old_noise.for_cells_of(v, [&](std::size_t f) { cells.data.push_back(new_noise.values()[f] - old_noise.values()[f]); });
    accumulate_convolution(spec, old_noise.h(), cells, v, k_lo, k_hi, p);
  }
  return p;
}

/// Replaces the weights of the listed cubes by fresh draws keyed by seed2; all other weights are untouched.
inline WhiteNoiseGrid redraw_cubes(const WhiteNoiseGrid& noise, const std::vector<CubeIndex>& cubes, std::uint64_t seed2) {
  WhiteNoiseGrid out = noise;
  for (const auto& v : cubes) out.draw_cube(v, seed2);
  return out;
}

inline ResampledField resample_cubes(const FieldRealization& real, const std::vector<CubeIndex>& cubes,
                                     std::uint64_t seed2) {
  auto src = std::dynamic_pointer_cast<const NoiseJetSource>(real.source());
  if (!src) throw InvalidArgument("resampling needs a realization sampled from white noise");
  const auto& noise = *src->noise();
  for (const auto& v : cubes)
    if (!noise.has_cube(v)) throw CubeOutOfExtent("cube " + cube_string(v) + " outside padded extent");
  if (cubes.empty()) return {real, FieldRealization(real.domain(), real.h(), real.refine(), real.max_order())};
  auto fresh = std::make_shared<const WhiteNoiseGrid>(redraw_cubes(noise, cubes, seed2));
  FieldRealization p = cube_perturbation(src->kernel(), noise, *fresh, cubes, real);
  FieldRealization tilde = real;
  for (std::size_t s = 0; s < tilde.slot_count(); ++s) {
    auto& t = tilde.slot(s);
    const auto& ps = p.slot(s);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += ps[i];
  }
  tilde.set_source(std::make_shared<NoiseJetSource>(src->kernel(), fresh));
  for (const auto& v : cubes) {
    tilde.provenance().resampled_cubes.push_back(v);
    tilde.provenance().resample_seeds.push_back(seed2);
  }
  p.set_source(std::make_shared<CombinedJetSource>(1.0, tilde.source(), -1.0, real.source()));
  p.provenance().kernel = "perturbation";
  return {std::move(tilde), std::move(p)};
}

// ============================================================================
// Lexicographic freezing
// ============================================================================

struct CubeSplit {
  std::vector<CubeIndex> frozen;  // u <= pivot
  std::vector<CubeIndex> free;    // u > pivot
};

inline CubeSplit half_space_freeze(const std::vector<CubeIndex>& cubes, const CubeIndex& pivot) {
  CubeSplit s;
  for (const auto& u : cubes) (lex_leq(u, pivot) ? s.frozen : s.free).push_back(u);
  return s;
}

inline CubeSplit half_space_freeze(const WhiteNoiseGrid& noise, const CubeIndex& pivot) {
  return half_space_freeze(noise.cubes(), pivot);
}

// ============================================================================
// Binary dump
// ============================================================================

/// Writes slot `s` as: uint32 d, f64 R, f64 h, u64 seed, then little-endian f64 values
/// in C row-major order; a JSON sidecar `<path>.json` records provenance.
inline void dump_realization(const FieldRealization& real, const std::string& path, std::size_t s = 0) {
  static_assert(std::endian::native == std::endian::little, "dump format assumes a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::uint32_t d = static_cast<std::uint32_t>(real.dim());
  const double R = 0.5 * real.domain().side(0);
  const double h = real.node_spacing();
  const std::uint64_t seed = real.provenance().seed;
  out.write(reinterpret_cast<const char*>(&d), sizeof d);
  out.write(reinterpret_cast<const char*>(&R), sizeof R);
  out.write(reinterpret_cast<const char*>(&h), sizeof h);
  out.write(reinterpret_cast<const char*>(&seed), sizeof seed);
  const auto& v = real.slot(s);
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!out) throw IoError("short write to " + path);

  nlohmann::json side;
  side["format"] = "gfc.grid.v1";
  side["dimension"] = d;
  side["R"] = R;
  side["node_spacing"] = h;
  side["noise_spacing"] = real.h();
  side["seed"] = seed;
  side["lower"] = real.domain().lower();
  side["upper"] = real.domain().upper();
  side["extents"] = real.shape().extents();
  side["slot"] = s;
  side["kernel"] = real.provenance().kernel;
  side["resampled_cubes"] = real.provenance().resampled_cubes;
  side["resample_seeds"] = real.provenance().resample_seeds;
  std::ofstream js(path + ".json");
  js << side.dump(2) << "\n";
}

struct GridDump {
  std::uint32_t d = 0;
  double R = 0.0;
  double h = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> values;
};

inline GridDump read_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  GridDump g;
  in.read(reinterpret_cast<char*>(&g.d), sizeof g.d);
  in.read(reinterpret_cast<char*>(&g.R), sizeof g.R);
  in.read(reinterpret_cast<char*>(&g.h), sizeof g.h);
  in.read(reinterpret_cast<char*>(&g.seed), sizeof g.seed);
  if (!in) throw IoError("truncated header in " + path);
  double v;
  while (in.read(reinterpret_cast<char*>(&v), sizeof v)) g.values.push_back(v);
  return g;
}

}  // namespace gfc
