#pragma once

// Convolution kernels q, the covariance K = q * q, and derivative oracles.
//
// f = q * W for unit-intensity white noise W, so
//   Cov(d^a f(x), d^g f(y)) = int d^a q(x - u) d^g q(y - u) du
//                           = (-1)^{|a|} (d^{a+g} K)(y - x).
// Kernels are truncated to the sup-norm box |x|_inf <= T, which keeps the
// Gaussian families separable and makes every cube perturbation exactly local.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "gfc/error.hpp"
#include "gfc/grid.hpp"

namespace gfc {

enum class KernelFamily { BargmannFock, IsotropicGaussianScale, Tabulated };

inline const char* family_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::BargmannFock: return "bargmann-fock";
    case KernelFamily::IsotropicGaussianScale: return "gaussian-scale";
    case KernelFamily::Tabulated: return "tabulated";
  }
  return "unknown";
}

// ============================================================================
// 1D building blocks
// ============================================================================

/// Physicists' Hermite polynomial H_n(u).
template <class Real>
Real hermite(int n, Real u) {
  Real h0 = 1, h1 = 2 * u;
  if (n == 0) return h0;
  for (int k = 1; k < n; ++k) {
    const Real h2 = 2 * u * h1 - 2 * Real(k) * h0;
    h0 = h1;
    h1 = h2;
  }
  return h1;
}

/// n-th derivative of exp(-a t^2): (-sqrt(a))^n H_n(sqrt(a) t) exp(-a t^2).
template <class Real>
Real gaussian_derivative(int n, Real a, Real t) {
  using std::exp;
  using std::sqrt;
  const Real r = sqrt(a);
  Real sign_pow = 1;
  for (int k = 0; k < n; ++k) sign_pow *= -r;
  return sign_pow * hermite<Real>(n, r * t) * exp(-a * t * t);
}

/// Per-axis factor of the Gaussian kernel of scale s: (2/(pi s^2))^{1/4} exp(-t^2/s^2), n-th derivative.
inline double gaussian_axis(double s, int n, double t) {
  const double c = std::pow(2.0 / (std::numbers::pi * s * s), 0.25);
  return c * gaussian_derivative<double>(n, 1.0 / (s * s), t);
}

/// Relative mass of |d^n/dt^n axis factor| outside [-T, T].
inline double axis_tail_ratio(double s, int n, double T) {
  const double hi = s * 12.0 + T;
  auto integrate = [&](double lo, double up) {
    const int m = 4000;
    const double step = (up - lo) / m;
    double sum = 0.0;
    for (int i = 0; i <= m; ++i) {
      const double w = (i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      sum += w * std::abs(gaussian_axis(s, n, lo + i * step));
    }
    return sum * step / 3.0;
  };
  const double total = integrate(0.0, hi);
  return T >= hi ? 0.0 : integrate(T, hi) / total;
}

/// Smallest T on a 1/4 grid such that the box tail of |d^a q| is below tol for all |a| <= 2.
inline double default_truncation(double s, int d, double tol = 1e-8) {
  for (double T = 0.25 * s; T < 40.0 * s; T += 0.25) {
    double worst = 0.0;
    for (int n = 0; n <= 2; ++n) worst = std::max(worst, axis_tail_ratio(s, n, T));
    if (static_cast<double>(d) * worst < tol) return T;
  }
  return 40.0 * s;
}

/// Natural cubic spline on a uniform grid.
class UniformSpline {
 public:
  UniformSpline() = default;
  UniformSpline(double lo, double step, std::vector<double> y) : lo_(lo), step_(step), y_(std::move(y)) {
    const std::size_t n = y_.size();
    if (n < 2) throw InvalidArgument("spline needs at least two nodes");
    m_.assign(n, 0.0);
    if (n < 3) return;
    // Thomas algorithm for M_{i-1} + 4 M_i + M_{i+1} = 6 (y_{i+1} - 2 y_i + y_{i-1}) / step^2.
    const std::size_t k = n - 2;
    std::vector<double> c(k), r(k);
    for (std::size_t i = 0; i < k; ++i) r[i] = 6.0 * (y_[i + 2] - 2.0 * y_[i + 1] + y_[i]) / (step_ * step_);
    c[0] = 1.0 / 4.0;
    r[0] /= 4.0;
    for (std::size_t i = 1; i < k; ++i) {
      const double denom = 4.0 - c[i - 1];
      c[i] = 1.0 / denom;
      r[i] = (r[i] - r[i - 1]) / denom;
    }
    for (std::size_t i = k; i-- > 0;) {
      m_[i + 1] = r[i] - (i + 1 < k ? c[i] * m_[i + 2] : 0.0);
    }
  }

  double lo() const { return lo_; }
  double hi() const { return lo_ + step_ * static_cast<double>(y_.size() - 1); }

  /// Derivative of order n <= 2 at t (t inside [lo, hi]).
  double eval(double t, int n) const {
    const std::size_t segs = y_.size() - 1;
    double u = (t - lo_) / step_;
    std::size_t j = static_cast<std::size_t>(std::clamp(std::floor(u), 0.0, static_cast<double>(segs - 1)));
    const double B = u - static_cast<double>(j);
    const double A = 1.0 - B;
    const double h = step_;
    switch (n) {
      case 0:
        return A * y_[j] + B * y_[j + 1] + ((A * A * A - A) * m_[j] + (B * B * B - B) * m_[j + 1]) * h * h / 6.0;
      case 1:
        return (y_[j + 1] - y_[j]) / h - (3.0 * A * A - 1.0) / 6.0 * h * m_[j] + (3.0 * B * B - 1.0) / 6.0 * h * m_[j + 1];
      case 2:
        return A * m_[j] + B * m_[j + 1];
      default:
        throw UnsupportedDerivativeOrder("spline derivative order " + std::to_string(n));
    }
  }

 private:
  double lo_ = 0.0;
  double step_ = 1.0;
  std::vector<double> y_;
  std::vector<double> m_;
};

// ============================================================================
// Tabulated kernels
// ============================================================================

/// Tensor-product natural cubic spline through q values on a uniform grid, 0 outside the table.
class TabulatedKernel {
 public:
  TabulatedKernel(std::vector<double> lower, double spacing, std::vector<std::size_t> counts, std::vector<double> values)
      : lower_(std::move(lower)), spacing_(spacing), shape_(std::move(counts)), values_(std::move(values)) {
    if (lower_.size() != static_cast<std::size_t>(shape_.dim()) || shape_.size() != values_.size())
      throw InvalidArgument("tabulated kernel shape mismatch");
    if (!(spacing_ > 0.0)) throw InvalidArgument("tabulated kernel spacing must be positive");
    for (int i = 0; i < dim(); ++i)
      if (shape_.extent(i) < 2) throw InvalidArgument("tabulated kernel needs >= 2 nodes per axis");
    const int last = dim() - 1;
    const std::size_t n = shape_.extent(last);
    for (std::size_t start = 0; start < values_.size(); start += n) {
      lines_.emplace_back(lower_[static_cast<std::size_t>(last)], spacing_,
                          std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(start),
                                              values_.begin() + static_cast<std::ptrdiff_t>(start + n)));
    }
  }

  /// Parses rows "x_1,...,x_d,value". Blank lines and lines starting with '#' are skipped;
  /// a non-numeric first row is treated as a header.
  static TabulatedKernel from_csv(std::istream& in, int d) {
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      bool numeric = true;
      while (std::getline(ss, cell, ',')) {
        try {
          std::size_t used = 0;
          row.push_back(std::stod(cell, &used));
        } catch (const std::exception&) {
          numeric = false;
          break;
        }
      }
      if (!numeric) {
        if (first) { first = false; continue; }
        throw IoError("non-numeric row in kernel table: " + line);
      }
      first = false;
      if (row.size() != static_cast<std::size_t>(d + 1))
        throw IoError("kernel table rows need " + std::to_string(d + 1) + " columns");
      rows.push_back(std::move(row));
    }
    if (rows.empty()) throw IoError("empty kernel table");
    std::vector<std::vector<double>> axes(static_cast<std::size_t>(d));
    for (const auto& r : rows)
      for (int i = 0; i < d; ++i) axes[static_cast<std::size_t>(i)].push_back(r[static_cast<std::size_t>(i)]);
    std::vector<double> lower(static_cast<std::size_t>(d));
    std::vector<std::size_t> counts(static_cast<std::size_t>(d));
    double spacing = 0.0;
    for (int i = 0; i < d; ++i) {
      auto& a = axes[static_cast<std::size_t>(i)];
      std::sort(a.begin(), a.end());
      a.erase(std::unique(a.begin(), a.end(), [](double u, double v) { return std::abs(u - v) < 1e-12; }), a.end());
      if (a.size() < 2) throw IoError("kernel table needs >= 2 distinct coordinates per axis");
      const double st = (a.back() - a.front()) / static_cast<double>(a.size() - 1);
      for (std::size_t k = 1; k < a.size(); ++k)
        if (std::abs(a[k] - a[k - 1] - st) > 1e-9 * std::max(1.0, st)) throw IoError("kernel table grid is not uniform");
      if (i > 0 && std::abs(st - spacing) > 1e-9 * std::max(1.0, st)) throw IoError("kernel table spacing differs by axis");
      spacing = st;
      lower[static_cast<std::size_t>(i)] = a.front();
      counts[static_cast<std::size_t>(i)] = a.size();
    }
    GridShape shape(counts);
    std::vector<double> values(shape.size(), std::numeric_limits<double>::quiet_NaN());
    std::vector<std::size_t> idx(static_cast<std::size_t>(d));
    for (const auto& r : rows) {
      for (int i = 0; i < d; ++i)
        idx[static_cast<std::size_t>(i)] = static_cast<std::size_t>(std::llround((r[static_cast<std::size_t>(i)] - lower[static_cast<std::size_t>(i)]) / spacing));
      values[shape.flat(idx)] = r.back();
    }
    for (double v : values)
      if (std::isnan(v)) throw IoError("kernel table does not cover a full tensor grid");
    return TabulatedKernel(lower, spacing, counts, values);
  }

  static TabulatedKernel from_csv_file(const std::string& path, int d) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open kernel table " + path);
    return from_csv(in, d);
  }

  int dim() const { return shape_.dim(); }
  double spacing() const { return spacing_; }

  /// Largest |coordinate| covered by the table; the kernel vanishes beyond it.
  double extent() const {
    double e = 0.0;
    for (int i = 0; i < dim(); ++i) {
      const double lo = lower_[static_cast<std::size_t>(i)];
      const double hi = lo + spacing_ * static_cast<double>(shape_.extent(i) - 1);
      e = std::max({e, std::abs(lo), std::abs(hi)});
    }
    return e;
  }

  double eval(std::span<const double> x, const MultiIndex& alpha) const {
    if (order(alpha) > 2) throw UnsupportedDerivativeOrder("tabulated kernels support |alpha| <= 2");
    for (int i = 0; i < dim(); ++i) {
      const double lo = lower_[static_cast<std::size_t>(i)];
      const double hi = lo + spacing_ * static_cast<double>(shape_.extent(i) - 1);
      if (x[static_cast<std::size_t>(i)] < lo || x[static_cast<std::size_t>(i)] > hi) return 0.0;
    }
    return eval_from(0, 0, x, alpha);
  }

 private:
  double eval_from(int axis, std::size_t line, std::span<const double> x, const MultiIndex& alpha) const {
    const int last = dim() - 1;
    if (axis == last) return lines_[line].eval(x[static_cast<std::size_t>(axis)], alpha[static_cast<std::size_t>(axis)]);
    const std::size_t n = shape_.extent(axis);
    const std::size_t lines_per_step = shape_.stride(axis) / shape_.extent(last);
    std::vector<double> y(n);
    for (std::size_t k = 0; k < n; ++k) y[k] = eval_from(axis + 1, line + k * lines_per_step, x, alpha);
    UniformSpline s(lower_[static_cast<std::size_t>(axis)], spacing_, std::move(y));
    return s.eval(x[static_cast<std::size_t>(axis)], alpha[static_cast<std::size_t>(axis)]);
  }

  std::vector<double> lower_;
  double spacing_;
  GridShape shape_;
  std::vector<double> values_;
  std::vector<UniformSpline> lines_;
};

// ============================================================================
// KernelSpec
// ============================================================================

struct KernelSpec {
  int d = 1;
  KernelFamily family = KernelFamily::BargmannFock;
  double scale = 1.0;  // s for IsotropicGaussianScale; 1 for BargmannFock
  std::shared_ptr<const TabulatedKernel> table;
  double decay_exponent = std::numeric_limits<double>::infinity();  // infinity: super-polynomial
  double truncation_radius = 8.0;

  bool separable() const { return family != KernelFamily::Tabulated; }
  bool analytic() const { return family != KernelFamily::Tabulated; }
};

inline KernelSpec gaussian_scale(int d, double s, double tail_tol = 1e-8) {
  if (d < 1) throw InvalidArgument("dimension must be >= 1");
  if (!(s > 0.0)) throw InvalidArgument("kernel scale must be positive");
  KernelSpec k;
  k.d = d;
  k.family = KernelFamily::IsotropicGaussianScale;
  k.scale = s;
  k.truncation_radius = default_truncation(s, d, tail_tol);
  return k;
}

/// Bargmann-Fock kernel q(x) = (2/pi)^{d/4} exp(-|x|^2), K(x) = exp(-|x|^2 / 2).
inline KernelSpec bargmann_fock(int d, double tail_tol = 1e-8) {
  KernelSpec k = gaussian_scale(d, 1.0, tail_tol);
  k.family = KernelFamily::BargmannFock;
  return k;
}

inline KernelSpec tabulated(std::shared_ptr<const TabulatedKernel> table) {
  KernelSpec k;
  k.d = table->dim();
  k.family = KernelFamily::Tabulated;
  k.table = std::move(table);
  k.decay_exponent = std::numeric_limits<double>::infinity();
  k.truncation_radius = k.table->extent();
  return k;
}

/// d^alpha q(x); exactly 0 when |x|_inf > T.
inline double eval_kernel(const KernelSpec& spec, std::span<const double> x, const MultiIndex& alpha) {
  if (static_cast<int>(x.size()) != spec.d || static_cast<int>(alpha.size()) != spec.d)
    throw InvalidArgument("point/multi-index dimension does not match kernel");
  for (int a : alpha)
    if (a < 0) throw InvalidArgument("negative multi-index component");
  if (spec.family == KernelFamily::Tabulated) {
    if (order(alpha) > 2) throw UnsupportedDerivativeOrder("tabulated kernels support |alpha| <= 2");
  } else if (order(alpha) > 5) {
    throw UnsupportedDerivativeOrder("kernel derivatives support |alpha| <= 5");
  }
  for (double xi : x)
    if (std::abs(xi) > spec.truncation_radius) return 0.0;
  if (spec.family == KernelFamily::Tabulated) return spec.table->eval(x, alpha);
  double v = 1.0;
  for (int i = 0; i < spec.d; ++i) v *= gaussian_axis(spec.scale, alpha[static_cast<std::size_t>(i)], x[static_cast<std::size_t>(i)]);
  return v;
}

/// Relative L1 mass of d^alpha q outside the truncation box (analytic families).
inline double tail_mass_ratio(const KernelSpec& spec, const MultiIndex& alpha) {
  if (!spec.analytic()) return 0.0;
  double kept = 1.0;
  for (int a : alpha) kept *= 1.0 - axis_tail_ratio(spec.scale, a, spec.truncation_radius);
  return 1.0 - kept;
}

// ============================================================================
// Covariance oracle
// ============================================================================

enum class CovarianceMethod { Analytic, NumericConvolution };

/// Cov(d^a f(x), d^g f(y)) = (-1)^{|a|} d^{a+g} K(y - x).
template <class Real = double>
class CovarianceOracle {
 public:
  explicit CovarianceOracle(KernelSpec spec)
      : CovarianceOracle(spec, spec.analytic() ? CovarianceMethod::Analytic : CovarianceMethod::NumericConvolution) {}

  CovarianceOracle(KernelSpec spec, CovarianceMethod method) : spec_(std::move(spec)), method_(method) {
    if (method_ == CovarianceMethod::Analytic && !spec_.analytic())
      throw InvalidArgument("analytic covariance requires a Gaussian kernel family");
  }

  const KernelSpec& kernel() const { return spec_; }
  CovarianceMethod method() const { return method_; }
  int dim() const { return spec_.d; }

  /// d^beta K at r (analytic families only).
  Real kernel_derivative(const MultiIndex& beta, std::span<const Real> r) const {
    if (!spec_.analytic()) throw InvalidArgument("closed-form K requires a Gaussian kernel family");
    const Real a = Real(1) / (Real(2) * Real(spec_.scale) * Real(spec_.scale));
    Real v = 1;
    for (int i = 0; i < spec_.d; ++i) v *= gaussian_derivative<Real>(beta[static_cast<std::size_t>(i)], a, r[static_cast<std::size_t>(i)]);
    return v;
  }

  Real cov(const MultiIndex& alpha, const MultiIndex& gamma, std::span<const Real> x, std::span<const Real> y) const {
    const int d = spec_.d;
    if (static_cast<int>(alpha.size()) != d || static_cast<int>(gamma.size()) != d ||
        static_cast<int>(x.size()) != d || static_cast<int>(y.size()) != d)
      throw InvalidArgument("covariance arguments do not match kernel dimension");
    const int total = order(alpha) + order(gamma);
    if (spec_.analytic() && total > 6) throw UnsupportedDerivativeOrder("covariance needs |alpha| + |gamma| <= 6");
    if (!spec_.analytic() && (order(alpha) > 2 || order(gamma) > 2))
      throw UnsupportedDerivativeOrder("tabulated covariance supports |alpha|, |gamma| <= 2");
    if (method_ == CovarianceMethod::Analytic) {
      std::vector<Real> r(static_cast<std::size_t>(d));
      for (int i = 0; i < d; ++i) r[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(i)];
      const Real v = kernel_derivative(add_indices(alpha, gamma), r);
      return (order(alpha) % 2 == 0) ? v : -v;
    }
    std::vector<double> xd(x.begin(), x.end()), yd(y.begin(), y.end());
    return static_cast<Real>(numeric_cov(alpha, gamma, xd, yd));
  }

  /// Covariance with the arguments given as Eigen vectors.
  Real cov(const MultiIndex& alpha, const MultiIndex& gamma, const Eigen::Matrix<Real, Eigen::Dynamic, 1>& x,
           const Eigen::Matrix<Real, Eigen::Dynamic, 1>& y) const {
    return cov(alpha, gamma, std::span<const Real>(x.data(), static_cast<std::size_t>(x.size())),
               std::span<const Real>(y.data(), static_cast<std::size_t>(y.size())));
  }

 private:
  // Numerical int d^a q(x - u) d^g q(y - u) du with composite 4-point Gauss-Legendre
  // over the intersection of the two truncation boxes.
  double numeric_cov(const MultiIndex& alpha, const MultiIndex& gamma, const std::vector<double>& x,
                     const std::vector<double>& y) const {
    const int d = spec_.d;
    const double T = spec_.truncation_radius;
    static constexpr double gl_x[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
    static constexpr double gl_w[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};
    // Per-axis nodes and weights.
    std::vector<std::vector<double>> nodes(static_cast<std::size_t>(d)), weights(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
      const double lo = std::max(x[static_cast<std::size_t>(i)], y[static_cast<std::size_t>(i)]) - T;
      const double hi = std::min(x[static_cast<std::size_t>(i)], y[static_cast<std::size_t>(i)]) + T;
      if (!(hi > lo)) return 0.0;
      std::vector<double> breaks{lo, hi};
      if (spec_.family == KernelFamily::Tabulated) {
        // Spline knots of both factors, so each panel integrates a polynomial exactly.
        const double st = spec_.table->spacing();
        for (double c : {x[static_cast<std::size_t>(i)], y[static_cast<std::size_t>(i)]}) {
          for (double k = std::ceil((c - hi) / st); k * st <= c - lo; k += 1.0) {
            const double u = c - k * st;
            if (u > lo && u < hi) breaks.push_back(u);
          }
        }
      } else {
        const int panels = static_cast<int>(std::ceil((hi - lo) / (0.125 * spec_.scale)));
        for (int p = 1; p < panels; ++p) breaks.push_back(lo + (hi - lo) * p / panels);
      }
      std::sort(breaks.begin(), breaks.end());
      breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
      for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
        const double mid = 0.5 * (breaks[p] + breaks[p + 1]);
        const double half = 0.5 * (breaks[p + 1] - breaks[p]);
        for (int q = 0; q < 4; ++q) {
          nodes[static_cast<std::size_t>(i)].push_back(mid + half * gl_x[q]);
          weights[static_cast<std::size_t>(i)].push_back(half * gl_w[q]);
        }
      }
    }
    if (spec_.separable()) {
      double prod = 1.0;
      for (int i = 0; i < d; ++i) {
        double s = 0.0;
        const auto& nd = nodes[static_cast<std::size_t>(i)];
        for (std::size_t k = 0; k < nd.size(); ++k) {
          s += weights[static_cast<std::size_t>(i)][k] *
               gaussian_axis(spec_.scale, alpha[static_cast<std::size_t>(i)], x[static_cast<std::size_t>(i)] - nd[k]) *
               gaussian_axis(spec_.scale, gamma[static_cast<std::size_t>(i)], y[static_cast<std::size_t>(i)] - nd[k]);
        }
        prod *= s;
      }
      return prod;
    }
    std::vector<std::size_t> counts(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) counts[static_cast<std::size_t>(i)] = nodes[static_cast<std::size_t>(i)].size();
    GridShape shape(counts);
    std::vector<std::size_t> idx(static_cast<std::size_t>(d));
    std::vector<double> px(static_cast<std::size_t>(d)), py(static_cast<std::size_t>(d));
    double sum = 0.0;
    for (std::size_t f = 0; f < shape.size(); ++f) {
      shape.unflatten(f, idx);
      double w = 1.0;
      for (int i = 0; i < d; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const double u = nodes[ui][idx[ui]];
        w *= weights[ui][idx[ui]];
        px[ui] = x[ui] - u;
        py[ui] = y[ui] - u;
      }
      sum += w * eval_kernel(spec_, px, alpha) * eval_kernel(spec_, py, gamma);
    }
    return sum;
  }

  KernelSpec spec_;
  CovarianceMethod method_;
};

/// (q * q)(r) by numerical convolution.
inline double numeric_self_convolution(const KernelSpec& spec, std::span<const double> r) {
  CovarianceOracle<double> oracle(spec, CovarianceMethod::NumericConvolution);
  std::vector<double> zero(static_cast<std::size_t>(spec.d), 0.0);
  return oracle.cov(zero_index(spec.d), zero_index(spec.d), zero, r);
}

}  // namespace gfc
