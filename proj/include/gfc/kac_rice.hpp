#pragma once

// Gaussian linear algebra for Kac-Rice computations: covariance determinants
// (DC), regression onto observed coordinates, one- and three-point
// critical-point intensities, non-degeneracy probes and the two routes to the
// second moment of the number of zeros of a 1D field.
//
// Covariances are assembled and conditioned in long double; DC of nearly
// coincident configurations shrinks like a high power of the separation and
// double precision runs out below |x| ~ 1e-2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gfc/error.hpp"
#include "gfc/grid.hpp"
#include "gfc/kernels.hpp"
#include "gfc/parallel.hpp"
#include "gfc/rng.hpp"
#include "gfc/sampler.hpp"
#include "gfc/stats.hpp"

namespace gfc {

using LReal = long double;
using LMatrix = Eigen::Matrix<LReal, Eigen::Dynamic, Eigen::Dynamic>;
using LVector = Eigen::Matrix<LReal, Eigen::Dynamic, 1>;
using LPoint = std::vector<LReal>;

// ============================================================================
// DC operator
// ============================================================================

template <class Real>
void require_symmetric(const Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>& S) {
  using std::abs;
  if (S.rows() != S.cols()) throw NonSymmetricInput("covariance matrix is not square");
  Real scale = 0;
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index j = 0; j < S.cols(); ++j) scale = std::max<Real>(scale, abs(S(i, j)));
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index j = i + 1; j < S.cols(); ++j)
      if (abs(S(i, j) - S(j, i)) > Real(1e-12) * std::max<Real>(scale, Real(1e-300)))
        throw NonSymmetricInput("covariance matrix is not symmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
}

/// Determinant of a covariance matrix.
template <class Real>
Real dc(const Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>& S) {
  require_symmetric(S);
  if (S.rows() == 0) return Real(1);
  return S.fullPivLu().determinant();
}

// ============================================================================
// Deterministic perturbations p
// ============================================================================

/// A smooth deterministic function with closed-form derivatives; empty means p = 0.
struct DeterministicField {
  std::string name = "zero";
  std::function<LReal(std::span<const LReal>, const MultiIndex&)> eval;
  double c4_norm = 0.0;

  bool is_zero() const { return !eval; }
  LReal operator()(std::span<const LReal> x, const MultiIndex& alpha) const { return eval ? eval(x, alpha) : LReal(0); }

  static DeterministicField zero() { return {}; }

  static DeterministicField constant(double c) {
    DeterministicField p;
    p.name = "constant";
    p.c4_norm = std::abs(c);
    p.eval = [c](std::span<const LReal>, const MultiIndex& a) { return order(a) == 0 ? LReal(c) : LReal(0); };
    return p;
  }

  /// amplitude * cos(k . x + phase).
  static DeterministicField plane_wave(double amplitude, std::vector<double> k, double phase) {
    DeterministicField p;
    p.name = "plane_wave";
    double kn = 0.0;
    for (double v : k) kn = std::max(kn, std::abs(v));
    p.c4_norm = std::abs(amplitude) * std::max(1.0, std::pow(kn, 4));
    p.eval = [amplitude, k, phase](std::span<const LReal> x, const MultiIndex& a) {
      LReal arg = phase, coef = amplitude;
      for (std::size_t i = 0; i < k.size(); ++i) {
        arg += LReal(k[i]) * x[i];
        for (int r = 0; r < a[i]; ++r) coef *= LReal(k[i]);
      }
      return coef * std::cos(arg + LReal(order(a)) * std::numbers::pi_v<LReal> / 2);
    };
    return p;
  }
};

// ============================================================================
// Gaussian vector models
// ============================================================================

/// Finite linear combination of field derivatives at points: sum_k c_k d^{alpha_k} f(x_k).
struct LinearFunctional {
  struct Term {
    LPoint point;
    MultiIndex alpha;
    LReal coef = 1;
  };
  std::vector<Term> terms;

  static LinearFunctional at(LPoint x, MultiIndex alpha) { return {{Term{std::move(x), std::move(alpha), 1}}}; }

  /// (F(y) - F(x)) / (y - x) in d = 1.
  static LinearFunctional divided_difference(LReal x, LReal y) {
    const LReal inv = 1 / (y - x);
    return {{Term{{y}, {0}, inv}, Term{{x}, {0}, -inv}}};
  }

  /// Directional derivative d_v^k d_w^j f(x) expanded over coordinate derivatives.
  static LinearFunctional directional(const LPoint& x, const std::vector<std::vector<LReal>>& dirs, const MultiIndex& base) {
    const int d = static_cast<int>(x.size());
    std::vector<Term> terms{Term{x, base, 1}};
    for (const auto& v : dirs) {
      std::vector<Term> next;
      for (const auto& t : terms)
        for (int i = 0; i < d; ++i) {
          if (v[static_cast<std::size_t>(i)] == 0) continue;
          Term u = t;
          u.alpha[static_cast<std::size_t>(i)] += 1;
          u.coef *= v[static_cast<std::size_t>(i)];
          next.push_back(std::move(u));
        }
      terms = std::move(next);
    }
    return {terms};
  }
};

struct GaussianVectorModel {
  std::vector<LinearFunctional> descriptors;
  LVector mean;
  LMatrix cov;

  int size() const { return static_cast<int>(mean.size()); }

  /// Symmetry and eigenvalues >= -1e-10 * ||cov||.
  void validate() const {
    require_symmetric(cov);
    if (cov.rows() == 0) return;
    Eigen::SelfAdjointEigenSolver<LMatrix> es(cov, Eigen::EigenvaluesOnly);
    const LReal top = es.eigenvalues().cwiseAbs().maxCoeff();
    if (es.eigenvalues().minCoeff() < -LReal(1e-10) * top)
      throw InvalidArgument("covariance matrix is not positive semi-definite");
  }
};

inline GaussianVectorModel assemble_model(const CovarianceOracle<LReal>& oracle, std::vector<LinearFunctional> descriptors,
                                          const DeterministicField& p = {}) {
  const int n = static_cast<int>(descriptors.size());
  GaussianVectorModel m;
  m.mean = LVector::Zero(n);
  m.cov = LMatrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (const auto& t : descriptors[static_cast<std::size_t>(i)].terms) m.mean(i) += t.coef * p(t.point, t.alpha);
    for (int j = 0; j <= i; ++j) {
      LReal c = 0;
      for (const auto& a : descriptors[static_cast<std::size_t>(i)].terms)
        for (const auto& b : descriptors[static_cast<std::size_t>(j)].terms)
          c += a.coef * b.coef * oracle.cov(a.alpha, b.alpha, std::span<const LReal>(a.point), std::span<const LReal>(b.point));
      m.cov(i, j) = m.cov(j, i) = c;
    }
  }
  m.descriptors = std::move(descriptors);
  return m;
}

inline LMatrix sub_matrix(const LMatrix& M, const std::vector<int>& rows, const std::vector<int>& cols) {
  LMatrix out(static_cast<int>(rows.size()), static_cast<int>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(static_cast<int>(i), static_cast<int>(j)) = M(rows[i], cols[j]);
  return out;
}

inline LVector sub_vector(const LVector& v, const std::vector<int>& idx) {
  LVector out(static_cast<int>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<int>(i)) = v(idx[i]);
  return out;
}

/// Law of the coordinates not in `observed`, given those coordinates equal `values`.
inline GaussianVectorModel condition(const GaussianVectorModel& model, const std::vector<int>& observed, const LVector& values) {
  const int n = model.size();
  if (static_cast<int>(values.size()) != static_cast<int>(observed.size()))
    throw InvalidArgument("observed values do not match the observed indices");
  std::vector<char> is_obs(static_cast<std::size_t>(n), 0);
  for (int i : observed) {
    if (i < 0 || i >= n) throw InvalidArgument("observed index out of range");
    is_obs[static_cast<std::size_t>(i)] = 1;
  }
  std::vector<int> rest;
  for (int i = 0; i < n; ++i)
    if (!is_obs[static_cast<std::size_t>(i)]) rest.push_back(i);
  const LMatrix S11 = sub_matrix(model.cov, observed, observed);
  const LMatrix S21 = sub_matrix(model.cov, rest, observed);
  const LMatrix S22 = sub_matrix(model.cov, rest, rest);
  GaussianVectorModel out;
  for (int i : rest) out.descriptors.push_back(model.descriptors.empty() ? LinearFunctional{} : model.descriptors[static_cast<std::size_t>(i)]);
  if (observed.empty()) {
    out.mean = sub_vector(model.mean, rest);
    out.cov = S22;
    return out;
  }
  Eigen::SelfAdjointEigenSolver<LMatrix> es(S11, Eigen::EigenvaluesOnly);
  const LReal scale = S11.diagonal().cwiseAbs().maxCoeff();
  if (!(es.eigenvalues().minCoeff() > LReal(1e-12) * scale))
    throw SingularConditioningBlock("observed block has min eigenvalue " + std::to_string(static_cast<double>(es.eigenvalues().minCoeff())) +
                                    " relative to scale " + std::to_string(static_cast<double>(scale)));
  const Eigen::LDLT<LMatrix> ldlt(S11);
  const LVector shift = values - sub_vector(model.mean, observed);
  out.mean = sub_vector(model.mean, rest) + S21 * ldlt.solve(shift);
  out.cov = S22 - S21 * ldlt.solve(S21.transpose());
  out.cov = (0.5L * (out.cov + out.cov.transpose())).eval();
  return out;
}

/// Density at `values` of the Gaussian vector (mean, cov).
inline LReal gaussian_density(const LVector& mean, const LMatrix& cov, const LVector& values) {
  const int n = static_cast<int>(mean.size());
  const LReal det = dc(cov);
  if (!(det > 0)) throw SingularConditioningBlock("density of a degenerate Gaussian vector");
  const LVector r = values - mean;
  const LReal q = r.dot(cov.ldlt().solve(r));
  return std::exp(-q / 2) / (std::pow(2 * std::numbers::pi_v<LReal>, LReal(n) / 2) * std::sqrt(det));
}

// ============================================================================
// Conditional Monte Carlo over Hessians
// ============================================================================

/// Sampler of a Gaussian vector through a symmetric square root of its covariance.
class GaussianSampler {
 public:
  GaussianSampler(const LVector& mean, const LMatrix& cov) {
    const int n = static_cast<int>(mean.size());
    mean_ = mean.cast<double>();
    Eigen::SelfAdjointEigenSolver<LMatrix> es(cov);
    LMatrix root = es.eigenvectors();
    for (int k = 0; k < n; ++k) root.col(k) *= std::sqrt(std::max<LReal>(0, es.eigenvalues()(k)));
    root_ = root.cast<double>();
  }
  int size() const { return static_cast<int>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  /// Centered deviation root * z.
  Eigen::VectorXd deviation(const Eigen::VectorXd& z) const { return root_ * z; }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd root_;
};

/// Upper-triangle Hessian multi-indices in row order (e_i + e_j, i <= j).
inline std::vector<MultiIndex> hessian_indices(int d) {
  std::vector<MultiIndex> out;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) out.push_back(add_indices(unit_index(d, i), unit_index(d, j)));
  return out;
}

inline double hessian_det(const double* h, int d) {
  if (d == 1) return h[0];
  if (d == 2) return h[0] * h[2] - h[1] * h[1];
  Eigen::MatrixXd H(d, d);
  int k = 0;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) H(i, j) = H(j, i) = h[k++];
  return H.determinant();
}

struct MCValue {
  double mean = 0.0;
  double std_error = 0.0;
  long samples = 0;
};

struct DetMCOptions {
  long min_pairs = 5000;
  long max_pairs = 2000000;
  long batch_pairs = 5000;
  double target_rel_se = 0.02;
  std::uint64_t seed = 1;
};

/// E| prod_k det H_k | for Hessian blocks laid out consecutively (upper triangles) in the vector,
/// by antithetic pairs (m + Lz, m - Lz), stopping once SE/mean < target or at max_pairs.
inline MCValue abs_det_product(const GaussianSampler& s, int d, int blocks, const DetMCOptions& opt) {
  const int per = d * (d + 1) / 2;
  if (s.size() != per * blocks) throw InvalidArgument("Hessian vector size does not match block layout");
  Xoshiro256 rng(opt.seed);
  std::normal_distribution<double> nd;
  Eigen::VectorXd z(s.size()), dev, a(s.size()), b(s.size());
  double sum = 0.0, sum_sq = 0.0;
  long pairs = 0;
  auto prod_det = [&](const Eigen::VectorXd& v) {
    double p = 1.0;
    for (int k = 0; k < blocks; ++k) p *= hessian_det(v.data() + k * per, d);
    return std::abs(p);
  };
  while (pairs < opt.max_pairs) {
    for (long i = 0; i < opt.batch_pairs; ++i) {
      for (int k = 0; k < z.size(); ++k) z(k) = nd(rng);
      dev = s.deviation(z);
      a = s.mean() + dev;
      b = s.mean() - dev;
      const double v = 0.5 * (prod_det(a) + prod_det(b));
      sum += v;
      sum_sq += v * v;
    }
    pairs += opt.batch_pairs;
    const double m = sum / static_cast<double>(pairs);
    const double var = std::max(0.0, (sum_sq / static_cast<double>(pairs) - m * m)) * static_cast<double>(pairs) / static_cast<double>(pairs - 1);
    const double se = std::sqrt(var / static_cast<double>(pairs));
    if (pairs >= opt.min_pairs && m > 0.0 && se / m < opt.target_rel_se) return {m, se, 2 * pairs};
    if (pairs >= opt.max_pairs) return {m, se, 2 * pairs};
  }
  return {};
}

// ============================================================================
// Intensities
// ============================================================================

/// Critical-point intensity at x: phi_{grad F(x)}(0) * E[|det Hess F(x)| | grad F(x) = 0].
struct OnePointResult {
  double density_factor = 0.0;
  MCValue det_factor;
  double intensity = 0.0;
  double std_error = 0.0;
};

inline std::vector<LinearFunctional> gradient_descriptors(const LPoint& x) {
  const int d = static_cast<int>(x.size());
  std::vector<LinearFunctional> out;
  for (int i = 0; i < d; ++i) out.push_back(LinearFunctional::at(x, unit_index(d, i)));
  return out;
}

inline std::vector<LinearFunctional> hessian_descriptors(const LPoint& x) {
  std::vector<LinearFunctional> out;
  for (const auto& a : hessian_indices(static_cast<int>(x.size()))) out.push_back(LinearFunctional::at(x, a));
  return out;
}

/// Kac-Rice density for `blocks` points: model of gradients then Hessians at each point, conditioned on grad F = 0.
struct ConditionedHessians {
  LReal density_factor = 0;  // density of (grad F(x_1), ..., grad F(x_k)) at 0
  LReal grad_dc = 0;
  GaussianVectorModel hessians;  // conditional law of Hessians of F (upper triangles), block per point
};

inline ConditionedHessians condition_on_critical(const CovarianceOracle<LReal>& oracle, const DeterministicField& p,
                                                 const std::vector<LPoint>& points) {
  const int d = oracle.dim();
  std::vector<LinearFunctional> desc;
  for (const auto& x : points)
    for (auto& g : gradient_descriptors(x)) desc.push_back(std::move(g));
  const int ng = static_cast<int>(desc.size());
  for (const auto& x : points)
    for (auto& h : hessian_descriptors(x)) desc.push_back(std::move(h));
  // Moments of F = f + p: the mean carries p and its derivatives.
  const GaussianVectorModel model = assemble_model(oracle, std::move(desc), p);
  std::vector<int> obs(static_cast<std::size_t>(ng));
  for (int i = 0; i < ng; ++i) obs[static_cast<std::size_t>(i)] = i;
  ConditionedHessians out;
  const LMatrix G = model.cov.topLeftCorner(ng, ng);
  out.grad_dc = dc(G);
  out.hessians = condition(model, obs, LVector::Zero(ng));
  out.density_factor = gaussian_density(model.mean.head(ng), G, LVector::Zero(ng));
  (void)d;
  return out;
}

inline OnePointResult one_point_intensity(const CovarianceOracle<LReal>& oracle, const DeterministicField& p,
                                          const LPoint& x, const DetMCOptions& mc = {}) {
  const auto ch = condition_on_critical(oracle, p, {x});
  OnePointResult r;
  r.density_factor = static_cast<double>(ch.density_factor);
  r.det_factor = abs_det_product(GaussianSampler(ch.hessians.mean, ch.hessians.cov), oracle.dim(), 1, mc);
  r.intensity = r.density_factor * r.det_factor.mean;
  r.std_error = r.density_factor * r.det_factor.std_error;
  return r;
}

struct Geometry {
  double abs_x = 0.0;
  double abs_y = 0.0;
  double theta = 0.0;  // angle between x and y; pi in d = 1
};

inline LReal norm(const LPoint& x) {
  LReal s = 0;
  for (LReal v : x) s += v * v;
  return std::sqrt(s);
}

inline LPoint difference(const LPoint& a, const LPoint& b) {
  LPoint r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

inline Geometry geometry_of(const LPoint& x, const LPoint& y) {
  Geometry g;
  g.abs_x = static_cast<double>(norm(x));
  g.abs_y = static_cast<double>(norm(y));
  if (x.size() == 1) {
    g.theta = std::numbers::pi;
  } else {
    LReal dot = 0;
    for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
    g.theta = static_cast<double>(std::acos(std::clamp<LReal>(dot / (norm(x) * norm(y)), -1, 1)));
  }
  return g;
}

/// 0 < |x| < |y| < |x - y| <= 1.
inline bool in_region_D(const LPoint& x, const LPoint& y) {
  const LReal a = norm(x), b = norm(y), c = norm(difference(x, y));
  return 0 < a && a < b && b < c && c <= 1 + 1e-15L;
}

struct IntensityResult {
  std::vector<LPoint> points;
  double density_factor = 0.0;  // phi
  double grad_dc = 0.0;         // DC of the stacked gradients
  MCValue det_factor;
  double J = 0.0;
  double std_error = 0.0;
  Geometry geometry;
};

struct ThreePointOptions {
  DetMCOptions mc{20000, 2000000, 10000, 0.05, 1};
  double closest_approach = 1e-2;
};

/// Three-point intensity J at the given points, in the given order.
inline IntensityResult three_point_raw(const CovarianceOracle<LReal>& oracle, const DeterministicField& p,
                                       const LPoint& a, const LPoint& b, const LPoint& c, const ThreePointOptions& opt = {}) {
  IntensityResult r;
  r.points = {a, b, c};
  const auto ch = condition_on_critical(oracle, p, r.points);
  r.density_factor = static_cast<double>(ch.density_factor);
  r.grad_dc = static_cast<double>(ch.grad_dc);
  r.det_factor = abs_det_product(GaussianSampler(ch.hessians.mean, ch.hessians.cov), oracle.dim(), 3, opt.mc);
  r.J = r.density_factor * r.det_factor.mean;
  r.std_error = r.density_factor * r.det_factor.std_error;
  r.geometry = geometry_of(difference(b, a), difference(c, a));
  return r;
}

/// J(0, x, y) for (x, y) in the region D.
inline IntensityResult three_point_intensity(const CovarianceOracle<LReal>& oracle, const DeterministicField& p,
                                             const LPoint& x, const LPoint& y, const ThreePointOptions& opt = {}) {
  const int d = oracle.dim();
  if (static_cast<int>(x.size()) != d || static_cast<int>(y.size()) != d) throw InvalidArgument("points do not match kernel dimension");
  if (!in_region_D(x, y)) throw OutsideRegionD("need 0 < |x| < |y| < |x - y| <= 1");
  if (norm(x) < opt.closest_approach)
    throw SingularConditioningBlock("|x| = " + std::to_string(static_cast<double>(norm(x))) + " is below the closest approach " +
                                    std::to_string(opt.closest_approach));
  return three_point_raw(oracle, p, LPoint(static_cast<std::size_t>(d), 0), x, y, opt);
}

/// Relabels three distinct points as (origin, x, y) with 0 < |x| < |y| < |x - y|: the origin is the
/// vertex shared by the shortest and middle sides, x ends the shortest side, y ends the middle one.
struct CanonicalTriple {
  LPoint origin, x, y;
};

inline CanonicalTriple canonicalize(const LPoint& a, const LPoint& b, const LPoint& c) {
  const LPoint* P[3] = {&a, &b, &c};
  struct Side {
    LReal len;
    int i, j;
  };
  std::vector<Side> s = {{norm(difference(b, a)), 0, 1}, {norm(difference(c, a)), 0, 2}, {norm(difference(c, b)), 1, 2}};
  std::sort(s.begin(), s.end(), [](const Side& u, const Side& v) { return u.len < v.len; });
  int shared = -1;
  for (int v : {s[0].i, s[0].j})
    if (v == s[1].i || v == s[1].j) shared = v;
  const int xi = s[0].i == shared ? s[0].j : s[0].i;
  const int yi = s[1].i == shared ? s[1].j : s[1].i;
  return {*P[shared], difference(*P[xi], *P[shared]), difference(*P[yi], *P[shared])};
}

// ============================================================================
// Bound checks
// ============================================================================

/// J * |x|^{d-1} |y|^{d-1} (|y| + sin t)^{d-1} / (sqrt|y| + sin t).
inline double boundedness_ratio(const IntensityResult& r, int d) {
  const auto& g = r.geometry;
  const double s = std::sin(g.theta);
  return r.J * std::pow(g.abs_x, d - 1) * std::pow(g.abs_y, d - 1) * std::pow(g.abs_y + s, d - 1) / (std::sqrt(g.abs_y) + s);
}

/// |x|^{2d} |y|^{2(d+1)} (|y| + sin t)^{2(d-1)}.
inline LReal dc_lower_bound_shape(const LPoint& x, const LPoint& y) {
  const int d = static_cast<int>(x.size());
  const Geometry g = geometry_of(x, y);
  const LReal s = d == 1 ? 0 : std::sin(static_cast<LReal>(g.theta));
  return std::pow(norm(x), LReal(2 * d)) * std::pow(norm(y), LReal(2 * (d + 1))) * std::pow(norm(y) + s, LReal(2 * (d - 1)));
}

inline LReal gradient_dc(const CovarianceOracle<LReal>& oracle, const std::vector<LPoint>& points) {
  std::vector<LinearFunctional> desc;
  for (const auto& x : points)
    for (auto& g : gradient_descriptors(x)) desc.push_back(std::move(g));
  return dc(assemble_model(oracle, std::move(desc)).cov);
}

/// Grid over the region D: |y| log-spaced, |x| / |y| and theta on uniform grids, filtered to D.
inline std::vector<std::pair<LPoint, LPoint>> region_D_grid(int d, int n_y, int n_ratio, int n_theta, double min_abs_x) {
  std::vector<std::pair<LPoint, LPoint>> out;
  const double pi = std::numbers::pi;
  for (int iy = 0; iy < n_y; ++iy) {
    const double ay = std::exp(std::log(0.04) + (std::log(0.55) - std::log(0.04)) * iy / std::max(1, n_y - 1));
    for (int ir = 0; ir < n_ratio; ++ir) {
      const double ax = ay * (0.1 + 0.85 * ir / std::max(1, n_ratio - 1));
      if (ax < min_abs_x) continue;
      const int nt = d == 1 ? 1 : n_theta;
      for (int it = 0; it < nt; ++it) {
        const double th = d == 1 ? pi : pi / 3 + 0.02 + (pi - pi / 3 - 0.02) * it / std::max(1, nt - 1);
        LPoint x(static_cast<std::size_t>(d), 0), y(static_cast<std::size_t>(d), 0);
        x[0] = ax;
        y[0] = ay * std::cos(th);
        if (d >= 2) y[1] = ay * std::sin(th);
        if (in_region_D(x, y)) out.emplace_back(x, y);
      }
    }
  }
  return out;
}

struct RayFit {
  std::vector<double> t;
  std::vector<double> value;
  double exponent = 0.0;
};

/// Fits log value(t) against log t.
inline RayFit fit_ray(const std::vector<double>& t, const std::function<LReal(double)>& value) {
  RayFit r;
  r.t = t;
  std::vector<double> lx, ly;
  for (double s : t) {
    const LReal v = value(s);
    r.value.push_back(static_cast<double>(v));
    lx.push_back(std::log(s));
    ly.push_back(static_cast<double>(std::log(v)));
  }
  r.exponent = least_squares(lx, ly).slope;
  return r;
}

struct DcLowerBoundReport {
  std::vector<std::pair<LPoint, LPoint>> grid;
  std::vector<double> dc;
  std::vector<double> ratio;
  double min_ratio = 0.0;
  double max_ratio = 0.0;
  bool pass = false;
};

inline DcLowerBoundReport dc_lower_bound_check(const CovarianceOracle<LReal>& oracle,
                                               const std::vector<std::pair<LPoint, LPoint>>& grid) {
  DcLowerBoundReport r;
  r.grid = grid;
  r.min_ratio = std::numeric_limits<double>::infinity();
  r.max_ratio = 0.0;
  for (const auto& [x, y] : grid) {
    if (norm(x) < 1e-3L) throw InvalidArgument("grid point closer than 1e-3 to the diagonal");
    const LReal v = gradient_dc(oracle, {LPoint(x.size(), 0), x, y});
    const double q = static_cast<double>(v / dc_lower_bound_shape(x, y));
    r.dc.push_back(static_cast<double>(v));
    r.ratio.push_back(q);
    r.min_ratio = std::min(r.min_ratio, q);
    r.max_ratio = std::max(r.max_ratio, q);
  }
  r.pass = r.min_ratio > 0.0 && r.max_ratio / r.min_ratio < 1e4;
  return r;
}

/// Conditional variance of each Hessian entry at the origin given the gradients at (0, x, y) vanish.
inline std::vector<double> conditional_hessian_variances(const CovarianceOracle<LReal>& oracle, const LPoint& x, const LPoint& y) {
  const auto ch = condition_on_critical(oracle, DeterministicField::zero(), {LPoint(x.size(), 0), x, y});
  const int per = static_cast<int>(x.size() * (x.size() + 1) / 2);
  std::vector<double> out;
  for (int k = 0; k < per; ++k) out.push_back(static_cast<double>(ch.hessians.cov(k, k)));
  return out;
}

// ============================================================================
// Divided differences (d = 1)
// ============================================================================

struct DividedDifferenceRow {
  double separation = 0.0;
  double dc_values = 0.0;      // DC(f(x), f(y))
  double dc_factored = 0.0;    // (y - x)^2 DC(f(x), D_{x,y} f)
  double rel_error = 0.0;
  double limit_gap = 0.0;      // |DC(f(x), D_{x,y} f) - DC(f(x), f'(x))|
};

inline std::vector<DividedDifferenceRow> divided_difference_check(const CovarianceOracle<LReal>& oracle, LReal x,
                                                                  const std::vector<double>& separations) {
  if (oracle.dim() != 1) throw UnsupportedDimension("divided differences are one-dimensional");
  const LReal limit = dc(assemble_model(oracle, {LinearFunctional::at({x}, {0}), LinearFunctional::at({x}, {1})}).cov);
  std::vector<DividedDifferenceRow> rows;
  for (double s : separations) {
    const LReal y = x + s;
    const LReal raw = dc(assemble_model(oracle, {LinearFunctional::at({x}, {0}), LinearFunctional::at({y}, {0})}).cov);
    const LReal dd = dc(assemble_model(oracle, {LinearFunctional::at({x}, {0}), LinearFunctional::divided_difference(x, y)}).cov);
    DividedDifferenceRow r;
    r.separation = s;
    r.dc_values = static_cast<double>(raw);
    r.dc_factored = static_cast<double>((y - x) * (y - x) * dd);
    r.rel_error = static_cast<double>(std::abs(raw - (y - x) * (y - x) * dd) / raw);
    r.limit_gap = static_cast<double>(std::abs(dd - limit));
    rows.push_back(r);
  }
  return rows;
}

// ============================================================================
// DC identities
// ============================================================================

struct DcIdentityReport {
  int instances = 0;
  double max_rel_linear_map = 0.0;  // DC(AX) = det(A)^2 DC(X)
  double max_rel_scaling = 0.0;     // DC(aX, Y) = a^{2 m1} DC(X, Y)
  double max_rel_shear = 0.0;       // DC(X + BY, Y) = DC(X, Y)
  double tolerance = 1e-9;
  bool pass() const {
    return max_rel_linear_map <= tolerance && max_rel_scaling <= tolerance && max_rel_shear <= tolerance;
  }
};

/// Random PSD covariance of a vector of size m: S = G G^T with Gaussian G.
inline LMatrix random_covariance(int m, Xoshiro256& rng) {
  std::normal_distribution<double> nd;
  LMatrix G(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) G(i, j) = nd(rng);
  return G * G.transpose() + LMatrix::Identity(m, m) * 0.1L;
}

inline DcIdentityReport dc_identity_suite(int instances, std::uint64_t seed) {
  DcIdentityReport r;
  r.instances = instances;
  Xoshiro256 rng(seed);
  std::normal_distribution<double> nd;
  auto rel = [](LReal a, LReal b) { return static_cast<double>(std::abs(a - b) / std::max(std::abs(b), LReal(1e-300))); };
  for (int k = 0; k < instances; ++k) {
    // DC(AX) with m = 3.
    {
      const LMatrix S = random_covariance(3, rng);
      LMatrix A(3, 3);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) A(i, j) = nd(rng);
      const LMatrix SA = A * S * A.transpose();
      const LReal detA = A.determinant();
      r.max_rel_linear_map = std::max(r.max_rel_linear_map, rel(dc<LReal>((0.5L * (SA + SA.transpose())).eval()), detA * detA * dc(S)));
    }
    // Blocks X (m1) and Y (m2).
    const int m1 = 1 + static_cast<int>(rng() % 3), m2 = 1 + static_cast<int>(rng() % 3);
    const LMatrix S = random_covariance(m1 + m2, rng);
    {
      const LReal a = 0.2L + 2.0L * static_cast<LReal>(rng.uniform());
      LMatrix D = LMatrix::Identity(m1 + m2, m1 + m2);
      D.topLeftCorner(m1, m1) *= a;
      const LMatrix T = D * S * D.transpose();
      r.max_rel_scaling = std::max(r.max_rel_scaling, rel(dc<LReal>((0.5L * (T + T.transpose())).eval()), std::pow(a, LReal(2 * m1)) * dc(S)));
    }
    {
      LMatrix M = LMatrix::Identity(m1 + m2, m1 + m2);
      for (int i = 0; i < m1; ++i)
        for (int j = 0; j < m2; ++j) M(i, m1 + j) = nd(rng);
      const LMatrix T = M * S * M.transpose();
      r.max_rel_shear = std::max(r.max_rel_shear, rel(dc<LReal>((0.5L * (T + T.transpose())).eval()), dc(S)));
    }
  }
  return r;
}

// ============================================================================
// Non-degeneracy
// ============================================================================

struct NondegeneracyRow {
  int vector_id = 0;  // 1..4
  double min_eigenvalue = 0.0;
  bool excluded = false;  // directions v, w not linearly independent
};

struct NondegeneracyReport {
  std::vector<NondegeneracyRow> rows;
  double min_eigenvalue[4] = {0, 0, 0, 0};
  bool all_positive(double threshold = 1e-8) const {
    for (const auto& r : rows)
      if (!r.excluded && !(r.min_eigenvalue > threshold)) return false;
    return true;
  }
};

inline double min_eigenvalue(const LMatrix& S) {
  Eigen::SelfAdjointEigenSolver<LMatrix> es(S, Eigen::EigenvaluesOnly);
  return static_cast<double>(es.eigenvalues().minCoeff());
}

/// The four vectors: (1) gradients at 0, x, y; (2) (grad f(0), Hess f(0), grad f(x));
/// (3) (grad f(0), d_v grad f(0), d_v^2 grad f(0)); (4) (grad f(0), Hess f(0), d_v^2 d_w f(0), d_v d_w^2 f(0)).
inline LMatrix nondegeneracy_covariance(const CovarianceOracle<LReal>& oracle, int id, const LPoint& x, const LPoint& y,
                                        const std::vector<LReal>& v, const std::vector<LReal>& w) {
  const int d = oracle.dim();
  const LPoint o(static_cast<std::size_t>(d), 0);
  std::vector<LinearFunctional> desc = gradient_descriptors(o);
  auto append = [&desc](std::vector<LinearFunctional> more) {
    for (auto& m : more) desc.push_back(std::move(m));
  };
  switch (id) {
    case 1:
      append(gradient_descriptors(x));
      append(gradient_descriptors(y));
      break;
    case 2:
      append(hessian_descriptors(o));
      append(gradient_descriptors(x));
      break;
    case 3:
      for (int i = 0; i < d; ++i) desc.push_back(LinearFunctional::directional(o, {v}, unit_index(d, i)));
      for (int i = 0; i < d; ++i) desc.push_back(LinearFunctional::directional(o, {v, v}, unit_index(d, i)));
      break;
    case 4:
      append(hessian_descriptors(o));
      desc.push_back(LinearFunctional::directional(o, {v, v, w}, zero_index(d)));
      desc.push_back(LinearFunctional::directional(o, {v, w, w}, zero_index(d)));
      break;
    default:
      throw InvalidArgument("non-degeneracy vector id must be 1..4");
  }
  return assemble_model(oracle, std::move(desc)).cov;
}

/// Random probes: points in [-2, 2]^d at mutual distance >= 0.25, unit directions with |sin(v, w)| >= 0.2.
inline NondegeneracyReport nondegeneracy_suite(const CovarianceOracle<LReal>& oracle, int probes, std::uint64_t seed) {
  const int d = oracle.dim();
  NondegeneracyReport rep;
  for (auto& m : rep.min_eigenvalue) m = std::numeric_limits<double>::infinity();
  Xoshiro256 rng(seed);
  std::normal_distribution<double> nd;
  auto rand_point = [&] {
    LPoint p(static_cast<std::size_t>(d));
    for (auto& c : p) c = 4.0L * static_cast<LReal>(rng.uniform()) - 2.0L;
    return p;
  };
  auto rand_dir = [&] {
    std::vector<LReal> v(static_cast<std::size_t>(d));
    LReal n = 0;
    for (auto& c : v) {
      c = nd(rng);
      n += c * c;
    }
    for (auto& c : v) c /= std::sqrt(n);
    return v;
  };
  const LPoint o(static_cast<std::size_t>(d), 0);
  for (int k = 0; k < probes; ++k) {
    LPoint x, y;
    do {
      x = rand_point();
      y = rand_point();
    } while (norm(x) < 0.25L || norm(y) < 0.25L || norm(difference(x, y)) < 0.25L);
    const auto v = rand_dir();
    auto w = rand_dir();
    LReal dot = 0;
    for (int i = 0; i < d; ++i) dot += v[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i)];
    const bool independent = d >= 2 && std::sqrt(std::max<LReal>(0, 1 - dot * dot)) >= 0.2L;
    for (int id = 1; id <= 4; ++id) {
      NondegeneracyRow row;
      row.vector_id = id;
      if (id == 4 && !independent) {
        row.excluded = true;
      } else {
        row.min_eigenvalue = min_eigenvalue(nondegeneracy_covariance(oracle, id, x, y, v, w));
        rep.min_eigenvalue[id - 1] = std::min(rep.min_eigenvalue[id - 1], row.min_eigenvalue);
      }
      rep.rows.push_back(row);
    }
  }
  return rep;
}

// ============================================================================
// Zeros of a 1D field: second moment
// ============================================================================

/// Zeros of the cubic Hermite interpolant on each grid cell of F = f + p over the domain.
inline long count_zeros_1d(const FieldRealization& F) {
  if (F.dim() != 1 || F.max_order() < 1) throw InvalidArgument("zero counting needs a 1D realization with derivatives");
  const auto& v = F.values();
  const auto& g = F.slot(1);
  const double hs = F.node_spacing();
  long zeros = 0;
  constexpr int sub = 8;
  for (std::size_t k = 0; k + 1 < v.size(); ++k) {
    double prev = v[k];
    for (int s = 1; s <= sub; ++s) {
      const double t = static_cast<double>(s) / sub;
      const double h00 = 2 * t * t * t - 3 * t * t + 1, h10 = t * t * t - 2 * t * t + t;
      const double h01 = -2 * t * t * t + 3 * t * t, h11 = t * t * t - t * t;
      const double cur = s == sub ? v[k + 1] : h00 * v[k] + h10 * hs * g[k] + h01 * v[k + 1] + h11 * hs * g[k + 1];
      if ((prev >= 0.0) != (cur >= 0.0)) ++zeros;
      prev = cur;
    }
  }
  return zeros;
}

/// Grid samples of p on the nodes of `like` (value and first derivative).
inline FieldRealization deterministic_on_grid(const DeterministicField& p, const FieldRealization& like) {
  FieldRealization out(like.domain(), like.h(), like.refine(), like.max_order());
  const int d = like.dim();
  std::vector<std::size_t> idx(static_cast<std::size_t>(d));
  LPoint x(static_cast<std::size_t>(d));
  const auto ind = jet_indices(d, like.max_order());
  for (std::size_t f = 0; f < out.shape().size(); ++f) {
    out.shape().unflatten(f, idx);
    for (int i = 0; i < d; ++i) x[static_cast<std::size_t>(i)] = like.coord(i, idx[static_cast<std::size_t>(i)]);
    for (std::size_t s = 0; s < out.slot_count(); ++s) out.slot(s)[f] = static_cast<double>(p(x, ind[s]));
  }
  return out;
}

/// Route (a): N(R)^2 over sampled paths of f + p on [0, R].
inline std::vector<double> zeros_1d_mc_samples(const KernelSpec& spec, const DeterministicField& p, int R, double h,
                                               long trials, std::uint64_t seed, std::size_t workers = default_workers()) {
  if (spec.d != 1) throw UnsupportedDimension("zero counting is one-dimensional");
  const BoxDomain dom({0}, {R});
  return parallel_map<double>(static_cast<std::size_t>(trials), workers, [&](std::size_t t) {
    SampleOptions so;
    so.max_order = 1;
    FieldRealization f = sample_field(spec, dom, h, derive_seed(seed, t), so);
    if (!p.is_zero()) f = sum(f, deterministic_on_grid(p, f));
    return static_cast<double>(count_zeros_1d(f));
  });
}

/// E|N(m1, v1) N(m2, v2)| for a bivariate normal with covariance c, by quadrature over the first coordinate.
inline LReal abs_product_moment(LReal m1, LReal m2, LReal v1, LReal v2, LReal c) {
  if (v1 <= 0) {
    const LReal sd2 = std::sqrt(std::max<LReal>(v2, 0));
    const LReal e2 = sd2 > 0 ? sd2 * std::sqrt(2 / std::numbers::pi_v<LReal>) * std::exp(-m2 * m2 / (2 * v2)) +
                                   m2 * (1 - 2 * static_cast<LReal>(normal_cdf(static_cast<double>(-m2 / sd2))))
                             : std::abs(m2);
    return std::abs(m1) * e2;
  }
  const LReal s1 = std::sqrt(v1);
  const LReal beta = c / v1;
  const LReal rv = std::max<LReal>(v2 - c * c / v1, 0);
  const LReal rs = std::sqrt(rv);
  // E|Y| for Y ~ N(mu, rv).
  auto abs_mean = [&](LReal mu) -> LReal {
    if (rs <= 0) return std::abs(mu);
    return rs * std::sqrt(2 / std::numbers::pi_v<LReal>) * std::exp(-mu * mu / (2 * rv)) +
           mu * (1 - 2 * static_cast<LReal>(normal_cdf(static_cast<double>(-mu / rs))));
  };
  static constexpr double gx[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
                                   0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
  static constexpr double gw[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
                                   0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};
  // Integrate over X = m1 + s1 z, z in [-9, 9], panels split at the kink X = 0.
  std::vector<LReal> breaks{-9, 9};
  const LReal z0 = -m1 / s1;
  if (z0 > -9 && z0 < 9) breaks.push_back(z0);
  for (int k = -8; k <= 8; ++k) breaks.push_back(k);
  std::sort(breaks.begin(), breaks.end());
  LReal total = 0;
  for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
    const LReal lo = breaks[b], hi = breaks[b + 1];
    if (hi - lo <= 0) continue;
    const LReal mid = (lo + hi) / 2, half = (hi - lo) / 2;
    for (int q = 0; q < 8; ++q) {
      const LReal z = mid + half * gx[q];
      const LReal xval = m1 + s1 * z;
      const LReal dens = std::exp(-z * z / 2) / std::sqrt(2 * std::numbers::pi_v<LReal>);
      total += half * gw[q] * dens * std::abs(xval) * abs_mean(m2 + beta * (xval - m1));
    }
  }
  return total;
}

/// First intensity of zeros of F = f + p at x.
inline LReal zero_intensity_1(const CovarianceOracle<LReal>& oracle, const DeterministicField& p, LReal x) {
  const auto m = assemble_model(oracle, {LinearFunctional::at({x}, {0}), LinearFunctional::at({x}, {1})}, p);
  const auto c = condition(m, {0}, LVector::Zero(1));
  const LReal dens = std::exp(-m.mean(0) * m.mean(0) / (2 * m.cov(0, 0))) / std::sqrt(2 * std::numbers::pi_v<LReal> * m.cov(0, 0));
  const LReal sd = std::sqrt(c.cov(0, 0));
  const LReal mu = c.mean(0);
  const LReal e = sd * std::sqrt(2 / std::numbers::pi_v<LReal>) * std::exp(-mu * mu / (2 * c.cov(0, 0))) +
                  mu * (1 - 2 * static_cast<LReal>(normal_cdf(static_cast<double>(-mu / sd))));
  return dens * e;
}

/// Two-point intensity of zeros at (x, y), through (F(x), D_{x,y}F): the density of
/// (F(x), F(y)) at 0 equals that of (F(x), D) at 0 divided by |y - x|.
inline LReal zero_intensity_2(const CovarianceOracle<LReal>& oracle, const DeterministicField& p, LReal x, LReal y) {
  const auto m = assemble_model(oracle,
                                {LinearFunctional::at({x}, {0}), LinearFunctional::divided_difference(x, y),
                                 LinearFunctional::at({x}, {1}), LinearFunctional::at({y}, {1})},
                                p);
  const LMatrix S = m.cov.topLeftCorner(2, 2);
  const LReal dens = gaussian_density(m.mean.head(2), S, LVector::Zero(2)) / std::abs(y - x);
  const auto c = condition(m, {0, 1}, LVector::Zero(2));
  return dens * abs_product_moment(c.mean(0), c.mean(1), c.cov(0, 0), c.cov(1, 1), c.cov(0, 1));
}

struct ZerosQuadrature {
  double first_moment = 0.0;     // E[N]
  double factorial_second = 0.0; // E[N(N - 1)]
  double second_moment = 0.0;    // E[N^2]
};

/// Route (b): E[N^2] = int rho_1 + int int rho_2 over [0, R]^2 with composite Gauss-Legendre,
/// written as 2 * int_0^R dx int_0^{R-x} ds rho_2(x, x + s).
inline ZerosQuadrature zeros_1d_quadrature(const CovarianceOracle<LReal>& oracle, const DeterministicField& p, double R,
                                           double panel = 0.25) {
  if (oracle.dim() != 1) throw UnsupportedDimension("zero counting is one-dimensional");
  static constexpr double gx[6] = {-0.9324695142031521, -0.6612093864662645, -0.2386191860831969,
                                   0.2386191860831969,  0.6612093864662645,  0.9324695142031521};
  static constexpr double gw[6] = {0.1713244923791704, 0.3607615730481386, 0.4679139345726910,
                                   0.4679139345726910, 0.3607615730481386, 0.1713244923791704};
  auto nodes = [&](LReal lo, LReal hi) {
    std::vector<std::pair<LReal, LReal>> out;
    const int n = std::max(1, static_cast<int>(std::ceil(static_cast<double>(hi - lo) / panel)));
    const LReal w = (hi - lo) / n;
    for (int k = 0; k < n; ++k) {
      const LReal mid = lo + (k + 0.5L) * w;
      for (int q = 0; q < 6; ++q) out.emplace_back(mid + w / 2 * gx[q], w / 2 * gw[q]);
    }
    return out;
  };
  const bool stationary = p.is_zero();
  ZerosQuadrature z;
  LReal first = 0, second = 0;
  const auto xs = nodes(0, R);
  for (const auto& [x, wx] : xs) first += wx * zero_intensity_1(oracle, p, x);
  if (stationary) {
    // rho_2(x, x + s) depends on s only: int int = 2 int_0^R (R - s) rho_2(0, s) ds.
    for (const auto& [s, ws] : nodes(0, R)) second += 2 * ws * (R - s) * zero_intensity_2(oracle, p, 0, s);
  } else {
    for (const auto& [x, wx] : xs)
      for (const auto& [s, ws] : nodes(0, R - x)) second += 2 * wx * ws * zero_intensity_2(oracle, p, x, x + s);
  }
  z.first_moment = static_cast<double>(first);
  z.factorial_second = static_cast<double>(second);
  z.second_moment = static_cast<double>(first + second);
  return z;
}

}  // namespace gfc
