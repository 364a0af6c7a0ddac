#pragma once

// Stratified critical points of a sampled field on a box with its unit-cube
// stratification.
//
// For every family of parallel strata (free axes S, fixed integer coordinates
// elsewhere) the m-cells of the grid restricted to that hyperplane are scanned
// for sign changes of the m components of grad_S g. Candidates are located on
// the multilinear interpolant of the sampled gradient and then polished by
// damped Newton on exact jets of the field, so accepted points satisfy
// |grad_F g| < newton_tol for the field itself rather than for its interpolant.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gfc/domain.hpp"
#include "gfc/error.hpp"
#include "gfc/grid.hpp"
#include "gfc/sampler.hpp"

namespace gfc {

struct CriticalPointRecord {
  Eigen::VectorXd location;
  int stratum_dim = 0;
  std::vector<bool> free_axes;
  double level = 0.0;
  int n_negative = 0;  // inertia of the within-stratum Hessian
  int n_zero = 0;
  int n_positive = 0;
  bool refined = true;
};

struct CriticalPointOptions {
  double newton_tol = 1e-10;
  double dedup_radius = -1.0;    // negative: 1e-3 node spacings (polished roots agree far closer)
  double close_pair_factor = 2.0;  // pairs closer than this many node spacings are flagged
  double candidate_safety = 2.0;  // cells whose min |g_i| exceeds safety * cell-scale bound are skipped
  int max_newton = 40;
  int max_depth = 6;              // box halvings allowed below one node cell
  bool boundary_strata = true;    // include strata of dimension < d
};

struct CriticalPointSet {
  std::vector<CriticalPointRecord> points;
  std::vector<std::pair<std::size_t, std::size_t>> close_pairs;  // flagged for review, never merged
  long unrefined = 0;

  long count_dim(int m) const {
    return static_cast<long>(std::count_if(points.begin(), points.end(), [m](const auto& p) { return p.stratum_dim == m; }));
  }
};

namespace detail {

inline void inertia(const Eigen::MatrixXd& H, CriticalPointRecord& r) {
  r.n_negative = r.n_zero = r.n_positive = 0;
  if (H.rows() == 0) return;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  for (int i = 0; i < H.rows(); ++i) {
    const double e = es.eigenvalues()(i);
    if (std::abs(e) <= 1e-12 * scale) ++r.n_zero;
    else if (e < 0) ++r.n_negative;
    else ++r.n_positive;
  }
}

inline Eigen::VectorXd restrict_vec(const Eigen::VectorXd& v, const std::vector<int>& axes) {
  Eigen::VectorXd out(static_cast<int>(axes.size()));
  for (std::size_t a = 0; a < axes.size(); ++a) out(static_cast<int>(a)) = v(axes[a]);
  return out;
}

inline Eigen::MatrixXd restrict_mat(const Eigen::MatrixXd& M, const std::vector<int>& axes) {
  const int m = static_cast<int>(axes.size());
  Eigen::MatrixXd out(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) out(a, b) = M(axes[static_cast<std::size_t>(a)], axes[static_cast<std::size_t>(b)]);
  return out;
}

/// Damped Newton on exact jets within the hyperplane (free axes only move).
inline std::optional<Eigen::VectorXd> newton_exact(const FieldRealization& g, Eigen::VectorXd x, const std::vector<int>& axes,
                                                   const CriticalPointOptions& opt) {
  std::vector<double> buf(static_cast<std::size_t>(x.size()));
  auto eval = [&](const Eigen::VectorXd& p) {
    for (int i = 0; i < p.size(); ++i) buf[static_cast<std::size_t>(i)] = p(i);
    return g.jet(buf);
  };
  Jet j = eval(x);
  Eigen::VectorXd gr = restrict_vec(j.grad, axes);
  double norm = gr.norm();
  for (int it = 0; it < opt.max_newton; ++it) {
    if (norm < opt.newton_tol) return x;
    const Eigen::MatrixXd H = restrict_mat(j.hess, axes);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(H);
    const Eigen::VectorXd step = lu.solve(gr);
    if (!step.allFinite()) return std::nullopt;
    double t = 1.0;
    bool improved = false;
    for (int k = 0; k < 12; ++k, t *= 0.5) {
      Eigen::VectorXd y = x;
      for (std::size_t a = 0; a < axes.size(); ++a) y(axes[a]) -= t * step(static_cast<int>(a));
      Jet jy = eval(y);
      Eigen::VectorXd gy = restrict_vec(jy.grad, axes);
      const double ny = gy.norm();
      if (ny < norm) {
        x = y;
        j = std::move(jy);
        gr = std::move(gy);
        norm = ny;
        improved = true;
        break;
      }
    }
    if (!improved) return norm < opt.newton_tol ? std::optional<Eigen::VectorXd>(x) : std::nullopt;
  }
  return norm < opt.newton_tol ? std::optional<Eigen::VectorXd>(x) : std::nullopt;
}

}  // namespace detail

/// Stratified critical points of g (or g + p) on `domain`, sorted by stratum dimension, then location.
inline CriticalPointSet find_critical_points(const FieldRealization& g_in, const FieldRealization* p,
                                             const BoxDomain& domain, const CriticalPointOptions& opt = {}) {
  if (!g_in.has_derivatives() || (p && !p->has_derivatives()))
    throw MissingDerivatives("critical point search needs first and second derivative arrays");
  const FieldRealization g = p ? sum(g_in, *p) : g_in;
  if (!g.source()) throw MissingDerivatives("critical point search needs a pointwise jet source");
  const int d = g.dim();
  const SubGrid sg = sub_grid(g, domain);
  const int npu = g.nodes_per_unit();
  const double hs = g.node_spacing();
  const double dedup = opt.dedup_radius > 0 ? opt.dedup_radius : 1e-3 * hs;

  CriticalPointSet result;
  std::vector<double> xbuf(static_cast<std::size_t>(d));

  // Dimension-0 strata: every lattice point of the closed box.
  {
    std::vector<int> v = domain.lower();
    std::vector<int> hi = domain.upper();
    for (auto& c : hi) ++c;
    std::vector<std::size_t> node(static_cast<std::size_t>(d));
    do {
      CriticalPointRecord r;
      r.location.resize(d);
      for (int i = 0; i < d; ++i) {
        r.location(i) = v[static_cast<std::size_t>(i)];
        node[static_cast<std::size_t>(i)] = static_cast<std::size_t>(v[static_cast<std::size_t>(i)] - g.domain().lower()[static_cast<std::size_t>(i)]) * static_cast<std::size_t>(npu);
      }
      r.stratum_dim = 0;
      r.free_axes.assign(static_cast<std::size_t>(d), false);
      r.level = g.values()[g.shape().flat(node)];
      if (opt.boundary_strata || d == 0) result.points.push_back(std::move(r));
    } while (next_index<int>(v, domain.lower(), hi));
    if (!opt.boundary_strata) result.points.clear();
  }

  // Strata of dimension m >= 1, grouped by free-axis set.
  for (unsigned mask = 1; mask < (1u << d); ++mask) {
    std::vector<int> axes, fixed;
    for (int i = 0; i < d; ++i) ((mask >> i) & 1u ? axes : fixed).push_back(i);
    const int m = static_cast<int>(axes.size());
    if (m < d && !opt.boundary_strata) continue;

    // Enumerate fixed integer coordinates.
    std::vector<int> fix_lo, fix_hi, fix;
    for (int i : fixed) {
      fix_lo.push_back(domain.lower()[static_cast<std::size_t>(i)]);
      fix_hi.push_back(domain.upper()[static_cast<std::size_t>(i)] + 1);
    }
    fix = fix_lo;
    do {
      std::vector<CriticalPointRecord> found;
      // Base node (free axes at the domain's lower corner).
      std::vector<std::size_t> base(static_cast<std::size_t>(d));
      for (int i = 0; i < d; ++i) base[static_cast<std::size_t>(i)] = sg.offset[static_cast<std::size_t>(i)];
      for (std::size_t f = 0; f < fixed.size(); ++f) {
        const int i = fixed[f];
        base[static_cast<std::size_t>(i)] = static_cast<std::size_t>(fix[f] - g.domain().lower()[static_cast<std::size_t>(i)]) * static_cast<std::size_t>(npu);
      }
      std::vector<std::size_t> cell(static_cast<std::size_t>(m), 0), czero(static_cast<std::size_t>(m), 0), cext(static_cast<std::size_t>(m));
      for (int a = 0; a < m; ++a) cext[static_cast<std::size_t>(a)] = sg.shape.extent(axes[static_cast<std::size_t>(a)]) - 1;
      const int corners = 1 << m;
      std::vector<std::size_t> node(static_cast<std::size_t>(d));

      auto jet_at = [&](const Eigen::VectorXd& x) {
        for (int i = 0; i < d; ++i) xbuf[static_cast<std::size_t>(i)] = x(i);
        return g.jet(xbuf);
      };
      auto record = [&](const Eigen::VectorXd& x, bool refined) {
        CriticalPointRecord r;
        r.stratum_dim = m;
        r.free_axes.assign(static_cast<std::size_t>(d), false);
        for (int i : axes) r.free_axes[static_cast<std::size_t>(i)] = true;
        r.location = x;
        r.refined = refined;
        const Jet j = jet_at(x);
        r.level = j.value;
        detail::inertia(detail::restrict_mat(j.hess, axes), r);
        found.push_back(std::move(r));
      };

      // Box search: o is the lower corner, s the side along the free axes, cj the exact jets at
      // the 2^m corners (bit a of the corner index selects the upper end of free axis a).
      std::function<void(const Eigen::VectorXd&, double, const std::vector<Jet>&, int)> search;
      auto subdivide = [&](const Eigen::VectorXd& o, double s, const std::vector<Jet>& cj, int depth) {
        int n3 = 1;
        for (int a = 0; a < m; ++a) n3 *= 3;
        std::vector<Jet> lat(static_cast<std::size_t>(n3));
        for (int k = 0; k < n3; ++k) {
          bool corner = true;
          int c = 0, rest = k;
          Eigen::VectorXd x = o;
          for (int a = 0; a < m; ++a, rest /= 3) {
            const int t = rest % 3;
            if (t == 1) corner = false;
            c |= (t / 2) << a;
            x(axes[static_cast<std::size_t>(a)]) += 0.5 * s * t;
          }
          lat[static_cast<std::size_t>(k)] = corner ? cj[static_cast<std::size_t>(c)] : jet_at(x);
        }
        std::vector<Jet> child(static_cast<std::size_t>(corners));
        for (int b = 0; b < corners; ++b) {
          Eigen::VectorXd co = o;
          for (int a = 0; a < m; ++a) co(axes[static_cast<std::size_t>(a)]) += 0.5 * s * ((b >> a) & 1);
          for (int c = 0; c < corners; ++c) {
            int k = 0, w = 1;
            for (int a = 0; a < m; ++a, w *= 3) k += w * (((b >> a) & 1) + ((c >> a) & 1));
            child[static_cast<std::size_t>(c)] = lat[static_cast<std::size_t>(k)];
          }
          search(co, 0.5 * s, child, depth + 1);
        }
      };
      search = [&](const Eigen::VectorXd& o, double s, const std::vector<Jet>& cj, int depth) {
        // Exclusion test per gradient component: no sign change and too far from zero for the
        // Hessian bound across the box.
        bool strict = true;
        for (int a = 0; a < m; ++a) {
          const int ia = axes[static_cast<std::size_t>(a)];
          double lo = std::numeric_limits<double>::infinity(), hi = -lo, amin = lo;
          for (const Jet& j : cj) {
            lo = std::min(lo, j.grad(ia));
            hi = std::max(hi, j.grad(ia));
            amin = std::min(amin, std::abs(j.grad(ia)));
          }
          if (lo <= 0.0 && hi >= 0.0) continue;
          strict = false;
          double bound = 0.0;
          for (int b = 0; b < m; ++b) {
            double mx = 0.0;
            for (const Jet& j : cj) mx = std::max(mx, std::abs(j.hess(ia, axes[static_cast<std::size_t>(b)])));
            bound += mx;
          }
          if (amin > opt.candidate_safety * s * bound) return;
        }
        // A box where the restricted Hessian determinant keeps one sign holds at most one root in
        // practice; elsewhere roots may pair up near a fold, so the box is split.
        bool simple = true;
        double sign0 = 0.0;
        for (const Jet& j : cj) {
          const double det = detail::restrict_mat(j.hess, axes).determinant();
          const double sg0 = det > 0.0 ? 1.0 : (det < 0.0 ? -1.0 : 0.0);
          if (sg0 == 0.0 || (sign0 != 0.0 && sg0 != sign0)) simple = false;
          if (sign0 == 0.0) sign0 = sg0;
        }
        const bool can_split = depth < opt.max_depth;
        if (!simple && can_split) return subdivide(o, s, cj, depth);

        // Newton on the multilinear interpolant of the corner jets (local coordinates u in [0,1]^m).
        auto interp = [&](const Eigen::VectorXd& u, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
          grad = Eigen::VectorXd::Zero(m);
          hess = Eigen::MatrixXd::Zero(m, m);
          for (int c = 0; c < corners; ++c) {
            double w = 1.0;
            for (int a = 0; a < m; ++a) w *= ((c >> a) & 1) ? u(a) : 1.0 - u(a);
            if (w == 0.0) continue;
            const Jet& j = cj[static_cast<std::size_t>(c)];
            for (int a = 0; a < m; ++a) {
              grad(a) += w * j.grad(axes[static_cast<std::size_t>(a)]);
              for (int b = 0; b < m; ++b) hess(a, b) += w * j.hess(axes[static_cast<std::size_t>(a)], axes[static_cast<std::size_t>(b)]);
            }
          }
        };
        Eigen::VectorXd u = Eigen::VectorXd::Constant(m, 0.5);
        bool stage1 = false;
        {
          Eigen::VectorXd gr;
          Eigen::MatrixXd H;
          for (int it = 0; it < 20; ++it) {
            interp(u.cwiseMax(0.0).cwiseMin(1.0), gr, H);
            Eigen::VectorXd step = Eigen::PartialPivLU<Eigen::MatrixXd>(H).solve(gr) / s;
            if (!step.allFinite()) break;
            const double len = step.lpNorm<Eigen::Infinity>();
            if (len > 0.5) step *= 0.5 / len;
            u -= step;
            if (u.minCoeff() < -1.0 || u.maxCoeff() > 2.0) break;
            if (step.norm() < 1e-9) {
              stage1 = u.minCoeff() >= -0.5 && u.maxCoeff() <= 1.5;
              break;
            }
          }
        }
        if (!stage1) u = Eigen::VectorXd::Constant(m, 0.5);
        Eigen::VectorXd x = o;
        for (int a = 0; a < m; ++a) x(axes[static_cast<std::size_t>(a)]) += u(a) * s;

        const auto polished = detail::newton_exact(g, x, axes, opt);
        if (polished) {
          const Eigen::VectorXd& y = *polished;
          bool in_box = true, in_domain = true;
          for (int a = 0; a < m; ++a) {
            const int i = axes[static_cast<std::size_t>(a)];
            const double lo = domain.lower()[static_cast<std::size_t>(i)], hi = domain.upper()[static_cast<std::size_t>(i)];
            if (!(y(i) > lo && y(i) < hi) || y(i) == std::round(y(i))) in_domain = false;
            const double tol = 1e-9 * s;
            if (y(i) < o(i) - tol || y(i) > o(i) + s + tol) in_box = false;
          }
          if (in_box) {
            if (in_domain) record(y, true);
            return;
          }
        }
        // Newton failed or left the box: split when a sign change suggests a root here, and keep
        // an unrefined record only at the finest level when Newton failed on an interpolant zero.
        if (can_split && (strict || stage1)) return subdivide(o, s, cj, depth);
        if (!can_split && !polished && stage1 && u.minCoeff() >= 0.0 && u.maxCoeff() <= 1.0) {
          Eigen::VectorXd c = o;
          for (int a = 0; a < m; ++a) c(axes[static_cast<std::size_t>(a)]) += 0.5 * s;
          record(c, false);
        }
      };

      std::vector<Jet> cj(static_cast<std::size_t>(corners));
      do {
        for (int c = 0; c < corners; ++c) {
          node = base;
          for (int a = 0; a < m; ++a) node[static_cast<std::size_t>(axes[static_cast<std::size_t>(a)])] += cell[static_cast<std::size_t>(a)] + ((c >> a) & 1);
          const std::size_t f = g.shape().flat(node);
          Jet& j = cj[static_cast<std::size_t>(c)];
          j.value = g.values()[f];
          j.grad = Eigen::VectorXd::Zero(d);
          j.hess = Eigen::MatrixXd::Zero(d, d);
          for (int i : axes) {
            j.grad(i) = g.slot(static_cast<std::size_t>(1 + i))[f];
            for (int k : axes) j.hess(i, k) = g.slot(static_cast<std::size_t>(jet_slot(add_indices(unit_index(d, i), unit_index(d, k)))))[f];
          }
        }
        Eigen::VectorXd o(d);
        for (int i = 0; i < d; ++i) o(i) = g.coord(i, base[static_cast<std::size_t>(i)]);
        for (int a = 0; a < m; ++a) {
          const int i = axes[static_cast<std::size_t>(a)];
          o(i) = g.coord(i, base[static_cast<std::size_t>(i)] + cell[static_cast<std::size_t>(a)]);
        }
        search(o, hs, cj, 0);
      } while (next_index<std::size_t>(cell, czero, cext));

      // Deduplicate within the hyperplane, keeping the first point in lexicographic order.
      std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) {
        return std::lexicographical_compare(a.location.data(), a.location.data() + a.location.size(), b.location.data(),
                                            b.location.data() + b.location.size());
      });
      std::vector<CriticalPointRecord> kept;
      for (auto& r : found) {
        bool dup = false;
        for (const auto& k : kept) {
          if ((k.location - r.location).norm() < dedup) {
            dup = true;
            break;
          }
        }
        if (!dup) kept.push_back(std::move(r));
      }
      for (auto& r : kept) {
        if (!r.refined) ++result.unrefined;
        result.points.push_back(std::move(r));
      }
    } while (!fixed.empty() && next_index<int>(fix, fix_lo, fix_hi));
  }

  std::stable_sort(result.points.begin(), result.points.end(), [](const auto& a, const auto& b) {
    if (a.stratum_dim != b.stratum_dim) return a.stratum_dim < b.stratum_dim;
    return std::lexicographical_compare(a.location.data(), a.location.data() + a.location.size(), b.location.data(),
                                        b.location.data() + b.location.size());
  });
  const double close = opt.close_pair_factor * hs;
  for (std::size_t i = 0; i < result.points.size(); ++i) {
    const auto& a = result.points[i];
    if (a.stratum_dim == 0) continue;
    for (std::size_t k = i + 1; k < result.points.size(); ++k) {
      const auto& b = result.points[k];
      if (b.stratum_dim != a.stratum_dim) break;
      if (b.location(0) - a.location(0) > close) break;
      if (b.free_axes == a.free_axes && (a.location - b.location).norm() < close) result.close_pairs.emplace_back(i, k);
    }
  }
  return result;
}

/// Number of records with level >= l.
inline long count_critical_points_above(const std::vector<CriticalPointRecord>& records, double level) {
  return static_cast<long>(std::count_if(records.begin(), records.end(), [level](const auto& r) { return r.level >= level; }));
}

/// Number of records with stratum dimension d (interior critical points of the open box).
inline long count_interior(const CriticalPointSet& s, int d) { return s.count_dim(d); }

/// Stratified critical points lying in the closed unit cube B_v.
inline long count_in_closed_cube(const std::vector<CriticalPointRecord>& records, const CubeIndex& v) {
  long n = 0;
  for (const auto& r : records) {
    bool in = true;
    for (int i = 0; i < r.location.size(); ++i) {
      const double x = r.location(i);
      if (x < v[static_cast<std::size_t>(i)] || x > v[static_cast<std::size_t>(i)] + 1) {
        in = false;
        break;
      }
    }
    n += in;
  }
  return n;
}

}  // namespace gfc
