#pragma once

// Stability of a pair (g, p) on the strata of D intersected with unit cubes.
//
// (g, p) is stable at level l if at every point x of every stratum F
//   |g(x) - l| >= 2 |p(x)|   or   |grad_F g(x)| >= 2 |grad_F p(x)|,
// with only the first clause on 0-dimensional strata. The predicate is
// evaluated on the grid nodes of each stratum and, when supplied, at the
// stratified critical points of g, where the gradient clause is void and a
// node-only check is blind. The margin of a cube is the smallest, over the
// evaluated points, of the larger of |g - l| / (2|p|) and
// |grad_F g| / (2|grad_F p|): the cube is stable iff margin >= 1, and
// "stable with margin" iff margin >= 1.25.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "gfc/parallel.hpp"
#include "gfc/rng.hpp"
#include "gfc/topology.hpp"
#include "gfc/critical_points.hpp"
#include "gfc/domain.hpp"
#include "gfc/error.hpp"
#include "gfc/sampler.hpp"

namespace gfc {

inline constexpr double kStabilityMarginFactor = 1.25;

struct StabilityWitness {
  Stratum stratum;
  Eigen::VectorXd point;
  double abs_g = 0.0;       // |g - l|
  double abs_p = 0.0;       // |p|
  double grad_g = 0.0;      // |grad_F g|
  double grad_p = 0.0;      // |grad_F p|
};

struct StabilityVerdict {
  CubeIndex cube;
  double level = 0.0;
  bool stable = true;
  double margin = std::numeric_limits<double>::infinity();
  std::optional<StabilityWitness> witness;

  bool stable_with_margin(double factor = kStabilityMarginFactor) const { return margin >= factor; }
};

namespace detail {

inline void apply_predicate(StabilityVerdict& verdict, double abs_g, double abs_p, double grad_g, double grad_p,
                            int free_count, const Eigen::VectorXd& point, const Stratum& stratum) {
  const double inf = std::numeric_limits<double>::infinity();
  const double r_value = abs_p > 0.0 ? abs_g / (2.0 * abs_p) : inf;
  const double r_grad = free_count == 0 ? 0.0 : (grad_p > 0.0 ? grad_g / (2.0 * grad_p) : inf);
  verdict.margin = std::min(verdict.margin, std::max(r_value, r_grad));
  const bool value_clause_fails = abs_g < 2.0 * abs_p;
  const bool grad_clause_fails = free_count == 0 || grad_g < 2.0 * grad_p;
  if (value_clause_fails && grad_clause_fails && verdict.stable) {
    verdict.stable = false;
    verdict.witness = StabilityWitness{stratum, point, abs_g, abs_p, grad_g, grad_p};
  }
}

}  // namespace detail

/// Evaluates the predicate on the grid nodes of D intersected with the closed cube B_v, and at
/// every probe point (typically the stratified critical points of g) lying in that set. Probes
/// are evaluated from the exact jets of g and p.
inline StabilityVerdict check_stability(const FieldRealization& g, const FieldRealization& p, const CubeIndex& cube,
                                        const BoxDomain& domain, double level,
                                        const std::vector<CriticalPointRecord>* probes = nullptr) {
  if (!g.same_grid(p)) throw GridMismatch("g and p are sampled on different grids");
  if (g.max_order() < 1 || p.max_order() < 1) throw MissingDerivatives("stability needs gradient arrays");
  const int d = g.dim();
  StabilityVerdict verdict;
  verdict.cube = cube;
  verdict.level = level;
  const int npu = g.nodes_per_unit();
  std::vector<std::size_t> lo(static_cast<std::size_t>(d)), hi(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const int a = std::max(cube[ui], domain.lower()[ui]);
    const int b = std::min(cube[ui] + 1, domain.upper()[ui]);
    if (b < a) return verdict;
    lo[ui] = static_cast<std::size_t>(a - g.domain().lower()[ui]) * static_cast<std::size_t>(npu);
    hi[ui] = static_cast<std::size_t>(b - g.domain().lower()[ui]) * static_cast<std::size_t>(npu) + 1;
    if (hi[ui] > g.shape().extent(i)) throw DomainNotCovered("cube outside the sampled grid");
  }
  std::vector<std::size_t> idx = lo;
  Eigen::VectorXd point(d);
  do {
    const std::size_t f = g.shape().flat(idx);
    double gg = 0.0, pp = 0.0;
    int free_count = 0;
    Stratum stratum;
    for (int i = 0; i < d; ++i) {
      const std::size_t k = idx[static_cast<std::size_t>(i)];
      point(i) = g.coord(i, k);
      const bool free = k % static_cast<std::size_t>(npu) != 0;  // integer coordinate: fixed axis
      stratum.free.push_back(free);
      stratum.anchor.push_back(static_cast<int>(std::floor(point(i) + (free ? 0.0 : 0.5))));
      if (!free) continue;
      ++free_count;
      const double gi = g.slot(static_cast<std::size_t>(1 + i))[f];
      const double pi = p.slot(static_cast<std::size_t>(1 + i))[f];
      gg += gi * gi;
      pp += pi * pi;
    }
    detail::apply_predicate(verdict, std::abs(g.values()[f] - level), std::abs(p.values()[f]), std::sqrt(gg), std::sqrt(pp),
                            free_count, point, stratum);
  } while (next_index<std::size_t>(idx, lo, hi));

  if (probes) {
    for (const auto& r : *probes) {
      bool inside = true;
      for (int i = 0; i < d && inside; ++i) {
        const double x = r.location(i);
        const auto ui = static_cast<std::size_t>(i);
        inside = x >= std::max(cube[ui], domain.lower()[ui]) && x <= std::min(cube[ui] + 1, domain.upper()[ui]);
      }
      if (!inside) continue;
      const std::span<const double> x(r.location.data(), static_cast<std::size_t>(d));
      const Jet jg = g.jet(x), jp = p.jet(x);
      double gg = 0.0, pp = 0.0;
      Stratum stratum = domain.stratum_of(x);
      stratum.free = r.free_axes;
      for (int i = 0; i < d; ++i) {
        if (!r.free_axes[static_cast<std::size_t>(i)]) continue;
        gg += jg.grad(i) * jg.grad(i);
        pp += jp.grad(i) * jp.grad(i);
      }
      detail::apply_predicate(verdict, std::abs(jg.value - level), std::abs(jp.value), std::sqrt(gg), std::sqrt(pp),
                              r.stratum_dim, r.location, stratum);
    }
  }
  return verdict;
}

/// Verdicts for every cube of V (cubes meeting the interior of D).
inline std::vector<StabilityVerdict> stability_verdicts(const FieldRealization& g, const FieldRealization& p,
                                                        const BoxDomain& domain, double level,
                                                        const std::vector<CriticalPointRecord>* probes = nullptr) {
  std::vector<StabilityVerdict> out;
  for (const auto& v : domain.cubes()) out.push_back(check_stability(g, p, v, domain, level, probes));
  return out;
}

/// Unstable set: cubes v in V with (g, p) unstable on D intersected with B_v. With a factor > 1,
/// cubes that are stable but not by that margin are included as well.
inline std::vector<CubeIndex> unstable_set(const FieldRealization& g, const FieldRealization& p, const BoxDomain& domain,
                                           double level, double margin_factor = 1.0,
                                           const std::vector<CriticalPointRecord>* probes = nullptr) {
  std::vector<CubeIndex> out;
  for (const auto& v : stability_verdicts(g, p, domain, level, probes))
    if (!v.stable || v.margin < margin_factor) out.push_back(v.cube);
  return out;
}

/// Right-hand side of the perturbation bound: sum over cubes of critical points of g and g + p in closed B_v.
inline long unstable_critical_budget(const std::vector<CubeIndex>& unstable, const CriticalPointSet& cg,
                                     const CriticalPointSet& cgp) {
  long total = 0;
  for (const auto& v : unstable) total += count_in_closed_cube(cg.points, v) + count_in_closed_cube(cgp.points, v);
  return total;
}

// ============================================================================
// Perturbation trials
// ============================================================================

struct PerturbationOptions {
  int R = 2;                 // domain Lambda_R
  int max_cube_offset = 6;   // resampled cube drawn uniformly from [-offset, offset - 1]^d
  double level = 0.0;
  int refine = 1;
  double margin_factor = kStabilityMarginFactor;
  std::size_t workers = default_workers();
};

struct PerturbationTrial {
  std::uint64_t seed = 0;
  CubeIndex resampled;
  double scale = 1.0;          // p = scale * (f~ - f)
  long unstable = 0;           // |U|
  long marginal = 0;           // |U with margin| - |U|
  double min_margin = 0.0;
  long n_es_g = 0, n_es_gp = 0, n_ls_g = 0, n_ls_gp = 0;
  long budget = 0;             // RHS over U with margin
  long budget_plain = 0;       // RHS over U
  bool count_invariance_checked = false;  // U with margin is empty
  bool count_invariance_violated = false;
  bool inequality_violated = false;        // with U with margin
  bool inequality_plain_violated = false;  // with U; informational
  std::vector<StabilityVerdict> verdicts;
};

/// One trial: g = f on Lambda_R, p = t (f~_v - f) for a random cube v and t in (0, 1].
/// Checks count invariance when every cube is stable with margin, and the
/// perturbation inequality |N(g) - N(g + p)| <= sum over U of N_c(g) + N_c(g + p) for ES and LS.
inline PerturbationTrial perturbation_trial(const KernelSpec& spec, double h, std::uint64_t seed,
                                            const PerturbationOptions& opt) {
  const int d = spec.d;
  PerturbationTrial tr;
  tr.seed = seed;
  const BoxDomain dom = BoxDomain::centered_cube(d, opt.R);
  // The noise must cover the resampled cube as well as the padded domain.
  const BoxDomain cover = BoxDomain::centered_cube(d, std::max(opt.R, opt.max_cube_offset));
  const auto [lo, hi] = padded_extent(spec, cover);
  auto noise = std::make_shared<const WhiteNoiseGrid>(WhiteNoiseGrid::sample(h, lo, hi, seed));
  SampleOptions so;
  so.refine = opt.refine;
  const FieldRealization g = realize(spec, noise, dom, so);

  Xoshiro256 rng(derive_seed(seed, 0x5AB));
  for (int i = 0; i < d; ++i)
    tr.resampled.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(2 * opt.max_cube_offset)) - opt.max_cube_offset);
  tr.scale = 1.0 - rng.uniform();
  const auto rs = resample_cubes(g, {tr.resampled}, derive_seed(seed, 0x5AC));
  const FieldRealization p = scaled(tr.scale, rs.perturbation);
  const FieldRealization gp = sum(g, p);

  const auto cg = find_critical_points(g, nullptr, dom);
  tr.verdicts = stability_verdicts(g, p, dom, opt.level, &cg.points);
  std::vector<CubeIndex> U, Um;
  tr.min_margin = std::numeric_limits<double>::infinity();
  for (const auto& v : tr.verdicts) {
    tr.min_margin = std::min(tr.min_margin, v.margin);
    if (!v.stable) U.push_back(v.cube);
    if (!v.stable || v.margin < opt.margin_factor) Um.push_back(v.cube);
  }
  tr.unstable = static_cast<long>(U.size());
  tr.marginal = static_cast<long>(Um.size() - U.size());

  tr.n_es_g = count_components(g, dom, opt.level, CountKind::ES).count_interior;
  tr.n_es_gp = count_components(gp, dom, opt.level, CountKind::ES).count_interior;
  if (d <= 2) {
    tr.n_ls_g = count_components(g, dom, opt.level, CountKind::LS).count_interior;
    tr.n_ls_gp = count_components(gp, dom, opt.level, CountKind::LS).count_interior;
  }
  const long diff_es = std::labs(tr.n_es_g - tr.n_es_gp), diff_ls = std::labs(tr.n_ls_g - tr.n_ls_gp);
  if (Um.empty()) {
    tr.count_invariance_checked = true;
    tr.count_invariance_violated = diff_es != 0 || diff_ls != 0;
  }
  if (!Um.empty() || diff_es != 0 || diff_ls != 0) {
    const auto cgp = find_critical_points(gp, nullptr, dom);
    tr.budget = unstable_critical_budget(Um, cg, cgp);
    tr.budget_plain = unstable_critical_budget(U, cg, cgp);
  }
  tr.inequality_violated = diff_es > tr.budget || diff_ls > tr.budget;
  tr.inequality_plain_violated = diff_es > tr.budget_plain || diff_ls > tr.budget_plain;
  return tr;
}

inline std::vector<PerturbationTrial> perturbation_trials(const KernelSpec& spec, double h, long trials, std::uint64_t seed,
                                                          const PerturbationOptions& opt = {}) {
  return parallel_map<PerturbationTrial>(static_cast<std::size_t>(trials), opt.workers, [&](std::size_t t) {
    return perturbation_trial(spec, h, derive_seed(seed, t), opt);
  });
}

struct UnstableProfileRow {
  int distance = 0;  // sup-distance between B_v and B_0, in cubes
  long cubes = 0;
  long unstable = 0;
  double probability = 0.0;
};

/// P(v in U_0) against the cube distance |v|_inf, with p_0 from resampling B_0.
inline std::vector<UnstableProfileRow> unstable_profile(const KernelSpec& spec, double h, double level, int max_distance,
                                                        long trials, std::uint64_t seed, std::size_t workers = default_workers()) {
  const int d = spec.d;
  const BoxDomain dom = BoxDomain::centered_cube(d, max_distance + 1);
  const CubeIndex origin(static_cast<std::size_t>(d), 0);
  const auto per = parallel_map<std::vector<long>>(static_cast<std::size_t>(trials), workers, [&](std::size_t t) {
    const std::uint64_t s = derive_seed(seed, t);
    SampleOptions so;
    so.max_order = 1;
    const FieldRealization f = sample_field(spec, dom, h, s, so);
    const auto rs = resample_cubes(f, {origin}, derive_seed(s, 0xB0));
    std::vector<long> out(static_cast<std::size_t>(2 * (max_distance + 1)), 0);
    for (const auto& v : dom.cubes()) {
      int dist = 0;
      for (int c : v) dist = std::max(dist, c >= 0 ? c : -c - 1);
      if (dist > max_distance) continue;
      out[static_cast<std::size_t>(2 * dist)] += 1;
      out[static_cast<std::size_t>(2 * dist + 1)] += check_stability(f, rs.perturbation, v, dom, level).stable ? 0 : 1;
    }
    return out;
  });
  std::vector<UnstableProfileRow> rows;
  for (int k = 0; k <= max_distance; ++k) {
    UnstableProfileRow r;
    r.distance = k;
    for (const auto& row : per) {
      r.cubes += row[static_cast<std::size_t>(2 * k)];
      r.unstable += row[static_cast<std::size_t>(2 * k + 1)];
    }
    r.probability = r.cubes ? static_cast<double>(r.unstable) / static_cast<double>(r.cubes) : 0.0;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace gfc
