#pragma once

// Monte Carlo experiments on component counts: density (LLN), variance
// scaling, normality of the standardized count, the resampling estimator
// of sigma^2, window stabilization of Delta_0, and moment growth.
//
// Every trial draws its own white noise from derive_seed(base_seed, trial),
// and trial results are reduced in index order, so reports do not depend on
// the worker count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfc/critical_points.hpp"
#include "gfc/domain.hpp"
#include "gfc/error.hpp"
#include "gfc/kernels.hpp"
#include "gfc/parallel.hpp"
#include "gfc/rng.hpp"
#include "gfc/sampler.hpp"
#include "gfc/stats.hpp"
#include "gfc/topology.hpp"

namespace gfc {

struct MCEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  long trials = 0;
  std::uint64_t base_seed = 0;
  nlohmann::json metadata;
  std::vector<double> samples;  // per-trial values, in trial order
};

struct LabOptions {
  int refine = 1;
  std::size_t workers = default_workers();
  bool identical_seeds = false;  // every trial reuses base_seed (determinism check)
  int bootstrap_resamples = 1000;
  double coverage = 0.95;
};

inline std::uint64_t trial_seed(std::uint64_t base, std::size_t trial, const LabOptions& opt) {
  return opt.identical_seeds ? base : derive_seed(base, trial);
}

/// Runs fn(trial, seed) for every trial and returns the values in trial order.
inline std::vector<double> run_trials(long trials, std::uint64_t seed, const LabOptions& opt,
                                      const std::function<double(std::size_t, std::uint64_t)>& fn) {
  if (trials < 1) throw InvalidArgument("trials must be >= 1");
  return parallel_map<double>(static_cast<std::size_t>(trials), opt.workers,
                              [&](std::size_t t) { return fn(t, trial_seed(seed, t, opt)); });
}

inline MCEstimate summarize_trials(std::vector<double> samples, std::uint64_t seed, nlohmann::json metadata = {}) {
  if (samples.size() < 2) throw InvalidArgument("an MC estimate needs >= 2 trials");
  MCEstimate e;
  e.mean = mean(samples);
  e.std_error = std_error(samples);
  e.trials = static_cast<long>(samples.size());
  e.base_seed = seed;
  e.metadata = std::move(metadata);
  e.samples = std::move(samples);
  return e;
}

inline nlohmann::json describe(const KernelSpec& spec, double level, CountKind kind, int R, double h) {
  return {{"kernel", family_name(spec.family)}, {"scale", spec.scale}, {"d", spec.d},
          {"truncation_radius", spec.truncation_radius}, {"level", level}, {"kind", kind_name(kind)},
          {"R", R}, {"h", h}};
}

/// Interior component count of one realization on Lambda_R.
inline long count_trial(const KernelSpec& spec, double level, CountKind kind, int R, double h, std::uint64_t seed,
                        int refine = 1) {
  const BoxDomain dom = BoxDomain::centered_cube(spec.d, R);
  SampleOptions so;
  so.refine = refine;
  so.max_order = 0;
  const FieldRealization f = sample_field(spec, dom, h, seed, so);
  return count_components(f, dom, level, kind).count_interior;
}

inline std::vector<double> count_samples(const KernelSpec& spec, double level, CountKind kind, int R, double h,
                                         long trials, std::uint64_t seed, const LabOptions& opt = {}) {
  return run_trials(trials, seed, opt, [&](std::size_t, std::uint64_t s) {
    return static_cast<double>(count_trial(spec, level, kind, R, h, s, opt.refine));
  });
}

// ----------------------------------------------------------------------------
// Density
// ----------------------------------------------------------------------------

/// Mean of count_interior / (2R)^d.
inline MCEstimate estimate_density(const KernelSpec& spec, double level, CountKind kind, int R, double h, long trials,
                                   std::uint64_t seed, const LabOptions& opt = {}) {
  if (R < 2) throw InvalidArgument("density estimation needs R >= 2");
  const double vol = std::pow(2.0 * R, spec.d);
  auto s = count_samples(spec, level, kind, R, h, trials, seed, opt);
  for (auto& v : s) v /= vol;
  auto meta = describe(spec, level, kind, R, h);
  meta["quantity"] = "count_interior / (2R)^d";
  meta["refine"] = opt.refine;
  return summarize_trials(std::move(s), seed, meta);
}

/// Densities at several levels from shared realizations.
inline std::vector<MCEstimate> level_scan(const KernelSpec& spec, const std::vector<double>& levels, CountKind kind, int R,
                                          double h, long trials, std::uint64_t seed, const LabOptions& opt = {}) {
  const BoxDomain dom = BoxDomain::centered_cube(spec.d, R);
  const double vol = dom.volume();
  std::vector<std::vector<double>> per_trial = parallel_map<std::vector<double>>(
      static_cast<std::size_t>(trials), opt.workers, [&](std::size_t t) {
        SampleOptions so;
        so.refine = opt.refine;
        so.max_order = 0;
        const FieldRealization f = sample_field(spec, dom, h, trial_seed(seed, t, opt), so);
        std::vector<double> out;
        for (double l : levels) out.push_back(static_cast<double>(count_components(f, dom, l, kind).count_interior) / vol);
        return out;
      });
  std::vector<MCEstimate> res;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    std::vector<double> s;
    for (const auto& row : per_trial) s.push_back(row[i]);
    auto meta = describe(spec, levels[i], kind, R, h);
    meta["quantity"] = "count_interior / (2R)^d";
    res.push_back(summarize_trials(std::move(s), seed, meta));
  }
  return res;
}

/// Interior critical points with level >= l per unit volume, estimated on Lambda_R.
inline std::vector<MCEstimate> critical_density_above(const KernelSpec& spec, const std::vector<double>& levels, int R,
                                                      double h, long trials, std::uint64_t seed,
                                                      const LabOptions& opt = {}) {
  const BoxDomain dom = BoxDomain::centered_cube(spec.d, R);
  const double vol = dom.volume();
  std::vector<std::vector<double>> per_trial = parallel_map<std::vector<double>>(
      static_cast<std::size_t>(trials), opt.workers, [&](std::size_t t) {
        SampleOptions so;
        so.refine = opt.refine;
        const FieldRealization f = sample_field(spec, dom, h, trial_seed(seed, t, opt), so);
        CriticalPointOptions co;
        co.boundary_strata = false;
        const auto cps = find_critical_points(f, nullptr, dom, co);
        std::vector<double> out;
        for (double l : levels) {
          long n = 0;
          for (const auto& r : cps.points)
            if (r.stratum_dim == spec.d && r.level >= l) ++n;
          out.push_back(static_cast<double>(n) / vol);
        }
        return out;
      });
  std::vector<MCEstimate> res;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    std::vector<double> s;
    for (const auto& row : per_trial) s.push_back(row[i]);
    nlohmann::json meta = {{"quantity", "interior critical points with level >= l per unit volume"},
                           {"level", levels[i]}, {"R", R}, {"h", h}};
    res.push_back(summarize_trials(std::move(s), seed, meta));
  }
  return res;
}

// ----------------------------------------------------------------------------
// Variance scaling
// ----------------------------------------------------------------------------

struct VarianceRatio {
  int R = 0;
  double volume = 0.0;
  double mean_count = 0.0;
  double ratio = 0.0;  // sample variance / volume
  double std_error = 0.0;
  Interval ci;
  std::vector<double> counts;
};

/// Var[N] / volume with a percentile bootstrap interval.
inline VarianceRatio variance_ratio(std::vector<double> counts, double volume, int resamples, double coverage,
                                    std::uint64_t seed) {
  VarianceRatio v;
  v.volume = volume;
  v.mean_count = mean(counts);
  v.ratio = sample_variance(counts) / volume;
  auto stat = [volume](std::span<const double> x) { return sample_variance(x) / volume; };
  v.ci = bootstrap_ci(counts, stat, resamples, coverage, seed);
  // Delta-method standard error of the sample variance.
  const double n = static_cast<double>(counts.size());
  const double m = v.mean_count;
  double m4 = 0.0;
  for (double c : counts) m4 += std::pow(c - m, 4);
  m4 /= n;
  const double s2 = sample_variance(counts);
  v.std_error = std::sqrt(std::max(0.0, (m4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n)) / volume;
  v.counts = std::move(counts);
  return v;
}

inline std::vector<VarianceRatio> variance_scaling(const KernelSpec& spec, double level, CountKind kind,
                                                   const std::vector<int>& R_list, double h, long trials,
                                                   std::uint64_t seed, const LabOptions& opt = {}) {
  if (R_list.size() < 3) throw InvalidArgument("variance scaling needs >= 3 radii");
  for (std::size_t i = 1; i < R_list.size(); ++i)
    if (R_list[i] <= R_list[i - 1]) throw InvalidArgument("radii must be increasing");
  std::vector<VarianceRatio> out;
  for (std::size_t i = 0; i < R_list.size(); ++i) {
    const int R = R_list[i];
    const std::uint64_t sR = derive_seed(seed, 1000 + static_cast<std::size_t>(R));
    auto v = variance_ratio(count_samples(spec, level, kind, R, h, trials, sR, opt), std::pow(2.0 * R, spec.d),
                            opt.bootstrap_resamples, opt.coverage, derive_seed(sR, 77));
    v.R = R;
    out.push_back(std::move(v));
  }
  return out;
}

// ----------------------------------------------------------------------------
// Normality
// ----------------------------------------------------------------------------

struct NormalityReport {
  long n = 0;
  double mean = 0.0;
  double sd = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  KsResult ks;
  K2Result k2;
  bool jittered = false;
  std::vector<double> standardized;  // sorted, for QQ plots
};

/// Standardizes the sample and tests it against N(0,1). Integer counts are
/// first spread by an independent U(-1/2, 1/2) jitter so the KS statistic is
/// computed against a continuous law; moments use the raw counts.
inline NormalityReport normality_report(const std::vector<double>& x, bool jitter, std::uint64_t seed) {
  if (x.size() < 20) throw InvalidArgument("normality test needs >= 20 samples");
  NormalityReport r;
  r.n = static_cast<long>(x.size());
  const MomentSummary m = summarize(x);
  r.mean = m.mean;
  r.sd = std::sqrt(m.variance);
  r.skewness = m.skewness;
  r.excess_kurtosis = m.excess_kurtosis;
  r.k2 = dagostino_k2(x);
  std::vector<double> y = x;
  if (jitter) {
    Xoshiro256 rng(seed);
    for (auto& v : y) v += rng.uniform() - 0.5;
    r.jittered = true;
  }
  const double my = mean(y), sy = std::sqrt(sample_variance(y));
  if (!(sy > 0.0)) throw InvalidArgument("normality test on a constant sample");
  for (auto& v : y) v = (v - my) / sy;
  r.ks = ks_test_normal(y);
  std::sort(y.begin(), y.end());
  r.standardized = std::move(y);
  return r;
}

inline NormalityReport clt_normality_test(const KernelSpec& spec, double level, CountKind kind, int R, double h,
                                          long trials, std::uint64_t seed, const LabOptions& opt = {}) {
  if (trials < 1000) throw InvalidArgument("normality test needs >= 1000 trials");
  return normality_report(count_samples(spec, level, kind, R, h, trials, seed, opt), true, derive_seed(seed, 0x4B53));
}

// ----------------------------------------------------------------------------
// Resampling estimator of sigma^2
// ----------------------------------------------------------------------------

struct SigmaEstimate {
  double sigma_squared = 0.0;
  double std_error = 0.0;
  long inner_trials = 0;
  long outer_trials = 0;
  int R_win = 0;
  CubeIndex pivot;
  double mean_delta = 0.0;  // E[Delta_0] over all draws, should vanish
  double mean_delta_se = 0.0;
  std::vector<double> products;  // A * B per outer trial
  Interval ci;
};

struct SigmaOptions {
  CubeIndex pivot;  // empty: the origin
  int refine = 1;
  std::size_t workers = default_workers();
  double coverage = 0.95;
};

/// Delta_v(window) = N(f) - N(f~_v) for the noise `noise`, resampling B_v with seed2.
inline long resampling_delta(const KernelSpec& spec, const std::shared_ptr<const WhiteNoiseGrid>& noise,
                             const BoxDomain& window, const CubeIndex& v, std::uint64_t seed2, double level,
                             CountKind kind, int refine) {
  SampleOptions so;
  so.refine = refine;
  so.max_order = 0;
  const FieldRealization f = realize(spec, noise, window, so);
  const auto rs = resample_cubes(f, {v}, seed2);
  return count_components(f, window, level, kind).count_interior -
         count_components(rs.field, window, level, kind).count_interior;
}

/// sigma^2 = E[ E[Delta_0 | F_0]^2 ] at a fixed window Lambda_{R_win} (translated to the pivot).
/// Per outer trial the cubes u <= pivot are frozen; two independent inner sets of draws of the
/// remaining cubes and of the new B_pivot noise give means A and B, and A * B is averaged.
inline SigmaEstimate estimate_sigma_resampling(const KernelSpec& spec, double level, CountKind kind, int R_win, double h,
                                               long outer_trials, long inner_trials, std::uint64_t seed,
                                               const SigmaOptions& opt = {}) {
  if (R_win < spec.truncation_radius + 2.0)
    throw WindowTooSmall("R_win = " + std::to_string(R_win) + " is below T + 2 = " +
                         std::to_string(spec.truncation_radius + 2.0));
  if (outer_trials < 2 || inner_trials < 1) throw InvalidArgument("sigma estimation needs outer >= 2, inner >= 1");
  const int d = spec.d;
  const CubeIndex pivot = opt.pivot.empty() ? CubeIndex(static_cast<std::size_t>(d), 0) : opt.pivot;
  const BoxDomain window = BoxDomain::centered_cube(d, R_win).translated(pivot);
  const auto [lo, hi] = padded_extent(spec, window);

  struct Outer {
    double product = 0.0;
    double delta_sum = 0.0;
    double delta_sq = 0.0;
  };
  const auto outs = parallel_map<Outer>(static_cast<std::size_t>(outer_trials), opt.workers, [&](std::size_t o) {
    const std::uint64_t so = derive_seed(seed, o);
    const WhiteNoiseGrid base = WhiteNoiseGrid::sample(h, lo, hi, so);
    const CubeSplit split = half_space_freeze(base, pivot);
    Outer res;
    double means[2] = {0.0, 0.0};
    for (int member = 0; member < 2; ++member) {
      const std::uint64_t sm = derive_seed(so, static_cast<std::size_t>(member) + 1);
      std::vector<double> deltas;
      for (long i = 0; i < inner_trials; ++i) {
        const std::uint64_t si = derive_seed(sm, static_cast<std::size_t>(i));
        auto noise = std::make_shared<const WhiteNoiseGrid>(redraw_cubes(base, split.free, si));
        const double delta = static_cast<double>(
            resampling_delta(spec, noise, window, pivot, derive_seed(si, 0xB0), level, kind, opt.refine));
        deltas.push_back(delta);
        res.delta_sum += delta;
        res.delta_sq += delta * delta;
      }
      means[member] = mean(deltas);
    }
    res.product = means[0] * means[1];
    return res;
  });

  SigmaEstimate e;
  e.inner_trials = inner_trials;
  e.outer_trials = outer_trials;
  e.R_win = R_win;
  e.pivot = pivot;
  for (const auto& o : outs) e.products.push_back(o.product);
  e.sigma_squared = mean(e.products);
  e.std_error = std_error(e.products);
  e.ci = normal_interval(e.sigma_squared, e.std_error, opt.coverage);
  // Delta draws within an outer trial are correlated, so the SE uses per-outer means.
  std::vector<double> outer_means;
  for (const auto& o : outs) outer_means.push_back(o.delta_sum / (2.0 * static_cast<double>(inner_trials)));
  e.mean_delta = mean(outer_means);
  e.mean_delta_se = std_error(outer_means);
  return e;
}

// ----------------------------------------------------------------------------
// Window stabilization
// ----------------------------------------------------------------------------

struct StabilizationRow {
  int R = 0;
  double fraction_differs = 0.0;  // P(Delta_0(Lambda_R) != Delta_0(Lambda_Rmax))
  double std_error = 0.0;
  double mean_delta = 0.0;
};

struct StabilizationOptions {
  int refine = 1;
  std::size_t workers = default_workers();
  bool identical_resample = false;  // redraw B_0 with the original stream, so Delta = 0
};

inline std::vector<StabilizationRow> stabilization_probe(const KernelSpec& spec, double level, CountKind kind,
                                                         const std::vector<int>& R_list, double h, long trials,
                                                         std::uint64_t seed, const StabilizationOptions& opt = {}) {
  if (R_list.empty()) throw InvalidArgument("stabilization probe needs radii");
  for (std::size_t i = 1; i < R_list.size(); ++i)
    if (R_list[i] <= R_list[i - 1]) throw InvalidArgument("radii must be increasing");
  const int d = spec.d;
  const int Rmax = R_list.back();
  const BoxDomain big = BoxDomain::centered_cube(d, Rmax);
  const CubeIndex origin(static_cast<std::size_t>(d), 0);
  const auto deltas = parallel_map<std::vector<long>>(static_cast<std::size_t>(trials), opt.workers, [&](std::size_t t) {
    const std::uint64_t s = derive_seed(seed, t);
    SampleOptions so;
    so.refine = opt.refine;
    so.max_order = 0;
    const FieldRealization f = sample_field(spec, big, h, s, so);
    const auto rs = resample_cubes(f, {origin}, opt.identical_resample ? s : derive_seed(s, 0xB0));
    std::vector<long> out;
    for (int R : R_list) {
      const BoxDomain w = BoxDomain::centered_cube(d, R);
      out.push_back(count_components(f, w, level, kind).count_interior -
                    count_components(rs.field, w, level, kind).count_interior);
    }
    return out;
  });
  std::vector<StabilizationRow> rows;
  for (std::size_t i = 0; i < R_list.size(); ++i) {
    std::vector<double> differs, delta;
    for (const auto& row : deltas) {
      differs.push_back(row[i] != row.back() ? 1.0 : 0.0);
      delta.push_back(static_cast<double>(row[i]));
    }
    StabilizationRow r;
    r.R = R_list[i];
    r.fraction_differs = mean(differs);
    r.std_error = differs.size() > 1 ? std_error(differs) : 0.0;
    r.mean_delta = mean(delta);
    rows.push_back(r);
  }
  return rows;
}

// ----------------------------------------------------------------------------
// Moment growth
// ----------------------------------------------------------------------------

enum class Quantity { Nc, NES, NLS };

inline const char* quantity_name(Quantity q) {
  switch (q) {
    case Quantity::Nc: return "N_c";
    case Quantity::NES: return "N_ES";
    case Quantity::NLS: return "N_LS";
  }
  return "?";
}

inline Quantity parse_quantity(const std::string& s) {
  if (s == "N_c" || s == "Nc" || s == "nc") return Quantity::Nc;
  if (s == "N_ES" || s == "ES" || s == "es") return Quantity::NES;
  if (s == "N_LS" || s == "LS" || s == "ls") return Quantity::NLS;
  throw InvalidArgument("quantity must be N_c, N_ES or N_LS, got " + s);
}

/// One sample of the quantity on Lambda_R. N_c counts critical points of the open box.
inline double quantity_trial(const KernelSpec& spec, Quantity q, double level, int R, double h, std::uint64_t seed,
                             int refine) {
  const BoxDomain dom = BoxDomain::centered_cube(spec.d, R);
  if (q != Quantity::Nc) return static_cast<double>(count_trial(spec, level, q == Quantity::NES ? CountKind::ES : CountKind::LS, R, h, seed, refine));
  SampleOptions so;
  so.refine = refine;
  const FieldRealization f = sample_field(spec, dom, h, seed, so);
  CriticalPointOptions co;
  co.boundary_strata = false;
  return static_cast<double>(find_critical_points(f, nullptr, dom, co).count_dim(spec.d));
}

struct MomentGrowth {
  Quantity quantity = Quantity::Nc;
  int power = 1;
  std::vector<int> radii;
  std::vector<double> moments;  // E[X^k] per radius
  SlopeEstimate slope;
  std::vector<std::vector<double>> samples;
};

inline MomentGrowth moment_growth(const KernelSpec& spec, Quantity q, int power, const std::vector<int>& R_list,
                                  double level, double h, long trials, std::uint64_t seed, const LabOptions& opt = {}) {
  if (power < 1 || power > 3) throw InvalidArgument("moment power must be 1, 2 or 3");
  MomentGrowth g;
  g.quantity = q;
  g.power = power;
  g.radii = R_list;
  std::vector<double> rd;
  for (int R : R_list) {
    const std::uint64_t sR = derive_seed(seed, 2000 + static_cast<std::size_t>(R));
    auto s = run_trials(trials, sR, opt, [&](std::size_t, std::uint64_t st) {
      return quantity_trial(spec, q, level, R, h, st, opt.refine);
    });
    std::vector<double> p(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) p[i] = std::pow(s[i], power);
    g.moments.push_back(mean(p));
    g.samples.push_back(std::move(s));
    rd.push_back(R);
  }
  g.slope = loglog_moment_slope(rd, g.samples, power, opt.bootstrap_resamples, opt.coverage, derive_seed(seed, 0x51));
  return g;
}

}  // namespace gfc
