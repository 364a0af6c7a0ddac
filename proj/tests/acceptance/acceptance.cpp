// Acceptance run: eight criteria at the stated tolerances, one PASS/FAIL line
// each at the end. Detail lines carry the measured values. Exit status is 0
// only when every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gfc.hpp"

using nlohmann::json;
using namespace gfc;

namespace {

constexpr double kH = 0.25;
constexpr std::uint64_t kSeed = 20240601;

struct Outcome {
  Outcome() = default;
  Outcome(int i, std::string n) : id(i), name(std::move(n)) {}
  int id = 0;
  std::string name;
  bool pass = false;
  std::string summary;
  double seconds = 0.0;
};

__attribute__((format(printf, 1, 2))) void note(const char* fmt, ...) {
  std::va_list args;
  va_start(args, fmt);
  std::printf("    ");
  std::vprintf(fmt, args);
  std::printf("\n");
  std::fflush(stdout);
  va_end(args);
}

const char* verdict(bool ok) { return ok ? "ok" : "FAILED"; }

double combined_se(double a, double b) { return std::sqrt(a * a + b * b); }

// Estimates shared between criteria 2-4 and the discretization guard.
struct Headline {
  std::string name;
  double value = 0.0;
  double se = 0.0;
};

struct Headlines {
  std::vector<Headline> items;
  void add(std::string n, double v, double se) { items.push_back({std::move(n), v, se}); }
};

struct Context {
  std::size_t workers = default_workers();
  json report = json::object();
  // Filled by criterion 3 and reused by criterion 4.
  bool have_var32 = false;
  VarianceRatio var32;
  // Criteria 2-4 at h and at h/2.
  std::map<double, Headlines> headlines;
};

LabOptions lab(const Context& c) {
  LabOptions o;
  o.workers = c.workers;
  return o;
}

// ----------------------------------------------------------------------------
// 1. Sampler fidelity
// ----------------------------------------------------------------------------

Outcome criterion1(Context& ctx) {
  Outcome o{1, "sampler fidelity"};
  const auto spec = bargmann_fock(2);
  const auto dom = BoxDomain::centered_cube(2, 1);
  const long trials = 10000;
  SampleOptions so;
  so.max_order = 0;
  struct Pair {
    double a = 0.0, b = 0.0;
  };
  const auto pairs = parallel_map<Pair>(static_cast<std::size_t>(trials), ctx.workers, [&](std::size_t t) {
    const auto f = sample_field(spec, dom, kH, derive_seed(kSeed, t), so);
    const auto& sh = f.shape();
    const std::size_t mid = sh.extent(0) / 2;
    const std::size_t step = static_cast<std::size_t>(f.nodes_per_unit());
    const std::size_t i0[2] = {mid, mid}, i1[2] = {mid + step, mid};
    return Pair{f.values()[sh.flat(i0)], f.values()[sh.flat(i1)]};
  });
  std::vector<double> a, b;
  for (const auto& p : pairs) {
    a.push_back(p.a);
    b.push_back(p.b);
  }
  const double n = static_cast<double>(trials);
  const double ma = mean(a), mb = mean(b);
  double saa = 0, sbb = 0, sab = 0, m4 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
    m4 += std::pow(a[i] - ma, 4);
  }
  const double var = saa / (n - 1);
  m4 /= n;
  const double var_se = std::sqrt((m4 - var * var) / n);
  const double r = sab / std::sqrt(saa * sbb);
  const double r_se = (1 - r * r) / std::sqrt(n - 3);
  const double target_r = std::exp(-0.5);
  const bool ok_var = std::abs(var - 1.0) <= 5 * var_se;
  const bool ok_r = std::abs(r - target_r) <= 5 * r_se;
  note("Var[f(0)] = %.5f  SE %.5f  target 1  |dev|/SE %.2f  %s", var, var_se, std::abs(var - 1) / var_se, verdict(ok_var));
  note("Corr(f(0), f(1,0)) = %.5f  SE %.5f  target %.5f  |dev|/SE %.2f  %s", r, r_se, target_r,
         std::abs(r - target_r) / r_se, verdict(ok_r));
  o.pass = ok_var && ok_r;
  char buf[160];
  std::snprintf(buf, sizeof buf, "Var %.4f (1), Corr %.4f (%.4f), 1e4 trials, within 5 SE", var, r, target_r);
  o.summary = buf;
  ctx.report["1"] = {{"var", var}, {"var_se", var_se}, {"corr", r}, {"corr_se", r_se}, {"trials", trials}};
  return o;
}

// ----------------------------------------------------------------------------
// 2. Law of large numbers
// ----------------------------------------------------------------------------

struct Lln {
  std::vector<MCEstimate> mu_R;  // R = 8, 16, 32
  std::vector<MCEstimate> mu_level;
  std::vector<MCEstimate> crit_above;
};

const std::vector<int> kRadii{8, 16, 32};
const std::vector<double> kScanLevels{1, 2, 3, 4, 5, 6, 7, 8};
const std::vector<double> kHighLevels{1, 2, 3};

Lln run_lln(Context& ctx, double h, std::uint64_t seed) {
  const auto spec = bargmann_fock(2);
  Lln out;
  for (int R : kRadii)
    out.mu_R.push_back(estimate_density(spec, 0.0, CountKind::ES, R, h, 1000, derive_seed(seed, 100 + R), lab(ctx)));
  out.mu_level = level_scan(spec, kScanLevels, CountKind::ES, 16, h, 1000, derive_seed(seed, 200), lab(ctx));
  out.crit_above = critical_density_above(spec, kHighLevels, 16, h, 300, derive_seed(seed, 300), lab(ctx));
  return out;
}

Outcome criterion2(Context& ctx) {
  Outcome o{2, "law of large numbers"};
  const Lln l = run_lln(ctx, kH, kSeed);
  bool compatible = true, positive = true;
  std::vector<Interval> cis;
  json jr = json::array();
  for (std::size_t i = 0; i < kRadii.size(); ++i) {
    const auto& e = l.mu_R[i];
    cis.push_back(normal_interval(e.mean, e.std_error));
    const bool pos = e.mean - 3 * e.std_error > 0;
    positive = positive && pos;
    note("mu_ES(0) R=%-2d  %.6f  SE %.6f  CI95 [%.6f, %.6f]  mu - 3 SE > 0 %s", kRadii[i], e.mean, e.std_error,
           cis.back().lo, cis.back().hi, verdict(pos));
    jr.push_back({{"R", kRadii[i]}, {"mu", e.mean}, {"se", e.std_error}});
    ctx.headlines[kH].add("mu_ES(0) R=" + std::to_string(kRadii[i]), e.mean, e.std_error);
  }
  for (std::size_t i = 0; i < cis.size(); ++i)
    for (std::size_t j = i + 1; j < cis.size(); ++j) compatible = compatible && cis[i].overlaps(cis[j]);
  note("pairwise CI overlap across R: %s", verdict(compatible));
  {
    // Informational: boundary-excluded counts carry an O(1/R) deficit; fit mu(R) = mu_inf - c / R.
    std::vector<double> inv, mu;
    for (std::size_t i = 0; i < kRadii.size(); ++i) {
      inv.push_back(1.0 / kRadii[i]);
      mu.push_back(l.mu_R[i].mean);
    }
    const auto fit = least_squares(inv, mu);
    note("fit mu(R) = mu_inf + b / R (informational): mu_inf %.6f  b %.5f", fit.intercept, fit.slope);
    ctx.report["2_extrapolation"] = {{"mu_inf", fit.intercept}, {"b", fit.slope}};
  }

  bool monotone = true;
  json jl = json::array();
  for (std::size_t i = 0; i < kScanLevels.size(); ++i) {
    const auto& e = l.mu_level[i];
    bool step_ok = true;
    if (i > 0) {
      const auto& p = l.mu_level[i - 1];
      step_ok = e.mean <= p.mean + 2 * combined_se(e.std_error, p.std_error);
    }
    monotone = monotone && step_ok;
    note("mu_ES(l=%.0f) R=16  %.3e  SE %.1e  %s", kScanLevels[i], e.mean, e.std_error, i > 0 ? verdict(step_ok) : "");
    jl.push_back({{"level", kScanLevels[i]}, {"mu", e.mean}, {"se", e.std_error}});
  }
  const bool tail_small = l.mu_level.back().mean < 1e-3;
  note("non-increasing on l in [1, 8] within 2 SE: %s;  mu(8) < 1e-3: %s", verdict(monotone), verdict(tail_small));

  bool highell = true;
  json jh = json::array();
  for (std::size_t i = 0; i < kHighLevels.size(); ++i) {
    const double l_ = kHighLevels[i];
    const auto it = std::find(kScanLevels.begin(), kScanLevels.end(), l_);
    const auto& mu = l.mu_level[static_cast<std::size_t>(it - kScanLevels.begin())];
    const auto& nc = l.crit_above[i];
    const double se = combined_se(mu.std_error, nc.std_error);
    const bool ok = mu.mean <= nc.mean + 3 * se;
    highell = highell && ok;
    note("l=%.0f  mu_ES %.5f <= E N_c(Lambda_1, [l, inf)) %.5f + 3 x %.5f  %s", l_, mu.mean, nc.mean, se, verdict(ok));
    jh.push_back({{"level", l_}, {"mu", mu.mean}, {"nc_above", nc.mean}, {"se", se}});
    ctx.headlines[kH].add("N_c above l=" + std::to_string(static_cast<int>(l_)) + " per unit volume", nc.mean, nc.std_error);
  }
  o.pass = compatible && positive && monotone && tail_small && highell;
  char buf[200];
  std::snprintf(buf, sizeof buf, "mu_ES(0) = %.5f / %.5f / %.5f at R = 8/16/32; level tail and critical-point bound %s",
                l.mu_R[0].mean, l.mu_R[1].mean, l.mu_R[2].mean, monotone && tail_small && highell ? "hold" : "violated");
  o.summary = buf;
  ctx.report["2"] = {{"mu_R", jr}, {"mu_level", jl}, {"highell", jh}, {"compatible", compatible}, {"positive", positive},
                     {"monotone", monotone}, {"tail_small", tail_small}, {"highell_ok", highell}};
  return o;
}

// ----------------------------------------------------------------------------
// 3. Central limit theorem
// ----------------------------------------------------------------------------

struct Clt {
  std::vector<VarianceRatio> var;
  NormalityReport normal;
};

Clt run_clt(Context& ctx, double h, std::uint64_t seed, CountKind kind) {
  const auto spec = bargmann_fock(2);
  Clt c;
  c.var = variance_scaling(spec, 0.0, kind, kRadii, h, 2000, seed, lab(ctx));
  c.normal = normality_report(c.var.back().counts, true, derive_seed(seed, 0x4B53));
  return c;
}

void print_normality(const NormalityReport& n, bool& ok_skew, bool& ok_kurt, bool& ok_ks) {
  ok_skew = std::abs(n.skewness) < 0.15;
  ok_kurt = std::abs(n.excess_kurtosis) < 0.3;
  ok_ks = n.ks.p_value > 0.01;
  note("R=32, %zu trials: mean %.3f  sd %.3f", n.n, n.mean, n.sd);
  note("skewness %.4f (|.| < 0.15) %s;  excess kurtosis %.4f (|.| < 0.3) %s", n.skewness, verdict(ok_skew),
         n.excess_kurtosis, verdict(ok_kurt));
  note("KS D = %.4f  p = %.4f (> 0.01) %s;  D'Agostino K2 p = %.4f", n.ks.statistic, n.ks.p_value, verdict(ok_ks),
         n.k2.p_value);
}

Outcome criterion3(Context& ctx) {
  Outcome o{3, "central limit theorem"};
  const Clt es = run_clt(ctx, kH, derive_seed(kSeed, 3), CountKind::ES);
  bool ok_skew, ok_kurt, ok_ks;
  note("excursion sets, level 0");
  print_normality(es.normal, ok_skew, ok_kurt, ok_ks);
  bool var_pos = true;
  json jv = json::array();
  for (const auto& v : es.var) {
    const bool ok = v.ci.lo > 0;
    var_pos = var_pos && ok;
    note("Var/Vol R=%-2d  %.5f  SE %.5f  CI95 [%.5f, %.5f]  lower > 0 %s", v.R, v.ratio, v.std_error, v.ci.lo, v.ci.hi,
           verdict(ok));
    jv.push_back({{"R", v.R}, {"ratio", v.ratio}, {"se", v.std_error}, {"ci", {v.ci.lo, v.ci.hi}}, {"mean_count", v.mean_count}});
    ctx.headlines[kH].add("Var/Vol R=" + std::to_string(v.R), v.ratio, v.std_error);
  }
  ctx.var32 = es.var.back();
  ctx.have_var32 = true;

  note("level sets, level 0 (reported, pass-or-flag)");
  const Clt ls = run_clt(ctx, kH, derive_seed(kSeed, 33), CountKind::LS);
  bool ls_skew, ls_kurt, ls_ks;
  print_normality(ls.normal, ls_skew, ls_kurt, ls_ks);
  bool ls_var = true;
  for (const auto& v : ls.var) {
    ls_var = ls_var && v.ci.lo > 0;
    note("LS Var/Vol R=%-2d  %.5f  CI95 [%.5f, %.5f]", v.R, v.ratio, v.ci.lo, v.ci.hi);
  }
  const bool ls_ok = ls_skew && ls_kurt && ls_ks && ls_var;
  note("level-set variant: %s", ls_ok ? "passes the same thresholds" : "FLAGGED");

  o.pass = ok_skew && ok_kurt && ok_ks && var_pos;
  char buf[200];
  std::snprintf(buf, sizeof buf, "skew %.3f, excess kurtosis %.3f, KS p %.3f, Var/Vol lower CI > 0 at all R: %s; LS %s",
                es.normal.skewness, es.normal.excess_kurtosis, es.normal.ks.p_value, var_pos ? "yes" : "no",
                ls_ok ? "passes" : "flagged");
  o.summary = buf;
  const auto nj = [](const NormalityReport& n) {
    return json{{"n", n.n}, {"mean", n.mean}, {"sd", n.sd}, {"skewness", n.skewness}, {"excess_kurtosis", n.excess_kurtosis},
                {"ks_D", n.ks.statistic}, {"ks_p", n.ks.p_value}, {"k2_p", n.k2.p_value}};
  };
  json jlv = json::array();
  for (const auto& v : ls.var) jlv.push_back({{"R", v.R}, {"ratio", v.ratio}, {"ci", {v.ci.lo, v.ci.hi}}});
  ctx.report["3"] = {{"es", nj(es.normal)}, {"var", jv}, {"ls", nj(ls.normal)}, {"ls_var", jlv}, {"ls_ok", ls_ok}};
  ctx.headlines[kH].add("skewness R=32", es.normal.skewness, std::sqrt(6.0 / static_cast<double>(es.normal.n)));
  ctx.headlines[kH].add("excess kurtosis R=32", es.normal.excess_kurtosis, std::sqrt(24.0 / static_cast<double>(es.normal.n)));
  return o;
}

// ----------------------------------------------------------------------------
// 4. Resampling estimate of the limiting variance
// ----------------------------------------------------------------------------

SigmaEstimate run_sigma(Context& ctx, double h, std::uint64_t seed) {
  SigmaOptions so;
  so.workers = ctx.workers;
  return estimate_sigma_resampling(bargmann_fock(2), 0.0, CountKind::ES, 12, h, 400, 50, seed, so);
}

Outcome criterion4(Context& ctx) {
  Outcome o{4, "variance cross-check"};
  const auto e = run_sigma(ctx, kH, derive_seed(kSeed, 4));
  if (!ctx.have_var32) {
    ctx.var32 = variance_ratio(count_samples(bargmann_fock(2), 0.0, CountKind::ES, 32, kH, 2000,
                                             derive_seed(derive_seed(kSeed, 3), 1032), lab(ctx)),
                               64.0 * 64.0, 1000, 0.95, derive_seed(kSeed, 77));
    ctx.var32.R = 32;
  }
  const auto& v = ctx.var32;
  const bool overlap = e.ci.overlaps(v.ci);
  const bool positive = e.sigma_squared - 2 * e.std_error > 0;
  note("sigma^2 (R_win 12, 400 x 2 x 50) = %.5f  SE %.5f  CI95 [%.5f, %.5f]", e.sigma_squared, e.std_error, e.ci.lo,
         e.ci.hi);
  note("mean Delta_0 = %.4f  SE %.4f (martingale difference, expect 0)", e.mean_delta, e.mean_delta_se);
  note("Var/Vol R=32 = %.5f  CI95 [%.5f, %.5f]", v.ratio, v.ci.lo, v.ci.hi);
  note("CIs overlap %s;  sigma^2 - 2 SE > 0 %s", verdict(overlap), verdict(positive));
  ctx.headlines[kH].add("sigma^2", e.sigma_squared, e.std_error);
  o.pass = overlap && positive;
  char buf[200];
  std::snprintf(buf, sizeof buf, "sigma^2 = %.4f +- %.4f vs Var/Vol(R=32) = %.4f [%.4f, %.4f]", e.sigma_squared,
                e.std_error, v.ratio, v.ci.lo, v.ci.hi);
  o.summary = buf;
  ctx.report["4"] = {{"sigma_squared", e.sigma_squared}, {"se", e.std_error}, {"ci", {e.ci.lo, e.ci.hi}},
                     {"mean_delta", e.mean_delta}, {"mean_delta_se", e.mean_delta_se}, {"var32", v.ratio},
                     {"var32_ci", {v.ci.lo, v.ci.hi}}};
  return o;
}

// ----------------------------------------------------------------------------
// 5. Stability lemmas
// ----------------------------------------------------------------------------

Outcome criterion5(Context& ctx) {
  Outcome o{5, "stability lemmas"};
  PerturbationOptions opt;
  opt.workers = ctx.workers;
  const long trials = 1000;
  const auto tr = perturbation_trials(bargmann_fock(2), kH, trials, derive_seed(kSeed, 5), opt);
  long checked = 0, v21 = 0, v22 = 0, v22_plain = 0, with_changes = 0;
  for (const auto& t : tr) {
    checked += t.count_invariance_checked;
    v21 += t.count_invariance_violated;
    v22 += t.inequality_violated;
    v22_plain += t.inequality_plain_violated;
    with_changes += (t.n_es_g != t.n_es_gp) || (t.n_ls_g != t.n_ls_gp);
  }
  note("%ld trials on Lambda_2; %ld with every cube stable with margin (invariance checked)", trials, checked);
  note("count-invariance violations: %ld", v21);
  note("inequality violations (unstable set with margin): %ld", v22);
  note("trials where a count changed: %ld;  inequality violations with the plain unstable set (informational): %ld",
         with_changes, v22_plain);
  o.pass = v21 == 0 && v22 == 0 && checked > 0;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%ld trials, %ld invariance checks, %ld + %ld violations", trials, checked, v21, v22);
  o.summary = buf;
  ctx.report["5"] = {{"trials", trials}, {"checked", checked}, {"invariance_violations", v21},
                     {"inequality_violations", v22}, {"plain_inequality_violations", v22_plain}, {"count_changed", with_changes}};
  return o;
}

// ----------------------------------------------------------------------------
// 6. Moment growth
// ----------------------------------------------------------------------------

Outcome criterion6(Context& ctx) {
  Outcome o{6, "moment growth"};
  const auto spec = bargmann_fock(2);
  const auto n1 = moment_growth(spec, Quantity::Nc, 1, {4, 8, 16, 32}, 0.0, kH, 200, derive_seed(kSeed, 61), lab(ctx));
  const auto n3 = moment_growth(spec, Quantity::Nc, 3, {2, 4, 8, 16}, 0.0, kH, 500, derive_seed(kSeed, 63), lab(ctx));
  const auto e3 = moment_growth(spec, Quantity::NES, 3, {8, 16, 32, 64}, 0.0, kH, 500, derive_seed(kSeed, 64), lab(ctx));
  const bool ok1 = std::abs(n1.slope.slope - 2.0) <= 0.15;
  const bool ok3 = std::abs(n3.slope.slope - 6.0) <= 0.3;
  const bool oke = e3.slope.slope <= 6.3;
  const auto show = [](const char* what, const MomentGrowth& g, const char* target, bool ok) {
    std::string m;
    for (std::size_t i = 0; i < g.radii.size(); ++i) {
      char b[48];
      std::snprintf(b, sizeof b, "%s%d:%.4g", i ? ", " : "", g.radii[i], g.moments[i]);
      m += b;
    }
    note("%s slope %.3f  CI95 [%.3f, %.3f]  target %s  %s  (R:moment %s)", what, g.slope.slope, g.slope.ci.lo,
           g.slope.ci.hi, target, verdict(ok), m.c_str());
  };
  show("E[N_c]   ", n1, "2 +- 0.15", ok1);
  show("E[N_c^3] ", n3, "6 +- 0.3", ok3);
  show("E[N_ES^3]", e3, "<= 6.3", oke);
  // Third moment normalized by R^{3d} should not grow beyond R = 4.
  for (std::size_t i = 0; i < n3.radii.size(); ++i)
    note("E[N_c^3] / R^6 at R=%d: %.4f", n3.radii[i], n3.moments[i] / std::pow(n3.radii[i], 6));
  o.pass = ok1 && ok3 && oke;
  char buf[160];
  std::snprintf(buf, sizeof buf, "slopes %.3f (2 +- 0.15), %.3f (6 +- 0.3), %.3f (<= 6.3)", n1.slope.slope,
                n3.slope.slope, e3.slope.slope);
  o.summary = buf;
  const auto gj = [](const MomentGrowth& g) {
    return json{{"radii", g.radii}, {"moments", g.moments}, {"slope", g.slope.slope}, {"ci", {g.slope.ci.lo, g.slope.ci.hi}}};
  };
  ctx.report["6"] = {{"Nc1", gj(n1)}, {"Nc3", gj(n3)}, {"ES3", gj(e3)}};
  return o;
}

// ----------------------------------------------------------------------------
// 7. Kac-Rice engine
// ----------------------------------------------------------------------------

Outcome criterion7(Context& ctx) {
  Outcome o{7, "Kac-Rice engine"};
  json jr;
  // DC identities.
  const auto ids = dc_identity_suite(1000, derive_seed(kSeed, 71));
  note("DC identities, 1000 instances: max rel err %.2e / %.2e / %.2e (<= 1e-9) %s", ids.max_rel_linear_map,
         ids.max_rel_scaling, ids.max_rel_shear, verdict(ids.pass()));
  jr["dc_identities"] = {ids.max_rel_linear_map, ids.max_rel_scaling, ids.max_rel_shear};

  // Divided-difference factorization and its limit.
  CovarianceOracle<LReal> o1(bargmann_fock(1)), o2(bargmann_fock(2));
  const auto dd = divided_difference_check(o1, 0.2L, {1.0, 0.3, 0.1, 0.03, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4});
  double dd_max = 0;
  std::vector<double> ls, lg;
  for (const auto& r : dd) {
    dd_max = std::max(dd_max, r.rel_error);
    if (r.separation <= 0.1) {
      ls.push_back(std::log(r.separation));
      lg.push_back(std::log(r.limit_gap));
    }
  }
  const double order = least_squares(ls, lg).slope;
  const bool ok_dd = dd_max <= 1e-9 && order >= 0.9;
  note("divided difference: max rel err %.2e over |x-y| in [1e-4, 1];  limit rate exponent %.3f (>= 0.9)  %s", dd_max,
         order, verdict(ok_dd));
  jr["divided_difference"] = {{"max_rel", dd_max}, {"limit_order", order}};

  // One-point intensity against the Monte Carlo critical-point count.
  bool ok_one = true;
  json jo = json::array();
  for (int d : {1, 2}) {
    CovarianceOracle<LReal> od(bargmann_fock(d));
    DetMCOptions mc;
    mc.target_rel_se = 1e-3;
    mc.max_pairs = 5000000;
    mc.seed = derive_seed(kSeed, 720 + d);
    const auto rho = one_point_intensity(od, {}, LPoint(static_cast<std::size_t>(d), 0), mc);
    const double vol = std::pow(8.0, d);
    const long trials = d == 1 ? 4000 : 1500;
    const auto spec = bargmann_fock(d);
    const auto s = run_trials(trials, derive_seed(kSeed, 730 + d), lab(ctx), [&](std::size_t, std::uint64_t st) {
      return quantity_trial(spec, Quantity::Nc, 0.0, 4, kH, st, 1);
    });
    const double m = mean(s), se = std_error(s);
    const double kr = vol * rho.intensity, kr_se = vol * rho.std_error;
    const double cse = combined_se(se, kr_se);
    const bool ok = std::abs(m - kr) <= 3 * cse;
    ok_one = ok_one && ok;
    note("d=%d R=4: (2R)^d rho = %.4f (+- %.4f)  MC E N_c = %.4f  SE %.4f  |diff|/SE %.2f  %s", d, kr, kr_se, m, se,
           std::abs(m - kr) / cse, verdict(ok));
    jo.push_back({{"d", d}, {"kac_rice", kr}, {"kac_rice_se", kr_se}, {"mc", m}, {"mc_se", se}});
  }
  jr["one_point"] = jo;

  // Non-degeneracy.
  const auto nd = nondegeneracy_suite(o2, 100, derive_seed(kSeed, 74));
  const bool ok_nd = nd.all_positive();
  note("non-degeneracy, 100 probes: min eigenvalues %.3e %.3e %.3e %.3e (> 1e-8)  %s", nd.min_eigenvalue[0],
         nd.min_eigenvalue[1], nd.min_eigenvalue[2], nd.min_eigenvalue[3], verdict(ok_nd));
  jr["nondegeneracy"] = {nd.min_eigenvalue[0], nd.min_eigenvalue[1], nd.min_eigenvalue[2], nd.min_eigenvalue[3]};

  // Boundedness of the three-point intensity over the region D.
  ThreePointOptions tp;
  tp.mc.seed = derive_seed(kSeed, 75);
  const auto grid = region_D_grid(2, 8, 5, 8, tp.closest_approach);
  std::vector<double> ratios;
  double worst_rel_se = 0;
  for (const auto& [x, y] : grid) {
    const auto r = three_point_intensity(o2, {}, x, y, tp);
    ratios.push_back(boundedness_ratio(r, 2));
    worst_rel_se = std::max(worst_rel_se, r.std_error / r.J);
  }
  std::vector<double> sorted = ratios;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  const double spread = sorted.back() / median;
  const bool ok_b = grid.size() >= 200 && spread < 50;
  note("three-point bound on %zu D-grid triples (|y| log-spaced 0.04..0.55): ratio min %.3e  median %.3e  max %.3e",
         grid.size(), sorted.front(), median, sorted.back());
  note("max/median = %.1f (< 50)  %s;  worst SE/J %.3f", spread, verdict(ok_b), worst_rel_se);
  jr["boundedness"] = {{"points", grid.size()}, {"min", sorted.front()}, {"median", median}, {"max", sorted.back()},
                       {"max_over_median", spread}};

  // Zeros of the 1D field: Monte Carlo against quadrature, and growth of the second moment.
  const auto spec1 = bargmann_fock(1);
  const std::vector<int> zr{2, 4, 8};
  std::vector<std::vector<double>> zs;
  std::vector<double> zrad;
  bool ok_routes = true;
  json jz = json::array();
  for (int R : zr) {
    auto n = zeros_1d_mc_samples(spec1, {}, R, 1.0 / 16, 20000, derive_seed(kSeed, 760 + R), ctx.workers);
    std::vector<double> sq(n.size());
    for (std::size_t i = 0; i < n.size(); ++i) sq[i] = n[i] * n[i];
    const double m = mean(sq), se = std_error(sq);
    const auto q = zeros_1d_quadrature(o1, {}, R);
    const double dev = std::abs(m - q.second_moment) / se;
    if (R == 2) ok_routes = dev <= 3;
    note("zeros R=%d: MC E[N^2] = %.4f  SE %.4f  quadrature %.4f  |diff|/SE %.2f%s", R, m, se, q.second_moment, dev,
           R == 2 ? (ok_routes ? "  ok" : "  FAILED") : "");
    jz.push_back({{"R", R}, {"mc", m}, {"mc_se", se}, {"quadrature", q.second_moment}, {"first_moment", q.first_moment}});
    zs.push_back(std::move(n));
    zrad.push_back(R);
  }
  const auto zslope = loglog_moment_slope(zrad, zs, 2, 1000, 0.95, derive_seed(kSeed, 77));
  const bool ok_zslope = std::abs(zslope.slope - 2.0) <= 0.2;
  note("slope of log E[N^2] over R in {2, 4, 8}: %.3f  CI95 [%.3f, %.3f]  target 2 +- 0.2  %s", zslope.slope,
         zslope.ci.lo, zslope.ci.hi, verdict(ok_zslope));
  // Informational: where the quadrature's local slope approaches 2.
  std::string local;
  for (double R : {8.0, 16.0, 32.0, 64.0}) {
    const double a = static_cast<double>(zeros_1d_quadrature(o1, {}, R).second_moment);
    const double b = static_cast<double>(zeros_1d_quadrature(o1, {}, 2 * R).second_moment);
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s[%g,%g]:%.3f", local.empty() ? "" : ", ", R, 2 * R, std::log(b / a) / std::log(2.0));
    local += buf;
  }
  note("quadrature local slopes (informational): %s", local.c_str());
  jr["zeros"] = {{"rows", jz}, {"slope", zslope.slope}, {"slope_ci", {zslope.ci.lo, zslope.ci.hi}}, {"local_slopes", local}};

  o.pass = ids.pass() && ok_dd && ok_one && ok_nd && ok_b && ok_routes && ok_zslope;
  std::string failed;
  const std::pair<bool, const char*> parts[] = {{ids.pass(), "DC identities"}, {ok_dd, "divided difference"},
                                                {ok_one, "one-point"},        {ok_nd, "non-degeneracy"},
                                                {ok_b, "boundedness"},        {ok_routes, "zeros routes"},
                                                {ok_zslope, "zeros slope"}};
  for (const auto& [ok, name] : parts)
    if (!ok) failed += std::string(failed.empty() ? "" : ", ") + name;
  o.summary = failed.empty() ? "all sub-checks pass" : "failing sub-checks: " + failed;
  char buf[120];
  std::snprintf(buf, sizeof buf, " (max/median %.1f, zeros slope %.3f)", spread, zslope.slope);
  o.summary += buf;
  ctx.report["7"] = jr;
  return o;
}

// ----------------------------------------------------------------------------
// 8. Discretization guard
// ----------------------------------------------------------------------------

Outcome criterion8(Context& ctx) {
  Outcome o{8, "discretization guard"};
  const double h2 = kH / 2;
  const std::uint64_t seed = derive_seed(kSeed, 8);
  if (ctx.headlines[kH].items.empty()) {
    o.summary = "needs criteria 2-4 in the same run";
    return o;
  }
  auto& half = ctx.headlines[h2];
  const Lln l = run_lln(ctx, h2, derive_seed(seed, 2));
  for (std::size_t i = 0; i < kRadii.size(); ++i)
    half.add("mu_ES(0) R=" + std::to_string(kRadii[i]), l.mu_R[i].mean, l.mu_R[i].std_error);
  for (std::size_t i = 0; i < kHighLevels.size(); ++i)
    half.add("N_c above l=" + std::to_string(static_cast<int>(kHighLevels[i])) + " per unit volume", l.crit_above[i].mean,
             l.crit_above[i].std_error);
  const Clt c = run_clt(ctx, h2, derive_seed(seed, 3), CountKind::ES);
  for (const auto& v : c.var) half.add("Var/Vol R=" + std::to_string(v.R), v.ratio, v.std_error);
  half.add("skewness R=32", c.normal.skewness, std::sqrt(6.0 / static_cast<double>(c.normal.n)));
  half.add("excess kurtosis R=32", c.normal.excess_kurtosis, std::sqrt(24.0 / static_cast<double>(c.normal.n)));
  const auto s = run_sigma(ctx, h2, derive_seed(seed, 4));
  half.add("sigma^2", s.sigma_squared, s.std_error);

  bool all = true;
  long failures = 0, compared = 0;
  json rows = json::array();
  for (const auto& a : ctx.headlines[kH].items) {
    const auto it = std::find_if(half.items.begin(), half.items.end(), [&](const Headline& b) { return b.name == a.name; });
    if (it == half.items.end()) continue;
    const double cse = combined_se(a.se, it->se);
    const bool ok = std::abs(a.value - it->value) <= 2 * cse;
    all = all && ok;
    failures += !ok;
    ++compared;
    note("%-36s h: %.5f  h/2: %.5f  |diff|/SE %.2f  %s", a.name.c_str(), a.value, it->value,
           std::abs(a.value - it->value) / cse, verdict(ok));
    rows.push_back({{"name", a.name}, {"h", a.value}, {"h_se", a.se}, {"h2", it->value}, {"h2_se", it->se}});
  }
  o.pass = all && compared > 0;
  o.summary = std::to_string(compared - failures) + " of " + std::to_string(compared) +
              " headline estimates agree at h = 1/4 and h = 1/8 within 2 combined SE";
  ctx.report["8"] = rows;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::vector<int> only;
  std::string report_path;
  Context ctx;
  app.add_option("--only", only, "run only these criteria (8 needs 2, 3 and 4)");
  app.add_option("--report", report_path, "write measured values as JSON");
  app.add_option("--workers", ctx.workers, "worker threads");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8} : std::set<int>(only.begin(), only.end());

  using Fn = Outcome (*)(Context&);
  const std::pair<int, Fn> all[] = {{1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},
                                    {5, criterion5}, {6, criterion6}, {7, criterion7}, {8, criterion8}};
  std::vector<Outcome> outcomes;
  for (const auto& [id, fn] : all) {
    if (!selected.count(id)) continue;
    std::printf("criterion %d\n", id);
    std::fflush(stdout);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn(ctx);
    } catch (const std::exception& e) {
      o.id = id;
      o.name = "error";
      o.summary = std::string("raised ") + e.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    note("elapsed %.1f s", o.seconds);
    outcomes.push_back(o);
  }

  std::printf("\nsummary (workers = %zu)\n", ctx.workers);
  bool ok = true;
  json js = json::array();
  for (const auto& o : outcomes) {
    std::printf("criterion %d %-22s %s  %s\n", o.id, o.name.c_str(), o.pass ? "PASS" : "FAIL", o.summary.c_str());
    ok = ok && o.pass;
    js.push_back({{"id", o.id}, {"name", o.name}, {"pass", o.pass}, {"summary", o.summary}, {"seconds", o.seconds}});
  }
  if (!report_path.empty()) {
    ctx.report["summary"] = js;
    write_json(report_path, ctx.report);
  }
  return ok ? 0 : 1;
}
