// gfcount: command-line front end for the field-counting experiments.
//
// Every subcommand writes report.json (config echo, results, definitions),
// one or more CSV tables and, where meaningful, an SVG plot into
//   $GFC_OUTPUT_ROOT/<subcommand>-<timestamp>-seed<seed>/
// or into --out when given. Exit codes: 0 success, 2 a checked claim failed,
// 1 error.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gfc.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitClaimFailed = 2;

struct Common {
  std::string kernel = "bargmann-fock";
  double scale = 1.0;
  std::string kernel_csv;
  int d = 2;
  double h = 0.25;
  int refine = 1;
  std::uint64_t seed = 1;
  std::size_t workers = gfc::default_workers();
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool kernel_options = true) {
  if (kernel_options) {
    app->add_option("--kernel", c.kernel, "bargmann-fock | gaussian | tabulated")
        ->check(CLI::IsMember({"bargmann-fock", "gaussian", "tabulated"}))
        ->capture_default_str();
    app->add_option("--scale", c.scale, "Gaussian kernel scale s, K(x) = exp(-|x|^2 / (2 s^2))")->capture_default_str();
    app->add_option("--kernel-csv", c.kernel_csv, "CSV of (x_1..x_d, q) rows for --kernel tabulated");
    app->add_option("--d", c.d, "dimension")->check(CLI::Range(1, 3))->capture_default_str();
    app->add_option("--h", c.h, "white-noise cell side (1/h integer)")->capture_default_str();
    app->add_option("--refine", c.refine, "output nodes per noise cell per axis")->capture_default_str();
  }
  app->add_option("--seed", c.seed, "base seed")->capture_default_str();
  app->add_option("--workers", c.workers, "worker threads")->capture_default_str();
  app->add_option("--out", c.out, "output directory (default: $GFC_OUTPUT_ROOT/<subcommand>-<timestamp>-seed<seed>)");
}

gfc::KernelSpec make_kernel(const Common& c) {
  if (c.kernel == "bargmann-fock") return gfc::bargmann_fock(c.d);
  if (c.kernel == "gaussian") return gfc::gaussian_scale(c.d, c.scale);
  if (c.kernel_csv.empty()) throw gfc::ConfigError("--kernel tabulated needs --kernel-csv");
  auto spec = gfc::tabulated(std::make_shared<const gfc::TabulatedKernel>(gfc::TabulatedKernel::from_csv_file(c.kernel_csv, c.d)));
  return spec;
}

json kernel_json(const gfc::KernelSpec& k) {
  return {{"family", gfc::family_name(k.family)},
          {"d", k.d},
          {"scale", k.scale},
          {"truncation_radius", k.truncation_radius},
          {"decay_exponent", std::isinf(k.decay_exponent) ? json("super-polynomial") : json(k.decay_exponent)}};
}

json common_json(const Common& c) {
  return {{"kernel", c.kernel}, {"scale", c.scale}, {"kernel_csv", c.kernel_csv}, {"d", c.d},
          {"h", c.h},           {"refine", c.refine}, {"seed", c.seed}};
}

fs::path output_dir(const std::string& sub, const Common& c) {
  fs::path dir;
  if (!c.out.empty()) {
    dir = c.out;
  } else {
    const char* root = std::getenv("GFC_OUTPUT_ROOT");
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%S", std::gmtime(&now));
    dir = fs::path(root && *root ? root : "gfc-runs") / (sub + "-" + stamp + "-seed" + std::to_string(c.seed));
  }
  fs::create_directories(dir);
  return dir;
}

void finish(const fs::path& dir, const std::string& sub, const json& config, const json& results, const json& definitions,
            bool claims_pass) {
  json report = {{"schema", "gfc.report." + sub + ".v1"},
                 {"subcommand", sub},
                 {"config", config},
                 {"results", results},
                 {"definitions", definitions},
                 {"claims_pass", claims_pass}};
  gfc::write_json(dir / "report.json", report);
  std::cout << sub << ": " << (claims_pass ? "ok" : "claim failed") << "  -> " << dir.string() << "\n";
}

json interval_json(const gfc::Interval& i) { return {{"lo", i.lo}, {"hi", i.hi}}; }

gfc::LPoint parse_point(const std::vector<double>& v) { return gfc::LPoint(v.begin(), v.end()); }

// ----------------------------------------------------------------------------

struct SampleArgs {
  Common c;
  int R = 8;
  int slot = 0;
};

int run_sample(const SampleArgs& a) {
  const auto spec = make_kernel(a.c);
  const auto dom = gfc::BoxDomain::centered_cube(spec.d, a.R);
  gfc::SampleOptions so;
  so.refine = a.c.refine;
  const auto f = gfc::sample_field(spec, dom, a.c.h, a.c.seed, so);
  const auto dir = output_dir("sample", a.c);
  gfc::dump_realization(f, (dir / "grid.bin").string(), static_cast<std::size_t>(a.slot));
  const auto& v = f.values();
  json cfg = common_json(a.c);
  cfg["R"] = a.R;
  cfg["slot"] = a.slot;
  json res = {{"kernel", kernel_json(spec)},
              {"nodes", v.size()},
              {"mean", gfc::mean(v)},
              {"variance", gfc::sample_variance(v)},
              {"grid_file", "grid.bin"}};
  finish(dir, "sample", cfg, res,
         {{"grid.bin", "uint32 d, f64 R, f64 node spacing, u64 seed, then little-endian f64 values in C row-major order"},
          {"variance", "sample variance of f over the grid nodes (spatial, one realization)"}},
         true);
  return 0;
}

struct CountArgs {
  Common c;
  int R = 8;
  std::vector<double> levels{0.0};
  std::string kind = "ES";
  long trials = 1;
};

int run_count(const CountArgs& a) {
  const auto spec = make_kernel(a.c);
  const auto kind = gfc::parse_kind(a.kind);
  const auto dom = gfc::BoxDomain::centered_cube(spec.d, a.R);
  gfc::CsvTable csv("census", {"seed", "R", "h", "level", "kind", "count_interior", "count_boundary"});
  json rows = json::array();
  for (long t = 0; t < a.trials; ++t) {
    const std::uint64_t s = gfc::derive_seed(a.c.seed, static_cast<std::size_t>(t));
    gfc::SampleOptions so;
    so.refine = a.c.refine;
    so.max_order = 0;
    const auto f = gfc::sample_field(spec, dom, a.c.h, s, so);
    for (double l : a.levels) {
      const auto census = gfc::count_components(f, dom, l, kind);
      csv.row(std::to_string(s), a.R, a.c.h, l, gfc::kind_name(kind), census.count_interior, census.count_boundary_touching);
      rows.push_back({{"seed", s}, {"level", l}, {"count_interior", census.count_interior},
                      {"count_boundary", census.count_boundary_touching}});
    }
  }
  const auto dir = output_dir("count", a.c);
  csv.write(dir / "census.csv");
  json cfg = common_json(a.c);
  cfg.update({{"R", a.R}, {"levels", a.levels}, {"kind", a.kind}, {"trials", a.trials}});
  finish(dir, "count", cfg, {{"census", rows}},
         {{"count_interior", "components of the set meeting Lambda_R = [-R, R]^d but not its outermost grid layer"}}, true);
  return 0;
}

struct DensityArgs {
  Common c;
  int R = 16;
  double level = 0.0;
  std::string kind = "ES";
  long trials = 500;
};

int run_density(const DensityArgs& a) {
  const auto spec = make_kernel(a.c);
  gfc::LabOptions opt;
  opt.refine = a.c.refine;
  opt.workers = a.c.workers;
  const auto e = gfc::estimate_density(spec, a.level, gfc::parse_kind(a.kind), a.R, a.c.h, a.trials, a.c.seed, opt);
  const auto dir = output_dir("density", a.c);
  gfc::CsvTable csv("density_trials", {"trial", "density"});
  for (std::size_t i = 0; i < e.samples.size(); ++i) csv.row(i, e.samples[i]);
  csv.write(dir / "trials.csv");
  json cfg = common_json(a.c);
  cfg.update({{"R", a.R}, {"level", a.level}, {"kind", a.kind}, {"trials", a.trials}});
  const auto ci = gfc::normal_interval(e.mean, e.std_error);
  finish(dir, "density", cfg,
         {{"mu_hat", e.mean}, {"std_error", e.std_error}, {"ci95", interval_json(ci)}, {"trials", e.trials},
          {"metadata", e.metadata}},
         {{"mu_hat", "mean over trials of count_interior / (2R)^d, components per unit volume"},
          {"std_error", "sample standard deviation / sqrt(trials)"}},
         true);
  return 0;
}

struct VarArgs {
  Common c;
  std::vector<int> R_list{8, 16, 32};
  double level = 0.0;
  std::string kind = "ES";
  long trials = 500;
};

int run_var_scaling(const VarArgs& a) {
  const auto spec = make_kernel(a.c);
  gfc::LabOptions opt;
  opt.refine = a.c.refine;
  opt.workers = a.c.workers;
  const auto rows = gfc::variance_scaling(spec, a.level, gfc::parse_kind(a.kind), a.R_list, a.c.h, a.trials, a.c.seed, opt);
  const auto dir = output_dir("var-scaling", a.c);
  gfc::CsvTable csv("var_scaling", {"R", "volume", "mean_count", "var_over_vol", "ci_lo", "ci_hi"});
  json out = json::array();
  bool positive = true;
  gfc::svg::Plot plot;
  plot.title = "Var[N] / Vol";
  plot.xlabel = "R";
  plot.ylabel = "Var/Vol";
  plot.logx = true;
  gfc::svg::Series s;
  for (const auto& r : rows) {
    csv.row(r.R, r.volume, r.mean_count, r.ratio, r.ci.lo, r.ci.hi);
    out.push_back({{"R", r.R}, {"mean_count", r.mean_count}, {"var_over_vol", r.ratio}, {"ci95", interval_json(r.ci)}});
    positive = positive && r.ci.lo > 0.0;
    s.x.push_back(r.R);
    s.y.push_back(r.ratio);
    s.err_lo.push_back(r.ci.lo);
    s.err_hi.push_back(r.ci.hi);
  }
  bool compatible = true;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) compatible = compatible && rows[i].ci.overlaps(rows[j].ci);
  plot.series.push_back(s);
  csv.write(dir / "var_scaling.csv");
  gfc::write_text(dir / "var_scaling.svg", gfc::svg::render(plot));
  json cfg = common_json(a.c);
  cfg.update({{"R_list", a.R_list}, {"level", a.level}, {"kind", a.kind}, {"trials", a.trials}});
  finish(dir, "var-scaling", cfg, {{"rows", out}, {"all_lower_ci_positive", positive}, {"mutually_compatible", compatible}},
         {{"var_over_vol", "unbiased sample variance of count_interior divided by (2R)^d"},
          {"ci95", "percentile bootstrap over trials, 1000 resamples"}},
         positive && compatible);
  return positive && compatible ? 0 : kExitClaimFailed;
}

struct CltArgs {
  Common c;
  int R = 32;
  double level = 0.0;
  std::string kind = "ES";
  long trials = 2000;
};

int run_clt(const CltArgs& a) {
  const auto spec = make_kernel(a.c);
  gfc::LabOptions opt;
  opt.refine = a.c.refine;
  opt.workers = a.c.workers;
  const auto r = gfc::clt_normality_test(spec, a.level, gfc::parse_kind(a.kind), a.R, a.c.h, a.trials, a.c.seed, opt);
  const bool pass = std::abs(r.skewness) < 0.15 && std::abs(r.excess_kurtosis) < 0.3 && r.ks.p_value > 0.01;
  const auto dir = output_dir("clt-test", a.c);
  gfc::CsvTable csv("clt_standardized", {"rank", "z"});
  for (std::size_t i = 0; i < r.standardized.size(); ++i) csv.row(i, r.standardized[i]);
  csv.write(dir / "standardized.csv");
  gfc::write_text(dir / "qq.svg", gfc::svg::qq_plot(r.standardized, "standardized count, R = " + std::to_string(a.R)));
  json cfg = common_json(a.c);
  cfg.update({{"R", a.R}, {"level", a.level}, {"kind", a.kind}, {"trials", a.trials}});
  finish(dir, "clt-test", cfg,
         {{"n", r.n}, {"mean", r.mean}, {"sd", r.sd}, {"skewness", r.skewness}, {"excess_kurtosis", r.excess_kurtosis},
          {"ks_statistic", r.ks.statistic}, {"ks_p_value", r.ks.p_value}, {"k2_p_value", r.k2.p_value},
          {"thresholds", {{"abs_skewness", 0.15}, {"abs_excess_kurtosis", 0.3}, {"ks_p_min", 0.01}}}},
         {{"ks_p_value", "asymptotic Kolmogorov distribution, lambda = (sqrt(n) + 0.12 + 0.11/sqrt(n)) D, "
                         "after U(-1/2,1/2) jitter of the integer counts"},
          {"skewness", "g1 of the raw counts"},
          {"excess_kurtosis", "g2 of the raw counts"}},
         pass);
  return pass ? 0 : kExitClaimFailed;
}

struct SigmaArgs {
  Common c;
  int R_win = 12;
  long outer = 400;
  long inner = 50;
  double level = 0.0;
  std::string kind = "ES";
  std::vector<int> pivot;
};

int run_sigma(const SigmaArgs& a) {
  const auto spec = make_kernel(a.c);
  gfc::SigmaOptions opt;
  opt.refine = a.c.refine;
  opt.workers = a.c.workers;
  opt.pivot = a.pivot;
  const auto e = gfc::estimate_sigma_resampling(spec, a.level, gfc::parse_kind(a.kind), a.R_win, a.c.h, a.outer, a.inner,
                                                a.c.seed, opt);
  const auto dir = output_dir("sigma", a.c);
  gfc::CsvTable csv("sigma_products", {"outer_trial", "product"});
  for (std::size_t i = 0; i < e.products.size(); ++i) csv.row(i, e.products[i]);
  csv.write(dir / "products.csv");
  json cfg = common_json(a.c);
  cfg.update({{"R_win", a.R_win}, {"outer", a.outer}, {"inner", a.inner}, {"level", a.level}, {"kind", a.kind},
              {"pivot", e.pivot}});
  const bool positive = e.sigma_squared - 2.0 * e.std_error > 0.0;
  finish(dir, "sigma", cfg,
         {{"sigma_squared", e.sigma_squared}, {"std_error", e.std_error}, {"ci95", interval_json(e.ci)},
          {"mean_delta", e.mean_delta}, {"mean_delta_se", e.mean_delta_se}, {"positive_at_2se", positive}},
         {{"sigma_squared", "mean over outer trials of A*B, A and B independent inner means of "
                            "Delta_0 = N(f) - N(f with B_pivot resampled) on the window, given the cubes u <= pivot"},
          {"std_error", "sample standard deviation of A*B / sqrt(outer)"}},
         positive);
  return positive ? 0 : kExitClaimFailed;
}

struct StabilizeArgs {
  Common c;
  std::vector<int> R_list{3, 5, 7, 9, 11};
  double level = 0.0;
  std::string kind = "ES";
  long trials = 500;
};

int run_stabilize(const StabilizeArgs& a) {
  const auto spec = make_kernel(a.c);
  gfc::StabilizationOptions opt;
  opt.refine = a.c.refine;
  opt.workers = a.c.workers;
  const auto rows = gfc::stabilization_probe(spec, a.level, gfc::parse_kind(a.kind), a.R_list, a.c.h, a.trials, a.c.seed, opt);
  const auto dir = output_dir("stabilize", a.c);
  gfc::CsvTable csv("stabilization", {"R", "fraction_differs", "std_error", "mean_delta"});
  json out = json::array();
  for (const auto& r : rows) {
    csv.row(r.R, r.fraction_differs, r.std_error, r.mean_delta);
    out.push_back({{"R", r.R}, {"fraction_differs", r.fraction_differs}, {"std_error", r.std_error}, {"mean_delta", r.mean_delta}});
  }
  csv.write(dir / "stabilization.csv");
  json cfg = common_json(a.c);
  cfg.update({{"R_list", a.R_list}, {"level", a.level}, {"kind", a.kind}, {"trials", a.trials}});
  finish(dir, "stabilize", cfg, {{"rows", out}},
         {{"fraction_differs", "fraction of trials with Delta_0(Lambda_R) != Delta_0(Lambda_Rmax) on shared noise"}}, true);
  return 0;
}

struct MomentsArgs {
  Common c;
  std::string quantity = "N_c";
  int power = 1;
  std::vector<int> R_list{4, 8, 16, 32};
  double level = 0.0;
  long trials = 200;
};

int run_moments(const MomentsArgs& a) {
  const auto spec = make_kernel(a.c);
  gfc::LabOptions opt;
  opt.refine = a.c.refine;
  opt.workers = a.c.workers;
  const auto g = gfc::moment_growth(spec, gfc::parse_quantity(a.quantity), a.power, a.R_list, a.level, a.c.h, a.trials, a.c.seed, opt);
  const auto dir = output_dir("moments", a.c);
  gfc::CsvTable csv("moments", {"R", "moment"});
  std::vector<double> rx;
  for (std::size_t i = 0; i < g.radii.size(); ++i) {
    csv.row(g.radii[i], g.moments[i]);
    rx.push_back(g.radii[i]);
  }
  csv.write(dir / "moments.csv");
  const auto fit = gfc::least_squares(g.slope.log_x, g.slope.log_y);
  gfc::write_text(dir / "moments.svg", gfc::svg::loglog_plot(rx, g.moments, fit.slope, fit.intercept,
                                                             std::string("E[") + gfc::quantity_name(g.quantity) + "^" +
                                                                 std::to_string(a.power) + "]",
                                                             "R", "moment"));
  json cfg = common_json(a.c);
  cfg.update({{"quantity", a.quantity}, {"power", a.power}, {"R_list", a.R_list}, {"level", a.level}, {"trials", a.trials}});
  finish(dir, "moments", cfg, {{"moments", g.moments}, {"slope", g.slope.slope}, {"slope_ci95", interval_json(g.slope.ci)}},
         {{"slope", "least-squares slope of log E[X^k] against log R"},
          {"N_c", "critical points in the open box Lambda_R"}},
         true);
  return 0;
}

struct KacRiceArgs {
  Common c;
  std::vector<double> x, y;
  int grid_y = 8, grid_ratio = 5, grid_theta = 8;
  double target_rel_se = 0.05;
  double p_amplitude = 0.0;
};

int run_kac_rice(const KacRiceArgs& a) {
  const auto spec = make_kernel(a.c);
  gfc::CovarianceOracle<gfc::LReal> oracle(spec);
  gfc::ThreePointOptions opt;
  opt.mc.target_rel_se = a.target_rel_se;
  opt.mc.seed = a.c.seed;
  gfc::DeterministicField p;
  if (a.p_amplitude != 0.0) p = gfc::DeterministicField::plane_wave(a.p_amplitude, std::vector<double>(static_cast<std::size_t>(spec.d), 1.0), 0.3);
  std::vector<std::pair<gfc::LPoint, gfc::LPoint>> grid;
  if (!a.x.empty() || !a.y.empty()) {
    grid.emplace_back(parse_point(a.x), parse_point(a.y));
  } else {
    grid = gfc::region_D_grid(spec.d, a.grid_y, a.grid_ratio, a.grid_theta, opt.closest_approach);
  }
  gfc::CsvTable csv("kac_rice_grid", {"abs_x", "abs_y", "theta", "DC", "phi", "det_factor", "J", "SE", "bound_ratio"});
  std::vector<double> ratios, hx, hy, hv;
  for (const auto& [x, y] : grid) {
    const auto r = gfc::three_point_intensity(oracle, p, x, y, opt);
    const double br = gfc::boundedness_ratio(r, spec.d);
    csv.row(r.geometry.abs_x, r.geometry.abs_y, r.geometry.theta, r.grad_dc, r.density_factor, r.det_factor.mean, r.J,
            r.std_error, br);
    ratios.push_back(br);
    hx.push_back(r.geometry.abs_y);
    hy.push_back(r.geometry.theta);
    hv.push_back(r.J);
  }
  std::vector<double> sorted = ratios;
  std::sort(sorted.begin(), sorted.end());
  const double spread = sorted.back() / sorted[sorted.size() / 2];
  const bool pass = grid.size() < 2 || spread < 50.0;
  const auto dir = output_dir("kac-rice", a.c);
  csv.write(dir / "intensity.csv");
  if (grid.size() > 1) gfc::write_text(dir / "heatmap.svg", gfc::svg::heatmap(hx, hy, hv, "J(0, x, y)", "|y|", "theta"));
  json cfg = common_json(a.c);
  cfg.update({{"x", a.x}, {"y", a.y}, {"grid_y", a.grid_y}, {"grid_ratio", a.grid_ratio}, {"grid_theta", a.grid_theta},
              {"target_rel_se", a.target_rel_se}, {"p_amplitude", a.p_amplitude}});
  finish(dir, "kac-rice", cfg,
         {{"points", grid.size()}, {"bound_ratio_max", sorted.back()}, {"bound_ratio_median", sorted[sorted.size() / 2]},
          {"max_over_median", spread}},
         {{"J", "three-point intensity phi * E|det Hess F(0) det Hess F(x) det Hess F(y)| given grad F = 0 at all three"},
          {"bound_ratio", "J |x|^{d-1} |y|^{d-1} (|y| + sin theta)^{d-1} / (sqrt|y| + sin theta)"}},
         pass);
  return pass ? 0 : kExitClaimFailed;
}

struct DcSuiteArgs {
  Common c;
  int instances = 1000;
};

int run_dc_suite(const DcSuiteArgs& a) {
  const auto ids = gfc::dc_identity_suite(a.instances, a.c.seed);
  gfc::CovarianceOracle<gfc::LReal> o1(gfc::bargmann_fock(1)), o2(gfc::bargmann_fock(2));
  const auto dd = gfc::divided_difference_check(o1, 0.2L, {1.0, 0.3, 0.1, 0.03, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4});
  double dd_max = 0.0;
  std::vector<double> ls, lg;
  for (const auto& r : dd) {
    dd_max = std::max(dd_max, r.rel_error);
    if (r.separation <= 0.1) {
      ls.push_back(std::log(r.separation));
      lg.push_back(std::log(r.limit_gap));
    }
  }
  const double limit_order = gfc::least_squares(ls, lg).slope;
  const auto lb = gfc::dc_lower_bound_check(o2, gfc::region_D_grid(2, 10, 6, 8, 1e-3));
  const auto ray1 = gfc::fit_ray({1e-1, 3e-2, 1e-2, 3e-3, 1e-3}, [&](double t) {
    return gfc::gradient_dc(o1, {{0.0L}, {gfc::LReal(t)}, {gfc::LReal(2 * t)}}) / gfc::LReal(std::pow(t, 6));
  });
  const auto collinear = gfc::fit_ray({1e-1, 3e-2, 1e-2, 3e-3, 1e-3}, [&](double t) {
    return gfc::gradient_dc(o2, {{0.0L, 0.0L}, {gfc::LReal(t), 0.0L}, {gfc::LReal(-2 * t), 0.0L}});
  });
  const bool pass = ids.pass() && dd_max <= 1e-9 && limit_order >= 0.9 && lb.pass;
  const auto dir = output_dir("dc-suite", a.c);
  gfc::CsvTable csv("divided_difference", {"separation", "dc_values", "dc_factored", "rel_error", "limit_gap"});
  for (const auto& r : dd) csv.row(r.separation, r.dc_values, r.dc_factored, r.rel_error, r.limit_gap);
  csv.write(dir / "divided_difference.csv");
  gfc::CsvTable lbcsv("dc_lower_bound", {"abs_x", "abs_y", "theta", "DC", "ratio"});
  for (std::size_t i = 0; i < lb.grid.size(); ++i) {
    const auto g = gfc::geometry_of(lb.grid[i].first, lb.grid[i].second);
    lbcsv.row(g.abs_x, g.abs_y, g.theta, lb.dc[i], lb.ratio[i]);
  }
  lbcsv.write(dir / "dc_lower_bound.csv");
  json cfg = common_json(a.c);
  cfg["instances"] = a.instances;
  finish(dir, "dc-suite", cfg,
         {{"checks",
           {{{"name", "DC(AX) = det(A)^2 DC(X)"}, {"max_rel_error", ids.max_rel_linear_map}, {"pass", ids.max_rel_linear_map <= 1e-9}},
            {{"name", "DC(aX, Y) = a^(2 m1) DC(X, Y)"}, {"max_rel_error", ids.max_rel_scaling}, {"pass", ids.max_rel_scaling <= 1e-9}},
            {{"name", "DC(X + BY, Y) = DC(X, Y)"}, {"max_rel_error", ids.max_rel_shear}, {"pass", ids.max_rel_shear <= 1e-9}},
            {{"name", "DC(f(x), f(y)) = (x - y)^2 DC(f(x), D_xy f)"}, {"max_rel_error", dd_max}, {"pass", dd_max <= 1e-9}},
            {{"name", "DC(f(x), D_xy f) -> DC(f(x), f'(x))"}, {"observed_order", limit_order}, {"pass", limit_order >= 0.9}},
            {{"name", "DC lower bound ratio on D grid"}, {"min", lb.min_ratio}, {"max", lb.max_ratio}, {"pass", lb.pass}}}},
          {"ray_d1_normalized_exponent", ray1.exponent},
          {"collinear_d2_exponent", collinear.exponent}},
         {{"ray_d1_normalized_exponent", "log-log slope of DC(f'(0), f'(t), f'(2t)) / t^6 in t; 0 means the t^6 shape is sharp"},
          {"collinear_d2_exponent", "log-log slope of DC of gradients at (0, (t,0), (-2t,0))"}},
         pass);
  return pass ? 0 : kExitClaimFailed;
}

struct NondegenArgs {
  Common c;
  int probes = 100;
};

int run_nondegen(const NondegenArgs& a) {
  const auto spec = make_kernel(a.c);
  gfc::CovarianceOracle<gfc::LReal> oracle(spec);
  const auto rep = gfc::nondegeneracy_suite(oracle, a.probes, a.c.seed);
  const auto dir = output_dir("nondegen", a.c);
  gfc::CsvTable csv("nondegeneracy", {"probe", "vector", "min_eigenvalue", "excluded"});
  for (std::size_t i = 0; i < rep.rows.size(); ++i)
    csv.row(i / 4, rep.rows[i].vector_id, rep.rows[i].min_eigenvalue, rep.rows[i].excluded);
  csv.write(dir / "nondegeneracy.csv");
  const bool pass = rep.all_positive();
  json cfg = common_json(a.c);
  cfg["probes"] = a.probes;
  finish(dir, "nondegen", cfg,
         {{"min_eigenvalue", {rep.min_eigenvalue[0], rep.min_eigenvalue[1], rep.min_eigenvalue[2], rep.min_eigenvalue[3]}},
          {"all_positive", pass}},
         {{"vectors", "1: (grad f(0), grad f(x), grad f(y)); 2: (grad f(0), Hess f(0), grad f(x)); "
                      "3: (grad f(0), d_v grad f(0), d_v^2 grad f(0)); 4: (grad f(0), Hess f(0), d_v^2 d_w f(0), d_v d_w^2 f(0))"},
          {"threshold", 1e-8}},
         pass);
  return pass ? 0 : kExitClaimFailed;
}

struct Zeros1dArgs {
  Common c;
  std::vector<int> R_list{2, 4, 8};
  long trials = 20000;
  double p_const = 0.0;
};

int run_zeros_1d(const Zeros1dArgs& a) {
  Common c = a.c;
  c.d = 1;
  const auto spec = make_kernel(c);
  gfc::CovarianceOracle<gfc::LReal> oracle(spec);
  const auto p = a.p_const != 0.0 ? gfc::DeterministicField::constant(a.p_const) : gfc::DeterministicField::zero();
  gfc::CsvTable csv("zeros_1d", {"R", "mc_second_moment", "mc_se", "quadrature_second_moment", "quadrature_first_moment"});
  json rows = json::array();
  std::vector<double> radii;
  std::vector<std::vector<double>> samples;
  bool agree = true;
  for (int R : a.R_list) {
    auto n = gfc::zeros_1d_mc_samples(spec, p, R, c.h, a.trials, gfc::derive_seed(c.seed, static_cast<std::size_t>(R)), c.workers);
    std::vector<double> sq(n.size());
    for (std::size_t i = 0; i < n.size(); ++i) sq[i] = n[i] * n[i];
    const double m = gfc::mean(sq), se = gfc::std_error(sq);
    const auto q = gfc::zeros_1d_quadrature(oracle, p, R);
    const bool ok = std::abs(m - q.second_moment) <= 3.0 * se;
    agree = agree && ok;
    csv.row(R, m, se, q.second_moment, q.first_moment);
    rows.push_back({{"R", R}, {"mc", m}, {"mc_se", se}, {"quadrature", q.second_moment}, {"agree_3se", ok}});
    radii.push_back(R);
    samples.push_back(std::move(n));
  }
  double slope = 0.0;
  gfc::Interval ci;
  if (radii.size() >= 2 && a.p_const == 0.0) {
    const auto s = gfc::loglog_moment_slope(radii, samples, 2, 1000, 0.95, gfc::derive_seed(c.seed, 0x2E));
    slope = s.slope;
    ci = s.ci;
  }
  const auto dir = output_dir("zeros-1d", c);
  csv.write(dir / "zeros_1d.csv");
  json cfg = common_json(c);
  cfg.update({{"R_list", a.R_list}, {"trials", a.trials}, {"p_const", a.p_const}});
  finish(dir, "zeros-1d", cfg, {{"rows", rows}, {"slope", slope}, {"slope_ci95", interval_json(ci)}, {"routes_agree", agree}},
         {{"mc", "mean of N(R)^2 over sampled paths of f + p on [0, R], zeros of the per-cell cubic Hermite interpolant"},
          {"quadrature", "int rho_1 + int int rho_2 over [0, R]^2, rho_2 through (F(x), D_xy F)"},
          {"slope", "least-squares slope of log E[N^2] against log R (MC)"}},
         agree);
  return agree ? 0 : kExitClaimFailed;
}

struct AuditArgs {
  Common c;
  int R = 2;
  long trials = 500;
  double level = 0.0;
};

int run_stability_audit(const AuditArgs& a) {
  const auto spec = make_kernel(a.c);
  gfc::PerturbationOptions opt;
  opt.R = a.R;
  opt.level = a.level;
  opt.refine = a.c.refine;
  opt.workers = a.c.workers;
  const auto trials = gfc::perturbation_trials(spec, a.c.h, a.trials, a.c.seed, opt);
  gfc::CsvTable csv("stability", {"seed", "v", "level", "stable", "margin"});
  gfc::CsvTable tcsv("perturbation_trials",
                     {"seed", "resampled", "scale", "unstable", "marginal", "n_es_g", "n_es_gp", "n_ls_g", "n_ls_gp", "budget",
                      "invariance_checked", "invariance_violated", "inequality_violated"});
  long checked = 0, v21 = 0, v22 = 0, v22_plain = 0;
  for (const auto& t : trials) {
    for (const auto& v : t.verdicts) csv.row(std::to_string(t.seed), gfc::cube_string(v.cube), v.level, v.stable, v.margin);
    tcsv.row(std::to_string(t.seed), gfc::cube_string(t.resampled), t.scale, t.unstable, t.marginal, t.n_es_g, t.n_es_gp,
             t.n_ls_g, t.n_ls_gp, t.budget, t.count_invariance_checked, t.count_invariance_violated, t.inequality_violated);
    checked += t.count_invariance_checked;
    v21 += t.count_invariance_violated;
    v22 += t.inequality_violated;
    v22_plain += t.inequality_plain_violated;
  }
  const auto dir = output_dir("stability-audit", a.c);
  csv.write(dir / "stability.csv");
  tcsv.write(dir / "trials.csv");
  const bool pass = v21 == 0 && v22 == 0;
  json cfg = common_json(a.c);
  cfg.update({{"R", a.R}, {"trials", a.trials}, {"level", a.level}});
  finish(dir, "stability-audit", cfg,
         {{"trials", a.trials}, {"invariance_checked", checked}, {"invariance_violations", v21},
          {"inequality_violations", v22}, {"inequality_violations_unmargined", v22_plain}},
         {{"invariance", "on trials where every cube is stable with margin 1.25, ES and LS counts of g and g + p agree"},
          {"inequality", "|N(g) - N(g + p)| <= sum over unstable-or-marginal cubes of N_c(g) + N_c(g + p) in the closed cube"}},
         pass);
  return pass ? 0 : kExitClaimFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gfcount: Gaussian field component counts, CLT and Kac-Rice experiments"};
  app.set_config("--config", "", "key = value config file; [subcommand] sections apply to that subcommand");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_help_flag("--help", "print this help and exit");  // -h is taken by the cell side
  app.require_subcommand(1);
  std::function<int()> action;

  SampleArgs sample;
  auto* s = app.add_subcommand("sample", "sample one realization and dump it as a binary grid");
  add_common(s, sample.c);
  s->add_option("--R", sample.R, "half side of Lambda_R")->capture_default_str();
  s->add_option("--slot", sample.slot, "derivative slot to dump (0 = f)")->capture_default_str();
  s->callback([&] { action = [&] { return run_sample(sample); }; });

  CountArgs count;
  auto* c = app.add_subcommand("count", "component census of sampled realizations");
  add_common(c, count.c);
  c->add_option("--R", count.R)->capture_default_str();
  c->add_option("--levels", count.levels)->capture_default_str();
  c->add_option("--kind", count.kind, "ES or LS")->capture_default_str();
  c->add_option("--trials", count.trials)->capture_default_str();
  c->callback([&] { action = [&] { return run_count(count); }; });

  DensityArgs density;
  auto* de = app.add_subcommand("density", "component density mu_hat = E[N] / (2R)^d");
  add_common(de, density.c);
  de->add_option("--R", density.R)->capture_default_str();
  de->add_option("--level", density.level)->capture_default_str();
  de->add_option("--kind", density.kind)->capture_default_str();
  de->add_option("--trials", density.trials)->capture_default_str();
  de->callback([&] { action = [&] { return run_density(density); }; });

  VarArgs var;
  auto* va = app.add_subcommand("var-scaling", "Var[N] / (2R)^d across radii");
  add_common(va, var.c);
  va->add_option("--R-list", var.R_list)->capture_default_str();
  va->add_option("--level", var.level)->capture_default_str();
  va->add_option("--kind", var.kind)->capture_default_str();
  va->add_option("--trials", var.trials)->capture_default_str();
  va->callback([&] { action = [&] { return run_var_scaling(var); }; });

  CltArgs clt;
  auto* cl = app.add_subcommand("clt-test", "normality of the standardized count");
  add_common(cl, clt.c);
  cl->add_option("--R", clt.R)->capture_default_str();
  cl->add_option("--level", clt.level)->capture_default_str();
  cl->add_option("--kind", clt.kind)->capture_default_str();
  cl->add_option("--trials", clt.trials)->capture_default_str();
  cl->callback([&] { action = [&] { return run_clt(clt); }; });

  SigmaArgs sigma;
  auto* si = app.add_subcommand("sigma", "resampling estimator of the limiting variance");
  add_common(si, sigma.c);
  si->add_option("--R-win", sigma.R_win)->capture_default_str();
  si->add_option("--outer", sigma.outer)->capture_default_str();
  si->add_option("--inner", sigma.inner)->capture_default_str();
  si->add_option("--level", sigma.level)->capture_default_str();
  si->add_option("--kind", sigma.kind)->capture_default_str();
  si->add_option("--pivot", sigma.pivot, "lexicographic pivot cube (default: origin)");
  si->callback([&] { action = [&] { return run_sigma(sigma); }; });

  StabilizeArgs stab;
  auto* st = app.add_subcommand("stabilize", "window dependence of Delta_0");
  add_common(st, stab.c);
  st->add_option("--R-list", stab.R_list)->capture_default_str();
  st->add_option("--level", stab.level)->capture_default_str();
  st->add_option("--kind", stab.kind)->capture_default_str();
  st->add_option("--trials", stab.trials)->capture_default_str();
  st->callback([&] { action = [&] { return run_stabilize(stab); }; });

  MomentsArgs mom;
  auto* mo = app.add_subcommand("moments", "log-log growth of E[X^k]");
  add_common(mo, mom.c);
  mo->add_option("--quantity", mom.quantity, "N_c, N_ES or N_LS")->capture_default_str();
  mo->add_option("--power", mom.power)->check(CLI::Range(1, 3))->capture_default_str();
  mo->add_option("--R-list", mom.R_list)->capture_default_str();
  mo->add_option("--level", mom.level)->capture_default_str();
  mo->add_option("--trials", mom.trials)->capture_default_str();
  mo->callback([&] { action = [&] { return run_moments(mom); }; });

  KacRiceArgs kr;
  auto* k = app.add_subcommand("kac-rice", "three-point intensity J(0, x, y) on the region D");
  add_common(k, kr.c);
  k->add_option("--x", kr.x, "x coordinates (omit for the D grid)");
  k->add_option("--y", kr.y, "y coordinates");
  k->add_option("--grid-y", kr.grid_y)->capture_default_str();
  k->add_option("--grid-ratio", kr.grid_ratio)->capture_default_str();
  k->add_option("--grid-theta", kr.grid_theta)->capture_default_str();
  k->add_option("--target-rel-se", kr.target_rel_se)->capture_default_str();
  k->add_option("--p-amplitude", kr.p_amplitude, "amplitude of a plane-wave perturbation p")->capture_default_str();
  k->callback([&] { action = [&] { return run_kac_rice(kr); }; });

  DcSuiteArgs dcs;
  auto* dcc = app.add_subcommand("dc-suite", "DC identities, divided differences and lower-bound checks");
  add_common(dcc, dcs.c, false);
  dcc->add_option("--instances", dcs.instances)->capture_default_str();
  dcc->callback([&] { action = [&] { return run_dc_suite(dcs); }; });

  NondegenArgs nd;
  auto* n = app.add_subcommand("nondegen", "non-degeneracy of the four Gaussian vectors");
  add_common(n, nd.c);
  n->add_option("--probes", nd.probes)->capture_default_str();
  n->callback([&] { action = [&] { return run_nondegen(nd); }; });

  Zeros1dArgs z;
  z.c.d = 1;
  z.c.h = 1.0 / 16.0;
  auto* ze = app.add_subcommand("zeros-1d", "second moment of the number of zeros, MC and quadrature");
  add_common(ze, z.c);
  ze->add_option("--R-list", z.R_list)->capture_default_str();
  ze->add_option("--trials", z.trials)->capture_default_str();
  ze->add_option("--p-const", z.p_const, "constant perturbation p")->capture_default_str();
  ze->callback([&] { action = [&] { return run_zeros_1d(z); }; });

  AuditArgs au;
  auto* sa = app.add_subcommand("stability-audit", "perturbation trials for count invariance and the unstable-set bound");
  add_common(sa, au.c);
  sa->add_option("--R", au.R)->capture_default_str();
  sa->add_option("--trials", au.trials)->capture_default_str();
  sa->add_option("--level", au.level)->capture_default_str();
  sa->callback([&] { action = [&] { return run_stability_audit(au); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  try {
    return action ? action() : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
