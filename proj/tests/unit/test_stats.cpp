#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "gfc/clt_lab.hpp"
#include "gfc/parallel.hpp"
#include "gfc/rng.hpp"
#include "gfc/stats.hpp"

using namespace gfc;

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  std::normal_distribution<double> N;
  std::vector<double> x(n);
  for (auto& v : x) v = N(rng);
  return x;
}

}  // namespace

TEST(Rng, SeedDerivationIsStatelessAndDistinct) {
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
  EXPECT_NE(derive_seed(7, 3), derive_seed(7, 4));
  EXPECT_NE(derive_seed(7, 3), derive_seed(8, 3));
  const int a[2] = {0, 1}, b[2] = {1, 0};
  EXPECT_NE(cube_seed(5, a), cube_seed(5, b));
}

TEST(Rng, UniformMoments) {
  Xoshiro256 rng(11);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 5 * std::sqrt(1.0 / 12 / n));
  EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12, 2e-3);
}

TEST(Parallel, MapIsIndependentOfWorkerCount) {
  auto f = [](std::size_t i) { return static_cast<double>(derive_seed(3, i) % 1000); };
  EXPECT_EQ(parallel_map<double>(100, 1, f), parallel_map<double>(100, 4, f));
}

TEST(Stats, SummaryOfKnownSample) {
  const std::vector<double> x{1, 2, 3, 4, 10};
  const auto s = summarize(x);
  EXPECT_DOUBLE_EQ(s.mean, 4.0);
  EXPECT_DOUBLE_EQ(s.variance, 12.5);
  // Deviations -3, -2, -1, 0, 6: m2 = 10, m3 = 36, m4 = 278.8.
  EXPECT_NEAR(s.skewness, 36.0 / std::pow(10.0, 1.5), 1e-12);
  EXPECT_NEAR(s.excess_kurtosis, 278.8 / 100.0 - 3.0, 1e-12);
}

TEST(Stats, NormalQuantileRoundTrip) {
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-12);
  EXPECT_NEAR(normal_cdf(normal_quantile(0.3)), 0.3, 1e-14);
}

TEST(Stats, KolmogorovSurvivalKnownValues) {
  // Q(1.36) ~ 0.0494 and Q(1.63) ~ 0.0098 are the textbook 5% and 1% points.
  EXPECT_NEAR(kolmogorov_q(1.3581), 0.05, 2e-4);
  EXPECT_NEAR(kolmogorov_q(1.6276), 0.01, 2e-4);
}

TEST(Stats, KsRejectsShiftedSample) {
  auto x = normals(2000, 1);
  for (auto& v : x) v += 0.2;
  EXPECT_LT(ks_test_normal(x).p_value, 1e-4);
}

TEST(Stats, KsCalibrationUnderNull) {
  // Under H0 the p-values are uniform: the rejection rate at 5% stays near 5%.
  const int reps = 400;
  int rejected = 0;
  std::vector<double> p;
  for (int r = 0; r < reps; ++r) {
    p.push_back(ks_test_normal(normals(500, derive_seed(99, r))).p_value);
    rejected += p.back() < 0.05;
  }
  const double rate = static_cast<double>(rejected) / reps;
  EXPECT_NEAR(rate, 0.05, 3 * std::sqrt(0.05 * 0.95 / reps));
  EXPECT_GT(ks_test(p, [](double u) { return std::clamp(u, 0.0, 1.0); }).p_value, 1e-3);
}

TEST(Stats, JitteredIntegerCountsPassNormality) {
  // Rounded normals with large spread: jitter restores continuity, the raw integers fail KS.
  auto x = normals(3000, 5);
  for (auto& v : x) v = std::round(30 + 2.0 * v);
  const auto jit = normality_report(x, true, 17);
  EXPECT_GT(jit.ks.p_value, 0.01);
  EXPECT_LT(ks_test_normal([&] {
              std::vector<double> z(x);
              const auto s = summarize(x);
              for (auto& v : z) v = (v - s.mean) / std::sqrt(s.variance);
              return z;
            }())
                .p_value,
            0.01);
}

TEST(Stats, DagostinoDetectsSkew) {
  auto x = normals(2000, 8);
  EXPECT_GT(dagostino_k2(x).p_value, 1e-3);
  for (auto& v : x) v = std::exp(v);
  EXPECT_LT(dagostino_k2(x).p_value, 1e-6);
}

TEST(Stats, BootstrapCoversMean) {
  const auto x = normals(1000, 21);
  const auto ci = bootstrap_ci(x, [](std::span<const double> v) { return mean(v); }, 1000, 0.95, 4);
  const auto ni = normal_interval(mean(x), std_error(x));
  EXPECT_NEAR(ci.lo, ni.lo, 0.02);
  EXPECT_NEAR(ci.hi, ni.hi, 0.02);
}

TEST(Stats, LeastSquaresExactLine) {
  const std::vector<double> x{1, 2, 3, 4}, y{3, 5, 7, 9};
  const auto f = least_squares(x, y);
  EXPECT_DOUBLE_EQ(f.slope, 2.0);
  EXPECT_DOUBLE_EQ(f.intercept, 1.0);
}

TEST(Stats, LoglogSlopeOfPowerLaw) {
  // X = R^2 exactly gives E[X^3] = R^6.
  const std::vector<double> R{2, 4, 8, 16};
  std::vector<std::vector<double>> s;
  for (double r : R) s.push_back(std::vector<double>(50, r * r));
  const auto e = loglog_moment_slope(R, s, 3, 200, 0.95, 1);
  EXPECT_NEAR(e.slope, 6.0, 1e-12);
  EXPECT_NEAR(e.ci.lo, 6.0, 1e-12);
}
