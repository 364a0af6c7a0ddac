#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "gfc/kernels.hpp"

using namespace gfc;

namespace {

double K_bf(double r2) { return std::exp(-r2 / 2); }

}  // namespace

TEST(Kernels, BargmannFockValueAtOrigin) {
  // q(x) = c exp(-|x|^2) with q * q = exp(-|x|^2 / 2) forces c = (2/pi)^{1/4}.
  const auto spec = bargmann_fock(1);
  const double x[1] = {0.0};
  EXPECT_NEAR(eval_kernel(spec, x, {0}), std::pow(2.0 / std::numbers::pi, 0.25), 1e-15);
  EXPECT_NEAR(eval_kernel(spec, x, {0}), 0.8932, 1e-4);
}

TEST(Kernels, OddDerivativeVanishesAtOrigin) {
  const auto spec = bargmann_fock(2);
  const double x[2] = {0.0, 0.0};
  EXPECT_EQ(eval_kernel(spec, x, {1, 0}), 0.0);
}

TEST(Kernels, TruncationGivesExactZero) {
  auto spec = bargmann_fock(1);
  spec.truncation_radius = 8.0;
  const double x[1] = {10.0};
  EXPECT_EQ(eval_kernel(spec, x, {0}), 0.0);
  EXPECT_EQ(eval_kernel(spec, x, {2}), 0.0);
}

TEST(Kernels, DefaultTruncationMeetsTailTolerance) {
  for (int d : {1, 2, 3}) {
    const auto spec = bargmann_fock(d);
    for (const auto& a : jet_indices(d, 2)) EXPECT_LT(tail_mass_ratio(spec, a), 1e-8) << "d=" << d;
    // One quarter step less must violate the budget for some derivative.
    auto tighter = spec;
    tighter.truncation_radius -= 0.25;
    double worst = 0;
    for (const auto& a : jet_indices(d, 2)) worst = std::max(worst, tail_mass_ratio(tighter, a));
    EXPECT_GE(worst, 1e-8 / d);
  }
}

TEST(Kernels, HermitianSymmetry) {
  const auto spec = gaussian_scale(2, 0.7);
  for (const auto& a : jet_indices(2, 5)) {
    for (double t : {0.1, 0.9, 2.3}) {
      const double x[2] = {t, -0.4 * t}, mx[2] = {-t, 0.4 * t};
      const double sign = order(a) % 2 ? -1.0 : 1.0;
      EXPECT_NEAR(eval_kernel(spec, x, a), sign * eval_kernel(spec, mx, a), 1e-12);
    }
  }
}

TEST(Kernels, TabulatedRejectsHighOrder) {
  std::stringstream csv;
  csv << "x,q\n";
  for (int i = -8; i <= 8; ++i) csv << i * 0.25 << "," << std::exp(-(i * 0.25) * (i * 0.25)) << "\n";
  const auto spec = tabulated(std::make_shared<const TabulatedKernel>(TabulatedKernel::from_csv(csv, 1)));
  const double x[1] = {0.3};
  EXPECT_THROW(eval_kernel(spec, x, {3}), UnsupportedDerivativeOrder);
  EXPECT_NO_THROW(eval_kernel(spec, x, {2}));
  EXPECT_DOUBLE_EQ(spec.truncation_radius, 2.0);
}

TEST(Kernels, TabulatedReproducesNodesAndSmoothness) {
  std::stringstream csv;
  csv.precision(17);
  for (int i = -12; i <= 12; ++i)
    for (int j = -12; j <= 12; ++j) {
      const double x = i * 0.25, y = j * 0.25;
      csv << x << "," << y << "," << std::exp(-(x * x + y * y)) << "\n";
    }
  TabulatedKernel t = TabulatedKernel::from_csv(csv, 2);
  const double node[2] = {0.5, -0.75};
  EXPECT_NEAR(t.eval(node, {0, 0}), std::exp(-(0.25 + 0.5625)), 1e-14);
  // Between nodes the spline approximates the Gaussian and its first derivatives.
  const double mid[2] = {0.375, 0.125};
  const double g = std::exp(-(0.375 * 0.375 + 0.125 * 0.125));
  EXPECT_NEAR(t.eval(mid, {0, 0}), g, 5e-3);
  EXPECT_NEAR(t.eval(mid, {1, 0}), -2 * 0.375 * g, 3e-2);
  const double out[2] = {3.5, 0.0};
  EXPECT_EQ(t.eval(out, {0, 0}), 0.0);
}

TEST(Kernels, TabulatedCsvErrors) {
  std::stringstream gap("0,1\n0.25,1\n0.75,1\n");
  EXPECT_THROW(TabulatedKernel::from_csv(gap, 1), IoError);
  std::stringstream cols("0,1,2\n");
  EXPECT_THROW(TabulatedKernel::from_csv(cols, 1), IoError);
  std::stringstream empty("# nothing\n");
  EXPECT_THROW(TabulatedKernel::from_csv(empty, 1), IoError);
}

TEST(Covariance, PointValues) {
  CovarianceOracle<double> o1(bargmann_fock(1)), o2(bargmann_fock(2));
  const double z1[1] = {0.3};
  const double z2[2] = {0.3, -1.1};
  EXPECT_NEAR(o2.cov({0, 0}, {0, 0}, z2, z2), 1.0, 1e-15);
  EXPECT_EQ(o1.cov({1}, {0}, z1, z1), 0.0);
  EXPECT_NEAR(o1.cov({1}, {1}, z1, z1), 1.0, 1e-15);
  // Cov(f''(x), f(x)) = K''(0) = -1, Cov(f'', f'') = K''''(0) = 3.
  EXPECT_NEAR(o1.cov({2}, {0}, z1, z1), -1.0, 1e-15);
  EXPECT_NEAR(o1.cov({2}, {2}, z1, z1), 3.0, 1e-15);
}

TEST(Covariance, SignConventionAndSymmetry) {
  CovarianceOracle<double> o(bargmann_fock(2));
  const double x[2] = {0.2, -0.3}, y[2] = {1.1, 0.4};
  const double rx = y[0] - x[0], ry = y[1] - x[1];
  // Cov(d1 f(x), f(y)) = -d1 K(y - x) = rx K.
  EXPECT_NEAR(o.cov({1, 0}, {0, 0}, x, y), rx * K_bf(rx * rx + ry * ry), 1e-15);
  for (const auto& a : jet_indices(2, 2))
    for (const auto& g : jet_indices(2, 2)) EXPECT_EQ(o.cov(a, g, x, y), o.cov(g, a, y, x));
}

TEST(Covariance, FiniteDifferenceOrder) {
  // Central differences of the alpha = 0 covariance in x_1 converge at second order.
  CovarianceOracle<double> o(bargmann_fock(2));
  const double y[2] = {0.7, -0.2};
  auto err = [&](double h) {
    const double xp[2] = {0.1 + h, 0.3}, xm[2] = {0.1 - h, 0.3}, x[2] = {0.1, 0.3};
    const double fd = (o.cov({0, 0}, {0, 0}, xp, y) - o.cov({0, 0}, {0, 0}, xm, y)) / (2 * h);
    return std::abs(fd - o.cov({1, 0}, {0, 0}, x, y));
  };
  const double e1 = err(1e-3), e2 = err(1e-4);
  EXPECT_GE(std::log10(e1 / e2), 1.9);
}

TEST(Covariance, ConvolutionIdentity) {
  // Numerical q * q against exp(-|r|^2 / 2) on |r| <= 4.
  const auto spec = bargmann_fock(2);
  for (double a : {0.0, 0.5, 1.3, 2.2, 3.1, 4.0}) {
    const double r[2] = {a * 0.6, a * 0.8};
    EXPECT_NEAR(numeric_self_convolution(spec, r), K_bf(a * a), 1e-4) << "|r| = " << a;
  }
}

TEST(Covariance, NumericMatchesAnalyticForDerivatives) {
  const auto spec = bargmann_fock(1);
  CovarianceOracle<double> an(spec), nu(spec, CovarianceMethod::NumericConvolution);
  const double x[1] = {0.2}, y[1] = {0.9};
  for (int a = 0; a <= 2; ++a)
    for (int g = 0; g <= 2; ++g) EXPECT_NEAR(nu.cov({a}, {g}, x, y), an.cov({a}, {g}, x, y), 1e-8);
}

TEST(Covariance, AssembledMatricesArePsd) {
  CovarianceOracle<double> o(bargmann_fock(2));
  const std::vector<std::vector<double>> pts{{0, 0}, {0.4, 0.1}, {1.5, -0.7}, {0.41, 0.12}};
  const auto idx = jet_indices(2, 2);
  const int n = static_cast<int>(pts.size() * idx.size());
  Eigen::MatrixXd S(n, n);
  int r = 0;
  for (const auto& p : pts)
    for (const auto& a : idx) {
      int c = 0;
      for (const auto& q : pts)
        for (const auto& g : idx) S(r, c++) = o.cov(a, g, p, q);
      ++r;
    }
  EXPECT_EQ((S - S.transpose()).cwiseAbs().maxCoeff(), 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10 * es.eigenvalues().maxCoeff());
}

TEST(Covariance, OrderLimits) {
  CovarianceOracle<double> o(bargmann_fock(1));
  const double x[1] = {0.0};
  EXPECT_THROW(o.cov({4}, {3}, x, x), UnsupportedDerivativeOrder);
  EXPECT_NO_THROW(o.cov({3}, {3}, x, x));
}
