#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "gfc/critical_points.hpp"
#include "gfc/rng.hpp"
#include "gfc/sampler.hpp"

using namespace gfc;

namespace {

// f(x) = -|x - x0|^2 on [-2, 2]^2.
FieldRealization quadratic(double h, double x0, double y0) {
  return from_function(BoxDomain::centered_cube(2, 2), h, 1, 2, [=](std::span<const double> x) {
    Eigen::VectorXd g(2);
    g << -2 * (x[0] - x0), -2 * (x[1] - y0);
    return Jet{-(x[0] - x0) * (x[0] - x0) - (x[1] - y0) * (x[1] - y0), g, -2 * Eigen::MatrixXd::Identity(2, 2)};
  });
}

}  // namespace

TEST(CriticalPoints, QuadraticHasOneInteriorMaximumAndStrata) {
  const auto f = quadratic(0.25, 0.3, -0.2);
  const auto dom = BoxDomain::centered_cube(2, 2);
  const auto s = find_critical_points(f, nullptr, dom);
  ASSERT_EQ(s.count_dim(2), 1);
  const auto& m = *std::find_if(s.points.begin(), s.points.end(), [](const auto& r) { return r.stratum_dim == 2; });
  EXPECT_NEAR(m.location(0), 0.3, 1e-10);
  EXPECT_NEAR(m.location(1), -0.2, 1e-10);
  EXPECT_EQ(m.n_negative, 2);
  EXPECT_NEAR(m.level, 0.0, 1e-15);
  // Strata follow the unit-cube decomposition: each of the 5 + 5 lattice lines carries the
  // restricted maximum and each of the 25 lattice points is a zero-dimensional stratum.
  EXPECT_EQ(s.count_dim(1), 10);
  EXPECT_EQ(s.count_dim(0), 25);
  EXPECT_EQ(s.unrefined, 0);
  EXPECT_EQ(count_interior(s, 2), 1);
}

TEST(CriticalPoints, RampHasNoInteriorPoints) {
  const auto dom = BoxDomain::centered_cube(2, 2);
  const auto f = from_function(dom, 0.25, 1, 2, [](std::span<const double> x) {
    Eigen::VectorXd g(2);
    g << 1.0, 2.0;
    return Jet{x[0] + 2 * x[1], g, Eigen::MatrixXd::Zero(2, 2)};
  });
  const auto s = find_critical_points(f, nullptr, dom);
  EXPECT_EQ(s.count_dim(2), 0);
  EXPECT_EQ(s.count_dim(1), 0);
  EXPECT_EQ(s.count_dim(0), 25);
}

TEST(CriticalPoints, NegationIsBitwiseSymmetric) {
  const auto spec = bargmann_fock(2);
  const auto dom = BoxDomain::centered_cube(2, 4);
  const auto f = sample_field(spec, dom, 0.25, 77);
  const auto a = find_critical_points(f, nullptr, dom);
  const auto b = find_critical_points(negate(f), nullptr, dom);
  ASSERT_EQ(a.points.size(), b.points.size());
  ASSERT_GT(a.count_dim(2), 0);
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    EXPECT_EQ(a.points[i].location, b.points[i].location);
    EXPECT_EQ(a.points[i].level, -b.points[i].level);
    EXPECT_EQ(a.points[i].n_negative, b.points[i].n_positive);
  }
}

TEST(CriticalPoints, InteriorCountStableUnderGridRefinement) {
  // Same noise, node spacing halved: N_c must agree on at least 99% of realizations.
  const auto spec = bargmann_fock(2);
  const auto dom = BoxDomain::centered_cube(2, 8);
  const int trials = 100;
  int agree = 0;
  for (int t = 0; t < trials; ++t) {
    const auto noise = sample_noise(spec, dom, 0.25, derive_seed(404, t));
    const auto f1 = realize(spec, noise, dom, {1, 2});
    const auto f2 = realize(spec, noise, dom, {2, 2});
    agree += find_critical_points(f1, nullptr, dom).count_dim(2) == find_critical_points(f2, nullptr, dom).count_dim(2);
  }
  EXPECT_GE(agree, 99);
}

TEST(CriticalPoints, CountAboveLevelExtremes) {
  const auto spec = bargmann_fock(2);
  const auto dom = BoxDomain::centered_cube(2, 4);
  const auto s = find_critical_points(sample_field(spec, dom, 0.25, 5), nullptr, dom);
  double top = -std::numeric_limits<double>::infinity();
  for (const auto& r : s.points) top = std::max(top, r.level);
  EXPECT_EQ(count_critical_points_above(s.points, -std::numeric_limits<double>::infinity()),
            static_cast<long>(s.points.size()));
  EXPECT_EQ(count_critical_points_above(s.points, top + 1), 0);
  EXPECT_EQ(count_critical_points_above(s.points, top), 1);
}

TEST(CriticalPoints, ClosedCubeMembership) {
  const auto f = quadratic(0.25, 0.3, -0.2);
  const auto s = find_critical_points(f, nullptr, BoxDomain::centered_cube(2, 2));
  // B_(0,-1) = [0,1] x [-1,0]: the maximum, four edge points and four corners.
  EXPECT_EQ(count_in_closed_cube(s.points, CubeIndex{0, -1}), 9);
  // B_(1,1) = [1,2] x [1,2]: its four corners only.
  EXPECT_EQ(count_in_closed_cube(s.points, CubeIndex{1, 1}), 4);
}

TEST(CriticalPoints, MissingDerivativesRejected) {
  const auto spec = bargmann_fock(2);
  const auto dom = BoxDomain::centered_cube(2, 2);
  const auto f = sample_field(spec, dom, 0.25, 1, {1, 0});
  EXPECT_THROW(find_critical_points(f, nullptr, dom), MissingDerivatives);
}
