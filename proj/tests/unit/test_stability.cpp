#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "gfc/critical_points.hpp"
#include "gfc/rng.hpp"
#include "gfc/sampler.hpp"
#include "gfc/stability.hpp"

using namespace gfc;

namespace {

FieldRealization plane(const BoxDomain& dom, double h, double c, double a, double b) {
  return from_function(dom, h, 1, 2, [=](std::span<const double> x) {
    Eigen::VectorXd g(2);
    g << a, b;
    return Jet{c + a * x[0] + b * x[1], g, Eigen::MatrixXd::Zero(2, 2)};
  });
}

}  // namespace

TEST(Stability, SmallPerturbationOfFarLevelIsStable) {
  const auto dom = BoxDomain::centered_cube(2, 2);
  const auto g = constant_field(dom, 0.25, 1, 1.0);
  const auto p = constant_field(dom, 0.25, 1, 0.1);
  EXPECT_TRUE(unstable_set(g, p, dom, 0.0).empty());
  for (const auto& v : stability_verdicts(g, p, dom, 0.0)) EXPECT_DOUBLE_EQ(v.margin, 5.0);
}

TEST(Stability, LevelCrossingWithoutGradientIsUnstable) {
  // g equals the level everywhere: only a gradient could save a cube, and lattice vertices have none.
  const auto dom = BoxDomain::centered_cube(2, 2);
  const auto g = constant_field(dom, 0.25, 1, 0.0);
  const auto p = constant_field(dom, 0.25, 1, 0.1);
  const auto U = unstable_set(g, p, dom, 0.0);
  EXPECT_EQ(U.size(), dom.cubes().size());
  const auto v = check_stability(g, p, CubeIndex{0, 0}, dom, 0.0);
  ASSERT_TRUE(v.witness.has_value());
  EXPECT_EQ(v.witness->abs_g, 0.0);
}

TEST(Stability, GradientClauseRescuesNonVertexNodes) {
  // g = x crosses the level on the line x = 0; vertices on that line have no free axis.
  const auto dom = BoxDomain::centered_cube(2, 2);
  const auto g = plane(dom, 0.25, 0.0, 1.0, 0.0);
  const auto p = constant_field(dom, 0.25, 1, 0.01);
  const auto U = unstable_set(g, p, dom, 0.0);
  for (const auto& v : U) EXPECT_TRUE(v[0] == 0 || v[0] == -1);
  EXPECT_EQ(U.size(), 8u);
  // Shifting the zero off the lattice lines leaves only interior nodes, rescued by the gradient.
  const auto g2 = plane(dom, 0.25, -0.1, 1.0, 0.0);
  EXPECT_TRUE(unstable_set(g2, p, dom, 0.0).empty());
}

TEST(Stability, MarginScalesInverselyWithPerturbation) {
  const auto spec = bargmann_fock(2);
  const auto dom = BoxDomain::centered_cube(2, 3);
  const auto g = sample_field(spec, dom, 0.25, 9);
  const auto rs = resample_cubes(g, {CubeIndex{0, 0}}, 10);
  const auto cg = find_critical_points(g, nullptr, dom);
  const auto a = stability_verdicts(g, rs.perturbation, dom, 0.0, &cg.points);
  const auto b = stability_verdicts(g, scaled(0.5, rs.perturbation), dom, 0.0, &cg.points);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isinf(a[i].margin)) {
      EXPECT_TRUE(std::isinf(b[i].margin));
      continue;
    }
    EXPECT_NEAR(b[i].margin, 2 * a[i].margin, 1e-12 * a[i].margin);
    // Shrinking p never destabilizes a cube.
    if (a[i].stable) {
      EXPECT_TRUE(b[i].stable);
    }
  }
}

TEST(Stability, UnstableCubesStayWithinKernelRange) {
  // p vanishes exactly beyond sup-distance T of the resampled cube, so no cube further out can be unstable.
  const auto spec = bargmann_fock(2);
  const auto dom = BoxDomain::centered_cube(2, 7);
  const double T = spec.truncation_radius;
  for (int t = 0; t < 5; ++t) {
    const auto g = sample_field(spec, dom, 0.25, derive_seed(12, t));
    const auto rs = resample_cubes(g, {CubeIndex{0, 0}}, derive_seed(13, t));
    for (const auto& v : unstable_set(g, rs.perturbation, dom, 0.0, kStabilityMarginFactor)) {
      // Sup-distance between the closed cubes B_v and B_0.
      const int gap = std::max(std::max(std::abs(v[0]) - 1, 0), std::max(std::abs(v[1]) - 1, 0));
      EXPECT_LE(gap, T) << cube_string(v);
    }
  }
}

TEST(Stability, PerturbationBoundHoldsOnTrials) {
  PerturbationOptions opt;
  opt.workers = 1;
  const auto trials = perturbation_trials(bargmann_fock(2), 0.25, 40, 77, opt);
  long checked = 0;
  for (const auto& tr : trials) {
    EXPECT_FALSE(tr.inequality_violated) << "seed " << tr.seed;
    EXPECT_FALSE(tr.count_invariance_violated) << "seed " << tr.seed;
    checked += tr.count_invariance_checked;
  }
  EXPECT_GT(checked, 0);
}

TEST(Stability, InputErrors) {
  const auto dom = BoxDomain::centered_cube(2, 2);
  const auto g = constant_field(dom, 0.25, 1, 1.0);
  const auto coarse = constant_field(dom, 0.5, 1, 0.1);
  EXPECT_THROW(check_stability(g, coarse, CubeIndex{0, 0}, dom, 0.0), GridMismatch);
  const auto spec = bargmann_fock(2);
  const auto flat0 = sample_field(spec, dom, 0.25, 1, {1, 0});
  EXPECT_THROW(check_stability(flat0, flat0, CubeIndex{0, 0}, dom, 0.0), MissingDerivatives);
}
