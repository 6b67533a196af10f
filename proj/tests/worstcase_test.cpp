#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rpsynth/worstcase.hpp"

namespace rpsynth {
namespace {

MatrixXd mat(int r, int c, std::initializer_list<double> v) {
  MatrixXd m(r, c);
  auto it = v.begin();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = *it++;
  return m;
}

// x' = a x + b p + bw w,  q = c x + d p,  z = x.
UncertainClosedLoop scalar_loop(double a, double b, double c, double d, double bw = 1.0) {
  return {PartitionedSystem(StateSpace(mat(1, 1, {a}), mat(1, 2, {b, bw}), mat(2, 1, {c, 1}),
                                       mat(2, 2, {d, 0, 0, 0})),
                            1, 1, 1, 1)};
}

UncertainClosedLoop diagonal_loop(double a1, double a2, double c2) {
  MatrixXd A = MatrixXd::Zero(2, 2);
  A.diagonal() << a1, a2;
  MatrixXd B(2, 3), C(3, 2);
  B << 1, 0, 1, 0, 1, 1;
  C << 1, 0, 0, c2, 1, 1;
  return {PartitionedSystem(StateSpace(A, B, C, MatrixXd::Zero(3, 3)), 2, 1, 2, 1)};
}

UncertainClosedLoop static_loop(double d11) {
  return {PartitionedSystem(StateSpace::gain(mat(2, 2, {d11, 1, 1, 0})), 1, 1, 1, 1)};
}

TEST(StartPoints, NominalVerticesInteriorPrevious) {
  StartOptions o;
  const VectorXd prev = (VectorXd(2) << 3.0, 0.25).finished();
  o.previous = {prev, VectorXd::Zero(2), VectorXd::Constant(2, 3.0)};
  const auto s = start_points(Box::symmetric(2), o);
  // Previous points are projected; duplicates are dropped.
  ASSERT_EQ(s.size(), 1u + 4u + 10u + 1u);
  EXPECT_EQ(s[0], VectorXd::Zero(2));
  EXPECT_EQ(s.back(), (VectorXd(2) << 1.0, 0.25).finished());
  for (const auto& x : s) EXPECT_TRUE(Box::symmetric(2).contains(x));
  o.max_starts = 3;
  EXPECT_EQ(start_points(Box::symmetric(2), o).size(), 3u);
  StartOptions big;
  big.random_vertices = 50;
  EXPECT_EQ(start_points(Box::symmetric(12), big).size(), 1u + 50u + 10u);
}

TEST(Destabilize, ScalarScan) {
  const auto r = destabilize(scalar_loop(-0.4, 1, 1, 0), UncertaintyStructure({1}), Box::symmetric(1));
  double scan = -kInf;
  for (int i = 0; i <= 10000; ++i) scan = std::max(scan, -0.4 + (-1 + i / 5000.0));
  EXPECT_NEAR(r.best, scan, 1e-10);
  EXPECT_NEAR(r.argmax(0), 1.0, 1e-12);
}

TEST(Destabilize, ConstantMatrix) {
  const auto r = destabilize(scalar_loop(-1, 0, 1, 0), UncertaintyStructure({1}), Box::symmetric(1));
  EXPECT_DOUBLE_EQ(r.best, -1.0);
  EXPECT_FALSE(r.ill_posed);
}

TEST(Destabilize, VertexOptimum) {
  const auto r = destabilize(diagonal_loop(-0.5, -0.5, -1.0), UncertaintyStructure({1, 1}), Box::symmetric(2));
  EXPECT_NEAR(r.best, 0.5, 1e-12);
  EXPECT_NEAR(std::abs(r.argmax(0)) + std::abs(r.argmax(1)), 2.0 - 0.0, 1.0 + 1e-12);
  EXPECT_NEAR(testing::max_real_eigenvalue(closed_loop_A(diagonal_loop(-0.5, -0.5, -1.0),
                                                        UncertaintyStructure({1, 1}), r.argmax)),
              r.best, 1e-12);
}

TEST(WorstPerformance, FirstOrderLoop) {
  const auto loop = scalar_loop(-1, 1, 1, 0);
  const Box box = Box::symmetric(1, 0.5);
  const auto r = worst_performance(loop, UncertaintyStructure({1}), box);
  // Grid oracle over delta and omega.
  double grid = 0;
  for (int i = 0; i <= 200; ++i) {
    const double d = -0.5 + i / 200.0;
    grid = std::max(grid, testing::grid_hinf(mat(1, 1, {-1 + d}), mat(1, 1, {1}), mat(1, 1, {1}),
                                             mat(1, 1, {0}), 200)
                              .value);
  }
  EXPECT_NEAR(r.best, 2.0, 1e-8);
  EXPECT_NEAR(r.best, grid, 1e-8);
  EXPECT_NEAR(r.argmax(0), 0.5, 1e-12);
  EXPECT_TRUE(r.unstable_points.empty());
}

TEST(WorstPerformance, IndependentOfDelta) {
  const auto loop = scalar_loop(-1, 0, 1, 0);
  const auto r = worst_performance(loop, UncertaintyStructure({1}), Box::symmetric(1));
  EXPECT_NEAR(r.best, 1.0, 1e-9);
}

UncertainClosedLoop product_loop() {
  // z = (1 + d1)(1 + 0.5 d2) w
  return {PartitionedSystem(StateSpace::gain(mat(3, 3, {0, 0.5, 1, 0, 0, 1, 1, 0.5, 1})), 2, 1, 2, 1)};
}

TEST(WorstPerformance, MonotoneProductMatchesVertexEnumeration) {
  const UncertaintyStructure s({1, 1});
  const auto r = worst_performance(product_loop(), s, Box::symmetric(2));
  EXPECT_NEAR(r.best, 3.0, 1e-12);
  EXPECT_NEAR(r.argmax(0), 1.0, 1e-12);
  EXPECT_NEAR(r.argmax(1), 1.0, 1e-12);
  double vmax = 0;
  for (double a : {-1.0, 1.0})
    for (double b : {-1.0, 1.0})
      vmax = std::max(vmax, hinf_norm(close_uncertainty(product_loop(), s, (VectorXd(2) << a, b).finished()).T_zw).hinf);
  EXPECT_EQ(r.best, vmax);
}

TEST(WorstPerformance, EscalatesUnstablePoints) {
  // A(delta) = -0.4 + delta: unstable beyond 0.4.
  const auto loop = scalar_loop(-0.4, 1, 1, 0);
  const UncertaintyStructure s({1});
  const auto r = worst_performance(loop, s, Box::symmetric(1));
  EXPECT_FALSE(r.unstable_points.empty());
  for (const auto& d : r.unstable_points)
    EXPECT_GE(testing::max_real_eigenvalue(closed_loop_A(loop, s, d)), -1e-10);
}

TEST(WorstCase, MonotoneInNumberOfStarts) {
  std::mt19937_64 rng(51);
  const UncertaintyStructure s({1, 1});
  for (int t = 0; t < 3; ++t) {
    StateSpace sys = testing::random_stable_system(rng, 3, 3, 3);
    sys.D.topLeftCorner(2, 2) *= 0.2;
    sys.B.leftCols(2) *= 0.3;
    const UncertainClosedLoop loop{PartitionedSystem(sys, 2, 1, 2, 1)};
    double prev_a = -kInf, prev_v = -kInf;
    for (int k : {1, 3, 6, 15}) {
      StartOptions o;
      o.max_starts = k;
      const auto a = destabilize(loop, s, Box::symmetric(2), o);
      const auto v = worst_performance(loop, s, Box::symmetric(2), o);
      EXPECT_GE(a.best, prev_a);
      if (v.unstable_points.empty()) EXPECT_GE(v.best, prev_v);
      prev_a = a.best;
      prev_v = v.best;
      EXPECT_TRUE(Box::symmetric(2).contains(a.argmax));
      EXPECT_TRUE(Box::symmetric(2).contains(v.argmax));
    }
  }
}

TEST(DistanceToInstability, ScalarRoot) {
  const auto loop = scalar_loop(-0.4, 1, 1, 0);
  const auto r = distance_to_instability(loop, UncertaintyStructure({1}));
  ASSERT_TRUE(r.found);
  EXPECT_NEAR(r.radius, 0.4, 1e-6);
  EXPECT_NEAR(r.critical.cwiseAbs().maxCoeff(), r.radius, 1e-6);
  EXPECT_NEAR(r.lambda, 1.0, 1e-6);
  EXPECT_NEAR(r.mu_plus(0), 1.0, 1e-6);
}

TEST(DistanceToInstability, NominallyUnstable) {
  const auto r = distance_to_instability(scalar_loop(0.1, 1, 1, 0), UncertaintyStructure({1}));
  EXPECT_EQ(r.radius, 0.0);
}

TEST(DistanceToInstability, NearestCoordinateCrossing) {
  const UncertaintyStructure s({1, 1});
  const auto loop = diagonal_loop(-0.5, -0.25, 1.0);
  const auto r = distance_to_instability(loop, s);
  ASSERT_TRUE(r.found);
  EXPECT_NEAR(r.radius, 0.25, 1e-6);
  // Consistency along the critical ray.
  const VectorXd u = r.critical / r.critical.cwiseAbs().maxCoeff();
  EXPECT_LT(testing::max_real_eigenvalue(closed_loop_A(loop, s, 0.9 * r.radius * u)), 0.0);
  EXPECT_GE(testing::max_real_eigenvalue(closed_loop_A(loop, s, r.radius * u)), -1e-3);
  EXPECT_LE(std::abs(testing::max_real_eigenvalue(closed_loop_A(loop, s, r.critical))), 1e-4 * 1.25);
}

TEST(DistanceToInstability, NoInstabilitySentinel) {
  const auto r = distance_to_instability(scalar_loop(-1, 0, 1, 0), UncertaintyStructure({1}));
  EXPECT_FALSE(r.found);
  EXPECT_TRUE(std::isinf(r.radius));
}

TEST(PerformanceRadius, FirstOrderLoop) {
  const auto loop = scalar_loop(-1, 1, 1, 0);
  const auto r = performance_radius(loop, UncertaintyStructure({1}), 2.0);
  ASSERT_TRUE(r.found);
  EXPECT_NEAR(r.radius, 0.5, 1e-6);
  EXPECT_NEAR(hinf_norm(close_uncertainty(loop, UncertaintyStructure({1}), r.critical).T_zw).hinf, 2.0, 2e-4);
}

TEST(PerformanceRadius, DegenerateAndUnattainable) {
  EXPECT_EQ(performance_radius(scalar_loop(-1, 1, 1, 0), UncertaintyStructure({1}), 0.5).radius, 0.0);
  const auto r = performance_radius(scalar_loop(-1, 0, 1, 0), UncertaintyStructure({1}), 2.0);
  EXPECT_FALSE(r.found);
  EXPECT_TRUE(std::isinf(r.radius));
}

TEST(WellPosednessScan, Examples) {
  const UncertaintyStructure s({1});
  const auto zero = wellposedness_scan(static_loop(0.0), s, Box::symmetric(1));
  EXPECT_DOUBLE_EQ(zero.best, -1.0);
  EXPECT_FALSE(zero.ill_posed);
  const auto half = wellposedness_scan(static_loop(0.5), s, Box::symmetric(1));
  EXPECT_NEAR(half.best, -2.0, 1e-12);
  EXPECT_NEAR(half.argmax(0), 1.0, 1e-12);
  const auto pole = wellposedness_scan(static_loop(1.25), s, Box::symmetric(1));
  EXPECT_TRUE(pole.ill_posed);
  EXPECT_NEAR(pole.argmax(0), 0.8, 1e-6);
}

TEST(Destabilize, IllPosedPointsCountAsDestabilizing) {
  const auto r = destabilize(scalar_loop(-1, 1, 1, 1.25), UncertaintyStructure({1}), Box::symmetric(1));
  EXPECT_TRUE(r.ill_posed || r.best >= 0.0);
}

}  // namespace
}  // namespace rpsynth
