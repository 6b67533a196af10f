#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rpsynth/synthesis.hpp"

namespace rpsynth {
namespace {

MatrixXd mat(int r, int c, std::initializer_list<double> v) {
  MatrixXd m(r, c);
  auto it = v.begin();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = *it++;
  return m;
}

VectorXd vec(std::initializer_list<double> v) {
  VectorXd x(static_cast<Eigen::Index>(v.size()));
  int i = 0;
  for (double a : v) x(i++) = a;
  return x;
}

// Static toy  z = (delta - kappa) w:  q = w, z = p - u, y = w.
SynthesisProblem toy(std::vector<VectorXd> scenarios) {
  SynthesisProblem pb;
  pb.plant = UncertainPlant(StateSpace::gain(mat(3, 3, {0, 1, 0, 1, 0, -1, 0, 1, 0})), 1, 1, 1, 1, 1, 1);
  pb.controller = ControllerStructure::static_gain(1, 1);
  pb.uncertainty = UncertaintyStructure({1});
  pb.scenarios = std::move(scenarios);
  return pb;
}

// x' = a x + p + w + b u,  q = x,  z = x,  y = x.
SynthesisProblem scalar_plant(double a, double b, std::vector<VectorXd> scenarios) {
  SynthesisProblem pb;
  pb.plant = UncertainPlant::from_blocks(
      mat(1, 1, {a}), mat(1, 1, {1}), mat(1, 1, {1}), mat(1, 1, {b}), mat(1, 1, {1}), mat(1, 1, {1}),
      mat(1, 1, {1}), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1),
      MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1));
  pb.controller = ControllerStructure::static_gain(1, 1);
  pb.uncertainty = UncertaintyStructure({1});
  pb.scenarios = std::move(scenarios);
  return pb;
}

double brute_force(const SynthesisProblem& pb, const VectorXd& kappa) {
  const StateSpace k = realize_controller(pb.controller, kappa);
  double best = 0;
  for (const auto& d : pb.scenarios) {
    const StateSpace t = closed_loop_performance(pb.plant, build_delta_matrix(pb.uncertainty, d), k);
    if (testing::max_real_eigenvalue(t.A) >= 0) return kInf;
    best = std::max(best, testing::grid_hinf(t.A, t.B, t.C, t.D).value);
  }
  return best;
}

TEST(MinNormElement, Examples) {
  EXPECT_NEAR(min_norm_element({vec({1}), vec({-1})}).norm(), 0.0, 1e-12);
  const VectorXd m = min_norm_element({vec({1, 1}), vec({1, -1})});
  EXPECT_NEAR(m(0), 1.0, 1e-10);
  EXPECT_NEAR(m(1), 0.0, 1e-10);
  EXPECT_NEAR(min_norm_element({vec({3, 4})}).norm(), 5.0, 1e-14);
}

TEST(Bundle, PolyhedralFunction) {
  // |x1| + 2 |x2 - 1| as a max of four planes.
  auto f = [](const VectorXd& x) {
    BundleSample s{std::abs(x(0)) + 2 * std::abs(x(1) - 1), {}};
    for (double s1 : {-1.0, 1.0})
      for (double s2 : {-2.0, 2.0}) {
        const double v = s1 * x(0) + s2 * (x(1) - 1);
        if (v >= s.value - 1e-12) s.subgradients.push_back(vec({s1, s2}));
      }
    return s;
  };
  const BundleResult r = minimize_bundle(f, vec({3, -2}));
  EXPECT_LT(r.value, 1e-3);
  EXPECT_NEAR(r.x(0), 0.0, 1e-3);
  EXPECT_NEAR(r.x(1), 1.0, 1e-3);
  for (std::size_t i = 1; i < r.trace.values.size(); ++i) EXPECT_LT(r.trace.values[i], r.trace.values[i - 1]);
  EXPECT_LE(r.trace.max_plane_excess, 1e-10);
}

TEST(Bundle, SmoothQuadraticStopsCritical) {
  auto f = [](const VectorXd& x) { return BundleSample{(x - vec({1, -2})).squaredNorm(), {2 * (x - vec({1, -2}))}}; };
  const BundleResult r = minimize_bundle(f, vec({0, 0}));
  EXPECT_LE(r.aggregate.norm(), 1e-4 * (1 + r.value));
  EXPECT_NEAR(r.x(0), 1.0, 1e-3);
  EXPECT_NEAR(r.x(1), -2.0, 1e-3);
}

TEST(Bundle, FailedEvaluationsAreNullSteps) {
  // |x + 0.9|, undefined for x < -1.
  auto f = [](const VectorXd& x) {
    if (x(0) < -1) throw DomainError("outside");
    return BundleSample{std::abs(x(0) + 0.9), {vec({x(0) + 0.9 >= 0 ? 1.0 : -1.0})}};
  };
  BundleParams p;
  p.t0 = 100;
  const BundleResult r = minimize_bundle(f, vec({5}), p);
  EXPECT_NEAR(r.x(0), -0.9, 1e-3);
}

TEST(MultiModel, ToyBothScenariosActive) {
  const auto pb = toy({vec({-1}), vec({1})});
  const MultiModelValue v = multimodel_objective(pb, vec({0}));
  EXPECT_NEAR(v.value, 1.0, 1e-12);
  EXPECT_EQ(v.active.size(), 2u);
  ASSERT_EQ(v.planes.size(), 2u);
  EXPECT_NEAR(v.planes[0](0) + v.planes[1](0), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(v.planes[0](0)), 1.0, 1e-12);
}

TEST(MultiModel, SingleScenarioIsNominal) {
  const auto pb = toy({vec({0})});
  EXPECT_NEAR(multimodel_objective(pb, vec({0.3})).value, 0.3, 1e-12);
}

TEST(MultiModel, UnstableScenarioIdentified) {
  const auto pb = scalar_plant(-1, 1, {vec({0}), vec({0.5})});
  const MultiModelValue v = multimodel_objective(pb, vec({0.8}));
  EXPECT_TRUE(std::isinf(v.value));
  EXPECT_EQ(v.unstable, 1);
}

TEST(MultiModel, MatchesBruteForce) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    SynthesisProblem pb;
    StateSpace g = testing::random_stable_system(rng, 3, 4, 4);
    g.B.col(0) *= 0.2;
    g.B.col(3) *= 0.5;
    g.D.setZero();
    pb.plant = UncertainPlant(g, 1, 2, 1, 1, 2, 1);
    pb.controller = ControllerStructure::static_gain(1, 1);
    pb.uncertainty = UncertaintyStructure({1});
    pb.scenarios = {vec({-1}), vec({0}), vec({1})};
    const VectorXd kappa = vec({0.05});
    const MultiModelValue v = multimodel_objective(pb, kappa);
    const double bf = brute_force(pb, kappa);
    if (std::isinf(bf)) {
      EXPECT_TRUE(std::isinf(v.value));
      continue;
    }
    EXPECT_NEAR(v.value, bf, 1e-6 * bf);
  }
}

TEST(Synthesize, ToyMinimax) {
  const auto pb = toy({vec({-1}), vec({1})});
  const SynthesisResult r = synthesize_structured(pb);
  EXPECT_NEAR(r.kappa(0), 0.0, 1e-4);
  EXPECT_NEAR(r.value, 1.0, 1e-4);
  // Criticality recomputed from scratch.
  const MultiModelValue v = multimodel_objective(pb, r.kappa, 1e-3);
  EXPECT_LE(min_norm_element(v.planes).norm(), 1e-4 * (1 + r.value));
}

TEST(Synthesize, NominalFullOrderDoesNotIncrease) {
  // x' = -x + w + u,  z = x,  y = x; the uncertainty channel is decoupled.
  SynthesisProblem pb = scalar_plant(-1, 1, {vec({0})});
  pb.plant = UncertainPlant::from_blocks(
      mat(1, 1, {-1}), mat(1, 1, {0}), mat(1, 1, {1}), mat(1, 1, {1}), mat(1, 1, {0}), mat(1, 1, {1}),
      mat(1, 1, {1}), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1),
      MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1));
  pb.controller = ControllerStructure::full(1, 1, 1);
  pb.kappa0 = vec({-1, 0, 0, 0});
  const double start = multimodel_objective(pb, pb.kappa0).value;
  EXPECT_NEAR(start, 1.0, 1e-8);
  const SynthesisResult r = synthesize_structured(pb);
  EXPECT_LE(r.value, start);
  for (std::size_t i = 1; i < r.bundle.trace.values.size(); ++i)
    EXPECT_LT(r.bundle.trace.values[i], r.bundle.trace.values[i - 1]);
  EXPECT_LE(r.bundle.trace.max_plane_excess, 1e-10);
}

TEST(Synthesize, ScenarioMonotonicity) {
  auto pb = scalar_plant(-1, 1, {vec({0})});
  pb.kappa0 = vec({-0.5});
  const SynthesisResult first = synthesize_structured(pb);
  auto grown = pb;
  grown.scenarios.push_back(vec({0.5}));
  grown.kappa0 = first.kappa;
  EXPECT_GE(multimodel_objective(grown, first.kappa).value, multimodel_objective(pb, first.kappa).value);
  const SynthesisResult second = synthesize_structured(grown);
  EXPECT_GE(second.value, first.value - 1e-8);
}

TEST(Stabilize, ScalarRootLocus) {
  const auto pb = scalar_plant(1, 1, {vec({0})});
  const StabilizationResult r = stabilize_scenarios(pb, vec({0}));
  EXPECT_LT(r.kappa(0), -1.0);
  EXPECT_LT(r.alpha, 0.0);
  EXPECT_NEAR(r.alpha, 1.0 + r.kappa(0), 1e-12);
}

TEST(Stabilize, AlreadyStableIsUnchanged) {
  const auto pb = scalar_plant(1, 1, {vec({0})});
  const StabilizationResult r = stabilize_scenarios(pb, vec({-3}));
  EXPECT_FALSE(r.changed);
  EXPECT_EQ(r.kappa(0), -3.0);
}

TEST(Stabilize, UnreachableTargetFails) {
  const auto pb = scalar_plant(1, 0, {vec({0}), vec({-0.5})});
  try {
    stabilize_scenarios(pb, vec({0}));
    FAIL() << "expected SynthesisError";
  } catch (const SynthesisError& e) {
    EXPECT_EQ(e.scenarios(), (std::vector<int>{0, 1}));
  }
  EXPECT_THROW(synthesize_structured(pb), SynthesisError);
}

}  // namespace
}  // namespace rpsynth
