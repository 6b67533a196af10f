#include <chrono>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rpsynth/analysis.hpp"

namespace rpsynth {
namespace {

using testing::central_difference;
using testing::grid_hinf;
using testing::random_matrix;
using testing::random_stable_system;

MatrixXd m1(double v) { return MatrixXd::Constant(1, 1, v); }

TEST(SpectralAbscissa, Diagonal) {
  MatrixXd a = MatrixXd::Zero(2, 2);
  a.diagonal() << -3, -1;
  const auto e = spectral_abscissa(a);
  EXPECT_DOUBLE_EQ(e.alpha, -1.0);
  ASSERT_EQ(e.active.size(), 1u);
  EXPECT_TRUE(e.active[0].simple);
}

TEST(SpectralAbscissa, RotationHasActivePair) {
  MatrixXd a(2, 2);
  a << 0, 1, -1, 0;
  const auto e = spectral_abscissa(a);
  EXPECT_NEAR(e.alpha, 0.0, 1e-15);
  ASSERT_EQ(e.active.size(), 2u);
  EXPECT_NEAR(std::abs(e.active[0].lambda.imag()), 1.0, 1e-14);
  EXPECT_NEAR(e.active[0].lambda.imag(), -e.active[1].lambda.imag(), 1e-14);
}

TEST(SpectralAbscissa, MatchesComplexSchurOracleAndBiorthonormal) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 20; ++t) {
    const MatrixXd a = random_matrix(rng, 8, 8);
    const auto e = spectral_abscissa(a);
    EXPECT_NEAR(e.alpha, testing::max_real_eigenvalue(a), 1e-10);
    for (const auto& l : e.active) {
      EXPECT_NEAR(l.lambda.real(), e.alpha, 1e-8 * (1 + std::abs(e.alpha)));
      const MatrixXcd uv = l.left.adjoint() * l.right;
      EXPECT_LE((uv - MatrixXcd::Identity(uv.rows(), uv.cols())).norm(), 1e-8);
      const MatrixXcd res = a.cast<Complex>() * l.right - l.lambda * l.right;
      EXPECT_LE(res.norm(), 1e-8);
    }
  }
}

TEST(SpectralAbscissa, SemisimpleAndDefective) {
  const auto s = spectral_abscissa(MatrixXd::Identity(2, 2));
  ASSERT_EQ(s.active.size(), 1u);
  EXPECT_EQ(s.active[0].algebraic_multiplicity, 2);
  EXPECT_TRUE(s.active[0].semisimple);
  MatrixXd j(2, 2);
  j << 1, 1, 0, 1;
  const auto d = spectral_abscissa(j);
  ASSERT_EQ(d.active.size(), 1u);
  EXPECT_FALSE(d.active[0].semisimple);
}

TEST(SpectralAbscissa, ContinuousAlongSegments) {
  std::mt19937_64 rng(22);
  const MatrixXd a = random_matrix(rng, 6, 6), d = random_matrix(rng, 6, 6);
  const double a0 = spectral_abscissa_value(a);
  double prev = kInf;
  for (double t : {1e-2, 1e-3, 1e-4, 1e-5, 1e-6}) {
    const double gap = std::abs(spectral_abscissa_value(a + t * d) - a0);
    EXPECT_LE(gap, std::max(prev, 1e-12) * 1.0001);
    prev = gap;
  }
  EXPECT_LE(prev, 1e-4);
}

TEST(HinfNorm, StaticGain) {
  MatrixXd d(2, 2);
  d << 1, 2, 3, 4;
  const auto r = hinf_norm(StateSpace::gain(d));
  EXPECT_NEAR(r.hinf, testing::sigma_max(d.cast<Complex>()), 1e-14);
  ASSERT_EQ(r.active.size(), 1u);
  EXPECT_TRUE(std::isinf(r.active[0].omega));
}

TEST(HinfNorm, FirstOrderLowPass) {
  const StateSpace g(m1(-1), m1(2), m1(1), m1(0));
  const auto r = hinf_norm(g);
  const auto oracle = grid_hinf(g.A, g.B, g.C, g.D);
  EXPECT_NEAR(r.hinf, 2.0, 1e-10);
  EXPECT_NEAR(r.hinf, oracle.value, 1e-8);
  ASSERT_FALSE(r.active.empty());
  EXPECT_NEAR(r.active[0].omega, 0.0, 1e-4);
}

TEST(HinfNorm, SecondOrderResonance) {
  MatrixXd a(2, 2), b(2, 1), c(1, 2);
  a << 0, 1, -1, -1;
  b << 0, 1;
  c << 1, 0;
  const StateSpace g(a, b, c, m1(0));
  const auto r = hinf_norm(g);
  const double zeta = 0.5;
  EXPECT_NEAR(r.hinf, 1.0 / (2 * zeta * std::sqrt(1 - zeta * zeta)), 1e-9);
  EXPECT_NEAR(r.hinf, grid_hinf(a, b, c, g.D).value, 1e-8);
  ASSERT_EQ(r.active.size(), 1u);
  EXPECT_NEAR(r.active[0].omega, std::sqrt(0.5), 1e-5);
}

TEST(HinfNorm, UnstableIsFlagged) {
  const auto r = hinf_norm(StateSpace(m1(0.5), m1(1), m1(1), m1(0)));
  EXPECT_TRUE(r.unstable);
  EXPECT_TRUE(std::isinf(r.hinf));
}

TEST(HinfNorm, FeedthroughDominatedIncludesInfinity) {
  const StateSpace g(m1(-1), m1(1), m1(-0.5), m1(1));  // (s + 0.5)/(s + 1)
  const auto r = hinf_norm(g);
  EXPECT_NEAR(r.hinf, 1.0, 1e-10);
  bool has_inf = false;
  for (const auto& f : r.active) has_inf = has_inf || std::isinf(f.omega);
  EXPECT_TRUE(has_inf);
}

TEST(HinfNorm, RandomSystemsMatchGridOracle) {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> nd(1, 8), cd(1, 3);
  for (int t = 0; t < 25; ++t) {
    const StateSpace g = random_stable_system(rng, nd(rng), cd(rng), cd(rng));
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = hinf_norm(g);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto oracle = grid_hinf(g.A, g.B, g.C, g.D);
    EXPECT_NEAR(r.hinf, oracle.value, 1e-6 * oracle.value) << "trial " << t;
    EXPECT_GE(r.hinf, oracle.value * (1 - 1e-8));
    EXPECT_LT(secs, 1.0);
    for (const auto& f : r.active)
      EXPECT_NEAR(testing::sigma_max(g.frequency_response(f.omega)), r.hinf, 1e-6 * r.hinf);
  }
}

TEST(HinfNorm, InvariantUnderStateSimilarity) {
  std::mt19937_64 rng(24);
  const StateSpace g = random_stable_system(rng, 5, 2, 2);
  MatrixXd t = random_matrix(rng, 5, 5) + 3.0 * MatrixXd::Identity(5, 5);
  const MatrixXd ti = t.inverse();
  const StateSpace h(ti * g.A * t, ti * g.B, g.C * t, g.D);
  EXPECT_NEAR(hinf_norm(g).hinf, hinf_norm(h).hinf, 1e-8 * hinf_norm(g).hinf);
}

// --- subgradients --------------------------------------------------------

UncertainClosedLoop random_loop(std::mt19937_64& rng, int n, int nd, int nw, int nz) {
  StateSpace s = random_stable_system(rng, n, nd + nw, nd + nz);
  s.D.topLeftCorner(nd, nd) *= 0.5;
  return {PartitionedSystem(s, nd, nw, nd, nz)};
}

double h_minus_value(const UncertainClosedLoop& l, const UncertaintyStructure& s, const VectorXd& d) {
  const auto r = hinf_norm(close_uncertainty(l, s, d).T_zw, 1e-12);
  return -r.hinf;
}

double a_minus_value(const UncertainClosedLoop& l, const UncertaintyStructure& s, const VectorXd& d) {
  return -testing::max_real_eigenvalue(closed_loop_A(l, s, d));
}

double rel_err(const VectorXd& g, const VectorXd& ref) {
  return (g - ref).norm() / std::max(1.0, ref.norm());
}

TEST(SubgradHMinus, StaticScalarLoop) {
  // T_zw(delta) = 1 + delta through a static LFT with zero uncertainty feedthrough.
  MatrixXd d(2, 2);
  d << 0, 1, 1, 1;
  const UncertainClosedLoop loop{PartitionedSystem::gain(d, 1, 1)};
  const UncertaintyStructure s({1});
  const auto g = subgrad_h_minus_delta(loop, s, VectorXd::Constant(1, 0.1));
  EXPECT_NEAR(g.g(0), -1.0, 1e-10);
  EXPECT_TRUE(g.smooth);
  const VectorXd fd = central_difference([&](const VectorXd& x) { return h_minus_value(loop, s, x); },
                                         VectorXd::Constant(1, 0.1));
  EXPECT_NEAR(fd(0), -1.0, 1e-8);
}

TEST(SubgradHMinus, DecoupledChannelGivesZero) {
  std::mt19937_64 rng(31);
  UncertainClosedLoop loop = random_loop(rng, 3, 2, 1, 1);
  // Remove every path from w to q: B2 = 0 and D12 = 0 on the q row.
  loop.m.sys.B.col(2).setZero();
  loop.m.sys.D.block(0, 2, 2, 1).setZero();
  const auto g = subgrad_h_minus_delta(loop, UncertaintyStructure({1, 1}), VectorXd::Constant(2, 0.2));
  EXPECT_LE(g.g.norm(), 1e-12);
}

TEST(SubgradHMinus, MatchesFiniteDifferencesAtSmoothPoints) {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  const UncertaintyStructure s({1, 2});
  int checked = 0;
  for (int t = 0; t < 80 && checked < 30; ++t) {
    const UncertainClosedLoop loop = random_loop(rng, 4, 3, 2, 2);
    VectorXd d(2);
    d << u(rng), u(rng);
    LocalModel model;
    try {
      model = h_minus_model(loop, s, d);
    } catch (const IllPosedError&) {
      continue;
    }
    if (!model.finite || !model.smooth()) continue;
    const VectorXd fd = central_difference([&](const VectorXd& x) { return h_minus_value(loop, s, x); }, d);
    EXPECT_LE(rel_err(model.equal_weight(), fd), 1e-4) << "trial " << t;
    ++checked;
  }
  EXPECT_GE(checked, 20);
}

TEST(SubgradAMinus, AffineScalar) {
  MatrixXd a = m1(-1), b = m1(1), c = m1(1);
  const UncertainClosedLoop loop{PartitionedSystem(StateSpace(a, b, c, m1(0)), 1, 0, 1, 0)};
  for (double d : {-0.9, 0.0, 0.7}) {
    const auto g = subgrad_a_minus_delta(loop, UncertaintyStructure({1}), VectorXd::Constant(1, d));
    EXPECT_NEAR(g.g(0), -1.0, 1e-12);
  }
}

TEST(SubgradAMinus, MatchesFiniteDifferencesAtSmoothPoints) {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  const UncertaintyStructure s({2, 1});
  int checked = 0, complex_pairs = 0;
  for (int t = 0; t < 80 && checked < 30; ++t) {
    const UncertainClosedLoop loop = random_loop(rng, 5, 3, 1, 1);
    VectorXd d(2);
    d << u(rng), u(rng);
    const LocalModel model = a_minus_model(loop, s, d);
    if (!model.smooth()) continue;
    if (std::abs(model.elements[0].omega) > 1e-8) ++complex_pairs;
    const VectorXd fd = central_difference([&](const VectorXd& x) { return a_minus_value(loop, s, x); }, d);
    EXPECT_LE(rel_err(model.equal_weight(), fd), 1e-4) << "trial " << t;
    ++checked;
  }
  EXPECT_GE(checked, 20);
  EXPECT_GE(complex_pairs, 1);
}

TEST(SubgradAMinus, TwoActiveEigenvaluesGiveConvexCombination) {
  MatrixXd a = -MatrixXd::Identity(2, 2);
  const UncertainClosedLoop loop{
      PartitionedSystem(StateSpace(a, MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2),
                                   MatrixXd::Zero(2, 2)),
                        2, 0, 2, 0)};
  const UncertaintyStructure s({1, 1});
  const VectorXd zero = VectorXd::Zero(2);
  const auto g = subgrad_a_minus_delta(loop, s, zero);
  EXPECT_FALSE(g.smooth);
  EXPECT_LE(g.g(0), 0.0);
  EXPECT_LE(g.g(1), 0.0);
  EXPECT_NEAR(g.g.sum(), -1.0, 1e-12);
  // Clarke upper bound: g^T d >= directional derivative for every unit direction.
  const double h = 1e-7;
  for (int i = 0; i < 2; ++i)
    for (double sgn : {-1.0, 1.0}) {
      VectorXd dir = VectorXd::Zero(2);
      dir(i) = sgn;
      const double dd = (a_minus_value(loop, s, h * dir) - a_minus_value(loop, s, zero)) / h;
      const LocalModel model = a_minus_model(loop, s, zero);
      EXPECT_GE(model.support(dir), dd - 1e-4);
    }
}

TEST(SubgradAMinus, SupportBoundsDirectionalDerivatives) {
  std::mt19937_64 rng(34);
  const UncertaintyStructure s({1, 1, 1});
  for (int t = 0; t < 20; ++t) {
    const UncertainClosedLoop loop = random_loop(rng, 4, 3, 1, 1);
    const VectorXd d = random_matrix(rng, 3, 1, 0.3);
    const LocalModel model = a_minus_model(loop, s, d);
    for (int k = 0; k < 5; ++k) {
      const VectorXd dir = random_matrix(rng, 3, 1).normalized();
      const double h = 1e-7;
      const double dd = (a_minus_value(loop, s, d + h * dir) - a_minus_value(loop, s, d)) / h;
      EXPECT_GE(model.support(dir), dd - 1e-4);
      for (const auto& v : model.vertices()) EXPECT_LE(v.dot(dir), model.support(dir) + 1e-12);
    }
  }
}

TEST(SubgradAMinus, DefectiveEigenvalueRaises) {
  MatrixXd a(2, 2);
  a << -1, 1, 0, -1;
  const UncertainClosedLoop loop{
      PartitionedSystem(StateSpace(a, MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2),
                                   MatrixXd::Zero(2, 2)),
                        2, 0, 2, 0)};
  EXPECT_THROW(subgrad_a_minus_delta(loop, UncertaintyStructure({2}), VectorXd::Zero(1)),
               DefectiveEigenvalueError);
}

TEST(SubgradHinfKappa, StaticScalar) {
  // T_zw = delta - kappa: z = p... realized as q = w, z = p - u, y = w.
  MatrixXd d(3, 3);
  // inputs [p, w, u], outputs [q, z, y]
  d << 0, 1, 0, 1, 0, -1, 0, 1, 0;
  const UncertainPlant plant(StateSpace::gain(d), 1, 1, 1, 1, 1, 1);
  const auto cs = ControllerStructure::static_gain(1, 1);
  const auto g = subgrad_hinf_kappa(plant, cs, VectorXd::Zero(1), UncertaintyStructure({1}),
                                    VectorXd::Ones(1));
  EXPECT_NEAR(g.g(0), -1.0, 1e-12);
}

UncertainPlant random_plant(std::mt19937_64& rng, int n, int nd, int nw, int nu, int nz, int ny) {
  StateSpace s = random_stable_system(rng, n, nd + nw + nu, nd + nz + ny);
  s.D *= 0.3;
  s.D.bottomRightCorner(ny, nu).setZero();
  return UncertainPlant(s, nd, nw, nu, nd, nz, ny);
}

TEST(SubgradHinfKappa, MatchesFiniteDifferencesAtSmoothPoints) {
  std::mt19937_64 rng(35);
  const UncertaintyStructure s({1, 1});
  const auto cs = ControllerStructure::full(1, 1, 1);
  int checked = 0;
  for (int t = 0; t < 80 && checked < 30; ++t) {
    const UncertainPlant plant = random_plant(rng, 3, 2, 1, 1, 1, 1);
    const VectorXd kappa = random_matrix(rng, cs.parameters(), 1, 0.2);
    kappa.size();
    VectorXd kp = kappa;
    kp(0) = -1.0 - std::abs(kp(0));  // stable controller pole
    const VectorXd d = random_matrix(rng, 2, 1, 0.3);
    LocalModel model;
    try {
      model = hinf_kappa_model(plant, cs, kp, s, d);
    } catch (const IllPosedError&) {
      continue;
    }
    if (!model.finite || !model.smooth()) continue;
    auto f = [&](const VectorXd& k) {
      return hinf_norm(closed_loop_performance(plant, build_delta_matrix(s, d), realize_controller(cs, k)),
                       1e-12)
          .hinf;
    };
    EXPECT_LE(rel_err(model.equal_weight(), central_difference(f, kp)), 1e-4) << "trial " << t;
    ++checked;
  }
  EXPECT_GE(checked, 20);
}

TEST(SubgradHinfKappa, FixedEntriesCarryNoParameter) {
  MaskedMatrix dk = MaskedMatrix::all_free(1, 2);
  dk.free(0, 1) = false;
  const ControllerStructure cs(0, 2, 1, MaskedMatrix::all_free(0, 0), MaskedMatrix::all_free(0, 2),
                               MaskedMatrix::all_free(1, 0), dk);
  std::mt19937_64 rng(36);
  const UncertainPlant plant = random_plant(rng, 2, 1, 1, 1, 1, 2);
  const auto g = subgrad_hinf_kappa(plant, cs, VectorXd::Zero(1), UncertaintyStructure({1}),
                                    VectorXd::Zero(1));
  EXPECT_EQ(g.g.size(), 1);
}

TEST(Channels, MaxOverChannels) {
  MatrixXd d(2, 2);
  d << 0.5, 0, 0, 2;
  const UncertainClosedLoop loop{PartitionedSystem(
      StateSpace(MatrixXd(0, 0), MatrixXd(0, 3), MatrixXd(3, 0),
                 (MatrixXd(3, 3) << 0, 0, 0, 0, 0.5, 0, 0, 0, 2).finished()),
      1, 2, 1, 2)};
  const UncertaintyStructure s({1});
  const auto first = h_minus_model(loop, s, VectorXd::Zero(1), {Channel{{0}, {0}}});
  EXPECT_NEAR(first.value, -0.5, 1e-14);
  const auto both = h_minus_model(loop, s, VectorXd::Zero(1), {Channel{{0}, {0}}, Channel{{1}, {1}}});
  EXPECT_NEAR(both.value, -2.0, 1e-14);
}

TEST(WellPosedness, Examples) {
  const UncertaintyStructure s({1});
  auto loop_with = [](double d11) {
    return UncertainClosedLoop{PartitionedSystem(StateSpace::gain(m1(d11)), 1, 0, 1, 0)};
  };
  EXPECT_NEAR(wellposedness_measure(loop_with(0.0), s, VectorXd::Constant(1, 0.7)).value, -1.0, 1e-15);
  EXPECT_NEAR(wellposedness_measure(loop_with(0.5), s, VectorXd::Ones(1)).value, -2.0, 1e-14);
  EXPECT_NEAR(wellposedness_measure(loop_with(0.5), s, VectorXd::Zero(1)).value, -1.0, 1e-15);
  const auto sing = wellposedness_measure(loop_with(1.0), s, VectorXd::Ones(1));
  EXPECT_TRUE(sing.singular);
  EXPECT_TRUE(std::isinf(sing.value));
}

}  // namespace
}  // namespace rpsynth
