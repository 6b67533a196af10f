#pragma once

#include <sstream>

#include "rpsynth/state_space.hpp"
#include "rpsynth/structure.hpp"

namespace rpsynth {

// Uncertain plant P with inputs [p; w; u] and outputs [q; z; y]:
//   p -> q  uncertainty channel (closed by p = Delta q)
//   w -> z  performance channel
//   u -> y  control channel (closed by u = K y)
struct UncertainPlant {
  StateSpace ss;
  int n_p = 0, n_w = 0, n_u = 0;
  int n_q = 0, n_z = 0, n_y = 0;

  UncertainPlant() = default;
  UncertainPlant(StateSpace s, int np, int nw, int nu, int nq, int nz, int ny)
      : ss(std::move(s)), n_p(np), n_w(nw), n_u(nu), n_q(nq), n_z(nz), n_y(ny) {
    if (np + nw + nu != ss.inputs() || nq + nz + ny != ss.outputs())
      throw DimensionError("UncertainPlant: channel widths do not match the realization");
  }

  // Assemble from the individual blocks of
  //   x' = A x + Bp p + Bw w + Bu u
  //   q  = Cq x + Dqp p + Dqw w + Dqu u
  //   z  = Cz x + Dzp p + Dzw w + Dzu u
  //   y  = Cy x + Dyp p + Dyw w + Dyu u
  static UncertainPlant from_blocks(const MatrixXd& A, const MatrixXd& Bp, const MatrixXd& Bw,
                                    const MatrixXd& Bu, const MatrixXd& Cq, const MatrixXd& Cz,
                                    const MatrixXd& Cy, const MatrixXd& Dqp, const MatrixXd& Dqw,
                                    const MatrixXd& Dqu, const MatrixXd& Dzp, const MatrixXd& Dzw,
                                    const MatrixXd& Dzu, const MatrixXd& Dyp, const MatrixXd& Dyw,
                                    const MatrixXd& Dyu) {
    const auto n = A.rows();
    const auto np = Bp.cols(), nw = Bw.cols(), nu = Bu.cols();
    const auto nq = Cq.rows(), nz = Cz.rows(), ny = Cy.rows();
    auto check = [](const MatrixXd& m, Eigen::Index r, Eigen::Index c, const char* name) {
      if (m.rows() != r || m.cols() != c) {
        std::ostringstream os;
        os << "plant block " << name << " is " << m.rows() << "x" << m.cols() << ", expected " << r
           << "x" << c;
        throw DimensionError(os.str());
      }
    };
    check(A, n, n, "A");
    check(Bp, n, np, "Bp");
    check(Bw, n, nw, "Bw");
    check(Bu, n, nu, "Bu");
    check(Cq, nq, n, "Cq");
    check(Cz, nz, n, "Cz");
    check(Cy, ny, n, "Cy");
    check(Dqp, nq, np, "D.qp");
    check(Dqw, nq, nw, "D.qw");
    check(Dqu, nq, nu, "D.qu");
    check(Dzp, nz, np, "D.zp");
    check(Dzw, nz, nw, "D.zw");
    check(Dzu, nz, nu, "D.zu");
    check(Dyp, ny, np, "D.yp");
    check(Dyw, ny, nw, "D.yw");
    check(Dyu, ny, nu, "D.yu");
    MatrixXd B(n, np + nw + nu), C(nq + nz + ny, n), D(nq + nz + ny, np + nw + nu);
    B << Bp, Bw, Bu;
    C << Cq, Cz, Cy;
    D << Dqp, Dqw, Dqu, Dzp, Dzw, Dzu, Dyp, Dyw, Dyu;
    return UncertainPlant(StateSpace(A, B, C, D), static_cast<int>(np), static_cast<int>(nw),
                          static_cast<int>(nu), static_cast<int>(nq), static_cast<int>(nz),
                          static_cast<int>(ny));
  }

  int states() const { return ss.states(); }

  // [p; w] -> [q; z] upper, u -> y lower.
  PartitionedSystem control_partition() const {
    return PartitionedSystem(ss, n_p + n_w, n_u, n_q + n_z, n_y);
  }
  // p -> q upper, [w; u] -> [z; y] lower.
  PartitionedSystem uncertainty_partition() const {
    return PartitionedSystem(ss, n_p, n_w + n_u, n_q, n_z + n_y);
  }
};

// M = F_l(P, K): controller closed, uncertainty channel first (p -> q),
// performance channel second (w -> z).
struct UncertainClosedLoop {
  PartitionedSystem m;

  int n_delta() const { return m.in1; }
  int states() const { return m.states(); }
};

inline PartitionedSystem controller_as_lower(const StateSpace& k) {
  return PartitionedSystem(k, k.inputs(), 0, k.outputs(), 0);
}

// F_l(P, K) via the star product P * K.
inline UncertainClosedLoop close_controller(const UncertainPlant& plant, const StateSpace& controller) {
  if (controller.inputs() != plant.n_y || controller.outputs() != plant.n_u) {
    std::ostringstream os;
    os << "close_controller: controller is " << controller.outputs() << "x" << controller.inputs()
       << ", plant control channel needs " << plant.n_u << "x" << plant.n_y;
    throw DimensionError(os.str());
  }
  PartitionedSystem closed = star_product(plant.control_partition(), controller_as_lower(controller));
  return {PartitionedSystem(std::move(closed.sys), plant.n_p, plant.n_w, plant.n_q, plant.n_z)};
}

// Static upper block [[0, I], [I, X]] used to close p = X q while keeping the
// channels p~ -> q and w -> z open.
inline PartitionedSystem perturbation_closure_block(const MatrixXd& x) {
  const auto np = x.rows(), nq = x.cols();
  MatrixXd d = MatrixXd::Zero(nq + np, np + nq);
  d.topRightCorner(nq, nq) = MatrixXd::Identity(nq, nq);
  d.bottomLeftCorner(np, np) = MatrixXd::Identity(np, np);
  d.bottomRightCorner(np, nq) = x;
  return PartitionedSystem::gain(d, static_cast<int>(np), static_cast<int>(nq));
}

// Blocks of [[*, T_qw], [T_zp, T_zw]] = [[0, I], [I, X]] * M for a static
// upper perturbation p = X q. All three share the realization's A matrix.
struct PerturbedLoop {
  StateSpace T_zw, T_qw, T_zp;
};

inline PerturbedLoop close_static_upper(const PartitionedSystem& m, const MatrixXd& x) {
  if (x.rows() != m.in1 || x.cols() != m.out1) {
    std::ostringstream os;
    os << "static perturbation is " << x.rows() << "x" << x.cols() << ", loop channel needs "
       << m.in1 << "x" << m.out1;
    throw DimensionError(os.str());
  }
  // require_invertible inside the star product tests I - X D11; the same
  // singular values govern I - D11 X.
  const PartitionedSystem closed = star_product(perturbation_closure_block(x), m);
  PartitionedSystem blocks(closed.sys, closed.in1, closed.in2, closed.out1, closed.out2);
  return {blocks.block(2, 2), blocks.block(1, 2), blocks.block(2, 1)};
}

inline PerturbedLoop close_uncertainty(const UncertainClosedLoop& loop,
                                       const UncertaintyStructure& structure,
                                       const VectorXd& delta) {
  if (structure.size() != loop.n_delta() || loop.m.out1 != loop.n_delta())
    throw DimensionError("close_uncertainty: uncertainty channel width differs from structure size");
  return close_static_upper(loop.m, build_delta_matrix(structure, delta));
}

// A(X) = A + B1 X (I - D11 X)^{-1} C1 for the upper loop of `m`.
inline MatrixXd closed_loop_A(const PartitionedSystem& m, const MatrixXd& x) {
  const MatrixXd d11 = m.D11();
  MatrixXd loop = MatrixXd::Identity(d11.rows(), d11.rows()) - d11 * x;
  require_invertible(loop, "closed_loop_A");
  if (loop.rows() == 0) return m.sys.A;
  return m.sys.A + m.B1() * x * loop.partialPivLu().solve(MatrixXd(m.C1()));
}

inline MatrixXd closed_loop_A(const UncertainClosedLoop& loop, const UncertaintyStructure& structure,
                              const VectorXd& delta) {
  if (structure.size() != loop.n_delta())
    throw DimensionError("closed_loop_A: uncertainty channel width differs from structure size");
  return closed_loop_A(loop.m, build_delta_matrix(structure, delta));
}

// F_u(P, Delta): uncertainty closed, [w; u] -> [z; y] remain.
inline PartitionedSystem close_uncertainty_loop(const UncertainPlant& plant, const MatrixXd& delta) {
  if (delta.rows() != plant.n_p || delta.cols() != plant.n_q)
    throw DimensionError("close_uncertainty_loop: Delta does not match the uncertainty channel");
  const MatrixXd d = delta;
  PartitionedSystem upper = PartitionedSystem::gain(d, 0, 0);
  PartitionedSystem closed = star_product(upper, plant.uncertainty_partition());
  return PartitionedSystem(std::move(closed.sys), plant.n_w, plant.n_u, plant.n_z, plant.n_y);
}

// Closed loop T_zw for (Delta, K): F_l(F_u(P, Delta), K).
inline StateSpace closed_loop_performance(const UncertainPlant& plant, const MatrixXd& delta,
                                          const StateSpace& controller) {
  PartitionedSystem g = close_uncertainty_loop(plant, delta);
  return star_product(g, controller_as_lower(controller)).sys;
}

// Rewrites the (w, u) -> (z, y) system `g` so that a dynamic controller of
// order n_k becomes the static gain [[A_K, B_K], [C_K, D_K]] acting from
// y~ = [x_K; y] to u~ = [x_K'; u]. The result has the controller channel
// first: [u~; w] -> [y~; z], and states [x; x_K].
inline PartitionedSystem controller_gain_form(const PartitionedSystem& g, int n_k) {
  const int n = g.states();
  const int nw = g.in1, nu = g.in2, nz = g.out1, ny = g.out2;
  const int N = n + n_k;
  MatrixXd A = MatrixXd::Zero(N, N);
  A.topLeftCorner(n, n) = g.sys.A;
  MatrixXd B = MatrixXd::Zero(N, n_k + nu + nw);
  B.block(0, n_k, n, nu) = g.B2();
  B.block(n, 0, n_k, n_k) = MatrixXd::Identity(n_k, n_k);
  B.block(0, n_k + nu, n, nw) = g.B1();
  MatrixXd C = MatrixXd::Zero(n_k + ny + nz, N);
  C.block(0, n, n_k, n_k) = MatrixXd::Identity(n_k, n_k);
  C.block(n_k, 0, ny, n) = g.C2();
  C.block(n_k + ny, 0, nz, n) = g.C1();
  MatrixXd D = MatrixXd::Zero(n_k + ny + nz, n_k + nu + nw);
  D.block(n_k, n_k, ny, nu) = g.D22();
  D.block(n_k, n_k + nu, ny, nw) = g.D21();
  D.block(n_k + ny, n_k, nz, nu) = g.D12();
  D.block(n_k + ny, n_k + nu, nz, nw) = g.D11();
  return PartitionedSystem(StateSpace(A, B, C, D), n_k + nu, nw, n_k + ny, nz);
}

}  // namespace rpsynth
