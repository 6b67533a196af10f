#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "rpsynth/hinf.hpp"
#include "rpsynth/lft.hpp"
#include "rpsynth/spectral.hpp"

namespace rpsynth {

// Selection of performance outputs (rows of z) and inputs (columns of w).
// Empty lists select every row or column.
struct Channel {
  std::vector<int> outputs;
  std::vector<int> inputs;
};

// One active branch of a max-type function f(X) of a static block X. For a
// direction dX its directional derivative is the largest eigenvalue of the
// Hermitian part of  left^H dX right.
struct ActiveElement {
  MatrixXcd left;
  MatrixXcd right;
  double omega = 0.0;  // active frequency (H-infinity side) or Im(lambda) (spectral side)
};

// Local first-order model of  sign * f(X(theta))  at one parameter point.
// sign = -1 gives the upper-C1 functions h_-, a_- minimized on the analysis
// side; sign = +1 the max-type functions minimized on the synthesis side.
struct LocalModel {
  double value = 0.0;
  double sign = 1.0;
  bool finite = true;
  bool semisimple = true;
  AffineStaticBlock block;
  std::vector<ActiveElement> elements;

  bool smooth() const { return elements.size() == 1 && elements.front().left.cols() == 1; }

  // Rank-one choice Y = z z^H on element e.
  VectorXd gradient(const ActiveElement& e, const VectorXcd& z) const {
    const VectorXcd a = e.left * z;
    const VectorXcd b = e.right * z;
    MatrixXd grad(block.rows(), block.cols());
    for (int i = 0; i < block.rows(); ++i)
      for (int j = 0; j < block.cols(); ++j) grad(i, j) = (std::conj(a(i)) * b(j)).real();
    return sign * block.reduce(grad);
  }

  // One subgradient per element, each using the leading basis vector.
  std::vector<VectorXd> vertices() const {
    std::vector<VectorXd> out;
    for (const auto& e : elements) {
      VectorXcd z = VectorXcd::Zero(e.left.cols());
      z(0) = 1.0;
      out.push_back(gradient(e, z));
    }
    return out;
  }

  // Equal weights over the active elements.
  VectorXd equal_weight() const {
    VectorXd g = VectorXd::Zero(block.num_params);
    const auto v = vertices();
    for (const auto& x : v) g += x;
    if (!v.empty()) g /= static_cast<double>(v.size());
    return g;
  }

  // Element of the subdifferential maximizing g^T d, and that maximum.
  std::pair<VectorXd, double> steepest(const VectorXd& d) const {
    const MatrixXd xd = block.direction(d);
    std::pair<VectorXd, double> best{VectorXd::Zero(block.num_params), -kInf};
    for (const auto& e : elements) {
      MatrixXcd m = e.left.adjoint() * xd.cast<Complex>() * e.right;
      m = 0.5 * sign * (m + m.adjoint()).eval();
      Eigen::SelfAdjointEigenSolver<MatrixXcd> es(m);
      const Eigen::Index k = es.eigenvalues().size() - 1;
      if (es.eigenvalues()(k) > best.second)
        best = {gradient(e, es.eigenvectors().col(k)), es.eigenvalues()(k)};
    }
    if (elements.empty()) best.second = 0.0;
    return best;
  }

  double support(const VectorXd& d) const { return steepest(d).second; }
};

struct Subgradient {
  VectorXd g;
  bool smooth = true;
};

namespace detail {

inline std::vector<int> full_range(int n) {
  std::vector<int> r(n);
  for (int i = 0; i < n; ++i) r[i] = i;
  return r;
}

inline MatrixXd select_rows(const MatrixXd& m, const std::vector<int>& rows) {
  MatrixXd out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = m.row(rows[i]);
  return out;
}

inline MatrixXd select_cols(const MatrixXd& m, const std::vector<int>& cols) {
  MatrixXd out(m.rows(), cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(j) = m.col(cols[j]);
  return out;
}

inline void check_channel(const std::vector<int>& idx, int n, const char* what) {
  for (int i : idx)
    if (i < 0 || i >= n) throw DimensionError(std::string("channel selection: ") + what + " index out of range");
}

}  // namespace detail

// Model of  sign * max_channels ||T_zw(X(theta))||_inf  for the upper loop of
// m closed by X. Unstable closed loops give a non-finite model with no
// elements.
inline LocalModel hinf_model(const PartitionedSystem& m, const AffineStaticBlock& block,
                             const VectorXd& theta, double sign,
                             const std::vector<Channel>& channels = {}, double rel_tol = 1e-8) {
  LocalModel out;
  out.sign = sign;
  out.block = block;
  const PerturbedLoop loop = close_static_upper(m, block.value(theta));
  std::vector<Channel> chans = channels.empty() ? std::vector<Channel>{Channel{}} : channels;

  struct Eval {
    std::vector<int> rows, cols;
    ActiveFrequencyData data;
  };
  std::vector<Eval> evals;
  double best = 0.0;
  for (const auto& c : chans) {
    Eval e;
    e.rows = c.outputs.empty() ? detail::full_range(loop.T_zw.outputs()) : c.outputs;
    e.cols = c.inputs.empty() ? detail::full_range(loop.T_zw.inputs()) : c.inputs;
    detail::check_channel(e.rows, loop.T_zw.outputs(), "output");
    detail::check_channel(e.cols, loop.T_zw.inputs(), "input");
    const StateSpace sub(loop.T_zw.A, detail::select_cols(loop.T_zw.B, e.cols),
                         detail::select_rows(loop.T_zw.C, e.rows),
                         detail::select_cols(detail::select_rows(loop.T_zw.D, e.rows), e.cols));
    e.data = hinf_norm(sub, rel_tol);
    if (e.data.unstable) {
      out.finite = false;
      out.value = sign * kInf;
      return out;
    }
    best = std::max(best, e.data.hinf);
    evals.push_back(std::move(e));
  }
  out.value = sign * best;
  for (const auto& e : evals) {
    if (e.data.hinf < (1.0 - kFrequencyActivityTol) * best) continue;
    for (const auto& f : e.data.active) {
      const MatrixXcd tzp = loop.T_zp.frequency_response(f.omega);
      const MatrixXcd tqw = loop.T_qw.frequency_response(f.omega);
      MatrixXcd zp(e.rows.size(), tzp.cols());
      for (std::size_t i = 0; i < e.rows.size(); ++i) zp.row(i) = tzp.row(e.rows[i]);
      MatrixXcd qw(tqw.rows(), e.cols.size());
      for (std::size_t j = 0; j < e.cols.size(); ++j) qw.col(j) = tqw.col(e.cols[j]);
      out.elements.push_back({zp.adjoint() * f.left, qw * f.right, f.omega});
    }
  }
  return out;
}

// Model of  sign * alpha(A(X(theta))),  A(X) = A + B1 X (I - D11 X)^{-1} C1.
// Conjugate pairs contribute once. Zero-state loops give alpha = -inf.
inline LocalModel alpha_model(const PartitionedSystem& m, const AffineStaticBlock& block,
                              const VectorXd& theta, double sign,
                              double activity_tol = kEigenActivityTol) {
  LocalModel out;
  out.sign = sign;
  out.block = block;
  const MatrixXd x = block.value(theta);
  const MatrixXd a = closed_loop_A(m, x);
  const ActiveEigenData eig = spectral_abscissa(a, activity_tol);
  out.value = sign * eig.alpha;
  if (m.states() == 0) {
    out.finite = false;
    return out;
  }
  out.semisimple = eig.semisimple();
  const auto nd = m.out1;
  const MatrixXd left_loop = MatrixXd::Identity(m.in1, m.in1) - x * m.D11();
  const MatrixXd right_loop = MatrixXd::Identity(nd, nd) - m.D11() * x;
  const MatrixXcd b1 = left_loop.transpose().partialPivLu().solve(MatrixXd(m.B1().transpose())).cast<Complex>();
  const MatrixXcd c1 = right_loop.partialPivLu().solve(MatrixXd(m.C1())).cast<Complex>();
  const double tol = 1e-6 * std::max(1.0, a.norm());
  for (const auto& e : eig.active) {
    if (e.lambda.imag() < -tol) continue;
    if (!e.semisimple) continue;
    out.elements.push_back({b1 * e.left, c1 * e.right, e.lambda.imag()});
  }
  return out;
}

// --- delta side ----------------------------------------------------------

inline LocalModel h_minus_model(const UncertainClosedLoop& loop, const UncertaintyStructure& s,
                                const VectorXd& delta, const std::vector<Channel>& channels = {}) {
  if (s.size() != loop.n_delta()) throw DimensionError("structure size differs from uncertainty channel width");
  return hinf_model(loop.m, s.block(), delta, -1.0, channels);
}

inline LocalModel a_minus_model(const UncertainClosedLoop& loop, const UncertaintyStructure& s,
                                const VectorXd& delta) {
  if (s.size() != loop.n_delta()) throw DimensionError("structure size differs from uncertainty channel width");
  return alpha_model(loop.m, s.block(), delta, -1.0);
}

// Subgradient of h_-(delta) = -||T_zw(delta)||_inf with equal weights over the
// active frequencies.
inline Subgradient subgrad_h_minus_delta(const UncertainClosedLoop& loop,
                                         const UncertaintyStructure& s, const VectorXd& delta,
                                         const std::vector<Channel>& channels = {}) {
  const LocalModel model = h_minus_model(loop, s, delta, channels);
  if (!model.finite) throw DomainError("subgrad_h_minus_delta: closed loop unstable at delta");
  return {model.equal_weight(), model.smooth()};
}

// Subgradient of a_-(delta) = -alpha(A(delta)) with equal weights over the
// active eigenvalues.
inline Subgradient subgrad_a_minus_delta(const UncertainClosedLoop& loop,
                                         const UncertaintyStructure& s, const VectorXd& delta) {
  const LocalModel model = a_minus_model(loop, s, delta);
  if (!model.semisimple)
    throw DefectiveEigenvalueError(
        "subgrad_a_minus_delta: active eigenvalue is not semisimple; the abscissa may not be "
        "locally Lipschitz here (perturb delta)");
  if (model.elements.empty()) return {VectorXd::Zero(s.parameters()), true};
  return {model.equal_weight(), model.smooth()};
}

// --- controller side -----------------------------------------------------

// Closed loop in controller-gain form: the augmented controller gain closes
// the upper channel, the performance channel stays open.
inline PartitionedSystem controller_loop(const UncertainPlant& plant, const ControllerStructure& cs,
                                         const UncertaintyStructure& s, const VectorXd& delta) {
  if (cs.inputs() != plant.n_y || cs.outputs() != plant.n_u)
    throw DimensionError("controller structure does not match the plant control channel");
  if (s.size() != plant.n_p || s.size() != plant.n_q)
    throw DimensionError("uncertainty structure does not match the plant uncertainty channel");
  return controller_gain_form(close_uncertainty_loop(plant, build_delta_matrix(s, delta)), cs.order());
}

inline LocalModel hinf_kappa_model(const UncertainPlant& plant, const ControllerStructure& cs,
                                   const VectorXd& kappa, const UncertaintyStructure& s,
                                   const VectorXd& delta, const std::vector<Channel>& channels = {}) {
  return hinf_model(controller_loop(plant, cs, s, delta), cs.block(), kappa, 1.0, channels);
}

inline LocalModel alpha_kappa_model(const UncertainPlant& plant, const ControllerStructure& cs,
                                    const VectorXd& kappa, const UncertaintyStructure& s,
                                    const VectorXd& delta) {
  return alpha_model(controller_loop(plant, cs, s, delta), cs.block(), kappa, 1.0);
}

// Subgradient of kappa -> ||T_zw(delta, kappa)||_inf.
inline Subgradient subgrad_hinf_kappa(const UncertainPlant& plant, const ControllerStructure& cs,
                                      const VectorXd& kappa, const UncertaintyStructure& s,
                                      const VectorXd& delta, const std::vector<Channel>& channels = {}) {
  const LocalModel model = hinf_kappa_model(plant, cs, kappa, s, delta, channels);
  if (!model.finite) throw DomainError("subgrad_hinf_kappa: closed loop unstable");
  return {model.equal_weight(), model.smooth()};
}

// --- well-posedness ------------------------------------------------------

struct WellPosedness {
  double value = -1.0;  // -sigma_max((I - Delta D)^{-1})
  bool singular = false;
};

inline WellPosedness wellposedness_measure(const UncertainClosedLoop& loop,
                                           const UncertaintyStructure& s, const VectorXd& delta) {
  const MatrixXd x = build_delta_matrix(s, delta);
  if (x.cols() != loop.m.out1) throw DimensionError("structure size differs from uncertainty channel width");
  const MatrixXd w = MatrixXd::Identity(x.rows(), x.rows()) - x * loop.m.D11();
  if (w.rows() == 0) return {};
  Eigen::JacobiSVD<MatrixXd> svd(w);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  if (!(smin >= kWellPosedRelTol * sv(0)) || sv(0) == 0.0) return {-kInf, true};
  return {-1.0 / smin, false};
}

}  // namespace rpsynth
