#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "rpsynth/error.hpp"

namespace rpsynth {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;
using Complex = std::complex<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Relative threshold below which an interconnection matrix counts as singular.
inline constexpr double kWellPosedRelTol = 1e-12;

inline bool all_finite(const MatrixXd& m) { return m.allFinite(); }

inline double max_singular_value(const MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  return svd.singularValues()(0);
}

inline double min_singular_value(const MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

// Throws IllPosedError when the square matrix `loop` is numerically singular:
// sigma_min < kWellPosedRelTol * sigma_max.
inline void require_invertible(const MatrixXd& loop, const std::string& context) {
  if (loop.rows() == 0) return;
  Eigen::JacobiSVD<MatrixXd> svd(loop);
  const auto& s = svd.singularValues();
  const double smax = s(0);
  const double smin = s(s.size() - 1);
  if (!(smin >= kWellPosedRelTol * smax) || smax == 0.0) {
    std::ostringstream os;
    os << context << ": algebraic loop not well-posed (sigma_min = " << smin << ")";
    throw IllPosedError(os.str(), smin);
  }
}

// Finite-dimensional LTI system  x' = A x + B u,  y = C x + D u.
struct StateSpace {
  MatrixXd A, B, C, D;

  StateSpace() = default;
  StateSpace(MatrixXd a, MatrixXd b, MatrixXd c, MatrixXd d)
      : A(std::move(a)), B(std::move(b)), C(std::move(c)), D(std::move(d)) {
    validate();
  }

  static StateSpace gain(const MatrixXd& d) {
    return StateSpace(MatrixXd(0, 0), MatrixXd(0, d.cols()), MatrixXd(d.rows(), 0), d);
  }

  int states() const { return static_cast<int>(A.rows()); }
  int inputs() const { return static_cast<int>(D.cols()); }
  int outputs() const { return static_cast<int>(D.rows()); }

  void validate() const {
    const auto n = A.rows();
    if (A.cols() != n || B.rows() != n || C.cols() != n || C.rows() != D.rows() ||
        B.cols() != D.cols()) {
      std::ostringstream os;
      os << "StateSpace: inconsistent dimensions A " << A.rows() << "x" << A.cols() << ", B "
         << B.rows() << "x" << B.cols() << ", C " << C.rows() << "x" << C.cols() << ", D "
         << D.rows() << "x" << D.cols();
      throw DimensionError(os.str());
    }
    if (!all_finite(A) || !all_finite(B) || !all_finite(C) || !all_finite(D))
      throw DimensionError("StateSpace: non-finite entries");
  }

  // G(s) = C (sI - A)^{-1} B + D.
  MatrixXcd response(Complex s) const {
    MatrixXcd g = D.cast<Complex>();
    if (states() == 0) return g;
    MatrixXcd m = -A.cast<Complex>();
    m.diagonal().array() += s;
    g += C.cast<Complex>() * m.partialPivLu().solve(B.cast<Complex>());
    return g;
  }

  // Frequency response on the imaginary axis; omega = +inf returns D.
  MatrixXcd frequency_response(double omega) const {
    if (std::isinf(omega)) return D.cast<Complex>();
    return response(Complex(0.0, omega));
  }
};

inline double max_singular_value(const MatrixXcd& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixXcd> svd(m);
  return svd.singularValues()(0);
}

// A system whose inputs and outputs are split into two channels each:
//   [z1; z2] = [[G11, G12], [G21, G22]] [w1; w2].
struct PartitionedSystem {
  StateSpace sys;
  int in1 = 0, in2 = 0;
  int out1 = 0, out2 = 0;

  PartitionedSystem() = default;
  PartitionedSystem(StateSpace s, int i1, int i2, int o1, int o2)
      : sys(std::move(s)), in1(i1), in2(i2), out1(o1), out2(o2) {
    if (in1 < 0 || in2 < 0 || out1 < 0 || out2 < 0 || in1 + in2 != sys.inputs() ||
        out1 + out2 != sys.outputs()) {
      std::ostringstream os;
      os << "PartitionedSystem: channel widths (" << in1 << "," << in2 << ")->(" << out1 << ","
         << out2 << ") do not match a " << sys.outputs() << "x" << sys.inputs() << " system";
      throw DimensionError(os.str());
    }
  }

  static PartitionedSystem gain(const MatrixXd& d, int i1, int o1) {
    return PartitionedSystem(StateSpace::gain(d), i1, static_cast<int>(d.cols()) - i1, o1,
                             static_cast<int>(d.rows()) - o1);
  }

  int states() const { return sys.states(); }
  auto B1() const { return sys.B.leftCols(in1); }
  auto B2() const { return sys.B.rightCols(in2); }
  auto C1() const { return sys.C.topRows(out1); }
  auto C2() const { return sys.C.bottomRows(out2); }
  auto D11() const { return sys.D.topLeftCorner(out1, in1); }
  auto D12() const { return sys.D.topRightCorner(out1, in2); }
  auto D21() const { return sys.D.bottomLeftCorner(out2, in1); }
  auto D22() const { return sys.D.bottomRightCorner(out2, in2); }

  // Sub-block from channel `in` to channel `out` (1-based) as a StateSpace.
  StateSpace block(int out, int in) const {
    const int r0 = out == 1 ? 0 : out1, nr = out == 1 ? out1 : out2;
    const int c0 = in == 1 ? 0 : in1, nc = in == 1 ? in1 : in2;
    return StateSpace(sys.A, sys.B.middleCols(c0, nc), sys.C.middleRows(r0, nr),
                      sys.D.block(r0, c0, nr, nc));
  }
};

// Redheffer star product. The lower channel of `upper` (w2 -> z2) is wired to
// the upper channel of `lower`:  upper.w2 = lower.z1,  lower.w1 = upper.z2.
// The result maps [upper.w1; lower.w2] -> [upper.z1; lower.z2] with state
// [x_upper; x_lower].
inline PartitionedSystem star_product(const PartitionedSystem& upper,
                                      const PartitionedSystem& lower) {
  if (upper.out2 != lower.in1 || upper.in2 != lower.out1) {
    std::ostringstream os;
    os << "star_product: inner channels incompatible (upper lower-channel " << upper.in2 << "->"
       << upper.out2 << ", lower upper-channel " << lower.in1 << "->" << lower.out1 << ")";
    throw DimensionError(os.str());
  }
  const int nu = upper.states(), nl = lower.states(), n = nu + nl;
  const int ny = upper.out2;  // signal upper -> lower
  const int nv = upper.in2;   // signal lower -> upper
  const int m1 = upper.in1, m2 = lower.in2;
  const int p1 = upper.out1, p2 = lower.out2;

  const MatrixXd D22u = upper.D22();
  const MatrixXd D11l = lower.D11();
  MatrixXd loop = MatrixXd::Identity(ny, ny) - D22u * D11l;
  require_invertible(loop, "star_product");
  const auto lu = loop.partialPivLu();

  // y = E (C2u xu + D22u C1l xl + D21u w1 + D22u D12l w2),  v = C1l xl + D11l y + D12l w2.
  MatrixXd y_x(ny, n), y_w(ny, m1 + m2);
  y_x << upper.C2(), D22u * lower.C1();
  y_w << upper.D21(), D22u * lower.D12();
  if (ny > 0) {
    y_x = lu.solve(y_x);
    y_w = lu.solve(y_w);
  }
  MatrixXd v_x(nv, n), v_w(nv, m1 + m2);
  v_x << MatrixXd::Zero(nv, nu), lower.C1();
  v_w << MatrixXd::Zero(nv, m1), lower.D12();
  v_x += D11l * y_x;
  v_w += D11l * y_w;

  MatrixXd bv(n, nv), by(n, ny), dv(p1 + p2, nv), dy(p1 + p2, ny);
  bv << upper.B2(), MatrixXd::Zero(nl, nv);
  by << MatrixXd::Zero(nu, ny), lower.B1();
  dv << upper.D12(), MatrixXd::Zero(p2, nv);
  dy << MatrixXd::Zero(p1, ny), lower.D21();

  MatrixXd a = MatrixXd::Zero(n, n);
  a.topLeftCorner(nu, nu) = upper.sys.A;
  a.bottomRightCorner(nl, nl) = lower.sys.A;
  MatrixXd b = MatrixXd::Zero(n, m1 + m2);
  b.topLeftCorner(nu, m1) = upper.B1();
  b.bottomRightCorner(nl, m2) = lower.B2();
  MatrixXd c = MatrixXd::Zero(p1 + p2, n);
  c.topLeftCorner(p1, nu) = upper.C1();
  c.bottomRightCorner(p2, nl) = lower.C2();
  MatrixXd d = MatrixXd::Zero(p1 + p2, m1 + m2);
  d.topLeftCorner(p1, m1) = upper.D11();
  d.bottomRightCorner(p2, m2) = lower.D22();

  a += bv * v_x + by * y_x;
  b += bv * v_w + by * y_w;
  c += dv * v_x + dy * y_x;
  d += dv * v_w + dy * y_w;
  return PartitionedSystem(StateSpace(std::move(a), std::move(b), std::move(c), std::move(d)),
                           m1, m2, p1, p2);
}

}  // namespace rpsynth
