#pragma once

#include <numeric>
#include <optional>
#include <sstream>
#include <vector>

#include "rpsynth/state_space.hpp"

namespace rpsynth {

// One unit entry of an affine matrix parametrization: parameter `index`
// contributes to entry (row, col).
struct Placement {
  int index;
  int row;
  int col;
};

// X(theta) = offset + sum_k theta_k E_k where each E_k is a sum of unit
// entries. Both Delta(delta) and the augmented controller gain
// [[A_K, B_K], [C_K, D_K]](kappa) have this form.
struct AffineStaticBlock {
  MatrixXd offset;
  std::vector<Placement> placements;
  int num_params = 0;

  int rows() const { return static_cast<int>(offset.rows()); }
  int cols() const { return static_cast<int>(offset.cols()); }

  MatrixXd value(const VectorXd& theta) const {
    check(theta);
    MatrixXd x = offset;
    for (const auto& p : placements) x(p.row, p.col) += theta(p.index);
    return x;
  }

  // Linear part only: sum_k d_k E_k.
  MatrixXd direction(const VectorXd& d) const {
    check(d);
    MatrixXd x = MatrixXd::Zero(rows(), cols());
    for (const auto& p : placements) x(p.row, p.col) += d(p.index);
    return x;
  }

  // Adjoint of `direction`: g_k = <E_k, G>.
  VectorXd reduce(const MatrixXd& grad) const {
    VectorXd g = VectorXd::Zero(num_params);
    for (const auto& p : placements) g(p.index) += grad(p.row, p.col);
    return g;
  }

 private:
  void check(const VectorXd& theta) const {
    if (theta.size() != num_params) {
      std::ostringstream os;
      os << "parameter vector has length " << theta.size() << ", expected " << num_params;
      throw DimensionError(os.str());
    }
  }
};

// Block sizes r_1..r_m of Delta = diag[delta_1 I_{r_1}, ..., delta_m I_{r_m}].
class UncertaintyStructure {
 public:
  UncertaintyStructure() = default;
  explicit UncertaintyStructure(std::vector<int> block_sizes) : sizes_(std::move(block_sizes)) {
    if (sizes_.empty()) throw DimensionError("UncertaintyStructure: at least one block required");
    for (int r : sizes_)
      if (r < 1) throw DimensionError("UncertaintyStructure: block sizes must be positive");
  }

  int parameters() const { return static_cast<int>(sizes_.size()); }
  int size() const { return std::accumulate(sizes_.begin(), sizes_.end(), 0); }
  const std::vector<int>& block_sizes() const { return sizes_; }

  AffineStaticBlock block() const {
    AffineStaticBlock b;
    b.offset = MatrixXd::Zero(size(), size());
    b.num_params = parameters();
    int pos = 0;
    for (int k = 0; k < parameters(); ++k)
      for (int j = 0; j < sizes_[k]; ++j, ++pos) b.placements.push_back({k, pos, pos});
    return b;
  }

 private:
  std::vector<int> sizes_;
};

inline MatrixXd build_delta_matrix(const UncertaintyStructure& structure, const VectorXd& delta) {
  if (delta.size() != structure.parameters()) {
    std::ostringstream os;
    os << "build_delta_matrix: delta has length " << delta.size() << ", structure has "
       << structure.parameters() << " parameters";
    throw DimensionError(os.str());
  }
  MatrixXd out = MatrixXd::Zero(structure.size(), structure.size());
  int pos = 0;
  for (int k = 0; k < structure.parameters(); ++k)
    for (int j = 0; j < structure.block_sizes()[k]; ++j, ++pos) out(pos, pos) = delta(k);
  return out;
}

// Per-entry mask of a controller matrix: free entries are design parameters,
// the others keep their fixed value.
struct MaskedMatrix {
  MatrixXd fixed;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> free;

  static MaskedMatrix all_free(int rows, int cols) {
    return {MatrixXd::Zero(rows, cols),
            Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(rows, cols, true)};
  }
  static MaskedMatrix all_fixed(const MatrixXd& value) {
    return {value, Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(
                       value.rows(), value.cols(), false)};
  }
  int free_count() const { return static_cast<int>(free.count()); }
};

// Structured controller  x_K' = A_K x_K + B_K y,  u = C_K x_K + D_K y  with
// affine entry masks. Parameters are numbered row-major through A_K, B_K,
// C_K, D_K.
class ControllerStructure {
 public:
  ControllerStructure() = default;
  ControllerStructure(int order, int n_y, int n_u, MaskedMatrix ak, MaskedMatrix bk,
                      MaskedMatrix ck, MaskedMatrix dk)
      : order_(order), ny_(n_y), nu_(n_u), m_{std::move(ak), std::move(bk), std::move(ck),
                                               std::move(dk)} {
    const int rows[4] = {order, order, n_u, n_u};
    const int cols[4] = {order, n_y, order, n_y};
    const char* names[4] = {"A_K", "B_K", "C_K", "D_K"};
    for (int i = 0; i < 4; ++i) {
      if (m_[i].fixed.rows() != rows[i] || m_[i].fixed.cols() != cols[i] ||
          m_[i].free.rows() != rows[i] || m_[i].free.cols() != cols[i]) {
        std::ostringstream os;
        os << "ControllerStructure: " << names[i] << " mask must be " << rows[i] << "x" << cols[i];
        throw DimensionError(os.str());
      }
    }
  }

  // Every entry free.
  static ControllerStructure full(int order, int n_y, int n_u) {
    return ControllerStructure(order, n_y, n_u, MaskedMatrix::all_free(order, order),
                               MaskedMatrix::all_free(order, n_y), MaskedMatrix::all_free(n_u, order),
                               MaskedMatrix::all_free(n_u, n_y));
  }

  // Static output feedback u = D_K y.
  static ControllerStructure static_gain(int n_y, int n_u) { return full(0, n_y, n_u); }

  // SISO PID  Kp + Ki/s + Kd s/(tau s + 1)  realized with a fixed integrator
  // and derivative filter; the free parameters enter C_K and D_K:
  //   C_K = [Ki, -Kd/tau^2],  D_K = Kp + Kd/tau.
  static ControllerStructure pid(double tau) {
    MatrixXd a(2, 2);
    a << 0.0, 0.0, 0.0, -1.0 / tau;
    return ControllerStructure(2, 1, 1, MaskedMatrix::all_fixed(a),
                               MaskedMatrix::all_fixed(MatrixXd::Ones(2, 1)),
                               MaskedMatrix::all_free(1, 2), MaskedMatrix::all_free(1, 1));
  }

  int order() const { return order_; }
  int outputs() const { return nu_; }
  int inputs() const { return ny_; }
  int parameters() const {
    int n = 0;
    for (const auto& m : m_) n += m.free_count();
    return n;
  }
  const MaskedMatrix& mask(int i) const { return m_[i]; }

  // Parametrization of the stacked gain [[A_K, B_K], [C_K, D_K]].
  AffineStaticBlock block() const {
    AffineStaticBlock b;
    b.offset = MatrixXd::Zero(order_ + nu_, order_ + ny_);
    const int r0[4] = {0, 0, order_, order_};
    const int c0[4] = {0, order_, 0, order_};
    int k = 0;
    for (int i = 0; i < 4; ++i) {
      const auto& m = m_[i];
      for (int r = 0; r < m.fixed.rows(); ++r)
        for (int c = 0; c < m.fixed.cols(); ++c) {
          if (m.free(r, c))
            b.placements.push_back({k++, r0[i] + r, c0[i] + c});
          else
            b.offset(r0[i] + r, c0[i] + c) = m.fixed(r, c);
        }
    }
    b.num_params = k;
    return b;
  }

 private:
  int order_ = 0, ny_ = 0, nu_ = 0;
  MaskedMatrix m_[4];
};

inline StateSpace realize_controller(const ControllerStructure& structure, const VectorXd& kappa) {
  if (kappa.size() != structure.parameters()) {
    std::ostringstream os;
    os << "realize_controller: kappa has length " << kappa.size() << ", structure has "
       << structure.parameters() << " free entries";
    throw DimensionError(os.str());
  }
  const MatrixXd k = structure.block().value(kappa);
  const int n = structure.order();
  return StateSpace(k.topLeftCorner(n, n), k.topRightCorner(n, structure.inputs()),
                    k.bottomLeftCorner(structure.outputs(), n),
                    k.bottomRightCorner(structure.outputs(), structure.inputs()));
}

}  // namespace rpsynth
