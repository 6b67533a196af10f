#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "rpsynth/state_space.hpp"

namespace rpsynth {

// Eigenvalue-activity tolerance relative to (1 + |alpha|).
inline constexpr double kEigenActivityTol = 1e-8;

struct ActiveEigenvalue {
  Complex lambda;
  MatrixXcd right;  // V, n x r
  MatrixXcd left;   // U, n x r with U^H V = I
  int algebraic_multiplicity = 1;
  bool simple = true;
  bool semisimple = true;
};

struct ActiveEigenData {
  double alpha = -kInf;
  std::vector<ActiveEigenvalue> active;
  std::vector<Complex> eigenvalues;

  bool semisimple() const {
    return std::all_of(active.begin(), active.end(), [](const auto& e) { return e.semisimple; });
  }
};

inline std::vector<Complex> eigenvalues(const MatrixXd& a) {
  std::vector<Complex> out;
  if (a.rows() == 0) return out;
  Eigen::EigenSolver<MatrixXd> es(a, false);
  if (es.info() != Eigen::Success) throw NumericalError("eigenvalue decomposition failed");
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) out.push_back(es.eigenvalues()(i));
  return out;
}

inline double spectral_abscissa_value(const MatrixXd& a) {
  double alpha = -kInf;
  for (const auto& l : eigenvalues(a)) alpha = std::max(alpha, l.real());
  return alpha;
}

// alpha(A) = max Re(lambda) with the active eigenvalues
// Re(lambda) >= alpha - activity_tol (1 + |alpha|) and bi-orthonormal
// eigenvector bases. Nearby active eigenvalues are clustered; a cluster whose
// geometric multiplicity falls short of its size is flagged non-semisimple.
inline ActiveEigenData spectral_abscissa(const MatrixXd& a, double activity_tol = kEigenActivityTol) {
  if (a.rows() != a.cols()) throw DimensionError("spectral_abscissa: matrix not square");
  if (!a.allFinite()) throw NumericalError("spectral_abscissa: non-finite entries");
  ActiveEigenData out;
  out.eigenvalues = eigenvalues(a);
  if (out.eigenvalues.empty()) return out;
  for (const auto& l : out.eigenvalues) out.alpha = std::max(out.alpha, l.real());

  const double threshold = out.alpha - activity_tol * (1.0 + std::abs(out.alpha));
  std::vector<Complex> active;
  for (const auto& l : out.eigenvalues)
    if (l.real() >= threshold) active.push_back(l);

  const double scale = std::max(1.0, a.norm());
  const double cluster_tol = 1e-6 * scale;
  std::vector<bool> used(active.size(), false);
  for (std::size_t i = 0; i < active.size(); ++i) {
    if (used[i]) continue;
    std::vector<Complex> members{active[i]};
    used[i] = true;
    for (std::size_t j = i + 1; j < active.size(); ++j)
      if (!used[j] && std::abs(active[j] - active[i]) <= cluster_tol) {
        members.push_back(active[j]);
        used[j] = true;
      }
    Complex mean(0.0, 0.0);
    for (const auto& l : members) mean += l;
    mean /= static_cast<double>(members.size());
    const int alg = static_cast<int>(members.size());

    MatrixXcd shifted = a.cast<Complex>();
    shifted.diagonal().array() -= mean;
    Eigen::JacobiSVD<MatrixXcd> svd(shifted, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    int geo = 0;
    for (Eigen::Index k = 0; k < s.size(); ++k)
      if (s(k) <= 1e-6 * scale) ++geo;
    geo = std::clamp(geo, 1, alg);

    ActiveEigenvalue e;
    e.lambda = mean;
    e.algebraic_multiplicity = alg;
    e.simple = alg == 1;
    e.semisimple = geo == alg;
    // Null vectors of (A - lambda I): trailing right/left singular vectors.
    MatrixXcd v = svd.matrixV().rightCols(geo);
    MatrixXcd u = svd.matrixU().rightCols(geo);
    const MatrixXcd uv = u.adjoint() * v;
    // U and V have orthonormal columns, so the singular values of U^H V are
    // cosines of principal angles; near-orthogonality means a Jordan block.
    Eigen::JacobiSVD<MatrixXcd> cos_svd(uv);
    if (cos_svd.singularValues().minCoeff() > 1e-6) {
      u = u * uv.inverse().adjoint();
    } else {
      e.semisimple = false;
    }
    e.right = std::move(v);
    e.left = std::move(u);
    out.active.push_back(std::move(e));
  }
  return out;
}

}  // namespace rpsynth
