#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "rpsynth/state_space.hpp"

namespace rpsynth {

// Euclidean projection onto the unit simplex {l >= 0, sum l = 1}.
inline VectorXd project_simplex(const VectorXd& v) {
  const auto n = v.size();
  if (n == 0) return v;
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, tau = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    cumsum += u[i];
    const double t = (cumsum - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) tau = t;
  }
  return (v.array() - tau).max(0.0).matrix();
}

inline VectorXd clamp_to(const VectorXd& x, const VectorXd& lower, const VectorXd& upper) {
  return x.cwiseMax(lower).cwiseMin(upper);
}

namespace detail {

// min 0.5 w^T H w + c^T w over the unit simplex, H symmetric positive
// semidefinite. Primal active-set method; on the current face the step is a
// Newton step in the sum-zero subspace, or a ray to the boundary along a
// flat descent direction when the reduced Hessian is singular.
inline VectorXd simplex_qp(const MatrixXd& h, const VectorXd& c, int max_iter = 1000) {
  const auto k = c.size();
  const double scale = 1.0 + h.diagonal().cwiseAbs().maxCoeff() + c.cwiseAbs().maxCoeff();
  const double tol = 1e-14 * scale;
  Eigen::Index start = 0;
  (0.5 * h.diagonal() + c).minCoeff(&start);
  VectorXd w = VectorXd::Zero(k);
  w(start) = 1.0;
  std::vector<bool> in(static_cast<std::size_t>(k), false);
  in[start] = true;
  for (int it = 0; it < max_iter; ++it) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < k; ++i)
      if (in[i]) idx.push_back(i);
    const auto s = static_cast<Eigen::Index>(idx.size());
    const VectorXd grad = h * w + c;
    VectorXd d = VectorXd::Zero(k);
    bool ray = false;
    if (s > 1) {
      MatrixXd hs(s, s);
      VectorXd gs(s);
      for (Eigen::Index i = 0; i < s; ++i) {
        gs(i) = grad(idx[i]);
        for (Eigen::Index j = 0; j < s; ++j) hs(i, j) = h(idx[i], idx[j]);
      }
      const MatrixXd q = Eigen::HouseholderQR<MatrixXd>(VectorXd::Ones(s)).householderQ();
      const MatrixXd z = q.rightCols(s - 1);
      const Eigen::SelfAdjointEigenSolver<MatrixXd> es(z.transpose() * hs * z);
      const VectorXd r = z.transpose() * gs;
      const double flat = 1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
      VectorXd y = VectorXd::Zero(s - 1);
      for (Eigen::Index i = 0; i < s - 1; ++i) {
        const double ri = es.eigenvectors().col(i).dot(r);
        if (es.eigenvalues()(i) > flat) {
          y -= (ri / es.eigenvalues()(i)) * es.eigenvectors().col(i);
        } else if (std::abs(ri) > tol) {
          y = -(ri > 0 ? 1.0 : -1.0) * es.eigenvectors().col(i);
          ray = true;
          break;
        }
      }
      const VectorXd ds = z * y;
      for (Eigen::Index i = 0; i < s; ++i) d(idx[i]) = ds(i);
    }
    double step = ray ? kInf : 1.0;
    Eigen::Index leave = -1;
    for (auto i : idx)
      if (d(i) < 0.0 && -w(i) / d(i) < step) {
        step = -w(i) / d(i);
        leave = i;
      }
    if (d.cwiseAbs().maxCoeff() > 0.0) w += step * d;
    if (leave >= 0) {
      w(leave) = 0.0;
      in[leave] = false;
      continue;
    }
    // Optimal on the face: let the most attractive outside vertex enter.
    const VectorXd g2 = h * w + c;
    double level = 0.0;
    for (auto i : idx) level += g2(i);
    level /= static_cast<double>(s);
    Eigen::Index enter = -1;
    double most = -tol;
    for (Eigen::Index j = 0; j < k; ++j)
      if (!in[j] && g2(j) - level < most) {
        most = g2(j) - level;
        enter = j;
      }
    if (enter < 0) break;
    in[enter] = true;
  }
  w = w.cwiseMax(0.0);
  return w / w.sum();
}

}  // namespace detail

struct PlaneProxSolution {
  VectorXd point;      // minimizer eta
  VectorXd weights;    // optimal simplex weights of the planes
  VectorXd aggregate;  // sum_i w_i g_i
  double aggregate_offset = 0.0;  // sum_i w_i a_i
  double model = 0.0;  // max_i (a_i + g_i^T (eta - x)) at the minimizer
  double gap = 0.0;    // primal - dual objective at exit
  int iterations = 0;
};

// min over lower <= eta <= upper of
//   max_i (a_i + g_i^T (eta - x)) + ||eta - x||^2 / (2 t)
// via projected (accelerated) gradient ascent on the simplex dual; for
// fixed weights the inner minimizer is  eta = clamp(x - t * G w).
// Bounds may be infinite; with no finite bound the dual is solved exactly.
inline PlaneProxSolution solve_plane_prox(const std::vector<VectorXd>& g, const VectorXd& a,
                                          const VectorXd& x, double t, const VectorXd& lower,
                                          const VectorXd& upper, double tol = 1e-10,
                                          int max_iter = 200) {
  const auto k = static_cast<Eigen::Index>(g.size());
  if (k == 0) throw DimensionError("solve_plane_prox: empty model");
  if (a.size() != k) throw DimensionError("solve_plane_prox: offsets and planes differ in number");
  const auto n = x.size();
  MatrixXd G(n, k);
  for (Eigen::Index i = 0; i < k; ++i) G.col(i) = g[i];

  auto inner = [&](const VectorXd& w) { return clamp_to(x - t * (G * w), lower, upper); };
  auto primal = [&](const VectorXd& eta) {
    const VectorXd d = eta - x;
    return (a + G.transpose() * d).maxCoeff() + d.squaredNorm() / (2.0 * t);
  };
  auto dual = [&](const VectorXd& w, const VectorXd& eta) {
    const VectorXd d = eta - x;
    return a.dot(w) + (G * w).dot(d) + d.squaredNorm() / (2.0 * t);
  };

  PlaneProxSolution out;
  VectorXd w = VectorXd::Zero(k);
  const bool unbounded = (lower.array() == -kInf).all() && (upper.array() == kInf).all();
  if (k == 1) {
    w(0) = 1.0;
  } else if (unbounded) {
    // Dual  max a^T w - (t/2) ||G w||^2  over the simplex, solved exactly.
    w = detail::simplex_qp(t * (G.transpose() * G), -a);
  } else {
    w = VectorXd::Constant(k, 1.0 / static_cast<double>(k));
    const double lip = t * std::max(1e-300, (G.transpose() * G).eval().norm());
    VectorXd y = w, w_prev = w;
    double s = 1.0;
    for (int it = 0; it < max_iter; ++it) {
      out.iterations = it + 1;
      const VectorXd eta = inner(y);
      const VectorXd grad = a + G.transpose() * (eta - x);
      w_prev = w;
      w = project_simplex(y + grad / lip);
      const double s_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * s * s));
      y = w + ((s - 1.0) / s_next) * (w - w_prev);
      s = s_next;
      const VectorXd eta_w = inner(w);
      const double p = primal(eta_w), q = dual(w, eta_w);
      if (p - q <= tol * (1.0 + std::abs(p))) break;
    }
  }
  out.weights = w;
  out.point = inner(w);
  out.aggregate = G * w;
  out.aggregate_offset = a.dot(w);
  out.model = (a + G.transpose() * (out.point - x)).maxCoeff();
  out.gap = primal(out.point) - dual(w, out.point);
  return out;
}

}  // namespace rpsynth
