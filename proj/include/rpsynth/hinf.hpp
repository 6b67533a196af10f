#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "rpsynth/spectral.hpp"
#include "rpsynth/state_space.hpp"

namespace rpsynth {

// Frequencies whose top singular value lies within (1 - tol) of the norm
// are active.
inline constexpr double kFrequencyActivityTol = 1e-6;

struct ActiveFrequency {
  double omega = 0.0;  // rad/time, may be +inf
  double sigma = 0.0;
  MatrixXcd left;   // Q: left singular vectors of the top singular value
  MatrixXcd right;  // P: matching right singular vectors
};

struct ActiveFrequencyData {
  double hinf = 0.0;
  bool unstable = false;
  std::vector<ActiveFrequency> active;
  int iterations = 0;

  bool smooth() const { return active.size() == 1 && active.front().left.cols() == 1; }
};

namespace detail {

inline double sigma_max_at(const StateSpace& sys, double omega) {
  return max_singular_value(sys.frequency_response(omega));
}

// Golden-section search for a local maximum of sigma_max on [a, b].
inline std::pair<double, double> refine_peak(const StateSpace& sys, double a, double b) {
  constexpr double kInvPhi = 0.6180339887498949;
  double x1 = b - kInvPhi * (b - a), x2 = a + kInvPhi * (b - a);
  double f1 = sigma_max_at(sys, x1), f2 = sigma_max_at(sys, x2);
  for (int it = 0; it < 200 && (b - a) > 1e-12 * (1.0 + std::abs(b)); ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + kInvPhi * (b - a);
      f2 = sigma_max_at(sys, x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - kInvPhi * (b - a);
      f1 = sigma_max_at(sys, x1);
    }
  }
  std::pair<double, double> best{a, sigma_max_at(sys, a)};
  for (double w : {b, x1, x2}) {
    const double s = sigma_max_at(sys, w);
    if (s > best.second) best = {w, s};
  }
  return best;
}

// Imaginary-axis eigenvalues of the Hamiltonian at level gamma > sigma_max(D):
// gamma is a singular value of G(j omega) iff j omega is an eigenvalue.
inline std::vector<double> imaginary_crossings(const StateSpace& sys, double gamma) {
  const auto n = sys.states();
  const auto m = sys.inputs(), p = sys.outputs();
  const MatrixXd& A = sys.A;
  const MatrixXd& B = sys.B;
  const MatrixXd& C = sys.C;
  const MatrixXd& D = sys.D;
  const MatrixXd R = D.transpose() * D - gamma * gamma * MatrixXd::Identity(m, m);
  const MatrixXd S = D * D.transpose() - gamma * gamma * MatrixXd::Identity(p, p);
  const auto Rlu = R.partialPivLu();
  const MatrixXd RinvDtC = Rlu.solve(MatrixXd(D.transpose() * C));
  const MatrixXd RinvBt = Rlu.solve(MatrixXd(B.transpose()));
  MatrixXd H(2 * n, 2 * n);
  H.topLeftCorner(n, n) = A - B * RinvDtC;
  H.topRightCorner(n, n) = -gamma * B * RinvBt;
  H.bottomLeftCorner(n, n) = gamma * C.transpose() * S.partialPivLu().solve(C);
  H.bottomRightCorner(n, n) = -A.transpose() + C.transpose() * D * RinvBt;
  Eigen::EigenSolver<MatrixXd> es(H, false);
  if (es.info() != Eigen::Success) throw NumericalError("hinf_norm: Hamiltonian eigenvalues failed");
  const double tol = 1e-8 * std::max(1.0, H.norm());
  std::vector<double> out;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const Complex l = es.eigenvalues()(i);
    if (std::abs(l.real()) <= tol) out.push_back(l.imag());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline ActiveFrequency singular_data(const StateSpace& sys, double omega, double activity_tol) {
  const MatrixXcd g = sys.frequency_response(omega);
  Eigen::JacobiSVD<MatrixXcd> svd(g, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  ActiveFrequency f;
  f.omega = omega;
  f.sigma = s.size() ? s(0) : 0.0;
  Eigen::Index r = 1;
  while (r < s.size() && s(r) >= (1.0 - activity_tol) * f.sigma) ++r;
  f.left = svd.matrixU().leftCols(r);
  f.right = svd.matrixV().leftCols(r);
  return f;
}

}  // namespace detail

// H-infinity norm by the Hamiltonian level-set iteration with two-point
// (interval midpoint) updates. Returns +inf with `unstable` set when A is not
// Hurwitz. Peak frequencies are polished by golden-section search so that the
// returned singular vectors belong to the maximizing frequency.
inline ActiveFrequencyData hinf_norm(const StateSpace& sys, double rel_tol = 1e-8,
                                     double activity_tol = kFrequencyActivityTol) {
  ActiveFrequencyData out;
  const int n = sys.states();
  if (n > 0 && spectral_abscissa_value(sys.A) >= 0.0) {
    out.hinf = kInf;
    out.unstable = true;
    return out;
  }
  const double dnorm = max_singular_value(sys.D);
  auto finish_static = [&] {
    out.hinf = dnorm;
    out.active.push_back(detail::singular_data(sys, kInf, activity_tol));
    return out;
  };
  if (n == 0 || sys.B.norm() == 0.0 || sys.C.norm() == 0.0) return finish_static();

  // Coarse grid around the pole magnitudes.
  double wmin = kInf, wmax = 0.0;
  std::vector<double> grid{0.0};
  for (const auto& l : eigenvalues(sys.A)) {
    const double r = std::abs(l);
    if (r > 0.0) {
      wmin = std::min(wmin, r);
      wmax = std::max(wmax, r);
    }
    if (std::abs(l.imag()) > 0.0) grid.push_back(std::abs(l.imag()));
  }
  if (wmax == 0.0) wmin = wmax = 1.0;
  const double lo = std::log10(wmin) - 2.0, hi = std::log10(wmax) + 2.0;
  constexpr int kGrid = 128;
  for (int i = 0; i < kGrid; ++i) grid.push_back(std::pow(10.0, lo + (hi - lo) * i / (kGrid - 1)));
  std::sort(grid.begin(), grid.end());

  double lb = dnorm, w_best = kInf;
  std::size_t i_best = grid.size();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double s = detail::sigma_max_at(sys, grid[i]);
    if (s > lb) {
      lb = s;
      w_best = grid[i];
      i_best = i;
    }
  }
  if (lb == 0.0) return finish_static();

  std::vector<std::pair<double, double>> brackets;
  if (i_best < grid.size()) {
    const double a = i_best > 0 ? grid[i_best - 1] : 0.0;
    const double b = i_best + 1 < grid.size() ? grid[i_best + 1] : 2.0 * grid[i_best];
    brackets.push_back({a, b});
  }

  std::vector<std::pair<double, double>> intervals;
  for (int it = 0;; ++it) {
    if (it >= 100) {
      std::ostringstream os;
      os << "hinf_norm: level-set iteration stagnated in bracket [" << lb << ", "
         << lb * (1.0 + 2.0 * rel_tol) << "]";
      throw NumericalError(os.str());
    }
    out.iterations = it + 1;
    const double gamma = lb * (1.0 + 2.0 * rel_tol);
    const auto w = detail::imaginary_crossings(sys, gamma);
    if (w.size() < 2) break;
    std::vector<std::pair<double, double>> above;
    double new_lb = lb, new_w = w_best;
    for (std::size_t k = 0; k + 1 < w.size(); ++k) {
      const double mid = 0.5 * (w[k] + w[k + 1]);
      const double s = detail::sigma_max_at(sys, mid);
      if (s >= lb) above.push_back({w[k], w[k + 1]});
      if (s > new_lb) {
        new_lb = s;
        new_w = std::abs(mid);
      }
    }
    if (!above.empty()) intervals = above;
    if (new_lb <= lb) {
      // Midpoints failed to rise: polish inside the intervals before
      // declaring convergence.
      for (const auto& [a, b] : above) {
        const double l = a < 0.0 && b > 0.0 ? 0.0 : std::min(std::abs(a), std::abs(b));
        const double u = std::max(std::abs(a), std::abs(b));
        const auto [wp, sp] = detail::refine_peak(sys, l, u);
        if (sp > new_lb) {
          new_lb = sp;
          new_w = wp;
        }
      }
      if (new_lb <= lb * (1.0 + 0.5 * rel_tol)) break;
    }
    lb = new_lb;
    w_best = new_w;
  }
  for (const auto& [a, b] : intervals) {
    const double l = a < 0.0 && b > 0.0 ? 0.0 : std::min(std::abs(a), std::abs(b));
    brackets.push_back({l, std::max(std::abs(a), std::abs(b))});
  }

  std::vector<std::pair<double, double>> candidates;  // (omega, sigma)
  if (std::isfinite(w_best)) candidates.push_back({w_best, detail::sigma_max_at(sys, w_best)});
  for (const auto& [a, b] : brackets) candidates.push_back(detail::refine_peak(sys, a, b));
  double hinf = std::max(lb, dnorm);
  for (const auto& c : candidates) hinf = std::max(hinf, c.second);
  out.hinf = hinf;

  std::sort(candidates.begin(), candidates.end(),
            [](const auto& x, const auto& y) { return x.second > y.second; });
  std::vector<double> active_w;
  for (const auto& [w, s] : candidates) {
    if (s < (1.0 - activity_tol) * hinf) continue;
    bool dup = false;
    for (double v : active_w) dup = dup || std::abs(v - w) <= 1e-6 * (1.0 + std::abs(w));
    if (!dup) active_w.push_back(w);
  }
  for (double w : active_w) out.active.push_back(detail::singular_data(sys, w, activity_tol));
  if (dnorm >= (1.0 - activity_tol) * hinf)
    out.active.push_back(detail::singular_data(sys, kInf, activity_tol));
  if (out.active.empty()) out.active.push_back(detail::singular_data(sys, w_best, activity_tol));
  return out;
}

}  // namespace rpsynth
