#pragma once

#include <cmath>
#include <concepts>
#include <functional>
#include <string>
#include <vector>

#include "rpsynth/qp.hpp"
#include "rpsynth/state_space.hpp"

namespace rpsynth {

// Axis-aligned box  lower <= x <= upper.
struct Box {
  VectorXd lower, upper;

  static Box symmetric(int m, double radius = 1.0) {
    return {VectorXd::Constant(m, -radius), VectorXd::Constant(m, radius)};
  }
  int dimension() const { return static_cast<int>(lower.size()); }
  VectorXd project(const VectorXd& x) const { return clamp_to(x, lower, upper); }
  bool contains(const VectorXd& x, double tol = 0.0) const {
    return ((x - lower).array() >= -tol).all() && ((upper - x).array() >= -tol).all();
  }
};

enum class ModelFlag { upper, strict };

struct MinMinParams {
  double gamma = 1e-4;
  double gamma_tilde = 2e-4;
  double Gamma = 0.1;
  double theta = 0.25;
  double Theta = 0.75;
  double tol1 = 1e-4;
  double tol2 = 1e-4;
  int k_max = 50;
  int max_serious = 100;
  double t_sharp = 0.0;  // <= 0: 1 / (1 + ||g_0||) at the first serious iterate
  ModelFlag flag = ModelFlag::upper;
  double qp_tol = 1e-10;
  int qp_max_iter = 200;
};

// Value and first-order information at one point. `gradient` is the
// subgradient g_0 the step finder starts from; `steepest(d)` returns an
// element of the subdifferential maximizing g^T d (only needed when
// flag = strict; defaults to `gradient`).
struct Evaluation {
  double value = kInf;
  VectorXd gradient;
  std::function<VectorXd(const VectorXd&)> steepest;

  VectorXd steepest_along(const VectorXd& d) const { return steepest ? steepest(d) : gradient; }
};

template <class F>
concept MinMinOracle = requires(F f, const VectorXd& x) {
  { f(x) } -> std::convertible_to<Evaluation>;
};

enum class StopDecision { continue_search, optimal_next, optimal_current };

enum class StopReason { optimal_next, optimal_current, inner_limit, max_serious };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::optimal_next: return "optimal_next";
    case StopReason::optimal_current: return "optimal_current";
    case StopReason::inner_limit: return "stationary_or_stalled";
    case StopReason::max_serious: return "max_serious";
  }
  return "unknown";
}

struct SolveTrace {
  std::vector<VectorXd> iterates;
  std::vector<double> values;
  std::vector<double> rho;
  std::vector<double> t_sharp;
  std::vector<int> inner_counts;
  StopReason reason = StopReason::optimal_current;
  int evaluations = 0;
};

struct MinMinResult {
  VectorXd x;
  double value = kInf;
  VectorXd gradient;
  double kkt_residual = 0.0;
  SolveTrace trace;
};

struct TangentSolution {
  VectorXd eta;
  VectorXd weights;
  VectorXd aggregate;
  double model_step = 0.0;  // max_{g in G} g^T (eta - x)
};

// min over the box of  max_{g in G} g^T (eta - x) + ||eta - x||^2 / (2t).
inline TangentSolution solve_tangent_program(const std::vector<VectorXd>& model, const VectorXd& x,
                                             double t, const Box& box, double tol = 1e-10,
                                             int max_iter = 200) {
  if (t <= 0.0) throw DomainError("solve_tangent_program: stepsize must be positive");
  const PlaneProxSolution s = solve_plane_prox(model, VectorXd::Zero(static_cast<Eigen::Index>(model.size())),
                                               x, t, box.lower, box.upper, tol, max_iter);
  return {s.point, s.weights, s.aggregate, s.model};
}

inline bool inside_tolerances(const VectorXd& x, const VectorXd& y, double fx, double fy,
                              const MinMinParams& p) {
  return (y - x).norm() / (1.0 + x.norm()) < p.tol1 && std::abs(fy - fx) / (1.0 + std::abs(fx)) < p.tol2;
}

// Decision after an accepted step  x -> next.
inline StopDecision check_stop(const VectorXd& x, const VectorXd& next, double fx, double fnext,
                               const MinMinParams& p) {
  return inside_tolerances(x, next, fx, fnext, p) ? StopDecision::optimal_next
                                                  : StopDecision::continue_search;
}

// Decision from the rejected trials of the current inner loop (points and
// values, oldest first): five consecutive near-null backtracks mean the
// current iterate is optimal.
inline StopDecision check_stop(const VectorXd& x, double fx, const std::vector<VectorXd>& trials,
                               const std::vector<double>& trial_values, const MinMinParams& p) {
  constexpr std::size_t kNullRun = 5;
  if (trials.size() < kNullRun) return StopDecision::continue_search;
  for (std::size_t i = trials.size() - kNullRun; i < trials.size(); ++i)
    if (!inside_tolerances(x, trials[i], fx, trial_values[i], p)) return StopDecision::continue_search;
  return StopDecision::optimal_current;
}

struct DescentStep {
  bool accepted = false;
  StopDecision stop = StopDecision::continue_search;
  VectorXd next;
  Evaluation next_eval;
  double t = 0.0;
  double rho = 0.0;
  int inner_count = 0;
  VectorXd aggregate;  // last aggregate subgradient (for KKT at a stop)
};

namespace detail {

struct EvalCache {
  std::vector<std::pair<VectorXd, Evaluation>> entries;

  const Evaluation* find(const VectorXd& x) const {
    for (const auto& [k, v] : entries)
      if (k.size() == x.size() && k == x) return &v;
    return nullptr;
  }
};

template <MinMinOracle F>
Evaluation safe_eval(F& oracle, const VectorXd& x, int& counter) {
  ++counter;
  try {
    Evaluation e = oracle(x);
    if (!std::isfinite(e.value)) e.value = kInf;
    return e;
  } catch (const Error&) {
    return Evaluation{};
  }
}

}  // namespace detail

// Subroutine for one serious step from x with f(x) = fx and data `ex`.
template <MinMinOracle F>
DescentStep find_descent_step(F& oracle, const Box& box, const VectorXd& x, const Evaluation& ex,
                              double t_sharp, const MinMinParams& p,
                              detail::EvalCache* cache = nullptr, int* eval_counter = nullptr) {
  int dummy = 0;
  int& counter = eval_counter ? *eval_counter : dummy;
  detail::EvalCache local;
  detail::EvalCache& memo = cache ? *cache : local;

  DescentStep out;
  double t = t_sharp;
  std::vector<VectorXd> model{ex.gradient};
  VectorXd prev_aggregate;
  std::vector<VectorXd> trials;
  std::vector<double> trial_values;
  const double fx = ex.value;
  for (int k = 1; k <= p.k_max; ++k) {
    out.inner_count = k;
    const TangentSolution tp = solve_tangent_program(model, x, t, box, p.qp_tol, p.qp_max_iter);
    out.aggregate = tp.aggregate;
    const double predicted = -tp.model_step;  // f(x) - phi_k(eta)
    if ((tp.eta - x).norm() <= 1e-14 * (1.0 + x.norm()) || !(predicted > 1e-15 * (1.0 + std::abs(fx)))) {
      out.stop = StopDecision::optimal_current;
      out.t = t;
      return out;
    }
    Evaluation trial;
    bool cached = false;
    if (const Evaluation* hit = memo.find(tp.eta)) {
      trial = *hit;
      cached = true;
    } else {
      trial = detail::safe_eval(oracle, tp.eta, counter);
    }
    const double rho = (fx - trial.value) / predicted;
    if (std::isfinite(trial.value) && rho >= p.gamma) {
      out.accepted = true;
      out.next = tp.eta;
      out.next_eval = std::move(trial);
      out.t = t;
      out.rho = rho;
      return out;
    }
    if (!cached) memo.entries.emplace_back(tp.eta, trial);
    trials.push_back(tp.eta);
    trial_values.push_back(trial.value);
    if (check_stop(x, fx, trials, trial_values, p) == StopDecision::optimal_current) {
      out.stop = StopDecision::optimal_current;
      out.t = t;
      return out;
    }

    double model_next_step = tp.model_step;
    if (p.flag == ModelFlag::strict) {
      const VectorXd d = tp.eta - x;
      const VectorXd gk = ex.steepest_along(d);
      std::vector<VectorXd> next{ex.gradient, gk, tp.aggregate};
      if (prev_aggregate.size() == x.size()) next.push_back(prev_aggregate);
      prev_aggregate = tp.aggregate;
      model = std::move(next);
      for (const auto& g : model) model_next_step = std::max(model_next_step, g.dot(d));
    }
    const double rho_tilde = (-model_next_step) / predicted;
    if (!std::isfinite(trial.value) || rho_tilde >= p.gamma_tilde) t *= p.theta;
  }
  out.stop = StopDecision::optimal_current;
  out.t = t;
  out.inner_count = p.k_max + 1;
  return out;
}

// Descent method for box-constrained min-min programs.
template <MinMinOracle F>
MinMinResult minimize_minmin(F&& oracle, const Box& box, const VectorXd& x1,
                             const MinMinParams& p = {}) {
  if (x1.size() != box.dimension()) throw DimensionError("minimize_minmin: start and box differ in size");
  if (!box.contains(x1, 1e-12)) throw DomainError("minimize_minmin: start point outside the box");
  MinMinResult res;
  VectorXd x = box.project(x1);
  Evaluation ex = oracle(x);
  ++res.trace.evaluations;
  if (!std::isfinite(ex.value)) throw DomainError("minimize_minmin: objective not finite at the start point");
  double t_sharp = p.t_sharp > 0.0 ? p.t_sharp : 1.0 / (1.0 + ex.gradient.norm());
  res.trace.iterates.push_back(x);
  res.trace.values.push_back(ex.value);
  res.trace.t_sharp.push_back(t_sharp);
  detail::EvalCache cache;
  VectorXd kkt_gradient = ex.gradient;
  res.trace.reason = StopReason::max_serious;
  for (int j = 1; j <= p.max_serious; ++j) {
    DescentStep step = find_descent_step(oracle, box, x, ex, t_sharp, p, &cache, &res.trace.evaluations);
    if (!step.accepted) {
      res.trace.inner_counts.push_back(step.inner_count);
      res.trace.reason = step.inner_count > p.k_max ? StopReason::inner_limit : StopReason::optimal_current;
      kkt_gradient = step.aggregate;
      break;
    }
    res.trace.inner_counts.push_back(step.inner_count);
    res.trace.rho.push_back(step.rho);
    t_sharp = step.rho >= p.Gamma ? step.t / p.theta : step.t;
    const StopDecision d = check_stop(x, step.next, ex.value, step.next_eval.value, p);
    x = std::move(step.next);
    ex = std::move(step.next_eval);
    kkt_gradient = ex.gradient;
    res.trace.iterates.push_back(x);
    res.trace.values.push_back(ex.value);
    res.trace.t_sharp.push_back(t_sharp);
    if (d == StopDecision::optimal_next) {
      res.trace.reason = StopReason::optimal_next;
      break;
    }
  }
  res.x = x;
  res.value = ex.value;
  res.gradient = kkt_gradient;
  res.kkt_residual = (x - box.project(x - kkt_gradient)).norm();
  return res;
}

}  // namespace rpsynth
