#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rpsynth/analysis.hpp"
#include "rpsynth/parallel.hpp"
#include "rpsynth/qp.hpp"

namespace rpsynth {

// --- proximal bundle method for max-type objectives ------------------------

struct BundleParams {
  double gamma = 1e-4;        // serious-step threshold on the decrease ratio
  double gamma_tilde = 2e-4;  // model-quality threshold for shrinking t
  double Gamma = 0.1;         // good-step threshold for growing t
  double theta = 0.25;        // t <- theta t  /  t <- t / theta
  double tol = 1e-4;          // criticality: ||g*|| <= tol (1 + |F|)
  double error_tol = 1e-8;    // and aggregate linearization error <= error_tol (1 + |F|)
  int max_serious = 300;
  int max_null = 100;  // consecutive null steps
  int max_planes = 10;
  double activity = 1e-6;   // relative tie tolerance between scenarios
  double downshift = 1e-2;  // e_j >= downshift ||x - y_j||^2
  double t0 = 0.0;          // <= 0: 1 / (1 + ||g_0||)
  double t_max = 1e8;
  double qp_tol = 1e-12;
  int qp_max_iter = 500;
  unsigned threads = 0;
};

// Objective value and subgradients at one point. A non-finite value marks a
// failed evaluation.
struct BundleSample {
  double value = kInf;
  std::vector<VectorXd> subgradients;
};

enum class BundleStop { critical, aggregate_critical, target, max_serious, null_limit };

inline const char* to_string(BundleStop s) {
  switch (s) {
    case BundleStop::critical: return "critical";
    case BundleStop::aggregate_critical: return "aggregate_critical";
    case BundleStop::target: return "target";
    case BundleStop::max_serious: return "max_serious";
    case BundleStop::null_limit: return "null_limit";
  }
  return "unknown";
}

struct BundleTrace {
  std::vector<VectorXd> iterates;
  std::vector<double> values;
  std::vector<double> t;
  std::vector<int> null_steps;
  double max_plane_excess = -kInf;  // max_j l_j(x) - F(x) over serious iterates
  int evaluations = 0;
  BundleStop reason = BundleStop::max_serious;
};

struct BundleResult {
  VectorXd x;
  double value = kInf;
  VectorXd aggregate;         // last aggregate subgradient
  double criticality = kInf;  // min-norm element of the subgradients at x
  BundleTrace trace;
};

// Smallest-norm point of the convex hull of g.
inline VectorXd min_norm_element(const std::vector<VectorXd>& g, double tol = 1e-14, int max_iter = 2000) {
  if (g.empty()) throw DimensionError("min_norm_element: empty set");
  const auto n = g.front().size();
  const VectorXd inf = VectorXd::Constant(n, kInf);
  return solve_plane_prox(g, VectorXd::Zero(static_cast<Eigen::Index>(g.size())), VectorXd::Zero(n), 1.0,
                          -inf, inf, tol, max_iter)
      .aggregate;
}

namespace detail {

// Cutting plane  l(k) = f0 + g^T (k - origin).
struct Plane {
  VectorXd g;
  double f0 = 0.0;
  VectorXd origin;
  bool exact = false;  // taken at the current serious iterate
  long age = 0;

  double at(const VectorXd& k) const { return f0 + g.dot(k - origin); }
};

template <class F>
BundleSample safe_sample(F& oracle, const VectorXd& x, int& counter) {
  ++counter;
  try {
    BundleSample s = oracle(x);
    if (!std::isfinite(s.value) || s.subgradients.empty()) s.value = kInf;
    return s;
  } catch (const Error&) {
    return {};
  }
}

}  // namespace detail

// Minimizes a max-type (lower-C1) function with a proximal bundle method.
// `target(F)` returning true stops at the first serious iterate reaching it.
template <class F>
BundleResult minimize_bundle(F&& oracle, const VectorXd& x0, const BundleParams& p = {},
                             const std::function<bool(double)>& target = {}) {
  BundleResult res;
  auto& tr = res.trace;
  VectorXd x = x0;
  BundleSample sx = detail::safe_sample(oracle, x, tr.evaluations);
  if (!std::isfinite(sx.value)) throw DomainError("minimize_bundle: objective not finite at the start point");
  double fx = sx.value;
  const auto n = x.size();
  const VectorXd inf = VectorXd::Constant(n, kInf);

  std::vector<detail::Plane> planes;
  long clock = 0;
  std::optional<detail::Plane> aggregate;
  auto add_exact = [&](const BundleSample& s) {
    for (auto& pl : planes) pl.exact = false;
    for (const auto& g : s.subgradients) planes.push_back({g, s.value, x, true, clock++});
  };
  // Oldest-first among planes not taken at the serious iterate.
  auto evict = [&] {
    for (;;) {
      int count = 0;
      auto oldest = planes.end();
      for (auto it = planes.begin(); it != planes.end(); ++it)
        if (!it->exact) {
          ++count;
          if (oldest == planes.end() || it->age < oldest->age) oldest = it;
        }
      if (count <= p.max_planes) return;
      planes.erase(oldest);
    }
  };
  auto error_of = [&](const detail::Plane& pl) {
    return std::max(fx - pl.at(x), p.downshift * (x - pl.origin).squaredNorm());
  };
  auto record = [&] {
    tr.iterates.push_back(x);
    tr.values.push_back(fx);
    for (const auto& pl : planes) tr.max_plane_excess = std::max(tr.max_plane_excess, pl.at(x) - fx);
  };
  auto scale = [&] { return p.tol * (1.0 + std::abs(fx)); };
  auto critical_here = [&](const BundleSample& s) {
    res.aggregate = min_norm_element(s.subgradients);
    res.criticality = res.aggregate.norm();
    return res.criticality <= scale();
  };

  add_exact(sx);
  double t = p.t0 > 0.0 ? p.t0 : 1.0 / (1.0 + sx.subgradients.front().norm());
  record();
  tr.t.push_back(t);
  auto finish = [&](BundleStop reason) {
    tr.reason = reason;
    res.x = x;
    res.value = fx;
    if (reason != BundleStop::aggregate_critical) critical_here(sx);
    else res.criticality = min_norm_element(sx.subgradients).norm();
    return res;
  };
  if (target && target(fx)) return finish(BundleStop::target);
  if (critical_here(sx)) return finish(BundleStop::critical);

  int serious = 0, nulls = 0;
  for (;;) {
    std::vector<VectorXd> g;
    std::vector<double> a;
    for (const auto& pl : planes) {
      g.push_back(pl.g);
      a.push_back(-error_of(pl));
    }
    if (aggregate) {
      g.push_back(aggregate->g);
      a.push_back(-std::max(fx - aggregate->at(x), 0.0));
    }
    const PlaneProxSolution sol =
        solve_plane_prox(g, Eigen::Map<const VectorXd>(a.data(), static_cast<Eigen::Index>(a.size())), x, t,
                         -inf, inf, p.qp_tol, p.qp_max_iter);
    const double predicted = -sol.model;
    const double agg_error = -sol.aggregate_offset;
    if ((sol.aggregate.norm() <= scale() && agg_error <= p.error_tol * (1.0 + std::abs(fx))) || !(predicted > 1e-15 * (1.0 + std::abs(fx)))) {
      res.aggregate = sol.aggregate;
      tr.reason = BundleStop::aggregate_critical;
      res.x = x;
      res.value = fx;
      res.criticality = min_norm_element(sx.subgradients).norm();
      return res;
    }
    aggregate = detail::Plane{sol.aggregate, fx - agg_error, x, false, 0};

    const VectorXd y = sol.point;
    BundleSample sy = detail::safe_sample(oracle, y, tr.evaluations);
    const double rho = (fx - sy.value) / predicted;
    if (std::isfinite(sy.value) && rho >= p.gamma) {
      x = y;
      fx = sy.value;
      sx = std::move(sy);
      add_exact(sx);
      evict();
      t = std::min(p.t_max, rho >= p.Gamma ? t / p.theta : t);
      ++serious;
      tr.null_steps.push_back(nulls);
      nulls = 0;
      record();
      tr.t.push_back(t);
      if (target && target(fx)) return finish(BundleStop::target);
      if (critical_here(sx)) return finish(BundleStop::critical);
      if (serious >= p.max_serious) return finish(BundleStop::max_serious);
      continue;
    }
    ++nulls;
    if (std::isfinite(sy.value)) {
      double model_next = sol.model;
      for (const auto& gy : sy.subgradients) {
        detail::Plane pl{gy, sy.value, y, false, clock++};
        model_next = std::max(model_next, -error_of(pl) + gy.dot(y - x));
        planes.push_back(std::move(pl));
      }
      evict();
      if (-model_next / predicted >= p.gamma_tilde) t *= p.theta;
    } else {
      t *= p.theta;
    }
    if (nulls >= p.max_null || t < 1e-16) {
      tr.null_steps.push_back(nulls);
      return finish(BundleStop::null_limit);
    }
  }
}

// --- multi-model synthesis -------------------------------------------------

struct SynthesisProblem {
  UncertainPlant plant;
  ControllerStructure controller;
  UncertaintyStructure uncertainty;
  std::vector<VectorXd> scenarios;
  VectorXd kappa0;  // empty: zeros
  std::vector<Channel> channels;

  VectorXd initial_kappa() const {
    return kappa0.size() == controller.parameters() ? kappa0 : VectorXd::Zero(controller.parameters());
  }
};

struct MultiModelValue {
  double value = kInf;
  int worst = -1;
  int unstable = -1;  // first scenario with an unstable or ill-posed loop
  std::vector<double> values;
  std::vector<int> active;          // scenarios tied with the max
  VectorXd subgradient;             // equal-weight subgradient of the worst scenario
  std::vector<VectorXd> planes;     // one per active frequency of the active scenarios
};

namespace detail {

inline std::vector<PartitionedSystem> scenario_loops(const SynthesisProblem& pb) {
  if (pb.scenarios.empty()) throw DomainError("synthesis needs at least one scenario");
  std::vector<PartitionedSystem> out;
  for (const auto& d : pb.scenarios) {
    if (d.size() != pb.uncertainty.parameters())
      throw DimensionError("scenario length differs from the number of uncertain parameters");
    out.push_back(controller_loop(pb.plant, pb.controller, pb.uncertainty, d));
  }
  return out;
}

struct ScenarioModel {
  double value = kInf;
  std::vector<VectorXd> vertices;
  VectorXd equal;
};

inline MultiModelValue reduce_scenarios(const std::vector<ScenarioModel>& models, double activity) {
  MultiModelValue out;
  out.value = -kInf;
  out.worst = models.empty() ? -1 : 0;
  for (std::size_t i = 0; i < models.size(); ++i) {
    out.values.push_back(models[i].value);
    if (!std::isfinite(models[i].value) && models[i].value > 0 && out.unstable < 0)
      out.unstable = static_cast<int>(i);
    if (models[i].value > out.value) {
      out.value = models[i].value;
      out.worst = static_cast<int>(i);
    }
  }
  if (out.unstable >= 0) {
    out.value = kInf;
    out.worst = out.unstable;
    return out;
  }
  const double cut = out.value - activity * (1.0 + std::abs(out.value));
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].value < cut) continue;
    out.active.push_back(static_cast<int>(i));
    for (const auto& v : models[i].vertices) out.planes.push_back(v);
  }
  out.subgradient = models[out.worst].equal;
  return out;
}

inline MultiModelValue hinf_over(const std::vector<PartitionedSystem>& loops, const SynthesisProblem& pb,
                                 const VectorXd& kappa, double activity, unsigned threads) {
  if (kappa.size() != pb.controller.parameters())
    throw DimensionError("kappa length differs from the controller parameter count");
  const AffineStaticBlock block = pb.controller.block();
  const auto models = parallel_map(
      loops.size(),
      [&](std::size_t i) {
        ScenarioModel s;
        try {
          const LocalModel m = hinf_model(loops[i], block, kappa, 1.0, pb.channels);
          if (!m.finite) return s;
          s.value = m.value;
          s.vertices = m.vertices();
          s.equal = m.equal_weight();
        } catch (const IllPosedError&) {
        }
        return s;
      },
      threads);
  return reduce_scenarios(models, activity);
}

inline MultiModelValue alpha_over(const std::vector<PartitionedSystem>& loops, const SynthesisProblem& pb,
                                  const VectorXd& kappa, double activity, unsigned threads) {
  const AffineStaticBlock block = pb.controller.block();
  const auto models = parallel_map(
      loops.size(),
      [&](std::size_t i) {
        ScenarioModel s;
        try {
          const LocalModel m = alpha_model(loops[i], block, kappa, 1.0);
          s.value = m.value;
          if (!m.elements.empty()) {
            s.vertices = m.vertices();
            s.equal = m.equal_weight();
          } else {
            // Defective active eigenvalue or no states: difference quotient.
            VectorXd g = VectorXd::Zero(kappa.size());
            if (std::isfinite(m.value)) {
              constexpr double h = 1e-7;
              for (Eigen::Index j = 0; j < kappa.size(); ++j) {
                VectorXd kp = kappa, km = kappa;
                kp(j) += h;
                km(j) -= h;
                g(j) = (spectral_abscissa_value(closed_loop_A(loops[i], block.value(kp))) -
                        spectral_abscissa_value(closed_loop_A(loops[i], block.value(km)))) /
                       (2 * h);
              }
            }
            s.vertices = {g};
            s.equal = g;
          }
        } catch (const IllPosedError&) {
          s.value = kInf;
        }
        return s;
      },
      threads);
  return reduce_scenarios(models, activity);
}

}  // namespace detail

// max over the scenarios of ||T_zw(delta_i, kappa)||_inf; +inf (with the
// offending scenario in `unstable`) when some closed loop is unstable.
inline MultiModelValue multimodel_objective(const SynthesisProblem& pb, const VectorXd& kappa,
                                            double activity = 1e-6, unsigned threads = 0) {
  return detail::hinf_over(detail::scenario_loops(pb), pb, kappa, activity, threads);
}

// max over the scenarios of the closed-loop spectral abscissa.
inline MultiModelValue multimodel_abscissa(const SynthesisProblem& pb, const VectorXd& kappa,
                                           double activity = 1e-6, unsigned threads = 0) {
  return detail::alpha_over(detail::scenario_loops(pb), pb, kappa, activity, threads);
}

namespace detail {

inline std::vector<int> unstable_scenarios(const MultiModelValue& v) {
  std::vector<int> out;
  for (std::size_t i = 0; i < v.values.size(); ++i)
    if (!(v.values[i] < 0.0)) out.push_back(static_cast<int>(i));
  return out;
}

inline std::string list(const std::vector<int>& idx) {
  std::ostringstream os;
  for (std::size_t i = 0; i < idx.size(); ++i) os << (i ? ", " : "") << idx[i];
  return os.str();
}

}  // namespace detail

struct StabilizationResult {
  VectorXd kappa;
  double alpha = kInf;
  bool changed = false;
  BundleResult bundle;
};

// Drives max_i alpha(A(delta_i, kappa)) below zero. Throws SynthesisError
// listing the scenarios still unstable when the budget runs out.
inline StabilizationResult stabilize_scenarios(const SynthesisProblem& pb, const VectorXd& kappa0,
                                               const BundleParams& p = {}) {
  const auto loops = detail::scenario_loops(pb);
  StabilizationResult out;
  out.kappa = kappa0;
  const MultiModelValue v0 = detail::alpha_over(loops, pb, kappa0, p.activity, p.threads);
  out.alpha = v0.value;
  if (v0.value < 0.0) return out;
  if (!std::isfinite(v0.value))
    throw SynthesisError("stabilization: closed loop ill-posed at the initial controller for scenario " +
                             std::to_string(v0.unstable),
                         {v0.unstable});
  auto oracle = [&](const VectorXd& k) {
    const MultiModelValue v = detail::alpha_over(loops, pb, k, p.activity, p.threads);
    return BundleSample{v.value, v.planes};
  };
  out.bundle = minimize_bundle(oracle, kappa0, p, [](double f) { return f < 0.0; });
  out.kappa = out.bundle.x;
  out.alpha = out.bundle.value;
  out.changed = true;
  if (!(out.alpha < 0.0)) {
    const auto bad = detail::unstable_scenarios(detail::alpha_over(loops, pb, out.kappa, p.activity, p.threads));
    throw SynthesisError("stabilization failed (" + std::string(to_string(out.bundle.trace.reason)) +
                             "); unstable scenarios: " + detail::list(bad),
                         bad);
  }
  return out;
}

struct SynthesisResult {
  VectorXd kappa;
  double value = kInf;  // v_*
  MultiModelValue at_kappa;
  StabilizationResult stabilization;
  BundleResult bundle;
};

// Structured multi-model H-infinity synthesis: stabilize every scenario,
// then minimize the max of the closed-loop norms.
inline SynthesisResult synthesize_structured(const SynthesisProblem& pb, const BundleParams& p = {}) {
  const auto loops = detail::scenario_loops(pb);
  SynthesisResult out;
  out.stabilization = stabilize_scenarios(pb, pb.initial_kappa(), p);
  auto oracle = [&](const VectorXd& k) {
    const MultiModelValue v = detail::hinf_over(loops, pb, k, p.activity, p.threads);
    return BundleSample{v.value, v.planes};
  };
  out.bundle = minimize_bundle(oracle, out.stabilization.kappa, p);
  out.kappa = out.bundle.x;
  out.at_kappa = detail::hinf_over(loops, pb, out.kappa, p.activity, p.threads);
  out.value = out.at_kappa.value;
  return out;
}

}  // namespace rpsynth
