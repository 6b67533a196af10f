#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rpsynth/analysis.hpp"
#include "rpsynth/minmin.hpp"
#include "rpsynth/parallel.hpp"

namespace rpsynth {

struct StartOptions {
  std::uint64_t seed = 0;
  int exhaustive_vertex_dim = 10;  // all 2^m vertices up to this m
  int random_vertices = 1024;
  int interior = 10;
  int max_starts = 0;         // 0: no cap
  int radius_max_starts = 32;  // cap for the penalty-based radius programs
  std::vector<VectorXd> previous;
  MinMinParams params;
  unsigned threads = 0;
};

struct StartResult {
  VectorXd start;
  VectorXd x;
  double value = kInf;  // in the units of WorstCaseResult::best
  bool failed = false;
  std::string reason;
  int serious_steps = 0;
};

struct WorstCaseResult {
  double best = -kInf;
  VectorXd argmax;
  std::vector<StartResult> starts;
  int starts_used = 0;
  bool certified = false;
  bool ill_posed = false;
  std::vector<VectorXd> unstable_points;  // escalation to the destabilization pathway
};

struct RadiusResult {
  double radius = kInf;
  VectorXd critical;
  double lambda = 0.0;
  VectorXd mu_plus, mu_minus;
  bool found = false;
};

// Nominal point, box vertices, uniform interior points and previous
// scenarios (clamped to the box), without exact duplicates.
inline std::vector<VectorXd> start_points(const Box& box, const StartOptions& o, int cap = 0) {
  const int m = box.dimension();
  std::mt19937_64 rng(o.seed);
  std::vector<VectorXd> out;
  auto push = [&](VectorXd x) {
    for (const auto& y : out)
      if (y == x) return;
    out.push_back(std::move(x));
  };
  push(0.5 * (box.lower + box.upper));
  auto vertex = [&](std::uint64_t bits) {
    VectorXd v(m);
    for (int i = 0; i < m; ++i) v(i) = (bits >> i) & 1u ? box.upper(i) : box.lower(i);
    return v;
  };
  if (m <= o.exhaustive_vertex_dim) {
    for (std::uint64_t b = 0; b < (std::uint64_t{1} << m); ++b) push(vertex(b));
  } else {
    std::bernoulli_distribution coin(0.5);
    for (int k = 0; k < o.random_vertices; ++k) {
      VectorXd v(m);
      for (int i = 0; i < m; ++i) v(i) = coin(rng) ? box.upper(i) : box.lower(i);
      push(std::move(v));
    }
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < o.interior; ++k) {
    VectorXd v(m);
    for (int i = 0; i < m; ++i) v(i) = box.lower(i) + u(rng) * (box.upper(i) - box.lower(i));
    push(std::move(v));
  }
  for (const auto& p : o.previous)
    if (p.size() == m) push(box.project(p));
  const int limit = cap > 0 ? cap : o.max_starts;
  if (limit > 0 && static_cast<int>(out.size()) > limit) out.resize(limit);
  return out;
}

namespace detail {

// g_0: the vertex with the largest norm (first one on ties).
inline Evaluation evaluation_from(std::shared_ptr<const LocalModel> model, double value) {
  Evaluation e;
  e.value = value;
  e.gradient = VectorXd::Zero(model->block.num_params);
  double best = -1.0;
  for (const auto& v : model->vertices())
    if (v.norm() > best) {
      best = v.norm();
      e.gradient = v;
    }
  e.steepest = [model](const VectorXd& d) { return model->steepest(d).first; };
  return e;
}

inline VectorXd jitter_direction(int m) {
  VectorXd u(m);
  for (int i = 0; i < m; ++i) u(i) = (i % 2 == 0 ? 1.0 : -1.0) / (1.0 + i);
  return u;
}

// a_-(delta) with a first-order model; at defective points the model is
// taken from a tiny deterministic perturbation.
inline Evaluation a_minus_evaluation(const UncertainClosedLoop& loop, const UncertaintyStructure& s,
                                     const VectorXd& delta) {
  auto model = std::make_shared<LocalModel>(a_minus_model(loop, s, delta));
  const double value = model->value;
  if (!model->semisimple || model->elements.empty()) {
    const VectorXd shifted = delta + 1e-9 * jitter_direction(static_cast<int>(delta.size()));
    auto alt = std::make_shared<LocalModel>(a_minus_model(loop, s, shifted));
    if (!alt->semisimple || alt->elements.empty())
      throw DefectiveEigenvalueError("a_minus: defective active eigenvalue persists under perturbation");
    model = alt;
  }
  return evaluation_from(model, value);
}

inline double alpha_at(const UncertainClosedLoop& loop, const UncertaintyStructure& s, const VectorXd& delta) {
  try {
    return spectral_abscissa_value(closed_loop_A(loop, s, delta));
  } catch (const IllPosedError&) {
    return kInf;
  }
}

inline double hinf_at(const UncertainClosedLoop& loop, const UncertaintyStructure& s, const VectorXd& delta,
                      const std::vector<Channel>& channels) {
  try {
    return -h_minus_model(loop, s, delta, channels).value;
  } catch (const IllPosedError&) {
    return kInf;
  }
}

template <class Solve>
std::vector<StartResult> run_starts(const std::vector<VectorXd>& starts, Solve&& solve, unsigned threads) {
  return parallel_map(starts.size(), [&](std::size_t i) { return solve(i); }, threads);
}

}  // namespace detail

// alpha* = max over the box of alpha(A(delta)), by minimizing a_- from every
// start (flag = strict). Ill-posed points count as destabilizing.
inline WorstCaseResult destabilize(const UncertainClosedLoop& loop, const UncertaintyStructure& s,
                                   const Box& box, const StartOptions& o = {}) {
  WorstCaseResult out;
  const int m = s.parameters();
  if (box.dimension() != m) throw DimensionError("destabilize: box and structure differ in dimension");
  out.argmax = VectorXd::Zero(m);
  if (loop.states() == 0) {
    out.best = -kInf;
    return out;
  }
  const auto starts = start_points(box, o);
  out.starts_used = static_cast<int>(starts.size());
  MinMinParams p = o.params;
  p.flag = ModelFlag::strict;
  std::vector<std::vector<VectorXd>> ill(starts.size());
  out.starts = detail::run_starts(starts, [&](std::size_t i) {
    StartResult r;
    r.start = starts[i];
    auto oracle = [&](const VectorXd& d) {
      try {
        return detail::a_minus_evaluation(loop, s, d);
      } catch (const IllPosedError&) {
        ill[i].push_back(d);
        throw;
      }
    };
    try {
      const auto res = minimize_minmin(oracle, box, starts[i], p);
      r.x = res.x;
      r.serious_steps = static_cast<int>(res.trace.iterates.size()) - 1;
      r.value = detail::alpha_at(loop, s, r.x);
    } catch (const Error& e) {
      r.failed = true;
      r.reason = e.what();
      r.x = starts[i];
      r.value = ill[i].empty() ? -kInf : kInf;
    }
    return r;
  }, o.threads);

  bool every_start_ill = true;
  for (const auto& r : out.starts) every_start_ill = every_start_ill && r.failed && r.value == kInf;
  if (every_start_ill)
    throw IllPosedError("destabilize: every start point is ill-posed; run wellposedness_scan", 0.0);
  for (std::size_t i = 0; i < starts.size(); ++i)
    if (!ill[i].empty()) {
      out.ill_posed = true;
      out.best = kInf;
      out.argmax = ill[i].front();
      return out;
    }
  std::size_t best = starts.size();
  for (std::size_t i = 0; i < out.starts.size(); ++i)
    if (!out.starts[i].failed && (best == starts.size() || out.starts[i].value > out.starts[best].value))
      best = i;
  if (best == starts.size()) throw NumericalError("destabilize: every start failed");
  out.argmax = out.starts[best].x;
  out.best = detail::alpha_at(loop, s, out.argmax);
  return out;
}

// v* = max over the box of ||T_zw(delta)||_inf by minimizing h_- (flag =
// upper). Unstable or ill-posed points are rejected by the solver and
// reported for escalation.
inline WorstCaseResult worst_performance(const UncertainClosedLoop& loop, const UncertaintyStructure& s,
                                         const Box& box, const StartOptions& o = {},
                                         const std::vector<Channel>& channels = {}) {
  WorstCaseResult out;
  const int m = s.parameters();
  if (box.dimension() != m) throw DimensionError("worst_performance: box and structure differ in dimension");
  const auto starts = start_points(box, o);
  out.starts_used = static_cast<int>(starts.size());
  MinMinParams p = o.params;
  p.flag = ModelFlag::upper;
  std::vector<std::vector<VectorXd>> unstable(starts.size());
  out.starts = detail::run_starts(starts, [&](std::size_t i) {
    StartResult r;
    r.start = starts[i];
    auto oracle = [&](const VectorXd& d) {
      std::shared_ptr<LocalModel> model;
      try {
        model = std::make_shared<LocalModel>(h_minus_model(loop, s, d, channels));
      } catch (const IllPosedError&) {
        unstable[i].push_back(d);
        throw;
      }
      if (!model->finite) {
        unstable[i].push_back(d);
        throw DomainError("worst_performance: closed loop unstable");
      }
      return detail::evaluation_from(model, model->value);
    };
    try {
      const auto res = minimize_minmin(oracle, box, starts[i], p);
      r.x = res.x;
      r.serious_steps = static_cast<int>(res.trace.iterates.size()) - 1;
      r.value = -res.value;
    } catch (const Error& e) {
      r.failed = true;
      r.reason = e.what();
      r.x = starts[i];
      r.value = kInf;
    }
    return r;
  }, o.threads);
  for (const auto& u : unstable) out.unstable_points.insert(out.unstable_points.end(), u.begin(), u.end());
  std::size_t best = starts.size();
  for (std::size_t i = 0; i < out.starts.size(); ++i)
    if (!out.starts[i].failed && (best == starts.size() || out.starts[i].value > out.starts[best].value))
      best = i;
  if (best == starts.size()) {
    out.best = kInf;
    out.argmax = out.unstable_points.empty() ? VectorXd::Zero(m) : out.unstable_points.front();
    return out;
  }
  out.argmax = out.starts[best].x;
  out.best = detail::hinf_at(loop, s, out.argmax, channels);
  return out;
}

namespace detail {

// Value and model of  ||delta||_inf.
inline Evaluation inf_norm_evaluation(const VectorXd& d) {
  const int m = static_cast<int>(d.size());
  const double r = d.cwiseAbs().maxCoeff();
  Evaluation e;
  e.value = r;
  e.gradient = VectorXd::Zero(m);
  int imax = 0;
  for (int i = 1; i < m; ++i)
    if (std::abs(d(i)) > std::abs(d(imax))) imax = i;
  if (r > 0.0) e.gradient(imax) = d(imax) > 0 ? 1.0 : -1.0;
  const VectorXd dc = d;
  e.steepest = [dc, r, m](const VectorXd& dir) {
    VectorXd g = VectorXd::Zero(m);
    double val = -kInf;
    for (int i = 0; i < m; ++i) {
      if (r > 0.0 && std::abs(dc(i)) < r * (1.0 - 1e-12)) continue;
      const double s = r > 0.0 ? (dc(i) > 0 ? 1.0 : -1.0) : (dir(i) >= 0 ? 1.0 : -1.0);
      if (s * dir(i) > val) {
        val = s * dir(i);
        g = VectorXd::Zero(m);
        g(i) = s;
      }
    }
    return g;
  };
  return e;
}

// Constraint c(delta) <= 0 with value and model; +/-inf values are allowed
// and mean "certainly feasible" (-inf) or "undefined" (+inf).
using ConstraintFn = std::function<Evaluation(const VectorXd&)>;

inline Evaluation augmented_lagrangian(const VectorXd& d, const ConstraintFn& c, double lambda, double rho) {
  Evaluation n = inf_norm_evaluation(d);
  const Evaluation ce = c(d);
  if (ce.value == -kInf) {
    n.value += -lambda * lambda / (2.0 * rho);
    return n;
  }
  if (!std::isfinite(ce.value)) throw DomainError("constraint undefined");
  const double mult = std::max(0.0, lambda + rho * ce.value);
  Evaluation out;
  out.value = n.value + (mult * mult - lambda * lambda) / (2.0 * rho);
  out.gradient = n.gradient + mult * ce.gradient;
  auto ns = n.steepest;
  auto cs = ce.steepest;
  const VectorXd cg = ce.gradient;
  out.steepest = [ns, cs, cg, mult](const VectorXd& dir) {
    return VectorXd(ns(dir) + mult * (cs ? cs(dir) : cg));
  };
  return out;
}

// First s in (0, s_max] along the ray s * u with phi(s) >= 0, by a scan and
// bisection. Returns +inf when the scan finds none.
inline double first_crossing(const std::function<double(double)>& phi, double s_max, int scan = 200) {
  double lo = 0.0, hi = kInf;
  for (int k = 1; k <= scan; ++k) {
    const double s = s_max * k / scan;
    if (phi(s) >= 0.0) {
      hi = s;
      break;
    }
    lo = s;
  }
  if (!std::isfinite(hi)) return kInf;
  for (int it = 0; it < 200 && hi - lo > 1e-14 * (1.0 + hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    (phi(mid) >= 0.0 ? hi : lo) = mid;
  }
  return hi;
}

struct RadiusSetup {
  ConstraintFn constraint;             // c(delta) <= 0 marks the critical region
  std::function<double(const VectorXd&)> crossing;  // >= 0 inside the critical region
  std::function<VectorXd(const VectorXd&)> gradient;  // gradient of -c, for multipliers
  double c0 = 0.0;                     // c(0) > 0
  double c0_grad_l1 = 0.0;
  ModelFlag flag = ModelFlag::strict;
};

inline RadiusResult solve_radius(int m, const RadiusSetup& setup, const StartOptions& o) {
  constexpr double kOuterRadius = 10.0;
  const Box outer = Box::symmetric(m, kOuterRadius);
  const auto starts = start_points(Box::symmetric(m), o, o.radius_max_starts);
  MinMinParams p = o.params;
  p.flag = setup.flag;
  const double rho0 = std::min(1e6, 10.0 * std::max(1.0, 1.0 / std::max(1e-300, setup.c0 * setup.c0_grad_l1)));

  struct Found {
    double radius = kInf;
    VectorXd point;
  };
  const auto found = parallel_map(starts.size(), [&](std::size_t i) {
    Found f;
    VectorXd x = starts[i];
    double lambda = 0.0, rho = rho0;
    for (int round = 0; round < 6; ++round) {
      auto oracle = [&](const VectorXd& d) { return augmented_lagrangian(d, setup.constraint, lambda, rho); };
      try {
        x = minimize_minmin(oracle, outer, x, p).x;
      } catch (const Error&) {
        break;
      }
      Evaluation c;
      try {
        c = setup.constraint(x);
      } catch (const Error&) {
        break;
      }
      const double cv = std::isfinite(c.value) ? c.value : (c.value < 0 ? -1e300 : 1e300);
      lambda = std::max(0.0, lambda + rho * cv);
      rho *= 10.0;
      if (cv <= 0.0 && cv >= -1e-4 * (1.0 + std::abs(setup.c0))) break;
    }
    const double r = x.cwiseAbs().maxCoeff();
    if (r == 0.0) return f;
    const VectorXd u = x / r;
    auto phi = [&](double s) { return setup.crossing(s * u); };
    const double s = first_crossing(phi, kOuterRadius);
    if (std::isfinite(s)) {
      f.radius = s;
      f.point = s * u;
    }
    return f;
  }, o.threads);

  RadiusResult out;
  out.critical = VectorXd::Zero(m);
  for (const auto& f : found)
    if (f.radius < out.radius) {
      out.radius = f.radius;
      out.critical = f.point;
    }
  out.found = std::isfinite(out.radius);
  out.mu_plus = VectorXd::Zero(m);
  out.mu_minus = VectorXd::Zero(m);
  if (out.found) {
    try {
      const VectorXd g = setup.gradient(out.critical);
      double l1 = 0.0;
      for (int i = 0; i < m; ++i)
        if (std::abs(out.critical(i)) >= out.radius * (1.0 - 1e-6)) l1 += std::abs(g(i));
      out.lambda = l1 > 0.0 ? 1.0 / l1 : 0.0;
      for (int i = 0; i < m; ++i)
        if (std::abs(out.critical(i)) >= out.radius * (1.0 - 1e-6)) {
          out.mu_plus(i) = std::max(0.0, out.lambda * g(i));
          out.mu_minus(i) = std::max(0.0, -out.lambda * g(i));
        }
    } catch (const Error&) {
    }
  }
  return out;
}

}  // namespace detail

// d* = min { ||delta||_inf : alpha(A(delta)) >= 0 } by an augmented
// Lagrangian on  a_-(delta) <= 0  inside the box of radius 10, followed by a
// radial bisection for the first crossing along the critical ray.
inline RadiusResult distance_to_instability(const UncertainClosedLoop& loop, const UncertaintyStructure& s,
                                            const StartOptions& o = {}) {
  const int m = s.parameters();
  RadiusResult out;
  const VectorXd zero = VectorXd::Zero(m);
  out.mu_plus = out.mu_minus = zero;
  if (loop.states() == 0) return out;
  const double alpha0 = detail::alpha_at(loop, s, zero);
  if (alpha0 >= 0.0) {
    out.radius = 0.0;
    out.critical = zero;
    out.found = true;
    return out;
  }
  detail::RadiusSetup setup;
  setup.constraint = [&](const VectorXd& d) { return detail::a_minus_evaluation(loop, s, d); };
  setup.crossing = [&](const VectorXd& d) { return detail::alpha_at(loop, s, d); };
  setup.gradient = [&](const VectorXd& d) { return VectorXd(-detail::a_minus_evaluation(loop, s, d).gradient); };
  setup.c0 = -alpha0;
  setup.c0_grad_l1 = detail::a_minus_evaluation(loop, s, zero).gradient.lpNorm<1>();
  setup.flag = ModelFlag::strict;
  return detail::solve_radius(m, setup, o);
}

// h* = min { ||delta||_inf : ||T_zw(delta)||_inf >= level }; unstable points
// count as reaching the level.
inline RadiusResult performance_radius(const UncertainClosedLoop& loop, const UncertaintyStructure& s,
                                       double level, const StartOptions& o = {},
                                       const std::vector<Channel>& channels = {}) {
  const int m = s.parameters();
  RadiusResult out;
  const VectorXd zero = VectorXd::Zero(m);
  out.mu_plus = out.mu_minus = zero;
  const double h0 = detail::hinf_at(loop, s, zero, channels);
  if (h0 >= level) {
    out.radius = 0.0;
    out.critical = zero;
    out.found = true;
    return out;
  }
  detail::RadiusSetup setup;
  setup.constraint = [&](const VectorXd& d) {
    std::shared_ptr<LocalModel> model;
    try {
      model = std::make_shared<LocalModel>(h_minus_model(loop, s, d, channels));
    } catch (const IllPosedError&) {
      return Evaluation{-kInf, VectorXd::Zero(m), {}};
    }
    if (!model->finite) return Evaluation{-kInf, VectorXd::Zero(m), {}};
    return detail::evaluation_from(model, level + model->value);
  };
  setup.crossing = [&](const VectorXd& d) { return detail::hinf_at(loop, s, d, channels) - level; };
  setup.gradient = [&](const VectorXd& d) {
    return VectorXd(-h_minus_model(loop, s, d, channels).equal_weight());
  };
  setup.c0 = level - h0;
  setup.c0_grad_l1 = h_minus_model(loop, s, zero, channels).equal_weight().lpNorm<1>();
  setup.flag = ModelFlag::upper;
  return detail::solve_radius(m, setup, o);
}

// Minimizes  -sigma_max((I - Delta D)^{-1})  over the box with
// finite-difference gradients. A sign change of det(I - Delta D) between two
// evaluated points brackets a singular point, which is then located by
// bisection on the segment.
inline WorstCaseResult wellposedness_scan(const UncertainClosedLoop& loop, const UncertaintyStructure& s,
                                          const Box& box, const StartOptions& o = {}) {
  constexpr double kIllPosedLevel = -1e6;
  WorstCaseResult out;
  const int m = s.parameters();
  if (box.dimension() != m) throw DimensionError("wellposedness_scan: box and structure differ in dimension");
  const auto starts = start_points(box, o);
  out.starts_used = static_cast<int>(starts.size());
  const MatrixXd d11 = loop.m.D11();
  auto det_sign = [&](const VectorXd& d) {
    const MatrixXd x = build_delta_matrix(s, d);
    const double det = (MatrixXd::Identity(x.rows(), x.rows()) - x * d11).determinant();
    return det > 0 ? 1 : (det < 0 ? -1 : 0);
  };
  auto measure = [&](const VectorXd& d) { return wellposedness_measure(loop, s, d).value; };
  MinMinParams p = o.params;
  p.flag = ModelFlag::upper;

  out.starts = detail::run_starts(starts, [&](std::size_t i) {
    StartResult r;
    r.start = starts[i];
    const int sign0 = det_sign(starts[i]);
    VectorXd flipped;
    auto oracle = [&](const VectorXd& d) {
      if (flipped.size() == 0 && sign0 != 0 && det_sign(d) != sign0) flipped = d;
      const double v = measure(d);
      if (!std::isfinite(v)) throw IllPosedError("wellposedness_scan: singular point", 0.0);
      Evaluation e;
      e.value = v;
      e.gradient = VectorXd::Zero(m);
      for (int k = 0; k < m; ++k) {
        const double h = 1e-7 * (1.0 + std::abs(d(k)));
        VectorXd dp = d, dm = d;
        dp(k) += h;
        dm(k) -= h;
        const double fp = measure(dp), fm = measure(dm);
        if (std::isfinite(fp) && std::isfinite(fm))
          e.gradient(k) = (fp - fm) / (2 * h);
        else if (std::isfinite(fp))
          e.gradient(k) = (fp - v) / h;
        else if (std::isfinite(fm))
          e.gradient(k) = (v - fm) / h;
      }
      return e;
    };
    try {
      const auto res = minimize_minmin(oracle, box, starts[i], p);
      r.x = res.x;
      r.value = res.value;
      r.serious_steps = static_cast<int>(res.trace.iterates.size()) - 1;
    } catch (const Error& e) {
      r.failed = true;
      r.reason = e.what();
      r.x = starts[i];
      r.value = -kInf;
      return r;
    }
    if (flipped.size() == m) {
      VectorXd a = starts[i], b = flipped;
      for (int it = 0; it < 200; ++it) {
        const VectorXd mid = 0.5 * (a + b);
        if (mid == a || mid == b) break;
        (det_sign(mid) == sign0 ? a : b) = mid;
      }
      const double va = measure(a), vb = measure(b);
      const VectorXd& pick = va <= vb ? a : b;
      const double v = std::min(va, vb);
      if (v < r.value) {
        r.value = v;
        r.x = pick;
      }
    }
    return r;
  }, o.threads);
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.starts.size(); ++i)
    if (out.starts[i].value < out.starts[best].value) best = i;
  out.argmax = out.starts[best].x;
  out.best = out.starts[best].failed ? -kInf : measure(out.argmax);
  if (out.starts[best].failed) out.argmax = out.starts[best].start;
  out.ill_posed = out.best < kIllPosedLevel;
  return out;
}

// Single-start solves with the full solver trace.
inline MinMinResult trace_destabilize(const UncertainClosedLoop& loop, const UncertaintyStructure& s,
                                      const Box& box, const VectorXd& start, MinMinParams p = {}) {
  p.flag = ModelFlag::strict;
  return minimize_minmin([&](const VectorXd& d) { return detail::a_minus_evaluation(loop, s, d); }, box, start, p);
}

inline MinMinResult trace_worst_performance(const UncertainClosedLoop& loop, const UncertaintyStructure& s,
                                            const Box& box, const VectorXd& start, MinMinParams p = {},
                                            const std::vector<Channel>& channels = {}) {
  p.flag = ModelFlag::upper;
  auto oracle = [&](const VectorXd& d) {
    auto model = std::make_shared<LocalModel>(h_minus_model(loop, s, d, channels));
    if (!model->finite) throw DomainError("closed loop unstable");
    return detail::evaluation_from(model, model->value);
  };
  return minimize_minmin(oracle, box, start, p);
}

}  // namespace rpsynth
