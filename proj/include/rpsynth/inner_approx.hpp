#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "rpsynth/problem.hpp"
#include "rpsynth/synthesis.hpp"
#include "rpsynth/worstcase.hpp"

namespace rpsynth {

enum class ScenarioOrigin { nominal, destabilizing, degrading };

inline const char* to_string(ScenarioOrigin o) {
  switch (o) {
    case ScenarioOrigin::nominal: return "nominal";
    case ScenarioOrigin::destabilizing: return "destabilizing";
    case ScenarioOrigin::degrading: return "degrading";
  }
  return "unknown";
}

struct ActiveScenario {
  VectorXd delta;
  ScenarioOrigin origin = ScenarioOrigin::nominal;
  double value = 0.0;  // alpha* for destabilizing, v* for degrading finds
  int outer = 0;       // outer iteration that appended it (0: initial)

  bool operator==(const ActiveScenario& o) const {
    return delta.size() == o.delta.size() && delta == o.delta && origin == o.origin &&
           (value == o.value || (std::isnan(value) && std::isnan(o.value))) && outer == o.outer;
  }
};

struct OuterIteration {
  int iter = 0;
  int scenarios = 0;  // |Delta_a| used by the final synthesis of this iteration
  int destabilization_rounds = 0;
  double v_lower = kInf;     // v_*
  double alpha_star = -kInf;
  double v_upper = kInf;     // v*
  VectorXd delta_star;
  VectorXd kappa;
  bool stop = false;

  bool operator==(const OuterIteration&) const = default;
};

struct Timing {
  std::string phase;
  double seconds = 0.0;
  bool operator==(const Timing&) const = default;
};

struct RunReport {
  std::vector<OuterIteration> iterations;
  std::vector<ActiveScenario> scenarios;
  VectorXd kappa;
  double v_lower = kInf;
  double v_upper = kInf;
  double d_star = std::numeric_limits<double>::quiet_NaN();
  VectorXd d_critical;
  double h_star = std::numeric_limits<double>::quiet_NaN();
  VectorXd h_critical;
  double enlarged_alpha = std::numeric_limits<double>::quiet_NaN();
  VectorXd enlarged_alpha_delta;
  double enlarged_v = std::numeric_limits<double>::quiet_NaN();
  VectorXd enlarged_v_delta;
  double eps = 0.01;
  std::uint64_t seed = 0;
  std::string termination;
  bool converged = false;
  bool aborted = false;
  std::vector<Timing> timings;

  bool certified() const { return !aborted && d_star >= 1.0; }
  int exit_code() const { return aborted ? 3 : (converged && certified() ? 0 : 2); }
};

struct RunConfig {
  bool timings = false;
  unsigned threads = 0;
  int max_ties = 4;  // tied maximizers appended per degradation step
  BundleParams bundle;
  std::function<void(const std::string&)> log;
};

inline UncertainClosedLoop loop_at(const UncertainPlant& plant, const ControllerStructure& cs, const VectorXd& kappa) {
  return close_controller(plant, realize_controller(cs, kappa));
}

// Multi-start policy from the run options.
inline StartOptions start_options(const RunOptions& o, unsigned threads) {
  StartOptions s;
  s.seed = o.seed;
  s.max_starts = o.starts;
  s.threads = threads;
  return s;
}

// Dynamic inner approximation: alternate multi-model synthesis on the
// active scenario set with destabilization and degradation searches over
// the unit box, appending the worst points until v* < (1 + eps) v_*.
inline RunReport run_dynamic_inner_approximation(const ProblemFile& f, const RunConfig& cfg = {}) {
  using clock = std::chrono::steady_clock;
  RunReport rep;
  const RunOptions& opt = f.options;
  rep.eps = opt.eps;
  rep.seed = opt.seed;
  const UncertainPlant plant = normalized_plant(f);
  const ControllerStructure cs = f.controller();
  const UncertaintyStructure s = f.uncertainty();
  const int m = s.parameters();
  const Box box = Box::symmetric(m);
  StartOptions so = start_options(opt, cfg.threads);
  BundleParams bp = cfg.bundle;
  bp.threads = cfg.threads;
  auto log = [&](const std::string& msg) {
    if (cfg.log) cfg.log(msg);
  };
  auto timed = [&](const std::string& phase, auto&& fn) {
    const auto t0 = clock::now();
    auto r = fn();
    if (cfg.timings) rep.timings.push_back({phase, std::chrono::duration<double>(clock::now() - t0).count()});
    return r;
  };

  std::vector<VectorXd> active{VectorXd::Zero(m)};
  rep.scenarios.push_back({VectorXd::Zero(m), ScenarioOrigin::nominal, std::numeric_limits<double>::quiet_NaN(), 0});
  VectorXd kappa = f.kappa0.size() == cs.parameters() ? f.kappa0 : VectorXd::Zero(cs.parameters());
  auto is_new = [&](const VectorXd& d) {
    for (const auto& a : active)
      if ((a - d).cwiseAbs().maxCoeff() < 1e-8) return false;
    return true;
  };
  auto append = [&](const VectorXd& d, ScenarioOrigin o, double v, int j) {
    active.push_back(d);
    rep.scenarios.push_back({d, o, v, j});
  };
  auto abort = [&](const std::string& why) {
    rep.termination = why;
    rep.aborted = true;
    rep.kappa = kappa;
    log("abort: " + why);
    return rep;
  };

  bool done = false;
  for (int j = 1; j <= opt.max_outer && !done; ++j) {
    OuterIteration rec;
    rec.iter = j;
    SynthesisResult sr;
    WorstCaseResult wa;
    for (;;) {
      SynthesisProblem pb;
      pb.plant = plant;
      pb.controller = cs;
      pb.uncertainty = s;
      pb.scenarios = active;
      pb.kappa0 = kappa;
      try {
        sr = timed("synthesis", [&] { return synthesize_structured(pb, bp); });
      } catch (const SynthesisError& e) {
        return abort(std::string("synthesis failure: ") + e.what());
      }
      kappa = sr.kappa;
      const UncertainClosedLoop loop = loop_at(plant, cs, kappa);
      so.previous = active;
      try {
        wa = timed("destabilize", [&] { return destabilize(loop, s, box, so); });
      } catch (const IllPosedError& e) {
        return abort(std::string("ill-posed: ") + e.what());
      }
      log("outer " + std::to_string(j) + ": v_* = " + std::to_string(sr.value) +
          ", alpha* = " + std::to_string(wa.best));
      if (wa.best < 0.0 && !wa.ill_posed) break;
      if (!is_new(wa.argmax)) return abort("stalled: destabilizing point already active");
      if (rec.destabilization_rounds >= opt.max_destabilize) return abort("destabilization cap");
      ++rec.destabilization_rounds;
      append(wa.argmax, ScenarioOrigin::destabilizing, wa.best, j);
    }
    const UncertainClosedLoop loop = loop_at(plant, cs, kappa);
    const WorstCaseResult wp = timed("degrade", [&] { return worst_performance(loop, s, box, so); });
    rec.scenarios = static_cast<int>(active.size());
    rec.v_lower = sr.value;
    rec.alpha_star = wa.best;
    rec.v_upper = wp.best;
    rec.delta_star = wp.argmax;
    rec.kappa = kappa;
    rec.stop = wp.best < (1.0 + opt.eps) * sr.value;
    rep.iterations.push_back(rec);
    log("outer " + std::to_string(j) + ": v* = " + std::to_string(wp.best));
    if (rec.stop) {
      rep.converged = true;
      rep.termination = "converged";
      break;
    }
    if (!wp.unstable_points.empty()) {
      bool added = false;
      for (const auto& d : wp.unstable_points)
        if (is_new(d)) {
          append(d, ScenarioOrigin::destabilizing, detail::alpha_at(loop, s, d), j);
          added = true;
          break;
        }
      if (added) continue;
    }
    // Maximizers tied with v* (distinct local solutions) are appended together.
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < wp.starts.size(); ++i)
      if (!wp.starts[i].failed && wp.starts[i].value >= wp.best - 1e-6 * (1.0 + std::abs(wp.best))) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return wp.starts[a].value > wp.starts[b].value; });
    int added = 0;
    if (is_new(wp.argmax)) {
      append(wp.argmax, ScenarioOrigin::degrading, wp.best, j);
      ++added;
    }
    for (std::size_t i : order) {
      if (added >= cfg.max_ties) break;
      const VectorXd& d = wp.starts[i].x;
      if (!is_new(d)) continue;
      append(d, ScenarioOrigin::degrading, detail::hinf_at(loop, s, d, {}), j);
      ++added;
    }
    if (added == 0) {
      rep.termination = "stalled: degrading point already active";
      done = true;
    }
  }
  if (rep.termination.empty()) rep.termination = "max_outer";
  rep.kappa = kappa;
  if (!rep.iterations.empty()) {
    rep.v_lower = rep.iterations.back().v_lower;
    rep.v_upper = rep.iterations.back().v_upper;
  }

  const UncertainClosedLoop loop = loop_at(plant, cs, kappa);
  StartOptions post = so;
  post.previous = active;
  const RadiusResult d = timed("distance_to_instability", [&] { return distance_to_instability(loop, s, post); });
  rep.d_star = d.radius;
  rep.d_critical = d.critical;
  if (std::isfinite(rep.v_upper)) {
    const RadiusResult h = timed("performance_radius", [&] { return performance_radius(loop, s, rep.v_upper, post); });
    rep.h_star = h.radius;
    rep.h_critical = h.critical;
  }
  const Box big = Box::symmetric(m, opt.enlarge);
  try {
    const WorstCaseResult ea = timed("enlarged_destabilize", [&] { return destabilize(loop, s, big, post); });
    rep.enlarged_alpha = ea.best;
    rep.enlarged_alpha_delta = ea.argmax;
  } catch (const IllPosedError&) {
    rep.enlarged_alpha = kInf;
  }
  const WorstCaseResult ev = timed("enlarged_degrade", [&] { return worst_performance(loop, s, big, post); });
  rep.enlarged_v = ev.best;
  rep.enlarged_v_delta = ev.argmax;
  return rep;
}

// --- grid certification ------------------------------------------------------

struct GridCertificate {
  int points_per_axis = 0;
  long long points = 0;
  double worst_alpha = -kInf;
  VectorXd alpha_argmax;
  double worst_norm = 0.0;  // +inf when some grid point is unstable
  VectorXd norm_argmax;
};

// Exhaustive evaluation on the uniform grid of [-radius, radius]^m.
inline GridCertificate grid_certify(const UncertainClosedLoop& loop, const UncertaintyStructure& s,
                                    int points_per_axis, double cap = 1e6, double radius = 1.0,
                                    unsigned threads = 0) {
  if (points_per_axis < 2) throw DomainError("grid_certify: need at least 2 points per axis");
  const int m = s.parameters();
  const double total = std::pow(static_cast<double>(points_per_axis), m);
  if (total > cap) {
    std::ostringstream os;
    os.precision(17);
    os << "grid_certify: " << points_per_axis << "^" << m << " = " << total << " points exceed the cap " << cap
       << "; raise the cap to at least " << total;
    throw DomainError(os.str());
  }
  GridCertificate out;
  out.points_per_axis = points_per_axis;
  out.points = static_cast<long long>(total);
  auto point = [&](long long idx) {
    VectorXd d(m);
    for (int i = 0; i < m; ++i) {
      const long long k = idx % points_per_axis;
      idx /= points_per_axis;
      d(i) = -radius + 2.0 * radius * static_cast<double>(k) / (points_per_axis - 1);
    }
    return d;
  };
  struct Sample {
    double alpha = -kInf;
    double norm = 0.0;
  };
  const auto samples = parallel_map(
      static_cast<std::size_t>(out.points),
      [&](std::size_t i) {
        const VectorXd d = point(static_cast<long long>(i));
        Sample smp;
        smp.alpha = loop.states() == 0 ? -kInf : detail::alpha_at(loop, s, d);
        smp.norm = detail::hinf_at(loop, s, d, {});
        return smp;
      },
      threads);
  out.alpha_argmax = point(0);
  out.norm_argmax = point(0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].alpha > out.worst_alpha) {
      out.worst_alpha = samples[i].alpha;
      out.alpha_argmax = point(static_cast<long long>(i));
    }
    if (samples[i].norm > out.worst_norm) {
      out.worst_norm = samples[i].norm;
      out.norm_argmax = point(static_cast<long long>(i));
    }
  }
  return out;
}

inline GridCertificate grid_certify(const ProblemFile& f, const VectorXd& kappa, int points_per_axis,
                                    unsigned threads = 0) {
  return grid_certify(loop_at(normalized_plant(f), f.controller(), kappa), f.uncertainty(), points_per_axis,
                      f.options.grid_cap, 1.0, threads);
}

}  // namespace rpsynth
