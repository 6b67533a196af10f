// rpsynth: command-line front end.
//
//   rpsynth synth   problem.json [-o report.json] [--eps E] [--starts N] [--grid N] [--seed S] [--max-outer N]
//   rpsynth analyze problem.json [--kappa ... | --report report.json]
//   rpsynth certify problem.json [--kappa ... | --report report.json] [--grid N]
//   rpsynth trace   problem.json [--kappa ... | --report report.json] [--program destabilize|degrade]
//
// Exit codes: 0 certified (d* >= 1), 2 completed without certificate, 3 aborted, 1 bad input.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rpsynth/rpsynth.hpp"

using namespace rpsynth;
using nlohmann::json;
using detail::number;
using detail::vector_json;

namespace {

struct Common {
  std::string problem;
  std::optional<double> eps;
  std::optional<int> starts, grid, max_outer;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  std::string output;
  std::vector<double> kappa;
  std::string report;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("problem", c.problem, "problem file (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("--eps", c.eps, "relative stopping slack");
  app->add_option("--starts", c.starts, "cap on multi-start points (0: no cap)");
  app->add_option("--grid", c.grid, "grid points per axis for certification");
  app->add_option("--seed", c.seed, "seed of the multi-start generator");
  app->add_option("--max-outer", c.max_outer, "cap on outer iterations");
  app->add_option("--threads", c.threads, "worker threads (0: hardware)");
  app->add_option("-o,--output", c.output, "output file");
}

void add_kappa(CLI::App* app, Common& c) {
  auto* k = app->add_option("--kappa", c.kappa, "controller parameters")->delimiter(',');
  app->add_option("--report", c.report, "take the controller from a report")->check(CLI::ExistingFile)->excludes(k);
}

ProblemFile load(const Common& c) {
  ProblemFile f = load_problem(c.problem);
  auto& o = f.options;
  if (c.eps) o.eps = *c.eps;
  if (c.starts) o.starts = *c.starts;
  if (c.grid) o.grid = *c.grid;
  if (c.seed) o.seed = *c.seed;
  if (c.max_outer) o.max_outer = *c.max_outer;
  if (!(o.eps > 0)) throw ProblemFileError("--eps: must be positive");
  if (o.grid < 2) throw ProblemFileError("--grid: need at least 2 points per axis");
  if (o.max_outer < 1) throw ProblemFileError("--max-outer: must be at least 1");
  return f;
}

VectorXd controller_of(const Common& c, const ProblemFile& f) {
  const int n = f.controller().parameters();
  VectorXd k;
  if (!c.report.empty()) k = read_report(c.report).kappa;
  else if (!c.kappa.empty()) k = Eigen::Map<const VectorXd>(c.kappa.data(), static_cast<Eigen::Index>(c.kappa.size()));
  else k = f.kappa0.size() ? f.kappa0 : VectorXd::Zero(n);
  if (k.size() != n)
    throw ProblemFileError("controller has " + std::to_string(k.size()) + " parameters, the structure needs " +
                           std::to_string(n));
  return k;
}

void emit(const Common& c, const json& j) {
  if (c.output.empty()) std::cout << j.dump(2) << "\n";
  else write_file(c.output, j.dump(2) + "\n");
}

json point(const ProblemFile& f, const VectorXd& delta) {
  if (delta.size() != f.parameters()) return json::array();
  return {{"delta", vector_json(delta)}, {"theta", vector_json(f.to_physical(delta))}};
}

StartOptions starts_for(const ProblemFile& f, const Common& c) { return start_options(f.options, c.threads); }

int synth(const Common& c, bool timings, bool quiet) {
  const ProblemFile f = load(c);
  RunConfig cfg;
  cfg.timings = timings;
  cfg.threads = c.threads;
  if (!quiet) cfg.log = [](const std::string& s) { std::cerr << s << "\n"; };
  const RunReport r = run_dynamic_inner_approximation(f, cfg);
  write_report(r, c.output.empty() ? "report.json" : c.output, &f);
  std::cout << "termination: " << r.termination << "\n"
            << "outer iterations: " << r.iterations.size() << ", scenarios: " << r.scenarios.size() << "\n"
            << "v_* = " << r.v_lower << ", v* = " << r.v_upper << "\n"
            << "d* = " << r.d_star << ", h* = " << r.h_star << "\n";
  return r.exit_code();
}

int analyze(const Common& c) {
  const ProblemFile f = load(c);
  const VectorXd k = controller_of(c, f);
  const auto s = f.uncertainty();
  const auto loop = loop_at(normalized_plant(f), f.controller(), k);
  const Box box = Box::symmetric(s.parameters());
  const StartOptions so = starts_for(f, c);
  json j;
  j["kappa"] = vector_json(k);
  const WorstCaseResult wp = wellposedness_scan(loop, s, box, so);
  j["wellposedness"] = {{"worst", number(wp.best)}, {"ill_posed", wp.ill_posed}, {"argmax", point(f, wp.argmax)}};
  bool stable = false;
  try {
    const WorstCaseResult a = destabilize(loop, s, box, so);
    j["alpha_star"] = {{"value", number(a.best)}, {"argmax", point(f, a.argmax)}, {"starts", a.starts_used}};
    stable = a.best < 0.0;
  } catch (const IllPosedError& e) {
    j["alpha_star"] = {{"error", e.what()}};
  }
  const WorstCaseResult v = worst_performance(loop, s, box, so);
  j["v_star"] = {{"value", number(v.best)},
                 {"argmax", point(f, v.argmax)},
                 {"starts", v.starts_used},
                 {"unstable_points", v.unstable_points.size()}};
  emit(c, j);
  return stable ? 0 : 2;
}

int certify(const Common& c) {
  const ProblemFile f = load(c);
  const VectorXd k = controller_of(c, f);
  const auto s = f.uncertainty();
  const auto loop = loop_at(normalized_plant(f), f.controller(), k);
  const StartOptions so = starts_for(f, c);
  const GridCertificate g = grid_certify(loop, s, f.options.grid, f.options.grid_cap, 1.0, c.threads);
  json j;
  j["kappa"] = vector_json(k);
  j["grid"] = {{"points_per_axis", g.points_per_axis},
               {"points", g.points},
               {"worst_alpha", number(g.worst_alpha)},
               {"alpha_argmax", point(f, g.alpha_argmax)},
               {"worst_norm", number(g.worst_norm)},
               {"norm_argmax", point(f, g.norm_argmax)}};
  const RadiusResult d = distance_to_instability(loop, s, so);
  j["d_star"] = {{"value", number(d.radius)}, {"critical", point(f, d.critical)}};
  const WorstCaseResult v = worst_performance(loop, s, Box::symmetric(s.parameters()), so);
  j["v_star"] = number(v.best);
  if (std::isfinite(v.best)) {
    const RadiusResult h = performance_radius(loop, s, v.best, so);
    j["h_star"] = {{"level", v.best}, {"value", number(h.radius)}, {"critical", point(f, h.critical)}};
  }
  emit(c, j);
  return d.radius >= 1.0 && g.worst_alpha < 0.0 ? 0 : 2;
}

int trace(const Common& c, const std::string& program, const std::vector<double>& start) {
  const ProblemFile f = load(c);
  const VectorXd k = controller_of(c, f);
  const auto s = f.uncertainty();
  const int m = s.parameters();
  const auto loop = loop_at(normalized_plant(f), f.controller(), k);
  VectorXd x0 = VectorXd::Zero(m);
  if (!start.empty()) {
    if (static_cast<int>(start.size()) != m) throw ProblemFileError("--start: expected " + std::to_string(m) + " entries");
    x0 = Eigen::Map<const VectorXd>(start.data(), m);
  }
  const Box box = Box::symmetric(m);
  const MinMinResult r = program == "destabilize" ? trace_destabilize(loop, s, box, x0)
                                                  : trace_worst_performance(loop, s, box, x0);
  // Solver minimizes the negated objective; report the maximized value.
  json j;
  j["program"] = program;
  j["value"] = number(-r.value);
  j["argmax"] = point(f, r.x);
  j["kkt_residual"] = number(r.kkt_residual);
  j["reason"] = to_string(r.trace.reason);
  j["evaluations"] = r.trace.evaluations;
  j["steps"] = json::array();
  for (std::size_t i = 0; i < r.trace.iterates.size(); ++i) {
    json st = {{"delta", vector_json(r.trace.iterates[i])}, {"value", number(-r.trace.values[i])}};
    if (i < r.trace.rho.size()) st["rho"] = number(r.trace.rho[i]);
    if (i < r.trace.t_sharp.size()) st["t"] = number(r.trace.t_sharp[i]);
    if (i < r.trace.inner_counts.size()) st["inner"] = r.trace.inner_counts[i];
    j["steps"].push_back(st);
  }
  emit(c, j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust structured H-infinity synthesis over a parameter box"};
  app.require_subcommand(1);
  Common c;
  bool timings = false, quiet = false;
  std::string program = "degrade";
  std::vector<double> start;

  auto* s = app.add_subcommand("synth", "dynamic inner approximation; writes a report and CSV tables");
  add_common(s, c);
  s->add_flag("--timings", timings, "record phase timings in the report");
  s->add_flag("-q,--quiet", quiet, "no progress log");
  auto* a = app.add_subcommand("analyze", "worst-case stability, performance and well-posedness at a fixed controller");
  add_common(a, c);
  add_kappa(a, c);
  auto* ce = app.add_subcommand("certify", "grid certification and stability/performance radii");
  add_common(ce, c);
  add_kappa(ce, c);
  auto* t = app.add_subcommand("trace", "single-start worst-case search with the full solver trace");
  add_common(t, c);
  add_kappa(t, c);
  t->add_option("--program", program, "destabilize or degrade")->check(CLI::IsMember({"destabilize", "degrade"}));
  t->add_option("--start", start, "start point in normalized coordinates")->delimiter(',');

  CLI11_PARSE(app, argc, argv);
  try {
    if (s->parsed()) return synth(c, timings, quiet);
    if (a->parsed()) return analyze(c);
    if (ce->parsed()) return certify(c);
    return trace(c, program, start);
  } catch (const ProblemFileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
