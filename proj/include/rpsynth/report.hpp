#pragma once

#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include <json.hpp>

#include "rpsynth/inner_approx.hpp"

namespace rpsynth {

namespace detail {

using nlohmann::json;

// Non-finite numbers are written as the strings "inf", "-inf", "nan".
inline json number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double number_from(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw Error("report: expected a number, got " + j.dump());
}

inline json vector_json(const VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

inline VectorXd vector_from(const json& j) {
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number_from(j[i]);
  return v;
}

inline std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline nlohmann::json report_json(const RunReport& r) {
  using namespace detail;
  json j;
  j["termination"] = r.termination;
  j["converged"] = r.converged;
  j["aborted"] = r.aborted;
  j["certified"] = r.certified();
  j["eps"] = number(r.eps);
  j["seed"] = r.seed;
  j["kappa"] = vector_json(r.kappa);
  j["v_lower"] = number(r.v_lower);
  j["v_upper"] = number(r.v_upper);
  j["d_star"] = number(r.d_star);
  j["d_critical"] = vector_json(r.d_critical);
  j["h_star"] = number(r.h_star);
  j["h_critical"] = vector_json(r.h_critical);
  j["enlarged_alpha"] = number(r.enlarged_alpha);
  j["enlarged_alpha_delta"] = vector_json(r.enlarged_alpha_delta);
  j["enlarged_v"] = number(r.enlarged_v);
  j["enlarged_v_delta"] = vector_json(r.enlarged_v_delta);
  j["scenarios"] = json::array();
  for (const auto& s : r.scenarios)
    j["scenarios"].push_back(
        {{"delta", vector_json(s.delta)}, {"origin", to_string(s.origin)}, {"value", number(s.value)}, {"outer", s.outer}});
  j["iterations"] = json::array();
  for (const auto& it : r.iterations)
    j["iterations"].push_back({{"iter", it.iter},
                               {"scenarios", it.scenarios},
                               {"destabilization_rounds", it.destabilization_rounds},
                               {"v_lower", number(it.v_lower)},
                               {"alpha_star", number(it.alpha_star)},
                               {"v_upper", number(it.v_upper)},
                               {"delta_star", vector_json(it.delta_star)},
                               {"kappa", vector_json(it.kappa)},
                               {"stop", it.stop}});
  if (!r.timings.empty()) {
    j["timings"] = json::array();
    for (const auto& t : r.timings) j["timings"].push_back({{"phase", t.phase}, {"seconds", t.seconds}});
  }
  return j;
}

inline RunReport parse_report(const nlohmann::json& j) {
  using namespace detail;
  RunReport r;
  try {
    r.termination = j.at("termination").get<std::string>();
    r.converged = j.at("converged").get<bool>();
    r.aborted = j.at("aborted").get<bool>();
    r.eps = number_from(j.at("eps"));
    r.seed = j.at("seed").get<std::uint64_t>();
    r.kappa = vector_from(j.at("kappa"));
    r.v_lower = number_from(j.at("v_lower"));
    r.v_upper = number_from(j.at("v_upper"));
    r.d_star = number_from(j.at("d_star"));
    r.d_critical = vector_from(j.at("d_critical"));
    r.h_star = number_from(j.at("h_star"));
    r.h_critical = vector_from(j.at("h_critical"));
    r.enlarged_alpha = number_from(j.at("enlarged_alpha"));
    r.enlarged_alpha_delta = vector_from(j.at("enlarged_alpha_delta"));
    r.enlarged_v = number_from(j.at("enlarged_v"));
    r.enlarged_v_delta = vector_from(j.at("enlarged_v_delta"));
    for (const auto& s : j.at("scenarios")) {
      ActiveScenario a;
      a.delta = vector_from(s.at("delta"));
      const auto o = s.at("origin").get<std::string>();
      a.origin = o == "nominal" ? ScenarioOrigin::nominal
                 : o == "destabilizing" ? ScenarioOrigin::destabilizing
                 : o == "degrading" ? ScenarioOrigin::degrading
                 : throw Error("report: unknown scenario origin " + o);
      a.value = number_from(s.at("value"));
      a.outer = s.at("outer").get<int>();
      r.scenarios.push_back(std::move(a));
    }
    for (const auto& it : j.at("iterations")) {
      OuterIteration o;
      o.iter = it.at("iter").get<int>();
      o.scenarios = it.at("scenarios").get<int>();
      o.destabilization_rounds = it.at("destabilization_rounds").get<int>();
      o.v_lower = number_from(it.at("v_lower"));
      o.alpha_star = number_from(it.at("alpha_star"));
      o.v_upper = number_from(it.at("v_upper"));
      o.delta_star = vector_from(it.at("delta_star"));
      o.kappa = vector_from(it.at("kappa"));
      o.stop = it.at("stop").get<bool>();
      r.iterations.push_back(std::move(o));
    }
    if (j.contains("timings"))
      for (const auto& t : j["timings"]) r.timings.push_back({t.at("phase").get<std::string>(), t.at("seconds").get<double>()});
  } catch (const json::exception& e) {
    throw Error(std::string("report: ") + e.what());
  }
  return r;
}

inline bool same_numbers(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

inline bool same_vectors(const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (!same_numbers(a(i), b(i))) return false;
  return true;
}

inline bool operator==(const RunReport& a, const RunReport& b) {
  if (a.iterations.size() != b.iterations.size()) return false;
  for (std::size_t i = 0; i < a.iterations.size(); ++i) {
    const auto& x = a.iterations[i];
    const auto& y = b.iterations[i];
    if (x.iter != y.iter || x.scenarios != y.scenarios || x.destabilization_rounds != y.destabilization_rounds ||
        !same_numbers(x.v_lower, y.v_lower) || !same_numbers(x.alpha_star, y.alpha_star) ||
        !same_numbers(x.v_upper, y.v_upper) || !same_vectors(x.delta_star, y.delta_star) ||
        !same_vectors(x.kappa, y.kappa) || x.stop != y.stop)
      return false;
  }
  return a.scenarios == b.scenarios && same_vectors(a.kappa, b.kappa) && same_numbers(a.v_lower, b.v_lower) &&
         same_numbers(a.v_upper, b.v_upper) && same_numbers(a.d_star, b.d_star) &&
         same_vectors(a.d_critical, b.d_critical) && same_numbers(a.h_star, b.h_star) &&
         same_vectors(a.h_critical, b.h_critical) && same_numbers(a.enlarged_alpha, b.enlarged_alpha) &&
         same_vectors(a.enlarged_alpha_delta, b.enlarged_alpha_delta) && same_numbers(a.enlarged_v, b.enlarged_v) &&
         same_vectors(a.enlarged_v_delta, b.enlarged_v_delta) && same_numbers(a.eps, b.eps) && a.seed == b.seed &&
         a.termination == b.termination && a.converged == b.converged && a.aborted == b.aborted &&
         a.timings == b.timings;
}

// --- plot tables -------------------------------------------------------------

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline std::string csv(const Table& t) {
  std::ostringstream os;
  for (std::size_t i = 0; i < t.header.size(); ++i) os << (i ? "," : "") << t.header[i];
  os << "\n";
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << detail::csv_number(r[i]);
    os << "\n";
  }
  return os.str();
}

// Objective history: one row per outer iteration.
inline Table iteration_table(const RunReport& r) {
  Table t{{"iter", "v_star", "alpha_star", "v_upper"}, {}};
  for (const auto& it : r.iterations)
    t.rows.push_back({static_cast<double>(it.iter), it.v_lower, it.alpha_star, it.v_upper});
  return t;
}

// Largest singular value of T_zw(j omega) at each active scenario.
inline Table frequency_table(const ProblemFile& f, const RunReport& r, int samples = 200) {
  Table t;
  t.header.push_back("omega");
  for (std::size_t i = 0; i < r.scenarios.size(); ++i) t.header.push_back("scenario_" + std::to_string(i));
  if (r.kappa.size() != f.controller().parameters()) return t;
  const UncertainClosedLoop loop = loop_at(normalized_plant(f), f.controller(), r.kappa);
  std::vector<StateSpace> sys;
  for (const auto& s : r.scenarios) sys.push_back(close_uncertainty(loop, f.uncertainty(), s.delta).T_zw);
  for (int k = 0; k < samples; ++k) {
    const double w = std::pow(10.0, -3.0 + 6.0 * k / (samples - 1));
    std::vector<double> row{w};
    for (const auto& g : sys) row.push_back(max_singular_value(g.frequency_response(w)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

// Step response of the first performance output to the first performance
// input at each active scenario, by exact zero-order-hold discretization.
inline Table step_table(const ProblemFile& f, const RunReport& r, int samples = 200) {
  Table t;
  t.header.push_back("time");
  for (std::size_t i = 0; i < r.scenarios.size(); ++i) t.header.push_back("scenario_" + std::to_string(i));
  if (r.kappa.size() != f.controller().parameters()) return t;
  const UncertainClosedLoop loop = loop_at(normalized_plant(f), f.controller(), r.kappa);
  std::vector<StateSpace> sys;
  double slowest = 1.0;
  for (const auto& s : r.scenarios) {
    sys.push_back(close_uncertainty(loop, f.uncertainty(), s.delta).T_zw);
    for (const auto& l : eigenvalues(sys.back().A)) slowest = std::min(slowest, std::max(1e-2, std::abs(l.real())));
  }
  const double horizon = std::min(100.0, 8.0 / slowest);
  const double h = horizon / (samples - 1);
  std::vector<MatrixXd> phi, gam;
  std::vector<VectorXd> x;
  for (const auto& g : sys) {
    const int n = g.states();
    MatrixXd aug = MatrixXd::Zero(n + 1, n + 1);
    aug.topLeftCorner(n, n) = g.A * h;
    if (g.inputs() > 0) aug.topRightCorner(n, 1) = g.B.col(0) * h;
    const MatrixXd e = aug.exp();
    phi.push_back(e.topLeftCorner(n, n));
    gam.push_back(e.topRightCorner(n, 1));
    x.push_back(VectorXd::Zero(n));
  }
  for (int k = 0; k < samples; ++k) {
    std::vector<double> row{k * h};
    for (std::size_t i = 0; i < sys.size(); ++i) {
      const auto& g = sys[i];
      double y = 0.0;
      if (g.outputs() > 0 && g.inputs() > 0) y = g.C.row(0).dot(x[i]) + g.D(0, 0);
      row.push_back(y);
      x[i] = phi[i] * x[i] + gam[i];
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

// Writes <path> (JSON) and, next to it, <stem>_iterations.csv; with the
// problem also <stem>_frequency.csv and <stem>_step.csv.
inline void write_report(const RunReport& r, const std::string& path, const ProblemFile* f = nullptr) {
  write_file(path, report_json(r).dump(2) + "\n");
  const std::filesystem::path p(path);
  const auto base = (p.parent_path() / p.stem()).string();
  write_file(base + "_iterations.csv", csv(iteration_table(r)));
  if (f && !r.aborted) {
    write_file(base + "_frequency.csv", csv(frequency_table(*f, r)));
    write_file(base + "_step.csv", csv(step_table(*f, r)));
  }
}

inline RunReport read_report(const std::string& path) {
  try {
    return parse_report(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("report: ") + e.what());
  }
}

}  // namespace rpsynth
