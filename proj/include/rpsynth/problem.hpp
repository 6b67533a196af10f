#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rpsynth/lft.hpp"
#include "rpsynth/synthesis.hpp"

namespace rpsynth {

// Malformed problem file: JSON syntax, missing fields, wrong shapes.
class ProblemFileError : public Error {
 public:
  using Error::Error;
};

struct RunOptions {
  double eps = 0.01;
  int grid = 5;           // points per axis for grid certification
  int starts = 0;         // 0: full multi-start policy, otherwise a cap
  std::uint64_t seed = 0;
  int max_outer = 25;
  int max_destabilize = 10;  // destabilization rounds per outer iteration
  double enlarge = 2.0;      // box scaling for the post-processing searches
  double grid_cap = 1e6;

  bool operator==(const RunOptions&) const = default;
};

// Problem data as written in the file, in physical parameter units.
struct ProblemFile {
  UncertainPlant plant;  // uncertainty channel closed by p = diag(theta) q
  std::vector<int> blocks;
  std::vector<std::array<double, 2>> ranges;  // physical range per parameter
  int order = 0;
  std::array<MaskedMatrix, 4> masks;  // A_K, B_K, C_K, D_K
  VectorXd kappa0;                    // empty: zeros
  RunOptions options;

  int parameters() const { return static_cast<int>(blocks.size()); }
  UncertaintyStructure uncertainty() const { return UncertaintyStructure(blocks); }
  ControllerStructure controller() const {
    return ControllerStructure(order, plant.n_y, plant.n_u, masks[0], masks[1], masks[2], masks[3]);
  }
  VectorXd center() const {
    VectorXd c(parameters());
    for (int i = 0; i < parameters(); ++i) c(i) = 0.5 * (ranges[i][0] + ranges[i][1]);
    return c;
  }
  VectorXd half_width() const {
    VectorXd h(parameters());
    for (int i = 0; i < parameters(); ++i) h(i) = 0.5 * (ranges[i][1] - ranges[i][0]);
    return h;
  }
  VectorXd to_physical(const VectorXd& delta) const { return center() + half_width().cwiseProduct(delta); }
  VectorXd to_normalized(const VectorXd& theta) const {
    return (theta - center()).cwiseQuotient(half_width());
  }
};

inline bool operator==(const MaskedMatrix& a, const MaskedMatrix& b) {
  return a.fixed.rows() == b.fixed.rows() && a.fixed.cols() == b.fixed.cols() && a.fixed == b.fixed &&
         a.free == b.free;
}

inline bool operator==(const ProblemFile& a, const ProblemFile& b) {
  const auto& p = a.plant;
  const auto& q = b.plant;
  return p.n_p == q.n_p && p.n_w == q.n_w && p.n_u == q.n_u && p.n_q == q.n_q && p.n_z == q.n_z &&
         p.n_y == q.n_y && p.ss.A == q.ss.A && p.ss.B == q.ss.B && p.ss.C == q.ss.C && p.ss.D == q.ss.D &&
         a.blocks == b.blocks && a.ranges == b.ranges && a.order == b.order && a.masks == b.masks &&
         a.kappa0.size() == b.kappa0.size() && a.kappa0 == b.kappa0 && a.options == b.options;
}

// Plant with the uncertainty channel rescaled so that delta in [-1, 1]^m:
// theta = c + h delta  gives  p = C q + H p',  p' = diag(delta) q.
inline UncertainPlant normalized_plant(const ProblemFile& f) {
  const UncertainPlant& g = f.plant;
  const int nq = g.n_q;
  VectorXd cd(nq), hd(nq);
  const VectorXd c = f.center(), h = f.half_width();
  for (int k = 0, pos = 0; k < f.parameters(); ++k)
    for (int j = 0; j < f.blocks[k]; ++j, ++pos) {
      cd(pos) = c(k);
      hd(pos) = h(k);
    }
  const int n = g.states();
  const int nx = n + g.ss.outputs();
  const int ni = g.ss.inputs();
  // Rows [x'; q; z; y] over columns [x, p, w, u].
  MatrixXd s(nx, n + ni);
  s << g.ss.A, g.ss.B, g.ss.C, g.ss.D;
  const MatrixXd dqp = g.ss.D.topLeftCorner(nq, g.n_p);
  const MatrixXd m = MatrixXd::Identity(nq, nq) - dqp * cd.asDiagonal();
  require_invertible(m, "normalized_plant: nominal uncertainty loop (I - D_qp diag(center))");
  // q = m^{-1} (Cq x + Dqp H p' + Dqw w + Dqu u)
  MatrixXd qrow(nq, n + ni);
  qrow << g.ss.C.topRows(nq), g.ss.D.topRows(nq);
  qrow.middleCols(n, g.n_p) = dqp * hd.asDiagonal();
  const MatrixXd q_of = m.partialPivLu().solve(qrow);
  MatrixXd out(nx, n + ni);
  for (int r = 0; r < nx; ++r) {
    const MatrixXd rp = s.block(r, n, 1, g.n_p);  // coefficient of p in row r
    out.row(r) = s.row(r);
    out.block(r, n, 1, g.n_p) = rp * hd.asDiagonal();
    out.row(r) += rp * cd.asDiagonal() * q_of;
  }
  return UncertainPlant(StateSpace(out.topLeftCorner(n, n), out.topRightCorner(n, ni), out.bottomLeftCorner(nx - n, n),
                                   out.bottomRightCorner(nx - n, ni)),
                        g.n_p, g.n_w, g.n_u, g.n_q, g.n_z, g.n_y);
}

inline SynthesisProblem synthesis_problem(const ProblemFile& f, std::vector<VectorXd> scenarios = {}) {
  SynthesisProblem pb;
  pb.plant = normalized_plant(f);
  pb.controller = f.controller();
  pb.uncertainty = f.uncertainty();
  pb.scenarios = std::move(scenarios);
  pb.kappa0 = f.kappa0;
  return pb;
}

namespace detail {

using nlohmann::json;

[[noreturn]] inline void bad(const std::string& field, const std::string& msg) {
  throw ProblemFileError(field + ": " + msg);
}

// Nested-array matrix; [] is an empty matrix of any compatible shape.
inline std::optional<MatrixXd> parse_matrix(const json& j, const std::string& field) {
  if (!j.is_array()) bad(field, "expected a matrix (array of rows)");
  if (j.empty()) return std::nullopt;
  const auto rows = j.size();
  std::size_t cols = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array()) bad(field, "row " + std::to_string(r) + " is not an array");
    if (r == 0) cols = j[r].size();
    if (j[r].size() != cols)
      bad(field, "row " + std::to_string(r) + " has " + std::to_string(j[r].size()) + " entries, expected " +
                     std::to_string(cols));
  }
  MatrixXd m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const json& v = j[r][c];
      if (v.is_number()) m(r, c) = v.get<double>();
      else if (v.is_string() && (v == "inf" || v == "-inf" || v == "nan")) bad(field, "non-finite entry");
      else bad(field, "entry (" + std::to_string(r) + "," + std::to_string(c) + ") is not a number");
    }
  return m;
}

inline json matrix_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline int line_of(const std::string& text, std::size_t byte) {
  int line = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) line += text[i] == '\n';
  return line;
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    bad(where + "." + key, "wrong type");
  }
}

}  // namespace detail

// Parses and validates problem text.
inline ProblemFile parse_problem(const std::string& text) {
  using detail::bad;
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ProblemFileError("parse error at line " + std::to_string(detail::line_of(text, e.byte)) + ": " +
                           e.what());
  }
  if (!j.is_object()) bad("<root>", "expected an object");
  for (const char* key : {"plant", "uncertainty", "controller"})
    if (!j.contains(key)) bad(key, "missing");

  ProblemFile f;
  const json& jp = j["plant"];
  if (!jp.is_object()) bad("plant", "expected an object");
  std::map<std::string, std::optional<MatrixXd>> blk;
  const char* mains[] = {"A", "Bp", "Bw", "Bu", "Cq", "Cz", "Cy"};
  for (const char* k : mains) {
    if (!jp.contains(k)) bad(std::string("plant.") + k, "missing");
    blk[k] = detail::parse_matrix(jp[k], std::string("plant.") + k);
  }
  const char* dkeys[] = {"qp", "qw", "qu", "zp", "zw", "zu", "yp", "yw", "yu"};
  const json dj = jp.contains("D") ? jp["D"] : json::object();
  if (!dj.is_object()) bad("plant.D", "expected an object");
  for (const char* k : dkeys)
    blk[std::string("D.") + k] = dj.contains(k) ? detail::parse_matrix(dj[k], std::string("plant.D.") + k)
                                               : std::optional<MatrixXd>{};

  // Channel widths: explicit "dims" first, then inferred from the blocks.
  std::map<char, int> dim;
  if (jp.contains("dims")) {
    for (const auto& [k, v] : jp["dims"].items()) {
      if (k.size() != 1 || std::string("npwuqzy").find(k[0]) == std::string::npos)
        bad("plant.dims." + k, "unknown dimension");
      if (!v.is_number_integer() || v.get<int>() < 0) bad("plant.dims." + k, "expected a nonnegative integer");
      dim[k[0]] = v.get<int>();
    }
  }
  struct Shape {
    std::string key;
    char r, c;
  };
  const std::vector<Shape> shapes = {
      {"A", 'n', 'n'},     {"Bp", 'n', 'p'},    {"Bw", 'n', 'w'},    {"Bu", 'n', 'u'},    {"Cq", 'q', 'n'},
      {"Cz", 'z', 'n'},    {"Cy", 'y', 'n'},    {"D.qp", 'q', 'p'},  {"D.qw", 'q', 'w'},  {"D.qu", 'q', 'u'},
      {"D.zp", 'z', 'p'},  {"D.zw", 'z', 'w'},  {"D.zu", 'z', 'u'},  {"D.yp", 'y', 'p'},  {"D.yw", 'y', 'w'},
      {"D.yu", 'y', 'u'}};
  auto learn = [&](char d, int v, const std::string& key) {
    auto it = dim.find(d);
    if (it == dim.end()) dim[d] = v;
    else if (it->second != v)
      bad("plant." + key, std::string("implies dimension ") + d + " = " + std::to_string(v) + ", elsewhere " +
                              std::to_string(it->second));
  };
  for (const auto& s : shapes)
    if (const auto& m = blk[s.key]) {
      learn(s.r, static_cast<int>(m->rows()), s.key);
      learn(s.c, static_cast<int>(m->cols()), s.key);
    }
  if (j["uncertainty"].contains("blocks") && !dim.count('q') && !dim.count('p')) {
    int total = 0;
    for (const auto& b : j["uncertainty"]["blocks"]) total += b.is_number_integer() ? b.get<int>() : 0;
    dim['p'] = dim['q'] = total;
  }
  if (!dim.count('n')) dim['n'] = 0;
  for (char d : std::string("pwuqzy"))
    if (!dim.count(d)) bad("plant", std::string("cannot infer dimension ") + d + "; add plant.dims." + d);
  std::map<std::string, MatrixXd> full;
  for (const auto& s : shapes) {
    const int r = dim[s.r], c = dim[s.c];
    if (const auto& m = blk[s.key]) {
      full[s.key] = *m;
    } else {
      if (s.key[0] != 'D' && r * c != 0) bad("plant." + s.key, "empty but expected " + std::to_string(r) + "x" + std::to_string(c));
      full[s.key] = MatrixXd::Zero(r, c);
    }
  }
  try {
    f.plant = UncertainPlant::from_blocks(full["A"], full["Bp"], full["Bw"], full["Bu"], full["Cq"], full["Cz"],
                                          full["Cy"], full["D.qp"], full["D.qw"], full["D.qu"], full["D.zp"],
                                          full["D.zw"], full["D.zu"], full["D.yp"], full["D.yw"], full["D.yu"]);
  } catch (const DimensionError& e) {
    throw ProblemFileError(e.what());
  }
  if (f.plant.n_p != f.plant.n_q) bad("plant", "uncertainty channel must be square (p and q widths differ)");

  const json& ju = j["uncertainty"];
  if (!ju.contains("blocks") || !ju["blocks"].is_array() || ju["blocks"].empty())
    bad("uncertainty.blocks", "expected a nonempty array of block sizes");
  int total = 0;
  for (const auto& b : ju["blocks"]) {
    if (!b.is_number_integer() || b.get<int>() < 1) bad("uncertainty.blocks", "block sizes must be positive integers");
    f.blocks.push_back(b.get<int>());
    total += f.blocks.back();
  }
  if (total != f.plant.n_q)
    bad("uncertainty.blocks", "block sizes sum to " + std::to_string(total) + " but the uncertainty channel has width " +
                                  std::to_string(f.plant.n_q));
  if (ju.contains("ranges")) {
    const json& jr = ju["ranges"];
    if (!jr.is_array() || jr.size() != f.blocks.size())
      bad("uncertainty.ranges", "expected one [lo, hi] pair per block");
    for (std::size_t i = 0; i < jr.size(); ++i) {
      const std::string where = "uncertainty.ranges[" + std::to_string(i) + "]";
      if (!jr[i].is_array() || jr[i].size() != 2 || !jr[i][0].is_number() || !jr[i][1].is_number())
        bad(where, "expected [lo, hi]");
      const double lo = jr[i][0].get<double>(), hi = jr[i][1].get<double>();
      if (!std::isfinite(lo) || !std::isfinite(hi) || !(hi > lo)) bad(where, "range must be finite with hi > lo");
      f.ranges.push_back({lo, hi});
    }
  } else {
    f.ranges.assign(f.blocks.size(), {-1.0, 1.0});
  }

  const json& jc = j["controller"];
  if (!jc.is_object()) bad("controller", "expected an object");
  f.order = detail::get_or<int>(jc, "order", 0, "controller");
  if (f.order < 0) bad("controller.order", "must be nonnegative");
  const int rows[4] = {f.order, f.order, f.plant.n_u, f.plant.n_u};
  const int cols[4] = {f.order, f.plant.n_y, f.order, f.plant.n_y};
  const char* names[4] = {"AK", "BK", "CK", "DK"};
  for (int i = 0; i < 4; ++i) {
    f.masks[i] = MaskedMatrix::all_free(rows[i], cols[i]);
    if (!jc.contains("masks") || !jc["masks"].contains(names[i])) continue;
    const json& jm = jc["masks"][names[i]];
    const std::string where = std::string("controller.masks.") + names[i];
    if (jm.contains("free")) {
      const auto fm = detail::parse_matrix(jm["free"], where + ".free");
      const MatrixXd m = fm ? *fm : MatrixXd::Zero(rows[i], cols[i]);
      if (m.rows() != rows[i] || m.cols() != cols[i])
        bad(where + ".free", "expected " + std::to_string(rows[i]) + "x" + std::to_string(cols[i]));
      f.masks[i].free = m.array() != 0.0;
    }
    if (jm.contains("value")) {
      const auto vm = detail::parse_matrix(jm["value"], where + ".value");
      const MatrixXd m = vm ? *vm : MatrixXd::Zero(rows[i], cols[i]);
      if (m.rows() != rows[i] || m.cols() != cols[i])
        bad(where + ".value", "expected " + std::to_string(rows[i]) + "x" + std::to_string(cols[i]));
      f.masks[i].fixed = m;
    }
    for (Eigen::Index r = 0; r < rows[i]; ++r)
      for (Eigen::Index c = 0; c < cols[i]; ++c)
        if (f.masks[i].free(r, c)) f.masks[i].fixed(r, c) = 0.0;
  }
  if (jc.contains("kappa0")) {
    const auto k = detail::get_or<std::vector<double>>(jc, "kappa0", {}, "controller");
    f.kappa0 = Eigen::Map<const VectorXd>(k.data(), static_cast<Eigen::Index>(k.size()));
    if (f.kappa0.size() != f.controller().parameters())
      bad("controller.kappa0", "has " + std::to_string(f.kappa0.size()) + " entries, the structure has " +
                                   std::to_string(f.controller().parameters()) + " free parameters");
  }

  if (j.contains("options")) {
    const json& jo = j["options"];
    auto& o = f.options;
    o.eps = detail::get_or<double>(jo, "eps", o.eps, "options");
    o.grid = detail::get_or<int>(jo, "grid", o.grid, "options");
    o.starts = detail::get_or<int>(jo, "starts", o.starts, "options");
    o.seed = detail::get_or<std::uint64_t>(jo, "seed", o.seed, "options");
    o.max_outer = detail::get_or<int>(jo, "max_outer", o.max_outer, "options");
    o.max_destabilize = detail::get_or<int>(jo, "max_destabilize", o.max_destabilize, "options");
    o.enlarge = detail::get_or<double>(jo, "enlarge", o.enlarge, "options");
    o.grid_cap = detail::get_or<double>(jo, "grid_cap", o.grid_cap, "options");
    if (!(o.eps > 0)) bad("options.eps", "must be positive");
    if (o.grid < 2) bad("options.grid", "need at least 2 points per axis");
    if (o.max_outer < 1) bad("options.max_outer", "must be at least 1");
    if (!(o.enlarge >= 1)) bad("options.enlarge", "must be at least 1");
  }
  return f;
}

inline nlohmann::json problem_json(const ProblemFile& f) {
  using nlohmann::json;
  using detail::matrix_json;
  const auto& g = f.plant;
  const int n = g.states();
  const auto& s = g.ss;
  json jp;
  jp["dims"] = {{"n", n}, {"p", g.n_p}, {"w", g.n_w}, {"u", g.n_u}, {"q", g.n_q}, {"z", g.n_z}, {"y", g.n_y}};
  jp["A"] = matrix_json(s.A);
  jp["Bp"] = matrix_json(s.B.leftCols(g.n_p));
  jp["Bw"] = matrix_json(s.B.middleCols(g.n_p, g.n_w));
  jp["Bu"] = matrix_json(s.B.rightCols(g.n_u));
  jp["Cq"] = matrix_json(s.C.topRows(g.n_q));
  jp["Cz"] = matrix_json(s.C.middleRows(g.n_q, g.n_z));
  jp["Cy"] = matrix_json(s.C.bottomRows(g.n_y));
  const int r0[3] = {0, g.n_q, g.n_q + g.n_z}, rn[3] = {g.n_q, g.n_z, g.n_y};
  const int c0[3] = {0, g.n_p, g.n_p + g.n_w}, cn[3] = {g.n_p, g.n_w, g.n_u};
  const char* rk = "qzy";
  const char* ck = "pwu";
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      jp["D"][std::string{rk[r], ck[c]}] = matrix_json(s.D.block(r0[r], c0[c], rn[r], cn[c]));
  json ju;
  ju["blocks"] = f.blocks;
  ju["ranges"] = json::array();
  for (const auto& r : f.ranges) ju["ranges"].push_back({r[0], r[1]});
  json jc;
  jc["order"] = f.order;
  const char* names[4] = {"AK", "BK", "CK", "DK"};
  for (int i = 0; i < 4; ++i) {
    jc["masks"][names[i]]["free"] = matrix_json(f.masks[i].free.cast<double>());
    jc["masks"][names[i]]["value"] = matrix_json(f.masks[i].fixed);
  }
  if (f.kappa0.size() > 0) jc["kappa0"] = std::vector<double>(f.kappa0.data(), f.kappa0.data() + f.kappa0.size());
  const auto& o = f.options;
  json jo = {{"eps", o.eps},         {"grid", o.grid},
             {"starts", o.starts},   {"seed", o.seed},
             {"max_outer", o.max_outer}, {"max_destabilize", o.max_destabilize},
             {"enlarge", o.enlarge}, {"grid_cap", o.grid_cap}};
  return {{"plant", jp}, {"uncertainty", ju}, {"controller", jc}, {"options", jo}};
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!out) throw Error("write failed: " + path);
}

inline ProblemFile load_problem(const std::string& path) { return parse_problem(read_file(path)); }

inline void save_problem(const ProblemFile& f, const std::string& path) {
  write_file(path, problem_json(f).dump(2) + "\n");
}

}  // namespace rpsynth
