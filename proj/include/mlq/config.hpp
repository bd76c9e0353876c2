#pragma once

#include <json.hpp>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mlq/closed_forms.hpp"
#include "mlq/problem.hpp"
#include "mlq/simulate.hpp"

namespace mlq {

enum class ProblemForm { DoubleIntegrator, Scalar, General };

/// Fully-defaulted run configuration: a problem (in one of three input
/// forms), numerics, simulation and output settings. Parsing is strict about
/// unknown keys and matrix shapes; value-level validation (positivity and so
/// on) is validate_spec's job.
struct RunConfig {
  ProblemForm form = ProblemForm::General;
  std::optional<DoubleIntegratorParams> double_integrator;
  std::optional<Scalar1DParams> scalar;
  ProblemSpec problem;  // assembled from whichever form was given

  Eigen::VectorXd x1;                 // empty when absent
  std::optional<double> switch_time;  // the "r" entry

  int n_steps = 2000;
  int coarse_points = 65;
  std::optional<double> tol_r;  // defaults to 1e-6*T at the point of use
  double delta_pd = 1e-10;

  SimConfig simulation;

  std::string out_directory = ".";
  std::string out_format = "csv";
};

namespace detail {

using nlohmann::json;

[[noreturn]] inline void config_error(const std::string& path, const std::string& msg) {
  throw std::invalid_argument("config: " + path + ": " + msg);
}

inline void check_keys(const json& j, const std::string& path,
                       const std::set<std::string>& allowed) {
  if (!j.is_object()) config_error(path, "expected an object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key())) config_error(path + "." + item.key(), "unknown key");
}

inline double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) config_error(path, "expected a number");
  return j.get<double>();
}

inline double require_number(const json& j, const std::string& path, const std::string& key) {
  if (!j.contains(key)) config_error(path + "." + key, "missing required key");
  return get_number(j.at(key), path + "." + key);
}

inline Eigen::MatrixXd parse_matrix(const json& j, Eigen::Index rows, Eigen::Index cols,
                                    const std::string& path) {
  if (!j.is_array()) config_error(path, "expected a matrix (array of rows)");
  if (static_cast<Eigen::Index>(j.size()) != rows)
    config_error(path, "expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                           ", got " + std::to_string(j.size()) + " rows");
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      config_error(path, "expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                             ", got a row of length " +
                             std::to_string(row.is_array() ? row.size() : 0));
    for (Eigen::Index c = 0; c < cols; ++c)
      out(i, c) = get_number(row.at(static_cast<std::size_t>(c)),
                             path + "[" + std::to_string(i) + "][" + std::to_string(c) + "]");
  }
  return out;
}

/// A coefficient is either a matrix (constant) or {"samples": [matrix, ...]}.
inline CoeffTable parse_table(const json& j, Eigen::Index rows, Eigen::Index cols,
                              const std::string& path) {
  if (j.is_object()) {
    check_keys(j, path, {"samples"});
    if (!j.contains("samples")) config_error(path, "missing \"samples\"");
    const json& samples = j.at("samples");
    if (!samples.is_array() || samples.empty())
      config_error(path + ".samples", "expected a non-empty array of matrices");
    std::vector<Eigen::MatrixXd> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
      out.push_back(parse_matrix(samples.at(i), rows, cols,
                                 path + ".samples[" + std::to_string(i) + "]"));
    return CoeffTable::sampled(std::move(out));
  }
  return CoeffTable::constant(parse_matrix(j, rows, cols, path));
}

inline json dump_matrix(const Eigen::MatrixXd& mat) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < mat.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < mat.cols(); ++j) row.push_back(mat(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json dump_table(const CoeffTable& table) {
  if (table.is_constant()) return dump_matrix(table.sample(0));
  json samples = json::array();
  for (std::size_t i = 0; i < table.sample_count(); ++i)
    samples.push_back(dump_matrix(table.sample(i)));
  return json{{"samples", std::move(samples)}};
}

}  // namespace detail

/// Parse a configuration document. Unknown keys are rejected with their
/// paths; matrix shapes are checked against the declared dimensions. Values
/// that merely violate the standing assumptions (say a negative R) parse
/// fine and surface later through validate_spec.
inline RunConfig parse_config(const std::string& text) {
  using detail::json;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: parse error: ") + e.what());
  }
  detail::check_keys(root, "$", {"problem", "numerics", "simulation", "output"});
  if (!root.contains("problem")) detail::config_error("$.problem", "missing required key");

  RunConfig cfg;

  if (root.contains("numerics")) {
    const json& num = root.at("numerics");
    detail::check_keys(num, "numerics", {"n_steps", "coarse_points", "tol_r", "delta_pd"});
    if (num.contains("n_steps"))
      cfg.n_steps = static_cast<int>(detail::get_number(num.at("n_steps"), "numerics.n_steps"));
    if (num.contains("coarse_points"))
      cfg.coarse_points =
          static_cast<int>(detail::get_number(num.at("coarse_points"), "numerics.coarse_points"));
    if (num.contains("tol_r")) cfg.tol_r = detail::get_number(num.at("tol_r"), "numerics.tol_r");
    if (num.contains("delta_pd"))
      cfg.delta_pd = detail::get_number(num.at("delta_pd"), "numerics.delta_pd");
    if (cfg.n_steps < 2) detail::config_error("numerics.n_steps", "must be at least 2");
    if (cfg.coarse_points < 3) detail::config_error("numerics.coarse_points", "must be at least 3");
  }

  const json& prob = root.at("problem");
  detail::check_keys(prob, "problem", {"double_integrator", "scalar", "general", "x1", "r"});
  const int forms = static_cast<int>(prob.contains("double_integrator")) +
                    static_cast<int>(prob.contains("scalar")) +
                    static_cast<int>(prob.contains("general"));
  if (forms != 1)
    detail::config_error("problem",
                         "exactly one of \"double_integrator\", \"scalar\", \"general\" required");

  if (prob.contains("double_integrator")) {
    const json& di = prob.at("double_integrator");
    detail::check_keys(di, "problem.double_integrator", {"a", "g", "g1", "T"});
    DoubleIntegratorParams p;
    p.a = detail::require_number(di, "problem.double_integrator", "a");
    p.g = detail::require_number(di, "problem.double_integrator", "g");
    p.g1 = detail::require_number(di, "problem.double_integrator", "g1");
    p.horizon = detail::require_number(di, "problem.double_integrator", "T");
    if (!(p.horizon > 0)) detail::config_error("problem.double_integrator.T", "must be positive");
    cfg.form = ProblemForm::DoubleIntegrator;
    cfg.double_integrator = p;
    cfg.problem = make_spec(p, cfg.n_steps);
  } else if (prob.contains("scalar")) {
    const json& sc = prob.at("scalar");
    const std::string path = "problem.scalar";
    detail::check_keys(sc, path,
                       {"A1", "B1", "C1", "D1", "Q1", "R1", "G1", "A2", "B2", "C2", "D2", "Q2",
                        "R2", "G2", "K", "T"});
    Scalar1DParams p;
    p.a1 = detail::require_number(sc, path, "A1");
    p.b1 = detail::require_number(sc, path, "B1");
    p.c1 = detail::require_number(sc, path, "C1");
    p.d1 = detail::require_number(sc, path, "D1");
    p.q1 = detail::require_number(sc, path, "Q1");
    p.r1 = detail::require_number(sc, path, "R1");
    p.g1 = detail::require_number(sc, path, "G1");
    p.a2 = detail::require_number(sc, path, "A2");
    p.b2 = detail::require_number(sc, path, "B2");
    p.c2 = detail::require_number(sc, path, "C2");
    p.d2 = detail::require_number(sc, path, "D2");
    p.q2 = detail::require_number(sc, path, "Q2");
    p.r2 = detail::require_number(sc, path, "R2");
    p.g2 = detail::require_number(sc, path, "G2");
    p.k = detail::require_number(sc, path, "K");
    p.horizon = detail::require_number(sc, path, "T");
    if (!(p.horizon > 0)) detail::config_error("problem.scalar.T", "must be positive");
    cfg.form = ProblemForm::Scalar;
    cfg.scalar = p;
    cfg.problem = make_spec(p, cfg.n_steps);
  } else {
    const json& gen = prob.at("general");
    const std::string path = "problem.general";
    detail::check_keys(gen, path,
                       {"n1", "n2", "m", "T", "delta", "A1", "B1", "C1", "D1", "Q1", "R1", "G1",
                        "A", "B", "C", "D", "Q", "R", "G", "K"});
    ProblemSpec spec;
    spec.n1 = static_cast<int>(detail::require_number(gen, path, "n1"));
    spec.n2 = static_cast<int>(detail::require_number(gen, path, "n2"));
    spec.m = static_cast<int>(detail::require_number(gen, path, "m"));
    const double horizon = detail::require_number(gen, path, "T");
    if (spec.n1 < 1 || spec.n2 < 1 || spec.m < 1)
      detail::config_error(path, "dimensions must be positive");
    if (!(horizon > 0)) detail::config_error(path + ".T", "must be positive");
    spec.horizon = TimeGrid(0.0, horizon, cfg.n_steps);
    if (gen.contains("delta"))
      spec.delta = detail::get_number(gen.at("delta"), path + ".delta");
    const int n = spec.n();
    auto table = [&](const char* key, Eigen::Index r, Eigen::Index c) {
      if (!gen.contains(key)) detail::config_error(path + "." + key, "missing required key");
      return detail::parse_table(gen.at(key), r, c, path + "." + key);
    };
    spec.A1 = table("A1", spec.n1, spec.n1);
    spec.B1 = table("B1", spec.n1, spec.m);
    spec.C1 = table("C1", spec.n1, spec.n1);
    spec.D1 = table("D1", spec.n1, spec.m);
    spec.Q1 = table("Q1", spec.n1, spec.n1);
    spec.R1 = table("R1", spec.m, spec.m);
    spec.G1 = table("G1", spec.n1, spec.n1);
    spec.A = table("A", n, n);
    spec.B = table("B", n, spec.m);
    spec.C = table("C", n, n);
    spec.D = table("D", n, spec.m);
    spec.Q = table("Q", n, n);
    spec.R = table("R", spec.m, spec.m);
    spec.K = table("K", n, spec.n1);
    if (!gen.contains("G")) detail::config_error(path + ".G", "missing required key");
    spec.G = detail::parse_matrix(gen.at("G"), n, n, path + ".G");
    cfg.form = ProblemForm::General;
    cfg.problem = std::move(spec);
  }

  if (prob.contains("x1")) {
    const json& x1j = prob.at("x1");
    if (!x1j.is_array()) detail::config_error("problem.x1", "expected an array of numbers");
    if (static_cast<int>(x1j.size()) != cfg.problem.n1)
      detail::config_error("problem.x1", "expected " + std::to_string(cfg.problem.n1) +
                                             " entries, got " + std::to_string(x1j.size()));
    cfg.x1.resize(cfg.problem.n1);
    for (int i = 0; i < cfg.problem.n1; ++i)
      cfg.x1(i) = detail::get_number(x1j.at(static_cast<std::size_t>(i)),
                                     "problem.x1[" + std::to_string(i) + "]");
  }
  if (prob.contains("r")) {
    const double r = detail::get_number(prob.at("r"), "problem.r");
    if (r < 0 || r > cfg.problem.horizon.t1)
      detail::config_error("problem.r", "outside [0, T]");
    cfg.switch_time = r;
  }

  if (root.contains("simulation")) {
    const json& sim = root.at("simulation");
    detail::check_keys(sim, "simulation",
                       {"n_paths", "n_steps", "seed", "antithetic", "n_workers", "trace_paths"});
    if (sim.contains("n_paths"))
      cfg.simulation.n_paths =
          static_cast<std::int64_t>(detail::get_number(sim.at("n_paths"), "simulation.n_paths"));
    if (sim.contains("n_steps"))
      cfg.simulation.n_steps =
          static_cast<int>(detail::get_number(sim.at("n_steps"), "simulation.n_steps"));
    if (sim.contains("seed")) {
      const json& s = sim.at("seed");
      if (!s.is_number_unsigned() && !s.is_number_integer())
        detail::config_error("simulation.seed", "expected an unsigned integer");
      cfg.simulation.seed = s.get<std::uint64_t>();
    }
    if (sim.contains("antithetic")) {
      if (!sim.at("antithetic").is_boolean())
        detail::config_error("simulation.antithetic", "expected a boolean");
      cfg.simulation.antithetic = sim.at("antithetic").get<bool>();
    }
    if (sim.contains("n_workers"))
      cfg.simulation.n_workers =
          static_cast<int>(detail::get_number(sim.at("n_workers"), "simulation.n_workers"));
    if (sim.contains("trace_paths"))
      cfg.simulation.trace_paths =
          static_cast<int>(detail::get_number(sim.at("trace_paths"), "simulation.trace_paths"));
    if (cfg.simulation.n_paths < 1) detail::config_error("simulation.n_paths", "must be >= 1");
    if (cfg.simulation.n_steps < 2) detail::config_error("simulation.n_steps", "must be >= 2");
  }

  if (root.contains("output")) {
    const json& out = root.at("output");
    detail::check_keys(out, "output", {"directory", "format"});
    if (out.contains("directory")) {
      if (!out.at("directory").is_string())
        detail::config_error("output.directory", "expected a string");
      cfg.out_directory = out.at("directory").get<std::string>();
    }
    if (out.contains("format")) {
      if (!out.at("format").is_string()) detail::config_error("output.format", "expected a string");
      cfg.out_format = out.at("format").get<std::string>();
      if (cfg.out_format != "csv") detail::config_error("output.format", "only \"csv\" is supported");
    }
  }
  return cfg;
}

/// Emit a document that parses back to an equal RunConfig.
inline std::string dump_config(const RunConfig& cfg) {
  using detail::json;
  json root;
  json prob;
  switch (cfg.form) {
    case ProblemForm::DoubleIntegrator: {
      const DoubleIntegratorParams& p = *cfg.double_integrator;
      prob["double_integrator"] = {{"a", p.a}, {"g", p.g}, {"g1", p.g1}, {"T", p.horizon}};
      break;
    }
    case ProblemForm::Scalar: {
      const Scalar1DParams& p = *cfg.scalar;
      prob["scalar"] = {{"A1", p.a1}, {"B1", p.b1}, {"C1", p.c1}, {"D1", p.d1}, {"Q1", p.q1},
                        {"R1", p.r1}, {"G1", p.g1}, {"A2", p.a2}, {"B2", p.b2}, {"C2", p.c2},
                        {"D2", p.d2}, {"Q2", p.q2}, {"R2", p.r2}, {"G2", p.g2}, {"K", p.k},
                        {"T", p.horizon}};
      break;
    }
    case ProblemForm::General: {
      const ProblemSpec& s = cfg.problem;
      json gen;
      gen["n1"] = s.n1;
      gen["n2"] = s.n2;
      gen["m"] = s.m;
      gen["T"] = s.horizon.t1;
      gen["delta"] = s.delta;
      gen["A1"] = detail::dump_table(s.A1);
      gen["B1"] = detail::dump_table(s.B1);
      gen["C1"] = detail::dump_table(s.C1);
      gen["D1"] = detail::dump_table(s.D1);
      gen["Q1"] = detail::dump_table(s.Q1);
      gen["R1"] = detail::dump_table(s.R1);
      gen["G1"] = detail::dump_table(s.G1);
      gen["A"] = detail::dump_table(s.A);
      gen["B"] = detail::dump_table(s.B);
      gen["C"] = detail::dump_table(s.C);
      gen["D"] = detail::dump_table(s.D);
      gen["Q"] = detail::dump_table(s.Q);
      gen["R"] = detail::dump_table(s.R);
      gen["G"] = detail::dump_matrix(s.G);
      gen["K"] = detail::dump_table(s.K);
      prob["general"] = std::move(gen);
      break;
    }
  }
  if (cfg.x1.size() > 0) {
    json x1 = json::array();
    for (Eigen::Index i = 0; i < cfg.x1.size(); ++i) x1.push_back(cfg.x1(i));
    prob["x1"] = std::move(x1);
  }
  if (cfg.switch_time) prob["r"] = *cfg.switch_time;
  root["problem"] = std::move(prob);

  json num;
  num["n_steps"] = cfg.n_steps;
  num["coarse_points"] = cfg.coarse_points;
  if (cfg.tol_r) num["tol_r"] = *cfg.tol_r;
  num["delta_pd"] = cfg.delta_pd;
  root["numerics"] = std::move(num);

  json sim;
  sim["n_paths"] = cfg.simulation.n_paths;
  sim["n_steps"] = cfg.simulation.n_steps;
  sim["seed"] = cfg.simulation.seed;
  sim["antithetic"] = cfg.simulation.antithetic;
  sim["n_workers"] = cfg.simulation.n_workers;
  sim["trace_paths"] = cfg.simulation.trace_paths;
  root["simulation"] = std::move(sim);

  root["output"] = {{"directory", cfg.out_directory}, {"format", cfg.out_format}};
  return root.dump(2) + "\n";
}

inline bool operator==(const SimConfig& a, const SimConfig& b) {
  return a.n_paths == b.n_paths && a.n_steps == b.n_steps && a.seed == b.seed &&
         a.antithetic == b.antithetic && a.n_workers == b.n_workers &&
         a.trace_paths == b.trace_paths;
}

inline bool spec_equal(const ProblemSpec& a, const ProblemSpec& b) {
  return a.n1 == b.n1 && a.n2 == b.n2 && a.m == b.m && a.horizon == b.horizon && a.A1 == b.A1 &&
         a.B1 == b.B1 && a.C1 == b.C1 && a.D1 == b.D1 && a.A == b.A && a.B == b.B && a.C == b.C &&
         a.D == b.D && a.Q1 == b.Q1 && a.R1 == b.R1 && a.Q == b.Q && a.R == b.R && a.G1 == b.G1 &&
         a.G.rows() == b.G.rows() && a.G.cols() == b.G.cols() && a.G == b.G && a.K == b.K &&
         a.delta == b.delta;
}

inline bool operator==(const RunConfig& a, const RunConfig& b) {
  if (a.form != b.form || a.double_integrator != b.double_integrator || a.scalar != b.scalar)
    return false;
  if (!spec_equal(a.problem, b.problem)) return false;
  if (a.x1.size() != b.x1.size() || a.x1 != b.x1) return false;
  return a.switch_time == b.switch_time && a.n_steps == b.n_steps &&
         a.coarse_points == b.coarse_points && a.tol_r == b.tol_r && a.delta_pd == b.delta_pd &&
         a.simulation == b.simulation && a.out_directory == b.out_directory &&
         a.out_format == b.out_format;
}

}  // namespace mlq
