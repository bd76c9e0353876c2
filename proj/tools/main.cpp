#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "mlq/cli.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read config file: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mlq: two-stage linear-quadratic control with an optimized switch time"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::int64_t paths = 0;
  int steps = 0;
  int workers = -1;
  bool have_out = false, have_seed = false, have_paths = false, have_steps = false;

  const char* commands[] = {"riccati",   "value-curve",      "optimal-time", "simulate",
                            "verify-example43", "verify-1d", "check-nontrivial"};
  const char* descs[] = {"solve both Riccati stages and export P/gain tables",
                         "export the switch-time value curve",
                         "search for the optimal switch time",
                         "Monte Carlo simulation of the closed loop",
                         "cross-check the solvers against the double-integrator closed forms",
                         "cross-check the solvers against the scalar closed forms",
                         "evaluate the interior-optimum certificate"};
  std::string chosen;
  for (int i = 0; i < 7; ++i) {
    CLI::App* sub = app.add_subcommand(commands[i], descs[i]);
    sub->add_option("--config", config_path, "configuration file (JSON)")->required();
    sub->add_option_function<std::string>(
        "--out", [&](const std::string& v) { out_dir = v; have_out = true; },
        "output directory (overrides the config)");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t v) { seed = v; have_seed = true; },
        "simulation seed (overrides the config)");
    sub->add_option_function<std::int64_t>(
        "--paths", [&](std::int64_t v) { paths = v; have_paths = true; },
        "number of Monte Carlo paths (overrides the config)");
    sub->add_option_function<int>(
        "--steps", [&](int v) { steps = v; have_steps = true; },
        "time steps for solves and simulation (overrides the config)");
    sub->add_option("--workers", workers, "worker threads (0 = hardware concurrency)");
    sub->callback([&chosen, name = std::string(commands[i])]() { chosen = name; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    mlq::RunConfig cfg = mlq::parse_config(read_file(config_path));
    if (have_out) cfg.out_directory = out_dir;
    if (have_seed) cfg.simulation.seed = seed;
    if (have_paths) cfg.simulation.n_paths = paths;
    if (have_steps) {
      cfg.n_steps = steps;
      cfg.simulation.n_steps = steps;
      // Re-assemble so the horizon grid matches the requested resolution.
      if (cfg.form == mlq::ProblemForm::DoubleIntegrator)
        cfg.problem = mlq::make_spec(*cfg.double_integrator, steps);
      else if (cfg.form == mlq::ProblemForm::Scalar)
        cfg.problem = mlq::make_spec(*cfg.scalar, steps);
      else
        cfg.problem.horizon = mlq::TimeGrid(0.0, cfg.problem.horizon.t1, steps);
    }
    if (workers >= 0) cfg.simulation.n_workers = workers;
    return mlq::cli::run_command(chosen, cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
