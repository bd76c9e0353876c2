#include <catch2/catch_amalgamated.hpp>

#include "mlq/csv.hpp"
#include "mlq/simulate.hpp"
#include "mlq/switch_time.hpp"

using namespace mlq;
using Catch::Approx;

namespace {

struct SolvedProblem {
  ProblemSpec spec;
  RiccatiSolution stage2;
  Stage1Solution stage1;
  double r = 0;
};

SolvedProblem solve_for(const ProblemSpec& spec, double r, int n_steps) {
  SolvedProblem out{spec, solve_stage2(spec, n_steps), {}, r};
  const double dt = spec.horizon.t1 / n_steps;
  out.r = std::llround(r / dt) * dt;
  out.stage1 = solve_stage1(spec, out.r, out.stage2.p_at(out.r), n_steps);
  return out;
}

Scalar1DParams noisy_scalar() {
  Scalar1DParams p;
  p.a1 = 0;
  p.b1 = 1;
  p.c1 = 0.3;
  p.q1 = 1;
  p.a2 = 0;
  p.b2 = 1;
  p.c2 = 0.2;
  p.q2 = 1;
  p.g2 = 1;
  p.k = 1;
  p.horizon = 1;
  return p;
}

ControlLaw optimal_law(const SolvedProblem& sp) {
  return [&sp](double t, const Eigen::VectorXd& state) -> Eigen::VectorXd {
    if (state.size() == sp.spec.n1) return -(sp.stage1.gain_at(std::min(t, sp.stage1.r)) * state);
    return -(sp.stage2.gain_at(t) * state);
  };
}

ControlLaw perturbed_law(const SolvedProblem& sp, double eps) {
  return [&sp, eps](double t, const Eigen::VectorXd& state) -> Eigen::VectorXd {
    Eigen::VectorXd u = state.size() == sp.spec.n1
                            ? Eigen::VectorXd(-(sp.stage1.gain_at(std::min(t, sp.stage1.r)) * state))
                            : Eigen::VectorXd(-(sp.stage2.gain_at(t) * state));
    u.array() += eps;
    return u;
  };
}

}  // namespace

TEST_CASE("zero start stays at zero cost", "[simulate]") {
  const SolvedProblem sp = solve_for(make_spec(noisy_scalar(), 200), 0.5, 200);
  SimConfig cfg;
  cfg.n_paths = 64;
  cfg.n_steps = 200;
  cfg.seed = 17;
  const SimReport rep =
      simulate_closed_loop(sp.spec, sp.r, sp.stage2, sp.stage1, Eigen::VectorXd::Zero(1), cfg);
  REQUIRE(rep.mean_cost == 0.0);
  REQUIRE(rep.std_error == 0.0);
}

TEST_CASE("deterministic double integrator reproduces the closed-form cost", "[simulate]") {
  const DoubleIntegratorParams di{0.0, 1.0, 1.0, 1.0};
  const SolvedProblem sp = solve_for(make_spec(di, 2000), 0.5, 2000);
  SimConfig cfg;
  cfg.n_paths = 16;
  cfg.n_steps = 2000;
  cfg.seed = 7;
  const Eigen::Vector2d x1(1.0, 0.0);
  const SimReport rep = simulate_closed_loop(sp.spec, sp.r, sp.stage2, sp.stage1, x1, cfg);
  const double expected = 0.5 * double_integrator_value(0.5, x1, di);
  REQUIRE(rep.mean_cost == Approx(expected).margin(2e-3));
  REQUIRE(rep.std_error == 0.0);  // no diffusion: every path is identical
}

TEST_CASE("discretization error shrinks with the step count", "[simulate]") {
  const DoubleIntegratorParams di{0.0, 1.0, 1.0, 1.0};
  const Eigen::Vector2d x1(1.0, 0.0);
  const double expected = 0.5 * double_integrator_value(0.5, x1, di);
  std::vector<double> errs;
  for (int n_steps : {250, 500, 1000}) {
    const SolvedProblem sp = solve_for(make_spec(di, n_steps), 0.5, n_steps);
    SimConfig cfg;
    cfg.n_paths = 4;
    cfg.n_steps = n_steps;
    cfg.seed = 1;
    cfg.trace_paths = 0;
    const SimReport rep = simulate_closed_loop(sp.spec, sp.r, sp.stage2, sp.stage1, x1, cfg);
    errs.push_back(std::abs(rep.mean_cost - expected));
  }
  // At least first-order decay; the optimal feedback makes the cost
  // insensitive to the O(dt) state error, so in practice this is ~4x.
  REQUIRE(errs[1] <= errs[0] / 1.8);
  REQUIRE(errs[2] <= errs[1] / 1.8);
}

TEST_CASE("closed-loop mean matches the Riccati value", "[simulate]") {
  const SolvedProblem sp = solve_for(make_spec(noisy_scalar(), 1000), 0.5, 1000);
  Eigen::VectorXd x1(1);
  x1 << 1.0;
  const double value = value_at_zero(sp.stage1, x1);
  SimConfig cfg;
  cfg.n_paths = 20000;
  cfg.n_steps = 1000;
  cfg.seed = 2;
  const SimReport rep = simulate_closed_loop(sp.spec, sp.r, sp.stage2, sp.stage1, x1, cfg);
  CAPTURE(rep.mean_cost, value, rep.std_error);
  REQUIRE(std::abs(rep.mean_cost - value) <= 3.0 * rep.std_error);
}

TEST_CASE("simulation is bit-stable across worker counts", "[simulate]") {
  const SolvedProblem sp = solve_for(make_spec(noisy_scalar(), 300), 0.5, 300);
  Eigen::VectorXd x1(1);
  x1 << 1.0;
  SimConfig base;
  base.n_paths = 5000;
  base.n_steps = 300;
  base.seed = 42;
  SimConfig threaded = base;
  threaded.n_workers = 3;
  base.n_workers = 1;
  const SimReport a = simulate_closed_loop(sp.spec, sp.r, sp.stage2, sp.stage1, x1, base);
  const SimReport b = simulate_closed_loop(sp.spec, sp.r, sp.stage2, sp.stage1, x1, threaded);
  REQUIRE(a.mean_cost == b.mean_cost);
  REQUIRE(a.std_error == b.std_error);
  REQUIRE(a.stationarity_max_residual == b.stationarity_max_residual);

  SECTION("antithetic pairing stays deterministic, including an odd path count") {
    SimConfig anti = base;
    anti.antithetic = true;
    anti.n_paths = 4999;
    SimConfig anti4 = anti;
    anti4.n_workers = 4;
    const SimReport c = simulate_closed_loop(sp.spec, sp.r, sp.stage2, sp.stage1, x1, anti);
    const SimReport d = simulate_closed_loop(sp.spec, sp.r, sp.stage2, sp.stage1, x1, anti4);
    REQUIRE(c.mean_cost == d.mean_cost);
    REQUIRE(c.std_error == d.std_error);
  }
}

TEST_CASE("antithetic pairs negate the increments of a shared stream", "[simulate]") {
  // Pure multiplicative noise with no control: the first step of the odd
  // path mirrors the even path's increment exactly.
  Scalar1DParams prm;
  prm.c1 = 1.0;
  prm.b2 = 1.0;
  prm.k = 1.0;
  const ProblemSpec spec = make_spec(prm, 100);
  SimConfig cfg;
  cfg.n_paths = 4;
  cfg.n_steps = 100;
  cfg.seed = 77;
  cfg.antithetic = true;
  cfg.trace_paths = 4;
  Eigen::VectorXd x1(1);
  x1 << 1.0;
  const ControlLaw zero = [](double, const Eigen::VectorXd&) {
    return Eigen::VectorXd::Zero(1);
  };
  std::vector<PathTrace> traces;
  simulate_with_control(spec, 1.0, zero, x1, cfg, &traces);
  REQUIRE(traces.size() == 4);
  const double inc_even = traces[0].x1[1](0) - 1.0;
  const double inc_odd = traces[1].x1[1](0) - 1.0;
  REQUIRE(inc_even != 0.0);
  REQUIRE(inc_even == Approx(-inc_odd).epsilon(1e-12));
  // The next pair draws from a different stream.
  REQUIRE(traces[2].x1[1](0) != traces[0].x1[1](0));
}

TEST_CASE("trace export pads the stage-1 rows", "[simulate]") {
  const SolvedProblem sp = solve_for(make_spec(noisy_scalar(), 50), 0.5, 50);
  SimConfig cfg;
  cfg.n_paths = 1;
  cfg.n_steps = 50;
  cfg.trace_paths = 1;
  Eigen::VectorXd x1(1);
  x1 << 1.0;
  std::vector<PathTrace> traces;
  simulate_closed_loop(sp.spec, sp.r, sp.stage2, sp.stage1, x1, cfg, &traces);
  std::ostringstream os;
  write_trace_csv(os, traces[0], sp.spec.n(), sp.spec.m);
  std::istringstream lines(os.str());
  std::string header;
  std::getline(lines, header);
  REQUIRE(header == "t,x_0,x_1,u_0");
  std::string first;
  std::getline(lines, first);
  REQUIRE(first.find("nan") != std::string::npos);  // stage-1 rows pad the block state
  int rows = 0;
  std::string line;
  while (std::getline(lines, line)) ++rows;
  REQUIRE(rows + 1 == 26 + 26);  // (kr + 1) + (n_steps - kr + 1) rows
}

TEST_CASE("switch times snap to the simulation grid", "[simulate]") {
  const SolvedProblem sp = solve_for(make_spec(noisy_scalar(), 100), 0.5, 100);
  SimConfig cfg;
  cfg.n_paths = 8;
  cfg.n_steps = 100;
  Eigen::VectorXd x1(1);
  x1 << 1.0;
  const SimReport rep =
      simulate_closed_loop(sp.spec, 0.503, sp.stage2, sp.stage1, x1, cfg);
  REQUIRE(rep.r_used == Approx(0.5).margin(1e-12));
}

TEST_CASE("external control laws", "[simulate]") {
  SECTION("zero control with terminal cost only") {
    // No diffusion, no running weights: cost = 0.5*G2*(K*x1)^2 after a
    // frozen stage-2 drift (a2 = 0).
    Scalar1DParams prm;
    prm.b1 = 1;
    prm.b2 = 1;
    prm.g2 = 2.0;
    prm.k = -1.5;
    prm.horizon = 1;
    const ProblemSpec spec = make_spec(prm, 400);
    SimConfig cfg;
    cfg.n_paths = 4;
    cfg.n_steps = 400;
    Eigen::VectorXd x1(1);
    x1 << 0.8;
    const ControlLaw zero = [](double, const Eigen::VectorXd&) {
      return Eigen::VectorXd::Zero(1);
    };
    const SimReport rep = simulate_with_control(spec, 0.5, zero, x1, cfg);
    REQUIRE(rep.mean_cost == Approx(0.5 * 2.0 * 1.5 * 1.5 * 0.8 * 0.8).margin(1e-12));
    REQUIRE(rep.std_error == 0.0);
  }
  SECTION("reproducing the synthesized feedback is bit-identical") {
    const SolvedProblem sp = solve_for(make_spec(noisy_scalar(), 400), 0.5, 400);
    Eigen::VectorXd x1(1);
    x1 << 1.0;
    SimConfig cfg;
    cfg.n_paths = 500;
    cfg.n_steps = 400;
    cfg.seed = 5;
    const SimReport a = simulate_closed_loop(sp.spec, sp.r, sp.stage2, sp.stage1, x1, cfg);
    const SimReport b = simulate_with_control(sp.spec, sp.r, optimal_law(sp), x1, cfg);
    REQUIRE(a.mean_cost == b.mean_cost);
    REQUIRE(a.std_error == b.std_error);
  }
  SECTION("a perturbed control costs strictly more under common noise") {
    const SolvedProblem sp = solve_for(make_spec(noisy_scalar(), 400), 0.5, 400);
    Eigen::VectorXd x1(1);
    x1 << 1.0;
    SimConfig cfg;
    cfg.n_paths = 2000;
    cfg.n_steps = 400;
    cfg.seed = 9;
    const SimReport opt = simulate_with_control(sp.spec, sp.r, optimal_law(sp), x1, cfg);
    const SimReport worse = simulate_with_control(sp.spec, sp.r, perturbed_law(sp, 0.5), x1, cfg);
    REQUIRE(worse.mean_cost > opt.mean_cost);
  }
  SECTION("non-finite states are reported with path and step") {
    const ProblemSpec spec = make_spec(noisy_scalar(), 50);
    SimConfig cfg;
    cfg.n_paths = 2;
    cfg.n_steps = 50;
    Eigen::VectorXd x1(1);
    x1 << 1.0;
    const ControlLaw bad = [](double t, const Eigen::VectorXd&) {
      return Eigen::VectorXd::Constant(1, t > 0.2 ? std::nan("") : 0.0);
    };
    REQUIRE_THROWS_AS(simulate_with_control(spec, 0.5, bad, x1, cfg), SimulationError);
  }
}

TEST_CASE("stationarity residuals along closed-loop paths", "[simulate]") {
  const SolvedProblem sp = solve_for(make_spec(noisy_scalar(), 500), 0.5, 500);
  Eigen::VectorXd x1(1);
  x1 << 1.0;
  SimConfig cfg;
  cfg.n_paths = 6;
  cfg.n_steps = 500;
  cfg.seed = 23;
  cfg.trace_paths = 6;
  std::vector<PathTrace> traces;
  simulate_closed_loop(sp.spec, sp.r, sp.stage2, sp.stage1, x1, cfg, &traces);
  REQUIRE(traces.size() == 6);
  for (const PathTrace& tr : traces) {
    const StationarityReport rep = stationarity_check(sp.spec, sp.r, sp.stage2, sp.stage1, tr);
    const double bound = 1e-9 * (1.0 + rep.max_state_norm);
    REQUIRE(rep.stage1_max_residual <= bound);
    REQUIRE(rep.stage2_max_residual <= bound);
    REQUIRE(rep.terminal_residual <= 1e-12);
    REQUIRE(rep.jump_residual <= 1e-9);
    REQUIRE(rep.adjoint.p.size() == tr.x.size());
    REQUIRE(rep.adjoint.p1.size() == tr.x1.size());
  }
}

TEST_CASE("a constant control offset shows up in the stationarity residual", "[simulate]") {
  const SolvedProblem sp = solve_for(make_spec(noisy_scalar(), 300), 0.5, 300);
  Eigen::VectorXd x1(1);
  x1 << 1.0;
  SimConfig cfg;
  cfg.n_paths = 2;
  cfg.n_steps = 300;
  cfg.seed = 31;
  cfg.trace_paths = 2;
  std::vector<PathTrace> traces;
  simulate_with_control(sp.spec, sp.r, perturbed_law(sp, 0.1), x1, cfg, &traces);
  // Residual equals (R + D'PD)*0.1 here; with D = 0 and R = 1 that is 0.1.
  const StationarityReport rep = stationarity_check(sp.spec, sp.r, sp.stage2, sp.stage1, traces[0]);
  REQUIRE(rep.stage2_max_residual >= 0.05);
  REQUIRE(rep.stage1_max_residual >= 0.05);
}

TEST_CASE("paired comparisons under common random numbers", "[simulate]") {
  SECTION("identical laws give a gap of exactly zero") {
    const SolvedProblem sp = solve_for(make_spec(noisy_scalar(), 200), 0.5, 200);
    Eigen::VectorXd x1(1);
    x1 << 1.0;
    SimConfig cfg;
    cfg.n_paths = 500;
    cfg.n_steps = 200;
    cfg.seed = 11;
    const auto [gap, se] = compare_controls(sp.spec, sp.r, optimal_law(sp), optimal_law(sp), x1, cfg);
    REQUIRE(gap == 0.0);
    REQUIRE(se == 0.0);
  }
  SECTION("quadratic growth of the optimality gap") {
    const DoubleIntegratorParams di{0.0, 1.0, 1.0, 1.0};
    const SolvedProblem sp = solve_for(make_spec(di, 1000), 0.5, 1000);
    const Eigen::Vector2d x1(1.0, 0.0);
    SimConfig cfg;
    cfg.n_paths = 8;
    cfg.n_steps = 1000;
    cfg.seed = 3;
    std::vector<double> gaps;
    for (double eps : {0.05, 0.1, 0.2}) {
      const auto [gap, se] =
          compare_controls(sp.spec, sp.r, perturbed_law(sp, eps), optimal_law(sp), x1, cfg);
      REQUIRE(gap > 0.0);
      gaps.push_back(gap);
    }
    REQUIRE(gaps[1] / gaps[0] == Approx(4.0).epsilon(0.05));
    REQUIRE(gaps[2] / gaps[1] == Approx(4.0).epsilon(0.05));
  }
  SECTION("zero control loses to the feedback law at three standard errors") {
    const SolvedProblem sp = solve_for(make_spec(noisy_scalar(), 300), 0.5, 300);
    Eigen::VectorXd x1(1);
    x1 << 1.0;
    SimConfig cfg;
    cfg.n_paths = 4000;
    cfg.n_steps = 300;
    cfg.seed = 19;
    const ControlLaw zero = [](double, const Eigen::VectorXd&) {
      return Eigen::VectorXd::Zero(1);
    };
    const auto [gap, se] = compare_controls(sp.spec, sp.r, zero, optimal_law(sp), x1, cfg);
    REQUIRE(gap > 3.0 * se);
  }
  SECTION("no admissible law beats the feedback law") {
    const SolvedProblem sp = solve_for(make_spec(noisy_scalar(), 250), 0.5, 250);
    Eigen::VectorXd x1(1);
    x1 << 1.0;
    SimConfig cfg;
    cfg.n_paths = 2000;
    cfg.n_steps = 250;
    cfg.seed = 29;
    std::mt19937_64 gen(4);
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
      const double slope = coef(gen);
      const double offset = 0.3 * coef(gen);
      const ControlLaw linear = [slope, offset](double, const Eigen::VectorXd& state) {
        return Eigen::VectorXd::Constant(1, slope * state(state.size() - 1) + offset);
      };
      const auto [gap, se] = compare_controls(sp.spec, sp.r, linear, optimal_law(sp), x1, cfg);
      CAPTURE(slope, offset, gap, se);
      REQUIRE(gap >= -3.0 * se);
    }
  }
}
