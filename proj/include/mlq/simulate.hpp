#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

#include "mlq/detail/parallel.hpp"
#include "mlq/errors.hpp"
#include "mlq/riccati.hpp"

namespace mlq {

struct SimConfig {
  std::int64_t n_paths = 100000;
  int n_steps = 2000;
  std::uint64_t seed = 0;
  bool antithetic = false;
  int n_workers = 0;    ///< 0: one worker per hardware thread
  int trace_paths = 10; ///< leading paths kept for diagnostics and export
};

/// Monte Carlo cost estimate. The residual fields are filled from the traced
/// paths when tracing is enabled; both are diagnostics of the optimality
/// system along simulated trajectories.
struct SimReport {
  double mean_cost = 0;
  double std_error = 0;
  std::int64_t n_paths = 0;
  double r_used = 0;  ///< switch time snapped to the simulation grid
  std::optional<double> stationarity_max_residual;
  std::optional<double> terminal_adjoint_residual;
};

/// One simulated path on the uniform grid: stage-1 nodes 0..switch_node and
/// stage-2 nodes switch_node..n_steps. u1 at the switch node is the stage-1
/// (left-limit) control.
struct PathTrace {
  double dt = 0;
  int switch_node = 0;
  std::vector<Eigen::VectorXd> x1, u1;
  std::vector<Eigen::VectorXd> x, u;
};

/// Adjoint pair reconstructed from a closed-loop path: p = −P·X and
/// q = −P(C·X + D·u) on the stage-2 span, and the stage-1 analogues.
struct AdjointPath {
  std::vector<Eigen::VectorXd> p, q;    // stage-2 nodes
  std::vector<Eigen::VectorXd> p1, q1;  // stage-1 nodes
};

struct StationarityReport {
  double stage2_max_residual = 0;  ///< max |R·u − Bᵀp − Dᵀq| over stage-2 nodes
  double stage1_max_residual = 0;
  double terminal_residual = 0;    ///< |p(T) + G·X(T)|
  double jump_residual = 0;        ///< |p1(r) + (KᵀP(r)K + G1(r))·X1(r)|
  double max_state_norm = 0;
  AdjointPath adjoint;
};

/// Deterministic state-feedback control law u(t, state). On [0, r) the state
/// argument is the stage-1 vector (size n1), afterwards the full vector
/// (size n). Must be pure: paths may be generated concurrently.
using ControlLaw = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& state)>;

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct SimGrid {
  int n_steps = 0;
  double dt = 0;
  int switch_node = 0;
  double r_used = 0;
  // Per-node coefficients on the master grid (stage 1 on [0, kr], stage 2 on
  // [kr, N], the latter stored with the index shifted by kr).
  std::vector<Eigen::MatrixXd> a1, b1, c1, d1, q1, r1;
  std::vector<Eigen::MatrixXd> a2, b2, c2, d2, q2, r2;
  std::vector<Eigen::MatrixXd> gain1, gain2;  // empty for external control laws
  Eigen::MatrixXd k_switch, g1_switch, g_term;
};

inline SimGrid prefetch_grid(const ProblemSpec& spec, double r, const SimConfig& cfg,
                             const RiccatiSolution* stage2, const Stage1Solution* stage1) {
  if (cfg.n_steps < 2) throw std::invalid_argument("simulate: need at least 2 steps");
  if (cfg.n_paths < 1) throw std::invalid_argument("simulate: need at least 1 path");
  if (spec.horizon.t0 != 0.0)
    throw std::invalid_argument("simulate: the horizon must start at t = 0");
  SimGrid g;
  g.n_steps = cfg.n_steps;
  g.dt = (spec.horizon.t1 - spec.horizon.t0) / cfg.n_steps;
  const double slack = 1e-9 * std::max(1.0, spec.horizon.t1);
  if (r < -slack || r > spec.horizon.t1 + slack)
    throw std::domain_error("simulate: switch time outside [0, T]");
  g.switch_node = static_cast<int>(std::llround(r / g.dt));
  if (g.switch_node < 0) g.switch_node = 0;
  if (g.switch_node > cfg.n_steps) g.switch_node = cfg.n_steps;
  g.r_used = g.switch_node * g.dt;

  const TimeGrid& grid = spec.horizon;
  auto node_t = [&](int k) { return spec.horizon.t0 + k * g.dt; };
  for (int k = 0; k <= g.switch_node; ++k) {
    const double t = node_t(k);
    g.a1.push_back(spec.A1.at(grid, t));
    g.b1.push_back(spec.B1.at(grid, t));
    g.c1.push_back(spec.C1.at(grid, t));
    g.d1.push_back(spec.D1.at(grid, t));
    g.q1.push_back(spec.Q1.at(grid, t));
    g.r1.push_back(spec.R1.at(grid, t));
    // Clamp to the stage-1 span: when r was snapped upward the last node can
    // sit a fraction of a step past the solved interval.
    if (stage1) g.gain1.push_back(stage1->gain_at(std::min(t, stage1->r)));
  }
  for (int k = g.switch_node; k <= cfg.n_steps; ++k) {
    const double t = node_t(k);
    g.a2.push_back(spec.A.at(grid, t));
    g.b2.push_back(spec.B.at(grid, t));
    g.c2.push_back(spec.C.at(grid, t));
    g.d2.push_back(spec.D.at(grid, t));
    g.q2.push_back(spec.Q.at(grid, t));
    g.r2.push_back(spec.R.at(grid, t));
    if (stage2) g.gain2.push_back(stage2->gain_at(t));
  }
  g.k_switch = spec.K.at(grid, g.r_used);
  g.g1_switch = spec.G1.at(grid, g.r_used);
  g.g_term = spec.G;
  return g;
}

[[noreturn]] inline void nonfinite(std::int64_t path, int step) {
  std::ostringstream os;
  os << "simulate: non-finite state on path " << path << " at step " << step;
  throw SimulationError(os.str());
}

// Generic (block-matrix) path generator. One instance per worker thread; all
// Eigen temporaries are preallocated members.
struct GenericPathBody {
  const SimGrid* g;
  const ControlLaw* law;  // null: closed loop through the prefetched gains
  Eigen::VectorXd x0;
  const SimConfig* cfg;
  std::vector<double>* costs;
  std::vector<PathTrace>* traces;
  int traced = 0;

  Eigen::VectorXd x1v, xv, u, tmp1, tmpn, tmpm, drift1, diff1, driftn, diffn;

  GenericPathBody(const SimGrid& grid, const ControlLaw* law_fn, const Eigen::VectorXd& x_init,
                  const SimConfig& config, std::vector<double>& out,
                  std::vector<PathTrace>* trace_out, int traced_count)
      : g(&grid), law(law_fn), x0(x_init), cfg(&config), costs(&out), traces(trace_out),
        traced(traced_count) {
    const int n1 = static_cast<int>(x_init.size());
    const int n = static_cast<int>(grid.k_switch.rows());
    const int m = static_cast<int>(grid.b2.front().cols());
    x1v.resize(n1);
    xv.resize(n);
    u.resize(m);
    tmp1.resize(n1);
    tmpn.resize(n);
    tmpm.resize(m);
    drift1.resize(n1);
    diff1.resize(n1);
    driftn.resize(n);
    diffn.resize(n);
  }

  void control1(int k, double t) {
    if (law) {
      u = (*law)(t, x1v);
      if (u.size() != tmpm.size()) throw std::invalid_argument("simulate: control dimension mismatch");
    } else {
      u.noalias() = g->gain1[static_cast<std::size_t>(k)] * x1v;
      u = -u;
    }
  }
  void control2(int j, double t) {
    if (law) {
      u = (*law)(t, xv);
      if (u.size() != tmpm.size()) throw std::invalid_argument("simulate: control dimension mismatch");
    } else {
      u.noalias() = g->gain2[static_cast<std::size_t>(j)] * xv;
      u = -u;
    }
  }

  void operator()(std::int64_t path) {
    const std::uint64_t stream = cfg->antithetic ? static_cast<std::uint64_t>(path / 2)
                                                 : static_cast<std::uint64_t>(path);
    const double sign = (cfg->antithetic && (path & 1)) ? -1.0 : 1.0;
    std::mt19937_64 gen(mix_seed(cfg->seed, stream));
    std::normal_distribution<double> normal;
    const double dt = g->dt;
    const double sqdt = std::sqrt(dt);
    const int kr = g->switch_node;
    const int n_steps = g->n_steps;
    PathTrace* tr = (path < traced) ? &(*traces)[static_cast<std::size_t>(path)] : nullptr;
    if (tr) {
      tr->dt = dt;
      tr->switch_node = kr;
      tr->x1.clear();
      tr->u1.clear();
      tr->x.clear();
      tr->u.clear();
    }

    x1v = x0;
    double cost = 0;
    for (int k = 0; k < kr; ++k) {
      const double t = k * dt;
      control1(k, t);
      const double w = dt * (k == 0 ? 0.5 : 1.0);
      tmp1.noalias() = g->q1[static_cast<std::size_t>(k)] * x1v;
      cost += w * x1v.dot(tmp1);
      tmpm.noalias() = g->r1[static_cast<std::size_t>(k)] * u;
      cost += w * u.dot(tmpm);
      if (tr) {
        tr->x1.push_back(x1v);
        tr->u1.push_back(u);
      }
      const double dw = sign * sqdt * normal(gen);
      drift1.noalias() = g->a1[static_cast<std::size_t>(k)] * x1v;
      drift1.noalias() += g->b1[static_cast<std::size_t>(k)] * u;
      diff1.noalias() = g->c1[static_cast<std::size_t>(k)] * x1v;
      diff1.noalias() += g->d1[static_cast<std::size_t>(k)] * u;
      x1v += dt * drift1;
      x1v += dw * diff1;
      if (!x1v.allFinite()) nonfinite(path, k);
    }
    // Left-limit control closes the stage-1 trapezoid.
    control1(kr, g->r_used);
    if (kr > 0) {
      const double w = 0.5 * dt;
      tmp1.noalias() = g->q1[static_cast<std::size_t>(kr)] * x1v;
      cost += w * x1v.dot(tmp1);
      tmpm.noalias() = g->r1[static_cast<std::size_t>(kr)] * u;
      cost += w * u.dot(tmpm);
    }
    if (tr) {
      tr->x1.push_back(x1v);
      tr->u1.push_back(u);
    }
    tmp1.noalias() = g->g1_switch * x1v;
    cost += x1v.dot(tmp1);

    xv.noalias() = g->k_switch * x1v;
    for (int k = kr; k < n_steps; ++k) {
      const int j = k - kr;
      const double t = k * dt;
      control2(j, t);
      const double w = dt * (k == kr ? 0.5 : 1.0);
      tmpn.noalias() = g->q2[static_cast<std::size_t>(j)] * xv;
      cost += w * xv.dot(tmpn);
      tmpm.noalias() = g->r2[static_cast<std::size_t>(j)] * u;
      cost += w * u.dot(tmpm);
      if (tr) {
        tr->x.push_back(xv);
        tr->u.push_back(u);
      }
      const double dw = sign * sqdt * normal(gen);
      driftn.noalias() = g->a2[static_cast<std::size_t>(j)] * xv;
      driftn.noalias() += g->b2[static_cast<std::size_t>(j)] * u;
      diffn.noalias() = g->c2[static_cast<std::size_t>(j)] * xv;
      diffn.noalias() += g->d2[static_cast<std::size_t>(j)] * u;
      xv += dt * driftn;
      xv += dw * diffn;
      if (!xv.allFinite()) nonfinite(path, k);
    }
    control2(n_steps - kr, n_steps * dt);
    if (kr < n_steps) {
      const double w = 0.5 * dt;
      tmpn.noalias() = g->q2[static_cast<std::size_t>(n_steps - kr)] * xv;
      cost += w * xv.dot(tmpn);
      tmpm.noalias() = g->r2[static_cast<std::size_t>(n_steps - kr)] * u;
      cost += w * u.dot(tmpm);
    }
    if (tr) {
      tr->x.push_back(xv);
      tr->u.push_back(u);
    }
    tmpn.noalias() = g->g_term * xv;
    cost += xv.dot(tmpn);

    (*costs)[static_cast<std::size_t>(path)] = 0.5 * cost;
  }
};

// Fast path for 1-D stages. Uses the same stepping arithmetic as the generic
// body, with plain doubles and flattened coefficient arrays.
struct ScalarPathBody {
  const SimGrid* g;
  const ControlLaw* law;
  double x0;
  const SimConfig* cfg;
  std::vector<double>* costs;
  std::vector<PathTrace>* traces;
  int traced = 0;

  std::vector<double> a1, b1, c1, d1, q1, r1, gain1;
  std::vector<double> a2, b2, c2, d2, q2, r2, gain2;
  double k_up = 0, k_sw = 0, g1_sw = 0, g_term = 0;
  Eigen::VectorXd shim_state, shim_u;

  ScalarPathBody(const SimGrid& grid, const ControlLaw* law_fn, double x_init,
                 const SimConfig& config, std::vector<double>& out,
                 std::vector<PathTrace>* trace_out, int traced_count)
      : g(&grid), law(law_fn), x0(x_init), cfg(&config), costs(&out), traces(trace_out),
        traced(traced_count) {
    auto flat1 = [](const std::vector<Eigen::MatrixXd>& v, int row) {
      std::vector<double> out_v(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) out_v[i] = v[i](row, 0);
      return out_v;
    };
    a1 = flat1(grid.a1, 0);
    b1 = flat1(grid.b1, 0);
    c1 = flat1(grid.c1, 0);
    d1 = flat1(grid.d1, 0);
    q1 = flat1(grid.q1, 0);
    r1 = flat1(grid.r1, 0);
    // Stage-2 blocks are 2x2 / 2x1 with the live entry bottom-right.
    std::vector<double> tmp(grid.a2.size());
    for (std::size_t i = 0; i < grid.a2.size(); ++i) tmp[i] = grid.a2[i](1, 1);
    a2 = tmp;
    for (std::size_t i = 0; i < grid.c2.size(); ++i) tmp[i] = grid.c2[i](1, 1);
    c2 = tmp;
    for (std::size_t i = 0; i < grid.q2.size(); ++i) tmp[i] = grid.q2[i](1, 1);
    q2 = tmp;
    for (std::size_t i = 0; i < grid.b2.size(); ++i) tmp[i] = grid.b2[i](1, 0);
    b2 = tmp;
    for (std::size_t i = 0; i < grid.d2.size(); ++i) tmp[i] = grid.d2[i](1, 0);
    d2 = tmp;
    for (std::size_t i = 0; i < grid.r2.size(); ++i) tmp[i] = grid.r2[i](0, 0);
    r2 = tmp;
    if (!grid.gain1.empty()) gain1 = flat1(grid.gain1, 0);
    if (!grid.gain2.empty()) {
      gain2.resize(grid.gain2.size());
      for (std::size_t i = 0; i < grid.gain2.size(); ++i) gain2[i] = grid.gain2[i](0, 1);
    }
    k_up = grid.k_switch(0, 0);
    k_sw = grid.k_switch(1, 0);
    g1_sw = grid.g1_switch(0, 0);
    g_term = grid.g_term(1, 1);
    shim_state.resize(2);
  }

  double control1(int k, double t, double x1v) {
    if (!law) return -(gain1[static_cast<std::size_t>(k)] * x1v);
    shim_state.resize(1);
    shim_state(0) = x1v;
    shim_u = (*law)(t, shim_state);
    return shim_u(0);
  }
  double control2(int j, double t, double x_frozen, double x2v) {
    if (!law) return -(gain2[static_cast<std::size_t>(j)] * x2v);
    shim_state.resize(2);
    shim_state(0) = x_frozen;
    shim_state(1) = x2v;
    shim_u = (*law)(t, shim_state);
    return shim_u(0);
  }

  void operator()(std::int64_t path) {
    const std::uint64_t stream = cfg->antithetic ? static_cast<std::uint64_t>(path / 2)
                                                 : static_cast<std::uint64_t>(path);
    const double sign = (cfg->antithetic && (path & 1)) ? -1.0 : 1.0;
    std::mt19937_64 gen(mix_seed(cfg->seed, stream));
    std::normal_distribution<double> normal;
    const double dt = g->dt;
    const double sqdt = std::sqrt(dt);
    const int kr = g->switch_node;
    const int n_steps = g->n_steps;
    PathTrace* tr = (path < traced) ? &(*traces)[static_cast<std::size_t>(path)] : nullptr;
    if (tr) {
      tr->dt = dt;
      tr->switch_node = kr;
      tr->x1.clear();
      tr->u1.clear();
      tr->x.clear();
      tr->u.clear();
    }

    double x1v = x0;
    double cost = 0;
    for (int k = 0; k < kr; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      const double u = control1(k, k * dt, x1v);
      const double w = dt * (k == 0 ? 0.5 : 1.0);
      cost += w * (q1[ku] * x1v * x1v + r1[ku] * u * u);
      if (tr) {
        tr->x1.push_back(Eigen::VectorXd::Constant(1, x1v));
        tr->u1.push_back(Eigen::VectorXd::Constant(1, u));
      }
      const double dw = sign * sqdt * normal(gen);
      x1v += dt * (a1[ku] * x1v + b1[ku] * u) + dw * (c1[ku] * x1v + d1[ku] * u);
      if (!std::isfinite(x1v)) nonfinite(path, k);
    }
    {
      const double u = control1(kr, g->r_used, x1v);
      if (kr > 0) {
        const auto ku = static_cast<std::size_t>(kr);
        cost += 0.5 * dt * (q1[ku] * x1v * x1v + r1[ku] * u * u);
      }
      if (tr) {
        tr->x1.push_back(Eigen::VectorXd::Constant(1, x1v));
        tr->u1.push_back(Eigen::VectorXd::Constant(1, u));
      }
    }
    cost += g1_sw * x1v * x1v;

    // In the stopped block structure the first component is frozen at the
    // handoff value and carries no cost.
    const double x_frozen = k_up * x1v;
    double x2v = k_sw * x1v;
    for (int k = kr; k < n_steps; ++k) {
      const auto ju = static_cast<std::size_t>(k - kr);
      const double u = control2(k - kr, k * dt, x_frozen, x2v);
      const double w = dt * (k == kr ? 0.5 : 1.0);
      cost += w * (q2[ju] * x2v * x2v + r2[ju] * u * u);
      if (tr) {
        tr->x.push_back(Eigen::Vector2d(x_frozen, x2v));
        tr->u.push_back(Eigen::VectorXd::Constant(1, u));
      }
      const double dw = sign * sqdt * normal(gen);
      x2v += dt * (a2[ju] * x2v + b2[ju] * u) + dw * (c2[ju] * x2v + d2[ju] * u);
      if (!std::isfinite(x2v)) nonfinite(path, k);
    }
    {
      const auto ju = static_cast<std::size_t>(n_steps - kr);
      const double u = control2(n_steps - kr, n_steps * dt, x_frozen, x2v);
      if (kr < n_steps) cost += 0.5 * dt * (q2[ju] * x2v * x2v + r2[ju] * u * u);
      if (tr) {
        tr->x.push_back(Eigen::Vector2d(x_frozen, x2v));
        tr->u.push_back(Eigen::VectorXd::Constant(1, u));
      }
    }
    cost += g_term * x2v * x2v;

    (*costs)[static_cast<std::size_t>(path)] = 0.5 * cost;
  }
};

// True when the prefetched stage-2 coefficients have the stopped 2x2 block
// form (frozen, costless first component), which the flattened scalar stepper
// relies on.
inline bool scalar_block_structure(const SimGrid& g) {
  auto frozen_square = [](const std::vector<Eigen::MatrixXd>& v) {
    for (const auto& s : v)
      if (s(0, 0) != 0.0 || s(0, 1) != 0.0 || s(1, 0) != 0.0) return false;
    return true;
  };
  auto frozen_col = [](const std::vector<Eigen::MatrixXd>& v) {
    for (const auto& s : v)
      if (s(0, 0) != 0.0) return false;
    return true;
  };
  return frozen_square(g.a2) && frozen_square(g.c2) && frozen_square(g.q2) &&
         frozen_col(g.b2) && frozen_col(g.d2) && g.g_term(0, 0) == 0.0 &&
         g.g_term(0, 1) == 0.0 && g.g_term(1, 0) == 0.0;
}

inline std::vector<double> run_paths(const ProblemSpec& spec, const SimGrid& grid,
                                     const ControlLaw* law, const Eigen::VectorXd& x1,
                                     const SimConfig& cfg, std::vector<PathTrace>* traces) {
  std::vector<double> costs(static_cast<std::size_t>(cfg.n_paths), 0.0);
  int traced = 0;
  if (traces) {
    traced = static_cast<int>(
        std::min<std::int64_t>(std::max(cfg.trace_paths, 0), cfg.n_paths));
    traces->assign(static_cast<std::size_t>(traced), PathTrace{});
  }
  const bool scalar =
      (spec.n1 == 1 && spec.n2 == 1 && spec.m == 1) && scalar_block_structure(grid);
  if (scalar) {
    parallel_run(cfg.n_paths, cfg.n_workers, [&]() {
      return ScalarPathBody(grid, law, x1(0), cfg, costs, traces, traced);
    });
  } else {
    parallel_run(cfg.n_paths, cfg.n_workers, [&]() {
      return GenericPathBody(grid, law, x1, cfg, costs, traces, traced);
    });
  }
  return costs;
}

/// Mean and standard error via a Welford pass in path-index order: bit-stable
/// regardless of worker count, and exactly zero spread when every path costs
/// the same.
inline SimReport summarize(const std::vector<double>& costs, double r_used) {
  SimReport rep;
  rep.n_paths = static_cast<std::int64_t>(costs.size());
  rep.r_used = r_used;
  double mean = 0, m2 = 0;
  std::int64_t count = 0;
  for (double c : costs) {
    ++count;
    const double d1 = c - mean;
    mean += d1 / static_cast<double>(count);
    m2 += d1 * (c - mean);
  }
  rep.mean_cost = mean;
  if (count > 1) {
    const double var = m2 / static_cast<double>(count - 1);
    rep.std_error = std::sqrt(var / static_cast<double>(count));
  }
  return rep;
}

}  // namespace detail

/// Maximum-principle residuals along one closed-loop path: the adjoint pair
/// is reconstructed from the Riccati solutions and checked against the
/// stationarity, terminal and switch-jump conditions.
inline StationarityReport stationarity_check(const ProblemSpec& spec, double r,
                                             const RiccatiSolution& stage2,
                                             const Stage1Solution& stage1,
                                             const PathTrace& trace) {
  StationarityReport rep;
  const TimeGrid& grid = spec.horizon;
  const int kr = trace.switch_node;
  const double dt = trace.dt;
  const double r_used = kr * dt;
  if (std::abs(r - r_used) > 0.5 * dt + 1e-12)
    throw std::invalid_argument("stationarity_check: r does not match the traced switch node");

  auto inf_norm = [](const Eigen::VectorXd& v) {
    return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
  };
  for (const auto& v : trace.x1) rep.max_state_norm = std::max(rep.max_state_norm, inf_norm(v));
  for (const auto& v : trace.x) rep.max_state_norm = std::max(rep.max_state_norm, inf_norm(v));

  // Stage 1 on [0, r].
  for (std::size_t j = 0; j < trace.x1.size(); ++j) {
    const double t = static_cast<double>(j) * dt;
    const Eigen::MatrixXd p1m = stage1.p_at(std::min(t, stage1.r));
    const Eigen::VectorXd& x1v = trace.x1[j];
    const Eigen::VectorXd& u = trace.u1[j];
    const Eigen::VectorXd pv = -(p1m * x1v);
    const Eigen::VectorXd qv =
        -(p1m * (spec.C1.at(grid, t) * x1v + spec.D1.at(grid, t) * u));
    const Eigen::VectorXd res = spec.R1.at(grid, t) * u - spec.B1.at(grid, t).transpose() * pv -
                                spec.D1.at(grid, t).transpose() * qv;
    rep.stage1_max_residual = std::max(rep.stage1_max_residual, inf_norm(res));
    rep.adjoint.p1.push_back(pv);
    rep.adjoint.q1.push_back(qv);
  }
  if (!rep.adjoint.p1.empty()) {
    const Eigen::MatrixXd stitched = stitched_terminal(spec, r_used, stage2.p_at(r_used));
    rep.jump_residual = inf_norm(rep.adjoint.p1.back() + stitched * trace.x1.back());
  }

  // Stage 2 on [r, T].
  for (std::size_t j = 0; j < trace.x.size(); ++j) {
    const double t = static_cast<double>(kr + static_cast<int>(j)) * dt;
    const Eigen::MatrixXd pm = stage2.p_at(t);
    const Eigen::VectorXd& xv = trace.x[j];
    const Eigen::VectorXd& u = trace.u[j];
    const Eigen::VectorXd pv = -(pm * xv);
    const Eigen::VectorXd qv = -(pm * (spec.C.at(grid, t) * xv + spec.D.at(grid, t) * u));
    const Eigen::VectorXd res = spec.R.at(grid, t) * u - spec.B.at(grid, t).transpose() * pv -
                                spec.D.at(grid, t).transpose() * qv;
    rep.stage2_max_residual = std::max(rep.stage2_max_residual, inf_norm(res));
    rep.adjoint.p.push_back(pv);
    rep.adjoint.q.push_back(qv);
  }
  if (!rep.adjoint.p.empty())
    rep.terminal_residual = inf_norm(rep.adjoint.p.back() + spec.G * trace.x.back());
  return rep;
}

/// Euler-Maruyama simulation of the two-stage system under the synthesized
/// feedback u = −Ψ·X. The switch time is snapped to the nearest grid node
/// (recorded in the report); the state hands off through X(r) = K(r)·X1(r−0).
/// Per-path costs use trapezoidal quadrature of the quadratic integrands plus
/// both terminal terms, all under the overall ½ of the cost functional.
inline SimReport simulate_closed_loop(const ProblemSpec& spec, double r,
                                      const RiccatiSolution& stage2,
                                      const Stage1Solution& stage1, const Eigen::VectorXd& x1,
                                      const SimConfig& cfg,
                                      std::vector<PathTrace>* traces_out = nullptr) {
  if (x1.size() != spec.n1)
    throw std::invalid_argument("simulate_closed_loop: x1 dimension mismatch");
  detail::SimGrid grid = detail::prefetch_grid(spec, r, cfg, &stage2, &stage1);
  if (std::abs(stage1.r - grid.r_used) > 0.5 * grid.dt + 1e-12)
    throw std::invalid_argument(
        "simulate_closed_loop: stage-1 solution was solved for a different switch time");
  std::vector<PathTrace> traces;
  std::vector<double> costs =
      detail::run_paths(spec, grid, nullptr, x1, cfg, cfg.trace_paths > 0 ? &traces : nullptr);
  SimReport rep = detail::summarize(costs, grid.r_used);
  if (!traces.empty()) {
    double stat = 0, term = 0;
    for (const PathTrace& tr : traces) {
      const StationarityReport sr = stationarity_check(spec, grid.r_used, stage2, stage1, tr);
      stat = std::max({stat, sr.stage1_max_residual, sr.stage2_max_residual});
      term = std::max(term, sr.terminal_residual);
    }
    rep.stationarity_max_residual = stat;
    rep.terminal_adjoint_residual = term;
  }
  if (traces_out) *traces_out = std::move(traces);
  return rep;
}

/// Same scheme and cost quadrature under an arbitrary (deterministic
/// state-feedback) control law.
inline SimReport simulate_with_control(const ProblemSpec& spec, double r, const ControlLaw& law,
                                       const Eigen::VectorXd& x1, const SimConfig& cfg,
                                       std::vector<PathTrace>* traces_out = nullptr) {
  if (x1.size() != spec.n1)
    throw std::invalid_argument("simulate_with_control: x1 dimension mismatch");
  detail::SimGrid grid = detail::prefetch_grid(spec, r, cfg, nullptr, nullptr);
  std::vector<PathTrace> traces;
  std::vector<double> costs =
      detail::run_paths(spec, grid, &law, x1, cfg, cfg.trace_paths > 0 ? &traces : nullptr);
  SimReport rep = detail::summarize(costs, grid.r_used);
  if (traces_out) *traces_out = std::move(traces);
  return rep;
}

/// Paired cost comparison under common random numbers: both laws see the same
/// Brownian increments path by path. Returns the mean of cost_a − cost_b and
/// its standard error.
inline std::pair<double, double> compare_controls(const ProblemSpec& spec, double r,
                                                  const ControlLaw& control_a,
                                                  const ControlLaw& control_b,
                                                  const Eigen::VectorXd& x1,
                                                  const SimConfig& cfg) {
  if (x1.size() != spec.n1)
    throw std::invalid_argument("compare_controls: x1 dimension mismatch");
  detail::SimGrid grid = detail::prefetch_grid(spec, r, cfg, nullptr, nullptr);
  const std::vector<double> ca = detail::run_paths(spec, grid, &control_a, x1, cfg, nullptr);
  const std::vector<double> cb = detail::run_paths(spec, grid, &control_b, x1, cfg, nullptr);
  std::vector<double> diff(ca.size());
  for (std::size_t i = 0; i < ca.size(); ++i) diff[i] = ca[i] - cb[i];
  const SimReport rep = detail::summarize(diff, grid.r_used);
  return {rep.mean_cost, rep.std_error};
}

}  // namespace mlq
