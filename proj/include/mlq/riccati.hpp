#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "mlq/errors.hpp"
#include "mlq/problem.hpp"

namespace mlq {

namespace detail {

// Locate t on a uniform grid {lo + k*h : k = 0..steps}. Times within a
// relative 1e-9 of a node snap to it so node queries return stored values
// exactly.
inline std::pair<int, double> locate_uniform(double lo, double h, int steps, double t,
                                             const char* what) {
  const double span = h * steps;
  const double slack = 1e-9 * std::max(1.0, std::abs(span));
  if (t < lo - slack || t > lo + span + slack)
    throw std::domain_error(std::string(what) + ": time outside the solution span");
  double s = (t - lo) / h;
  int k = static_cast<int>(std::floor(s));
  if (k < 0) k = 0;
  if (k > steps - 1) k = steps - 1;
  double theta = s - k;
  if (theta < 1e-9) theta = 0.0;
  if (theta > 1.0 - 1e-9) theta = 1.0;
  return {k, theta};
}

inline Eigen::MatrixXd linear_eval(const std::vector<Eigen::MatrixXd>& v, double lo, double h,
                                   double t, const char* what) {
  const int steps = static_cast<int>(v.size()) - 1;
  if (steps == 0) return v[0];
  auto [k, theta] = locate_uniform(lo, h, steps, t, what);
  if (theta == 0.0) return v[static_cast<std::size_t>(k)];
  if (theta == 1.0) return v[static_cast<std::size_t>(k) + 1];
  return (1.0 - theta) * v[static_cast<std::size_t>(k)] +
         theta * v[static_cast<std::size_t>(k) + 1];
}

// Cubic Hermite using the stored time derivatives; C1 and fourth-order
// accurate, so values read between nodes do not degrade the RK4 sweep.
inline Eigen::MatrixXd hermite_eval(const std::vector<Eigen::MatrixXd>& v,
                                    const std::vector<Eigen::MatrixXd>& d, double lo, double h,
                                    double t, const char* what) {
  const int steps = static_cast<int>(v.size()) - 1;
  if (steps == 0) return v[0];
  auto [k, theta] = locate_uniform(lo, h, steps, t, what);
  const auto ku = static_cast<std::size_t>(k);
  if (theta == 0.0) return v[ku];
  if (theta == 1.0) return v[ku + 1];
  const double t2 = theta * theta;
  const double t3 = t2 * theta;
  const double h00 = 2 * t3 - 3 * t2 + 1;
  const double h10 = t3 - 2 * t2 + theta;
  const double h01 = -2 * t3 + 3 * t2;
  const double h11 = t3 - t2;
  return h00 * v[ku] + (h10 * h) * d[ku] + h01 * v[ku + 1] + (h11 * h) * d[ku + 1];
}

}  // namespace detail

/// Node-sampled solution of the terminal-value matrix Riccati equation
///   dP/dt + PA + AᵀP + CᵀPC + Q − (PB + CᵀPD)(R + DᵀPD)⁻¹(BᵀP + DᵀPC) = 0
/// with P(t1) equal to the terminal weight, plus the feedback gains
/// Ψ = (R + DᵀPD)⁻¹(BᵀP + DᵀPC). The control law is u = −Ψ·X.
struct RiccatiSolution {
  TimeGrid grid;
  std::vector<Eigen::MatrixXd> p;     ///< symmetric, node-indexed; p.back() = terminal weight
  std::vector<Eigen::MatrixXd> gain;  ///< m×n gains at nodes
  std::vector<Eigen::MatrixXd> pdot;  ///< dP/dt at nodes

  Eigen::MatrixXd p_at(double t) const {
    return detail::hermite_eval(p, pdot, grid.t0, grid.dt(), t, "RiccatiSolution::p_at");
  }
  /// Linear interpolation of the node gains; exact at nodes.
  Eigen::MatrixXd gain_at(double t) const {
    return detail::linear_eval(gain, grid.t0, grid.dt(), t, "RiccatiSolution::gain_at");
  }
};

/// Stage-1 counterpart on [0, r]. The terminal node holds the stitched matrix
/// K(r)ᵀP(r)K(r) + G1(r) exactly as produced by stitched_terminal(). For
/// r = 0 the solution is that single node.
struct Stage1Solution {
  double r = 0.0;
  std::vector<Eigen::MatrixXd> p, gain, pdot;

  int steps() const { return static_cast<int>(p.size()) - 1; }
  double dt() const { return steps() == 0 ? 0.0 : r / steps(); }
  double node_time(int k) const { return steps() == 0 ? 0.0 : r * k / steps(); }

  Eigen::MatrixXd p_at(double t) const {
    return detail::hermite_eval(p, pdot, 0.0, dt(), t, "Stage1Solution::p_at");
  }
  Eigen::MatrixXd gain_at(double t) const {
    return detail::linear_eval(gain, 0.0, dt(), t, "Stage1Solution::gain_at");
  }
};

namespace detail {

// Backward RK4 sweep for one stage. Coefficient tables are read off the
// problem's horizon grid; all temporaries live in the object so repeated
// sweeps (value curves, sensitivity probes) do not allocate per step.
class RiccatiSweep {
 public:
  RiccatiSweep(const TimeGrid& coeff_grid, const CoeffTable& a, const CoeffTable& b,
               const CoeffTable& c, const CoeffTable& d, const CoeffTable& q,
               const CoeffTable& r, int n, int m, double delta_pd, std::string label)
      : grid_(coeff_grid), a_(&a), b_(&b), c_(&c), d_(&d), q_(&q), r_(&r), n_(n), m_(m),
        delta_pd_(delta_pd), label_(std::move(label)) {
    bufA_.resize(n, n);
    bufB_.resize(n, m);
    bufC_.resize(n, n);
    bufD_.resize(n, m);
    bufQ_.resize(n, n);
    bufR_.resize(m, m);
    dtp_.resize(m, n);
    s_.resize(m, m);
    l_.resize(m, n);
    x_.resize(m, n);
    pa_.resize(n, n);
    pc_.resize(n, n);
    ctpc_.resize(n, n);
    k1_.resize(n, n);
    k2_.resize(n, n);
    k3_.resize(n, n);
    k4_.resize(n, n);
    stage_.resize(n, n);
  }

  void run(double t_lo, double t_hi, int steps, const Eigen::MatrixXd& terminal,
           std::vector<Eigen::MatrixXd>& p, std::vector<Eigen::MatrixXd>& gain,
           std::vector<Eigen::MatrixXd>& pdot) {
    p.assign(steps + 1, Eigen::MatrixXd());
    gain.assign(steps + 1, Eigen::MatrixXd());
    pdot.assign(steps + 1, Eigen::MatrixXd());
    const double h = (t_hi - t_lo) / steps;
    p[steps] = 0.5 * (terminal + terminal.transpose());
    for (int k = steps; k >= 1; --k) {
      const double t = t_lo + k * h;
      rhs(t, p[k], k1_, k);
      pdot[k] = k1_;
      gain_at_node(t, p[k], gain[k], k);
      stage_ = p[k] - (0.5 * h) * k1_;
      symmetrize(stage_);
      rhs(t - 0.5 * h, stage_, k2_, k - 1);
      stage_ = p[k] - (0.5 * h) * k2_;
      symmetrize(stage_);
      rhs(t - 0.5 * h, stage_, k3_, k - 1);
      stage_ = p[k] - h * k3_;
      symmetrize(stage_);
      rhs(t - h, stage_, k4_, k - 1);
      p[k - 1] = p[k] - (h / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
      symmetrize(p[k - 1]);
    }
    rhs(t_lo, p[0], k1_, 0);
    pdot[0] = k1_;
    gain_at_node(t_lo, p[0], gain[0], 0);
  }

  /// Gain and positivity check for a single matrix (used by the r = 0 case).
  void gain_at_node(double t, const Eigen::MatrixXd& pcur, Eigen::MatrixXd& out, int node) {
    const Eigen::MatrixXd& d = d_->eval_ref(grid_, t, bufD_);
    const Eigen::MatrixXd& r = r_->eval_ref(grid_, t, bufR_);
    const Eigen::MatrixXd& b = b_->eval_ref(grid_, t, bufB_);
    const Eigen::MatrixXd& c = c_->eval_ref(grid_, t, bufC_);
    dtp_.noalias() = d.transpose() * pcur;
    s_.noalias() = dtp_ * d;
    s_ += r;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s_ + s_.transpose()),
                                                      Eigen::EigenvaluesOnly);
    const double mineig = es.eigenvalues().minCoeff();
    if (mineig < delta_pd_) {
      std::ostringstream os;
      os << label_ << " Riccati blow-up: R + D'PD has min eigenvalue " << mineig << " < "
         << delta_pd_ << " at node " << node << " (t = " << t << ")";
      throw RiccatiBlowupError(os.str(), node);
    }
    l_.noalias() = b.transpose() * pcur;
    l_.noalias() += dtp_ * c;
    llt_.compute(s_);
    if (llt_.info() != Eigen::Success) {
      std::ostringstream os;
      os << label_ << " Riccati blow-up: R + D'PD not positive definite at node " << node;
      throw RiccatiBlowupError(os.str(), node);
    }
    out = llt_.solve(l_);
  }

 private:
  static void symmetrize(Eigen::MatrixXd& mat) {
    const Eigen::Index n = mat.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double v = 0.5 * (mat(i, j) + mat(j, i));
        mat(i, j) = v;
        mat(j, i) = v;
      }
    }
  }

  void rhs(double t, const Eigen::MatrixXd& pcur, Eigen::MatrixXd& out, int node) {
    const Eigen::MatrixXd& a = a_->eval_ref(grid_, t, bufA_);
    const Eigen::MatrixXd& b = b_->eval_ref(grid_, t, bufB_);
    const Eigen::MatrixXd& c = c_->eval_ref(grid_, t, bufC_);
    const Eigen::MatrixXd& d = d_->eval_ref(grid_, t, bufD_);
    const Eigen::MatrixXd& q = q_->eval_ref(grid_, t, bufQ_);
    const Eigen::MatrixXd& r = r_->eval_ref(grid_, t, bufR_);

    dtp_.noalias() = d.transpose() * pcur;
    s_.noalias() = dtp_ * d;
    s_ += r;
    l_.noalias() = b.transpose() * pcur;
    l_.noalias() += dtp_ * c;
    llt_.compute(s_);
    if (llt_.info() != Eigen::Success) {
      std::ostringstream os;
      os << label_ << " Riccati blow-up: R + D'PD not positive definite near node " << node;
      throw RiccatiBlowupError(os.str(), node);
    }
    x_ = llt_.solve(l_);

    pa_.noalias() = pcur * a;
    pc_.noalias() = pcur * c;
    ctpc_.noalias() = c.transpose() * pc_;
    // dP/dt = −(PA + AᵀP + CᵀPC + Q − LᵀX)
    out.noalias() = l_.transpose() * x_;
    out -= pa_;
    out -= pa_.transpose();
    out -= ctpc_;
    out -= q;
  }

  TimeGrid grid_;
  const CoeffTable *a_, *b_, *c_, *d_, *q_, *r_;
  int n_, m_;
  double delta_pd_;
  std::string label_;
  Eigen::MatrixXd bufA_, bufB_, bufC_, bufD_, bufQ_, bufR_;
  Eigen::MatrixXd dtp_, s_, l_, x_, pa_, pc_, ctpc_;
  Eigen::MatrixXd k1_, k2_, k3_, k4_, stage_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

}  // namespace detail

/// Backward RK4 solve of the stage-2 Riccati equation on [0, T] from P(T) = G.
/// Throws RiccatiBlowupError if R + DᵀPD drops below delta_pd.
inline RiccatiSolution solve_stage2(const ProblemSpec& spec, int n_steps,
                                    double delta_pd = 1e-10) {
  if (n_steps < 2) throw std::invalid_argument("solve_stage2: need at least 2 steps");
  RiccatiSolution sol;
  sol.grid = TimeGrid(spec.horizon.t0, spec.horizon.t1, n_steps);
  detail::RiccatiSweep sweep(spec.horizon, spec.A, spec.B, spec.C, spec.D, spec.Q, spec.R,
                             spec.n(), spec.m, delta_pd, "stage-2");
  sweep.run(spec.horizon.t0, spec.horizon.t1, n_steps, spec.G, sol.p, sol.gain, sol.pdot);
  return sol;
}

/// Backward RK4 solve of the stage-1 Riccati equation on [0, r] from the
/// stitched terminal K(r)ᵀ·P(r)·K(r) + G1(r). The step count scales with
/// r/T (⌈n_steps·r/T⌉, floored at 2) so stage-1 resolution matches stage 2.
inline Stage1Solution solve_stage1(const ProblemSpec& spec, double r,
                                   const Eigen::MatrixXd& p_at_r, int n_steps,
                                   double delta_pd = 1e-10) {
  if (spec.horizon.t0 != 0.0)
    throw std::invalid_argument("solve_stage1: the horizon must start at t = 0");
  const double t_end = spec.horizon.t1;
  const double slack = 1e-9 * std::max(1.0, t_end);
  if (r < -slack || r > t_end + slack)
    throw std::domain_error("solve_stage1: switch time outside [0, T]");
  if (r < 0) r = 0;
  if (r > t_end) r = t_end;
  if (p_at_r.rows() != spec.n() || p_at_r.cols() != spec.n())
    throw std::invalid_argument("solve_stage1: P(r) has the wrong shape");
  if (!detail::symmetric_within(p_at_r, 1e-8))
    throw std::invalid_argument("solve_stage1: P(r) is not symmetric");
  const double p_scale = std::max(1.0, detail::eig_scale(0.5 * (p_at_r + p_at_r.transpose())));
  if (detail::min_eigenvalue(0.5 * (p_at_r + p_at_r.transpose())) < -1e-6 * p_scale)
    throw std::invalid_argument("solve_stage1: P(r) is not positive semidefinite");

  Stage1Solution sol;
  sol.r = r;
  const Eigen::MatrixXd terminal = stitched_terminal(spec, r, p_at_r);
  detail::RiccatiSweep sweep(spec.horizon, spec.A1, spec.B1, spec.C1, spec.D1, spec.Q1, spec.R1,
                             spec.n1, spec.m, delta_pd, "stage-1");
  if (r <= 0.0) {
    sol.p.assign(1, terminal);
    sol.gain.assign(1, Eigen::MatrixXd());
    sol.pdot.assign(1, Eigen::MatrixXd::Zero(spec.n1, spec.n1));
    sweep.gain_at_node(0.0, sol.p[0], sol.gain[0], 0);
    return sol;
  }
  const int steps =
      std::max(2, static_cast<int>(std::ceil(n_steps * r / (t_end - spec.horizon.t0) - 1e-9)));
  sweep.run(0.0, r, steps, terminal, sol.p, sol.gain, sol.pdot);
  // Terminal node must be the stitched matrix bit-for-bit.
  sol.p[static_cast<std::size_t>(steps)] = terminal;
  return sol;
}

/// Optimal cost ½⟨P1(0)·x1, x1⟩ of the two-stage problem started at x1.
inline double value_at_zero(const Stage1Solution& stage1, const Eigen::VectorXd& x1) {
  if (stage1.p.empty()) throw std::invalid_argument("value_at_zero: empty solution");
  if (x1.size() != stage1.p[0].rows())
    throw std::invalid_argument("value_at_zero: x1 dimension mismatch");
  return 0.5 * x1.dot(stage1.p[0] * x1);
}

}  // namespace mlq
