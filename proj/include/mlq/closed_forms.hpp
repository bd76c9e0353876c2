#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mlq/errors.hpp"
#include "mlq/problem.hpp"

namespace mlq {

/// Constant-coefficient problem with both stages one-dimensional. The state
/// hands off as X2(r) = k·X1(r−0); requires r1, r2 > 0, the quadratic
/// weights nonnegative and k ≠ 0.
struct Scalar1DParams {
  double a1 = 0, b1 = 0, c1 = 0, d1 = 0, q1 = 0, r1 = 1, g1 = 0;
  double a2 = 0, b2 = 0, c2 = 0, d2 = 0, q2 = 0, r2 = 1, g2 = 0;
  double k = 1;
  double horizon = 1;

  friend bool operator==(const Scalar1DParams&, const Scalar1DParams&) = default;
};

/// Drift F_i of the scalar Riccati equation dP/dt + F_i(P) = 0 for stage i:
///   F_i(P) = (2A_i + C_i²)P + Q_i − (B_i + C_iD_i)²P² / (R_i + D_i²P).
inline double riccati_drift(int stage, double p, const Scalar1DParams& prm) {
  if (stage != 1 && stage != 2) throw std::invalid_argument("riccati_drift: stage must be 1 or 2");
  const double a = stage == 1 ? prm.a1 : prm.a2;
  const double b = stage == 1 ? prm.b1 : prm.b2;
  const double c = stage == 1 ? prm.c1 : prm.c2;
  const double d = stage == 1 ? prm.d1 : prm.d2;
  const double q = stage == 1 ? prm.q1 : prm.q2;
  const double r = stage == 1 ? prm.r1 : prm.r2;
  const double denom = r + d * d * p;
  if (denom <= 0) throw std::domain_error("riccati_drift: R + D^2 P is not positive");
  const double bcd = b + c * d;
  return (2 * a + c * c) * p + q - bcd * bcd * p * p / denom;
}

/// dF_i/dP, used to propagate the switch-time sensitivity.
inline double riccati_drift_derivative(int stage, double p, const Scalar1DParams& prm) {
  if (stage != 1 && stage != 2)
    throw std::invalid_argument("riccati_drift_derivative: stage must be 1 or 2");
  const double a = stage == 1 ? prm.a1 : prm.a2;
  const double b = stage == 1 ? prm.b1 : prm.b2;
  const double c = stage == 1 ? prm.c1 : prm.c2;
  const double d = stage == 1 ? prm.d1 : prm.d2;
  const double r = stage == 1 ? prm.r1 : prm.r2;
  const double denom = r + d * d * p;
  if (denom <= 0) throw std::domain_error("riccati_drift_derivative: R + D^2 P is not positive");
  const double bcd = b + c * d;
  return (2 * a + c * c) - bcd * bcd * p * (2 * r + d * d * p) / (denom * denom);
}

namespace detail {

// Backward RK4 for dp/dt = -F_stage(p) from (t_hi, terminal) to t_lo; plain
// doubles, node-indexed result on the uniform grid of [t_lo, t_hi].
inline std::vector<double> scalar_riccati_backward(int stage, const Scalar1DParams& prm,
                                                   double terminal, double t_lo, double t_hi,
                                                   int steps) {
  std::vector<double> p(static_cast<std::size_t>(steps) + 1);
  const double h = (t_hi - t_lo) / steps;
  p[static_cast<std::size_t>(steps)] = terminal;
  for (int k = steps; k >= 1; --k) {
    const double pk = p[static_cast<std::size_t>(k)];
    const double k1 = -riccati_drift(stage, pk, prm);
    const double k2 = -riccati_drift(stage, pk - 0.5 * h * k1, prm);
    const double k3 = -riccati_drift(stage, pk - 0.5 * h * k2, prm);
    const double k4 = -riccati_drift(stage, pk - h * k3, prm);
    p[static_cast<std::size_t>(k) - 1] = pk - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return p;
}

}  // namespace detail

/// True when the explicit stage-2 solution formula applies (d2 = 0, r2 = 1,
/// b2 ≠ 0).
inline bool stage2_closed_form_applies(const Scalar1DParams& prm) {
  return prm.d2 == 0.0 && prm.r2 == 1.0 && prm.b2 != 0.0;
}

/// Equilibrium pair (λ₊, λ₋) of the stage-2 Riccati flow, i.e. the roots of
/// B2²P² − (2A2 + C2²)P − Q2. Requires b2 ≠ 0.
inline std::pair<double, double> stage2_equilibria(const Scalar1DParams& prm) {
  if (prm.b2 == 0.0) throw std::domain_error("stage2_equilibria: b2 must be nonzero");
  const double alpha = 2 * prm.a2 + prm.c2 * prm.c2;
  const double disc = std::sqrt(alpha * alpha + 4 * prm.b2 * prm.b2 * prm.q2);
  const double denom = 2 * prm.b2 * prm.b2;
  return {(alpha + disc) / denom, (alpha - disc) / denom};
}

/// Explicit stage-2 solution
///   P2(t) = [λ₊(G2−λ₋)e^{B2²(λ₊−λ₋)(T−t)} − λ₋(G2−λ₊)]
///         / [(G2−λ₋)e^{B2²(λ₊−λ₋)(T−t)} − (G2−λ₊)].
/// Throws DegenerateTerminalError when G2 equals an equilibrium (the solution
/// is then the constant G2, a case reported rather than silently returned).
inline double stage2_closed_form(double t, const Scalar1DParams& prm) {
  if (!stage2_closed_form_applies(prm))
    throw std::domain_error("stage2_closed_form: requires d2 = 0, r2 = 1, b2 != 0");
  const double T = prm.horizon;
  if (t < -1e-12 * std::max(1.0, T) || t > T * (1 + 1e-12) + 1e-12)
    throw std::domain_error("stage2_closed_form: t outside [0, T]");
  const auto [lp, lm] = stage2_equilibria(prm);
  const double scale = std::max({1.0, std::abs(prm.g2), std::abs(lp), std::abs(lm)});
  if (std::abs(prm.g2 - lp) <= 1e-12 * scale || std::abs(prm.g2 - lm) <= 1e-12 * scale)
    throw DegenerateTerminalError(
        "stage2_closed_form: terminal weight equals a Riccati equilibrium; P2 is the constant G2");
  const double expo = prm.b2 * prm.b2 * (lp - lm) * (T - t);
  if (expo > 700.0) return lp;  // asymptote; the generic expression would overflow
  const double e = std::exp(expo);
  const double num = lp * (prm.g2 - lm) * e - lm * (prm.g2 - lp);
  const double den = (prm.g2 - lm) * e - (prm.g2 - lp);
  return num / den;
}

/// Ordering of P2(0) against G2 read off the equilibria: +1 when
/// G2 ∈ (λ₋, λ₊) so P2(0) > G2, −1 when G2 lies outside [λ₋, λ₊].
inline int stage2_initial_vs_terminal(const Scalar1DParams& prm) {
  const auto [lp, lm] = stage2_equilibria(prm);
  const double scale = std::max({1.0, std::abs(prm.g2), std::abs(lp), std::abs(lm)});
  if (std::abs(prm.g2 - lp) <= 1e-12 * scale || std::abs(prm.g2 - lm) <= 1e-12 * scale)
    throw DegenerateTerminalError("stage2_initial_vs_terminal: terminal weight equals an equilibrium");
  return (prm.g2 > lm && prm.g2 < lp) ? +1 : -1;
}

/// Cubic polynomial Θ with F1(P) − F2(P) = Θ(P)/(R1 + D1²P) in the reduced
/// case d2 = g1 = 0, r2 = k = 1, plus its unique positive root when that
/// exists (d1 = 0, r1 = 1, b2² < b1²).
struct DriftGapAnalysis {
  std::array<double, 4> coeffs{};  // ascending powers
  std::optional<double> positive_root;
  std::string root_note;

  double eval(double p) const {
    return coeffs[0] + p * (coeffs[1] + p * (coeffs[2] + p * coeffs[3]));
  }
};

inline DriftGapAnalysis drift_gap(const Scalar1DParams& prm) {
  if (!(prm.d2 == 0.0 && prm.g1 == 0.0 && prm.r2 == 1.0 && prm.k == 1.0 && prm.b2 != 0.0))
    throw std::domain_error("drift_gap: requires d2 = g1 = 0, r2 = k = 1, b2 != 0");
  DriftGapAnalysis out;
  const double dgrowth = 2 * (prm.a1 - prm.a2) + prm.c1 * prm.c1 - prm.c2 * prm.c2;
  const double bcd = prm.b1 + prm.c1 * prm.d1;
  const double d1sq = prm.d1 * prm.d1;
  const double b2sq = prm.b2 * prm.b2;
  out.coeffs[3] = d1sq * b2sq;
  out.coeffs[2] = dgrowth * d1sq + prm.r1 * b2sq - bcd * bcd;
  out.coeffs[1] = dgrowth * prm.r1 + (prm.q1 - prm.q2) * d1sq;
  out.coeffs[0] = (prm.q1 - prm.q2) * prm.r1;

  if (prm.d1 != 0.0) {
    out.root_note = "positive root formula requires d1 = 0";
  } else if (prm.r1 != 1.0) {
    out.root_note = "positive root formula requires r1 = 1";
  } else if (!(prm.b2 * prm.b2 < prm.b1 * prm.b1)) {
    out.root_note = "positive root formula requires b2^2 < b1^2";
  } else {
    const double growth1 = 2 * prm.a1 + prm.c1 * prm.c1;
    const double growth2 = 2 * prm.a2 + prm.c2 * prm.c2;
    const double diff = growth1 - growth2;
    const double spread = prm.b1 * prm.b1 - prm.b2 * prm.b2;
    out.positive_root =
        (diff + std::sqrt(diff * diff + 4 * spread * prm.q1)) / (2 * spread);
  }
  return out;
}

/// Planar double-integrator first stage handed off to a scalar first-order
/// system (rate a, terminal weight g) at the switch; the first stage weighs
/// the position at the switch by g1. Everything about this configuration has
/// an explicit solution, which makes it the main oracle for the solvers.
struct DoubleIntegratorParams {
  double a = 0;
  double g = 1;
  double g1 = 1;
  double horizon = 1;

  friend bool operator==(const DoubleIntegratorParams&, const DoubleIntegratorParams&) = default;
};

/// Stage-2 solution: g/(1 + g(T−t)) when a = 0, else
/// 2a·g·e^{2a(T−t)} / (g(e^{2a(T−t)} − 1) + 2a); strictly positive on [0, T].
inline double double_integrator_stage2(double t, const DoubleIntegratorParams& prm) {
  const double T = prm.horizon;
  if (t < -1e-12 * std::max(1.0, T) || t > T * (1 + 1e-12) + 1e-12)
    throw std::domain_error("double_integrator_stage2: t outside [0, T]");
  const double s = T - t;
  if (prm.a == 0.0) return prm.g / (1.0 + prm.g * s);
  const double e = std::exp(2 * prm.a * s);
  return 2 * prm.a * prm.g * e / (prm.g * (e - 1.0) + 2 * prm.a);
}

/// Hamiltonian-style block matrix of the stage-1 flow for a given stitched
/// terminal weight gbar; nilpotent of order 4.
inline Eigen::Matrix4d double_integrator_hamiltonian(double gbar) {
  Eigen::Matrix4d h = Eigen::Matrix4d::Zero();
  h(0, 1) = 1.0;
  h(1, 3) = -1.0;
  h(2, 1) = -gbar;
  h(3, 0) = -gbar;
  h(3, 2) = -1.0;
  return h;
}

/// Stage-1 solution via the truncated (exact) exponential series of the
/// nilpotent Hamiltonian block matrix and the 2×2 block inverse.
inline Eigen::Matrix2d double_integrator_stage1_expm(double t, double r,
                                                     const DoubleIntegratorParams& prm) {
  if (t < -1e-12 || t > r + 1e-12 || r > prm.horizon * (1 + 1e-12) + 1e-12)
    throw std::domain_error("double_integrator_stage1_expm: need 0 <= t <= r <= T");
  const double s = r - t;
  const double gbar = prm.g1 + double_integrator_stage2(r, prm);
  const Eigen::Matrix4d h = double_integrator_hamiltonian(gbar);
  const Eigen::Matrix4d h2 = h * h;
  const Eigen::Matrix4d h3 = h2 * h;
  const Eigen::Matrix4d e = Eigen::Matrix4d::Identity() + s * h + (s * s / 2.0) * h2 +
                            (s * s * s / 6.0) * h3;
  const Eigen::Matrix2d phi22 = e.block<2, 2>(2, 2);
  const Eigen::Matrix2d phi21 = e.block<2, 2>(2, 0);
  Eigen::Matrix2d p1 = -(phi22.inverse() * phi21);
  p1(0, 0) += gbar;
  p1 = 0.5 * (p1 + p1.transpose()).eval();
  return p1;
}

/// Stage-1 solution in final form,
///   P1(t) = 3·gbar/(3 + gbar·(r−t)³) · [[1, r−t], [r−t, (r−t)²]],
/// cross-checked against the exponential-series route to 1e-12 on every call.
inline Eigen::Matrix2d double_integrator_stage1(double t, double r,
                                                const DoubleIntegratorParams& prm) {
  if (t < -1e-12 || t > r + 1e-12 || r > prm.horizon * (1 + 1e-12) + 1e-12)
    throw std::domain_error("double_integrator_stage1: need 0 <= t <= r <= T");
  const double s = r - t;
  const double gbar = prm.g1 + double_integrator_stage2(r, prm);
  const double factor = 3.0 * gbar / (3.0 + gbar * s * s * s);
  Eigen::Matrix2d p1;
  p1 << 1.0, s, s, s * s;
  p1 *= factor;

  const Eigen::Matrix2d via_expm = double_integrator_stage1_expm(t, r, prm);
  const double tol = 1e-12 * std::max(1.0, p1.cwiseAbs().maxCoeff());
  if ((p1 - via_expm).cwiseAbs().maxCoeff() > tol)
    throw std::logic_error("double_integrator_stage1: the two evaluation routes disagree");
  return p1;
}

/// Start-time value ⟨P1ʳ(0)·x1, x1⟩ as a function of the switch time r.
/// Note this carries no ½ factor; the optimal cost is half of it (see
/// value_at_zero), which does not affect the location of the minimum.
inline double double_integrator_value(double r, const Eigen::Vector2d& x1,
                                      const DoubleIntegratorParams& prm) {
  if (r < -1e-12 || r > prm.horizon * (1 + 1e-12) + 1e-12)
    throw std::domain_error("double_integrator_value: r outside [0, T]");
  const double gbar = prm.g1 + double_integrator_stage2(r, prm);
  const double lever = x1(0) + r * x1(1);
  return 3.0 * gbar / (3.0 + gbar * r * r * r) * lever * lever;
}

/// Assemble the double-integrator configuration as a full block ProblemSpec.
inline ProblemSpec make_spec(const DoubleIntegratorParams& prm, int n_steps) {
  Stage1Blocks s1;
  Eigen::Matrix2d a1;
  a1 << 0, 1, 0, 0;
  s1.A1 = CoeffTable::constant(a1);
  s1.B1 = CoeffTable::constant(Eigen::MatrixXd{{0.0}, {1.0}});
  s1.C1 = CoeffTable::zero(2, 2);
  s1.D1 = CoeffTable::zero(2, 1);
  s1.Q1 = CoeffTable::zero(2, 2);
  s1.R1 = CoeffTable::constant(1.0);
  Eigen::Matrix2d g1w = Eigen::Matrix2d::Zero();
  g1w(0, 0) = prm.g1;
  s1.G1 = CoeffTable::constant(g1w);

  Stage2Blocks s2;
  s2.A2 = CoeffTable::constant(prm.a);
  s2.B2 = CoeffTable::constant(1.0);
  s2.C2 = CoeffTable::constant(0.0);
  s2.D2 = CoeffTable::constant(0.0);
  s2.Q2 = CoeffTable::constant(0.0);
  s2.R2 = CoeffTable::constant(1.0);
  s2.G2 = Eigen::MatrixXd::Constant(1, 1, prm.g);

  const CoeffTable k_lower = CoeffTable::constant(Eigen::MatrixXd{{1.0, 0.0}});
  return build_stopped_system(TimeGrid(0.0, prm.horizon, n_steps), 2, 1, 1, s1, s2, k_lower);
}

/// Assemble the scalar constant-coefficient configuration as a 2-state block
/// ProblemSpec with K = (1; k).
inline ProblemSpec make_spec(const Scalar1DParams& prm, int n_steps) {
  Stage1Blocks s1;
  s1.A1 = CoeffTable::constant(prm.a1);
  s1.B1 = CoeffTable::constant(prm.b1);
  s1.C1 = CoeffTable::constant(prm.c1);
  s1.D1 = CoeffTable::constant(prm.d1);
  s1.Q1 = CoeffTable::constant(prm.q1);
  s1.R1 = CoeffTable::constant(prm.r1);
  s1.G1 = CoeffTable::constant(prm.g1);

  Stage2Blocks s2;
  s2.A2 = CoeffTable::constant(prm.a2);
  s2.B2 = CoeffTable::constant(prm.b2);
  s2.C2 = CoeffTable::constant(prm.c2);
  s2.D2 = CoeffTable::constant(prm.d2);
  s2.Q2 = CoeffTable::constant(prm.q2);
  s2.R2 = CoeffTable::constant(prm.r2);
  s2.G2 = Eigen::MatrixXd::Constant(1, 1, prm.g2);

  const CoeffTable k_lower = CoeffTable::constant(prm.k);
  return build_stopped_system(TimeGrid(0.0, prm.horizon, n_steps), 1, 1, 1, s1, s2, k_lower);
}

/// Recognize a ProblemSpec assembled in the scalar constant-coefficient
/// shape (both stages 1-D, constant tables, stopped block structure, unit
/// upper coupling). Returns the flattened parameters when it matches.
inline std::optional<Scalar1DParams> as_scalar_params(const ProblemSpec& spec) {
  if (spec.n1 != 1 || spec.n2 != 1 || spec.m != 1) return std::nullopt;
  if (spec.horizon.t0 != 0.0) return std::nullopt;
  const CoeffTable* tables[] = {&spec.A1, &spec.B1, &spec.C1, &spec.D1, &spec.Q1, &spec.R1,
                                &spec.G1, &spec.A,  &spec.B,  &spec.C,  &spec.D,  &spec.Q,
                                &spec.R,  &spec.K};
  for (const CoeffTable* t : tables)
    if (t->empty() || !t->is_constant()) return std::nullopt;
  auto stopped = [](const Eigen::MatrixXd& mat) {
    return mat(0, 0) == 0.0 && mat(0, 1) == 0.0 && mat(1, 0) == 0.0;
  };
  auto stopped_col = [](const Eigen::MatrixXd& mat) { return mat(0, 0) == 0.0; };
  const Eigen::MatrixXd& a = spec.A.sample(0);
  const Eigen::MatrixXd& c = spec.C.sample(0);
  const Eigen::MatrixXd& q = spec.Q.sample(0);
  const Eigen::MatrixXd& b = spec.B.sample(0);
  const Eigen::MatrixXd& d = spec.D.sample(0);
  const Eigen::MatrixXd& k = spec.K.sample(0);
  if (!stopped(a) || !stopped(c) || !stopped(q) || !stopped_col(b) || !stopped_col(d))
    return std::nullopt;
  if (spec.G.rows() != 2 || !stopped(spec.G)) return std::nullopt;
  if (k(0, 0) != 1.0) return std::nullopt;

  Scalar1DParams prm;
  prm.a1 = spec.A1.sample(0)(0, 0);
  prm.b1 = spec.B1.sample(0)(0, 0);
  prm.c1 = spec.C1.sample(0)(0, 0);
  prm.d1 = spec.D1.sample(0)(0, 0);
  prm.q1 = spec.Q1.sample(0)(0, 0);
  prm.r1 = spec.R1.sample(0)(0, 0);
  prm.g1 = spec.G1.sample(0)(0, 0);
  prm.a2 = a(1, 1);
  prm.b2 = b(1, 0);
  prm.c2 = c(1, 1);
  prm.d2 = d(1, 0);
  prm.q2 = q(1, 1);
  prm.r2 = spec.R.sample(0)(0, 0);
  prm.g2 = spec.G(1, 1);
  prm.k = k(1, 0);
  prm.horizon = spec.horizon.t1;
  return prm;
}

/// Outcome of the interior-optimum certificate. The two brackets are
/// F1(k²P2(·) + G1) − k²F2(P2(·)) evaluated at the terminal weight and at
/// P2(0): a positive terminal bracket pushes the optimal switch time below T,
/// a negative initial bracket pushes it above 0.
struct SwitchCertificate {
  bool implies_r_less_T = false;
  bool implies_r_greater_0 = false;
  bool nontrivial = false;
  bool degenerate_terminal = false;

  double bracket_at_terminal = 0;
  double bracket_at_initial = 0;
  double p2_at_zero = 0;

  std::optional<double> gap_at_terminal;       // Θ(G2)
  std::optional<double> gap_at_initial;        // Θ(P2(0))
  std::optional<double> gap_positive_root;     // P₊
  std::optional<bool> growth_exceeds_terminal; // 2A2 + C2² > G2·B2² (q2 = 0 case)
  std::optional<bool> chain_holds;             // 0 < G2 < P₊ < P2(0)

  std::vector<std::string> marginal;  // strict comparisons inside the 1e-9 band
  std::string note;
};

/// Evaluate the sufficient conditions for the optimal switch time to be
/// strictly inside (0, T). Uses the closed-form P2 when applicable, a scalar
/// RK4 sweep otherwise; all conditions are reported, none is thrown.
inline SwitchCertificate nontrivial_certificate(const Scalar1DParams& prm, int n_steps = 2000) {
  SwitchCertificate cert;
  const double k2 = prm.k * prm.k;

  if (stage2_closed_form_applies(prm)) {
    try {
      cert.p2_at_zero = stage2_closed_form(0.0, prm);
    } catch (const DegenerateTerminalError&) {
      cert.degenerate_terminal = true;
      cert.p2_at_zero = prm.g2;
      cert.note =
          "terminal weight sits on a Riccati equilibrium: P2 is the constant G2 and the "
          "two brackets coincide, so the interior certificate cannot hold";
    }
  } else {
    cert.p2_at_zero =
        detail::scalar_riccati_backward(2, prm, prm.g2, 0.0, prm.horizon, n_steps).front();
  }

  cert.bracket_at_terminal =
      riccati_drift(1, k2 * prm.g2 + prm.g1, prm) - k2 * riccati_drift(2, prm.g2, prm);
  cert.bracket_at_initial = riccati_drift(1, k2 * cert.p2_at_zero + prm.g1, prm) -
                            k2 * riccati_drift(2, cert.p2_at_zero, prm);

  constexpr double kRelTol = 1e-9;
  auto scale_of = [&](double p2_value) {
    return 1.0 + std::abs(riccati_drift(1, k2 * p2_value + prm.g1, prm)) +
           std::abs(k2 * riccati_drift(2, p2_value, prm));
  };
  const double scale_term = scale_of(prm.g2);
  const double scale_init = scale_of(cert.p2_at_zero);
  if (std::abs(cert.bracket_at_terminal) <= kRelTol * scale_term)
    cert.marginal.push_back("bracket_at_terminal");
  if (std::abs(cert.bracket_at_initial) <= kRelTol * scale_init)
    cert.marginal.push_back("bracket_at_initial");
  cert.implies_r_less_T = cert.bracket_at_terminal > kRelTol * scale_term;
  cert.implies_r_greater_0 = cert.bracket_at_initial < -kRelTol * scale_init;
  cert.nontrivial = cert.implies_r_less_T && cert.implies_r_greater_0;

  if (prm.d2 == 0.0 && prm.g1 == 0.0 && prm.r2 == 1.0 && prm.k == 1.0 && prm.b2 != 0.0) {
    const DriftGapAnalysis gap = drift_gap(prm);
    cert.gap_at_terminal = gap.eval(prm.g2);
    cert.gap_at_initial = gap.eval(cert.p2_at_zero);
    cert.gap_positive_root = gap.positive_root;
    if (prm.q2 == 0.0) {
      const double growth2 = 2 * prm.a2 + prm.c2 * prm.c2;
      cert.growth_exceeds_terminal = growth2 > prm.g2 * prm.b2 * prm.b2;
    }
    if (gap.positive_root) {
      cert.chain_holds = (0.0 < prm.g2) && (prm.g2 < *gap.positive_root) &&
                         (*gap.positive_root < cert.p2_at_zero);
    }
  }
  return cert;
}

}  // namespace mlq
