#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

#include "mlq/closed_forms.hpp"
#include "mlq/detail/parallel.hpp"
#include "mlq/riccati.hpp"

namespace mlq {

/// Sampled map r ↦ φ(r) = ⟨P1ʳ(0)·x1, x1⟩. φ carries no ½ factor (the
/// optimal cost is φ/2); the location of the minimum is unaffected.
struct ValueCurve {
  std::vector<double> r_nodes;
  std::vector<double> phi;
};

enum class OptimumLocation { Interior, LeftBoundary, RightBoundary };

inline const char* to_string(OptimumLocation loc) {
  switch (loc) {
    case OptimumLocation::Interior: return "Interior";
    case OptimumLocation::LeftBoundary: return "LeftBoundary";
    case OptimumLocation::RightBoundary: return "RightBoundary";
  }
  return "?";
}

/// Result of the switch-time search. For scalar problems sensitivity_at_opt
/// is the derivative of r ↦ P1ʳ(0) itself; otherwise it is a finite
/// difference of φ (which scales with |x1|²).
struct OptimalTimeResult {
  double r_bar = 0;
  double phi_min = 0;
  OptimumLocation classification = OptimumLocation::Interior;
  double sensitivity_at_opt = 0;
  ValueCurve curve;
};

namespace detail {

inline double phi_value(const ProblemSpec& spec, const RiccatiSolution& stage2,
                        const Eigen::VectorXd& x1, double r, int n_steps, double delta_pd) {
  const Stage1Solution s1 = solve_stage1(spec, r, stage2.p_at(r), n_steps, delta_pd);
  return x1.dot(s1.p[0] * x1);
}

struct Probe {
  double r = 0;
  double phi = 0;
};

/// Golden-section refinement of min f on [a, b]; returns the best point ever
/// probed (seeded with `best` so the result can never exceed it).
template <typename Fn>
Probe golden_section(Fn&& f, double a, double b, double tol, Probe best) {
  constexpr double invphi = 0.6180339887498949;
  double x1 = b - invphi * (b - a);
  double x2 = a + invphi * (b - a);
  double f1 = f(x1);
  double f2 = f(x2);
  auto consider = [&best](double r, double phi) {
    if (phi < best.phi || (phi == best.phi && r < best.r)) best = {r, phi};
  };
  consider(x1, f1);
  consider(x2, f2);
  while (b - a > tol) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - invphi * (b - a);
      f1 = f(x1);
      consider(x1, f1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + invphi * (b - a);
      f2 = f(x2);
      consider(x2, f2);
    }
  }
  return best;
}

/// Switch-time sensitivity for the scalar constant-coefficient problem,
/// without the interior-domain restriction (boundary values are the
/// one-sided derivatives, with the same formula).
inline double scalar_sensitivity(const Scalar1DParams& prm, double r,
                                 const RiccatiSolution& stage2, int n_steps) {
  const Eigen::MatrixXd p_r = stage2.p_at(r);
  const double p2r = p_r(p_r.rows() - 1, p_r.cols() - 1);
  const double k2 = prm.k * prm.k;
  const double bracket =
      riccati_drift(1, k2 * p2r + prm.g1, prm) - k2 * riccati_drift(2, p2r, prm);
  if (r <= 0.0) return bracket;
  const int steps =
      std::max(2, static_cast<int>(std::ceil(n_steps * r / prm.horizon - 1e-9)));
  const std::vector<double> p1 =
      scalar_riccati_backward(1, prm, k2 * p2r + prm.g1, 0.0, r, steps);
  // Trapezoid of F1'(P1(s)) over [0, r] on the stage-1 grid.
  const double h = r / steps;
  double integral = 0.5 * (riccati_drift_derivative(1, p1.front(), prm) +
                           riccati_drift_derivative(1, p1.back(), prm));
  for (int k = 1; k < steps; ++k)
    integral += riccati_drift_derivative(1, p1[static_cast<std::size_t>(k)], prm);
  integral *= h;
  return std::exp(integral) * bracket;
}

}  // namespace detail

/// Evaluate φ(r) = ⟨P1ʳ(0)·x1, x1⟩ on the given switch times, reusing one
/// stage-2 solve. Riccati blow-ups are rethrown tagged with the offending r.
inline ValueCurve value_curve(const ProblemSpec& spec, const Eigen::VectorXd& x1,
                              const std::vector<double>& r_nodes, int n_steps = 2000,
                              const RiccatiSolution* stage2 = nullptr, int n_workers = 1,
                              double delta_pd = 1e-10) {
  if (x1.size() != spec.n1) throw std::invalid_argument("value_curve: x1 dimension mismatch");
  for (std::size_t i = 1; i < r_nodes.size(); ++i)
    if (!(r_nodes[i] > r_nodes[i - 1]))
      throw std::invalid_argument("value_curve: switch times must be strictly increasing");
  RiccatiSolution local;
  if (!stage2) {
    local = solve_stage2(spec, n_steps, delta_pd);
    stage2 = &local;
  }
  ValueCurve curve;
  curve.r_nodes = r_nodes;
  curve.phi.assign(r_nodes.size(), 0.0);
  detail::parallel_run(
      static_cast<std::int64_t>(r_nodes.size()), n_workers, [&]() {
        return [&](std::int64_t i) {
          const double r = r_nodes[static_cast<std::size_t>(i)];
          try {
            curve.phi[static_cast<std::size_t>(i)] =
                detail::phi_value(spec, *stage2, x1, r, n_steps, delta_pd);
          } catch (const RiccatiBlowupError& e) {
            std::ostringstream os;
            os << e.what() << " (while evaluating the value curve at r = " << r << ")";
            throw RiccatiBlowupError(os.str(), e.node());
          }
        };
      });
  return curve;
}

/// Minimize φ over [0, T]: coarse grid, best bracket (ties to the smallest
/// r), then golden-section refinement to width tol_r (default 1e-6·T).
/// φ need not be unimodal; the returned value never exceeds the best coarse
/// node.
inline OptimalTimeResult find_optimal_time(const ProblemSpec& spec, const Eigen::VectorXd& x1,
                                           int n_steps = 2000, int coarse_points = 65,
                                           std::optional<double> tol_r = std::nullopt,
                                           int n_workers = 1, double delta_pd = 1e-10) {
  if (x1.size() != spec.n1)
    throw std::invalid_argument("find_optimal_time: x1 dimension mismatch");
  if (x1.isZero(0.0)) throw std::invalid_argument("find_optimal_time: x1 must be nonzero");
  if (coarse_points < 3) throw std::invalid_argument("find_optimal_time: need >= 3 coarse points");
  const double t_end = spec.horizon.t1;
  const double tol = tol_r.value_or(1e-6 * t_end);

  const RiccatiSolution stage2 = solve_stage2(spec, n_steps, delta_pd);
  std::vector<double> r_nodes(static_cast<std::size_t>(coarse_points));
  for (int i = 0; i < coarse_points; ++i)
    r_nodes[static_cast<std::size_t>(i)] = t_end * i / (coarse_points - 1);
  ValueCurve curve = value_curve(spec, x1, r_nodes, n_steps, &stage2, n_workers, delta_pd);

  std::size_t best = 0;
  for (std::size_t i = 1; i < curve.phi.size(); ++i)
    if (curve.phi[i] < curve.phi[best]) best = i;  // strict: ties keep the smaller r

  const std::size_t lo_i = best == 0 ? 0 : best - 1;
  const std::size_t hi_i = std::min(best + 1, curve.r_nodes.size() - 1);
  auto phi_of = [&](double r) {
    return detail::phi_value(spec, stage2, x1, r, n_steps, delta_pd);
  };
  detail::Probe refined = detail::golden_section(phi_of, curve.r_nodes[lo_i],
                                                 curve.r_nodes[hi_i], tol,
                                                 {curve.r_nodes[best], curve.phi[best]});

  OptimalTimeResult result;
  result.r_bar = refined.r;
  result.phi_min = refined.phi;
  result.curve = std::move(curve);
  if (refined.r < tol)
    result.classification = OptimumLocation::LeftBoundary;
  else if (refined.r > t_end - tol)
    result.classification = OptimumLocation::RightBoundary;
  else
    result.classification = OptimumLocation::Interior;

  if (const auto scalar = as_scalar_params(spec)) {
    result.sensitivity_at_opt = detail::scalar_sensitivity(*scalar, refined.r, stage2, n_steps);
  } else {
    // Finite-difference proxy; one-sided at the boundaries.
    const double h = 1e-4 * t_end;
    if (refined.r - h < 0)
      result.sensitivity_at_opt = (phi_of(refined.r + h) - phi_of(refined.r)) / h;
    else if (refined.r + h > t_end)
      result.sensitivity_at_opt = (phi_of(refined.r) - phi_of(refined.r - h)) / h;
    else
      result.sensitivity_at_opt = (phi_of(refined.r + h) - phi_of(refined.r - h)) / (2 * h);
  }
  return result;
}

/// Switch-time sensitivity Πʳ(0) = e^{∫₀ʳ F1'(P1ʳ(s)) ds}·
/// [F1(k²P2(r) + G1) − k²F2(P2(r))] for the scalar constant-coefficient
/// problem; `stage2` is the solved block system this derivative refers to.
/// Boundary values r ∈ {0, T} are a domain error here (the one-sided
/// derivative is handled by find_optimal_time).
inline double sensitivity_scalar(const Scalar1DParams& prm, double r,
                                 const RiccatiSolution& stage2, int n_steps = 2000) {
  if (!(r > 0.0 && r < prm.horizon))
    throw std::domain_error("sensitivity_scalar: r must lie strictly inside (0, T)");
  return detail::scalar_sensitivity(prm, r, stage2, n_steps);
}

/// Finite-difference derivative of φ(r) = ⟨P1ʳ(0)·x1, x1⟩: central with step
/// h (default 1e-4·T), one-sided at the boundaries.
inline double sensitivity_fd(const ProblemSpec& spec, const Eigen::VectorXd& x1, double r,
                             std::optional<double> h_opt = std::nullopt, int n_steps = 2000,
                             const RiccatiSolution* stage2 = nullptr, double delta_pd = 1e-10) {
  const double t_end = spec.horizon.t1;
  if (r < 0 || r > t_end) throw std::domain_error("sensitivity_fd: r outside [0, T]");
  const double h = h_opt.value_or(1e-4 * t_end);
  RiccatiSolution local;
  if (!stage2) {
    local = solve_stage2(spec, n_steps, delta_pd);
    stage2 = &local;
  }
  auto phi = [&](double rr) {
    return detail::phi_value(spec, *stage2, x1, rr, n_steps, delta_pd);
  };
  if (r - h < 0) return (phi(r + h) - phi(r)) / h;
  if (r + h > t_end) return (phi(r) - phi(r - h)) / h;
  return (phi(r + h) - phi(r - h)) / (2 * h);
}

}  // namespace mlq
