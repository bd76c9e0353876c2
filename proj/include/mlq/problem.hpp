#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mlq/coeff_table.hpp"
#include "mlq/time_grid.hpp"

namespace mlq {

/// Full data of the two-stage controlled linear system and its quadratic cost.
///
/// Stage 1 drives the n1-dimensional state on [0, r); at the switch time r
/// the n-dimensional state starts from X(r) = K(r)·X1(r−0) and runs to the
/// horizon. G1 and K are tabulated in the switch-time variable on the same
/// grid as the time-dependent coefficients.
struct ProblemSpec {
  int n1 = 1, n2 = 1, m = 1;
  TimeGrid horizon;
  CoeffTable A1, B1, C1, D1;  // stage-1 dynamics: n1×n1, n1×m, n1×n1, n1×m
  CoeffTable A, B, C, D;      // stage-2 dynamics: n×n, n×m, n×n, n×m
  CoeffTable Q1, R1;          // stage-1 running weights: n1×n1, m×m
  CoeffTable Q, R;            // stage-2 running weights: n×n, m×m
  CoeffTable G1;              // switch-cost weight (function of the switch time), n1×n1
  Eigen::MatrixXd G;          // terminal weight, n×n
  CoeffTable K;               // switch coupling (function of the switch time), n×n1
  double delta = 1e-8;        // uniform positivity floor required of R1, R

  int n() const { return n1 + n2; }
};

struct Violation {
  std::string field;
  int node = -1;  // sample index; -1 marks a structural problem
  std::string description;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Violation> violations;
};

namespace detail {

inline double min_eigenvalue(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double eig_scale(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline bool symmetric_within(const Eigen::MatrixXd& mat, double tol) {
  if (mat.rows() != mat.cols()) return false;
  const double scale = std::max(1.0, mat.cwiseAbs().maxCoeff());
  return (mat - mat.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace detail

/// Checks every spec invariant at every sampled node and reports all
/// violations; never throws on bad data.
inline ValidationReport validate_spec(const ProblemSpec& spec) {
  ValidationReport report;
  auto flag = [&report](const std::string& field, int node, const std::string& what) {
    report.violations.push_back({field, node, what});
  };

  if (spec.n1 < 1) flag("n1", -1, "must be at least 1");
  if (spec.n2 < 1) flag("n2", -1, "must be at least 1");
  if (spec.m < 1) flag("m", -1, "must be at least 1");
  if (!(spec.delta > 0)) flag("delta", -1, "must be positive");
  if (spec.horizon.t0 != 0.0) flag("horizon", -1, "grid must start at t0 = 0");

  const int n = spec.n();
  const int nodes = spec.horizon.n_nodes();
  constexpr double kPsdTol = 1e-10;

  enum class Kind { Plain, SymPsd, SymDeltaFloor };

  auto check_table = [&](const CoeffTable& tbl, const std::string& name, Eigen::Index rows,
                         Eigen::Index cols, Kind kind) {
    if (tbl.empty()) {
      flag(name, -1, "table has no samples");
      return;
    }
    if (tbl.rows() != rows || tbl.cols() != cols) {
      std::ostringstream os;
      os << "expected " << rows << "x" << cols << ", got " << tbl.rows() << "x" << tbl.cols();
      flag(name, -1, os.str());
      return;
    }
    if (!tbl.is_constant() && static_cast<int>(tbl.sample_count()) != nodes) {
      std::ostringstream os;
      os << "sample count " << tbl.sample_count() << " is neither 1 nor " << nodes;
      flag(name, -1, os.str());
      return;
    }
    if (kind == Kind::Plain) return;
    for (std::size_t k = 0; k < tbl.sample_count(); ++k) {
      const Eigen::MatrixXd& s = tbl.sample(k);
      if (!detail::symmetric_within(s, 1e-10)) {
        flag(name, static_cast<int>(k), "not symmetric");
        continue;
      }
      const Eigen::MatrixXd sym = 0.5 * (s + s.transpose());
      const double mineig = detail::min_eigenvalue(sym);
      const double scale = std::max(1.0, detail::eig_scale(sym));
      if (kind == Kind::SymPsd) {
        if (mineig < -kPsdTol * scale)
          flag(name, static_cast<int>(k),
               "not positive semidefinite (min eigenvalue " + detail::fmt_double(mineig) + ")");
      } else {
        if (mineig < spec.delta - kPsdTol * scale)
          flag(name, static_cast<int>(k),
               "below the delta*I floor (min eigenvalue " + detail::fmt_double(mineig) +
                   " < delta = " + detail::fmt_double(spec.delta) + ")");
      }
    }
  };

  check_table(spec.A1, "A1", spec.n1, spec.n1, Kind::Plain);
  check_table(spec.B1, "B1", spec.n1, spec.m, Kind::Plain);
  check_table(spec.C1, "C1", spec.n1, spec.n1, Kind::Plain);
  check_table(spec.D1, "D1", spec.n1, spec.m, Kind::Plain);
  check_table(spec.A, "A", n, n, Kind::Plain);
  check_table(spec.B, "B", n, spec.m, Kind::Plain);
  check_table(spec.C, "C", n, n, Kind::Plain);
  check_table(spec.D, "D", n, spec.m, Kind::Plain);
  check_table(spec.Q1, "Q1", spec.n1, spec.n1, Kind::SymPsd);
  check_table(spec.R1, "R1", spec.m, spec.m, Kind::SymDeltaFloor);
  check_table(spec.Q, "Q", n, n, Kind::SymPsd);
  check_table(spec.R, "R", spec.m, spec.m, Kind::SymDeltaFloor);
  check_table(spec.G1, "G1", spec.n1, spec.n1, Kind::SymPsd);
  check_table(spec.K, "K", n, spec.n1, Kind::Plain);

  if (spec.G.rows() != n || spec.G.cols() != n) {
    std::ostringstream os;
    os << "expected " << n << "x" << n << ", got " << spec.G.rows() << "x" << spec.G.cols();
    flag("G", -1, os.str());
  } else if (!detail::symmetric_within(spec.G, 1e-10)) {
    flag("G", -1, "not symmetric");
  } else {
    const double mineig = detail::min_eigenvalue(0.5 * (spec.G + spec.G.transpose()));
    if (mineig < -kPsdTol * std::max(1.0, detail::eig_scale(spec.G)))
      flag("G", -1, "not positive semidefinite (min eigenvalue " + detail::fmt_double(mineig) + ")");
  }

  report.ok = report.violations.empty();
  return report;
}

/// K(r)ᵀ·P·K(r) + G1(r): terminal weight for the stage-1 problem given the
/// stage-2 solution value P at the switch time. Symmetrized once so both the
/// solver and any residual check see the identical matrix.
inline Eigen::MatrixXd stitched_terminal(const ProblemSpec& spec, double r,
                                         const Eigen::MatrixXd& p_at_r) {
  const Eigen::MatrixXd k = spec.K.at(spec.horizon, r);
  const Eigen::MatrixXd g1 = spec.G1.at(spec.horizon, r);
  Eigen::MatrixXd out = k.transpose() * p_at_r * k + g1;
  out = 0.5 * (out + out.transpose());
  return out;
}

struct Stage1Blocks {
  CoeffTable A1, B1, C1, D1, Q1, R1, G1;
};

struct Stage2Blocks {
  CoeffTable A2, B2, C2, D2, Q2, R2;
  Eigen::MatrixXd G2;
};

namespace detail {

inline CoeffTable map_table(const CoeffTable& src,
                            const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& fn) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(src.sample_count());
  for (std::size_t k = 0; k < src.sample_count(); ++k) out.push_back(fn(src.sample(k)));
  return CoeffTable::sampled(std::move(out));
}

inline Eigen::MatrixXd embed_lower_right(const Eigen::MatrixXd& block, int n1, int n2) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n1 + n2, n1 + n2);
  out.bottomRightCorner(n2, n2) = block;
  return out;
}

inline Eigen::MatrixXd embed_bottom(const Eigen::MatrixXd& block, int n1) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n1 + block.rows(), block.cols());
  out.bottomRows(block.rows()) = block;
  return out;
}

}  // namespace detail

/// Assemble the block system in which stage 1 is frozen after the switch:
/// A = diag(0, A2), B = (0; B2), C = diag(0, C2), D = (0; D2),
/// Q = diag(0, Q2), G = diag(0, G2) and K = (K_upper; K_lower), with K_upper
/// defaulting to the identity. Throws std::invalid_argument on any dimension
/// mismatch.
inline ProblemSpec build_stopped_system(const TimeGrid& horizon, int n1, int n2, int m,
                                        const Stage1Blocks& s1, const Stage2Blocks& s2,
                                        const CoeffTable& k_lower,
                                        const CoeffTable* k_upper = nullptr,
                                        double delta = 1e-8) {
  if (n1 < 1 || n2 < 1 || m < 1)
    throw std::invalid_argument("build_stopped_system: dimensions must be positive");
  auto expect = [](const CoeffTable& t, Eigen::Index r, Eigen::Index c, const char* name) {
    if (t.empty() || t.rows() != r || t.cols() != c)
      throw std::invalid_argument(std::string("build_stopped_system: bad shape for ") + name);
  };
  expect(s1.A1, n1, n1, "A1");
  expect(s1.B1, n1, m, "B1");
  expect(s1.C1, n1, n1, "C1");
  expect(s1.D1, n1, m, "D1");
  expect(s1.Q1, n1, n1, "Q1");
  expect(s1.R1, m, m, "R1");
  expect(s1.G1, n1, n1, "G1");
  expect(s2.A2, n2, n2, "A2");
  expect(s2.B2, n2, m, "B2");
  expect(s2.C2, n2, n2, "C2");
  expect(s2.D2, n2, m, "D2");
  expect(s2.Q2, n2, n2, "Q2");
  expect(s2.R2, m, m, "R2");
  expect(k_lower, n2, n1, "K_lower");
  if (s2.G2.rows() != n2 || s2.G2.cols() != n2)
    throw std::invalid_argument("build_stopped_system: bad shape for G2");
  if (k_upper) expect(*k_upper, n1, n1, "K_upper");

  ProblemSpec spec;
  spec.n1 = n1;
  spec.n2 = n2;
  spec.m = m;
  spec.horizon = horizon;
  spec.delta = delta;
  spec.A1 = s1.A1;
  spec.B1 = s1.B1;
  spec.C1 = s1.C1;
  spec.D1 = s1.D1;
  spec.Q1 = s1.Q1;
  spec.R1 = s1.R1;
  spec.G1 = s1.G1;

  auto lower_right = [n1, n2](const Eigen::MatrixXd& blk) {
    return detail::embed_lower_right(blk, n1, n2);
  };
  auto bottom = [n1](const Eigen::MatrixXd& blk) { return detail::embed_bottom(blk, n1); };
  spec.A = detail::map_table(s2.A2, lower_right);
  spec.C = detail::map_table(s2.C2, lower_right);
  spec.Q = detail::map_table(s2.Q2, lower_right);
  spec.B = detail::map_table(s2.B2, bottom);
  spec.D = detail::map_table(s2.D2, bottom);
  spec.R = s2.R2;
  spec.G = detail::embed_lower_right(s2.G2, n1, n2);

  // K = (K_upper; K_lower), sample by sample.
  const std::size_t count = std::max(k_lower.sample_count(),
                                     k_upper ? k_upper->sample_count() : std::size_t{1});
  std::vector<Eigen::MatrixXd> k_samples;
  k_samples.reserve(count);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n1, n1);
  for (std::size_t i = 0; i < count; ++i) {
    auto pick = [i](const CoeffTable& t) -> const Eigen::MatrixXd& {
      return t.is_constant() ? t.sample(0) : t.sample(i);
    };
    if (!k_lower.is_constant() && k_upper && !k_upper->is_constant() &&
        k_lower.sample_count() != k_upper->sample_count())
      throw std::invalid_argument("build_stopped_system: K_upper/K_lower sample counts differ");
    Eigen::MatrixXd k(n1 + n2, n1);
    k.topRows(n1) = k_upper ? pick(*k_upper) : eye;
    k.bottomRows(n2) = pick(k_lower);
    k_samples.push_back(std::move(k));
  }
  spec.K = CoeffTable::sampled(std::move(k_samples));
  return spec;
}

}  // namespace mlq
