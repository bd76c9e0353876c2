#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mlq/riccati.hpp"
#include "mlq/simulate.hpp"
#include "mlq/switch_time.hpp"

namespace mlq {

/// 17 significant digits: enough to reproduce any double exactly.
inline std::string format_float(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline void write_matrix_header(std::ostream& os, const char* prefix, Eigen::Index rows,
                                Eigen::Index cols) {
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) os << ',' << prefix << '_' << i << '_' << j;
}

inline void write_matrix_row(std::ostream& os, const Eigen::MatrixXd& mat) {
  for (Eigen::Index i = 0; i < mat.rows(); ++i)
    for (Eigen::Index j = 0; j < mat.cols(); ++j) os << ',' << format_float(mat(i, j));
}

}  // namespace detail

/// Columns: t, vec(P) row-major, vec(Ψ) row-major.
inline void write_stage2_csv(std::ostream& os, const RiccatiSolution& sol) {
  os << 't';
  detail::write_matrix_header(os, "p", sol.p.front().rows(), sol.p.front().cols());
  detail::write_matrix_header(os, "psi", sol.gain.front().rows(), sol.gain.front().cols());
  os << '\n';
  for (std::size_t k = 0; k < sol.p.size(); ++k) {
    os << format_float(sol.grid.node(static_cast<int>(k)));
    detail::write_matrix_row(os, sol.p[k]);
    detail::write_matrix_row(os, sol.gain[k]);
    os << '\n';
  }
}

inline void write_stage1_csv(std::ostream& os, const Stage1Solution& sol) {
  os << 't';
  detail::write_matrix_header(os, "p", sol.p.front().rows(), sol.p.front().cols());
  detail::write_matrix_header(os, "psi", sol.gain.front().rows(), sol.gain.front().cols());
  os << '\n';
  for (std::size_t k = 0; k < sol.p.size(); ++k) {
    os << format_float(sol.node_time(static_cast<int>(k)));
    detail::write_matrix_row(os, sol.p[k]);
    detail::write_matrix_row(os, sol.gain[k]);
    os << '\n';
  }
}

inline void write_value_curve_csv(std::ostream& os, const ValueCurve& curve) {
  os << "r,phi\n";
  for (std::size_t i = 0; i < curve.r_nodes.size(); ++i)
    os << format_float(curve.r_nodes[i]) << ',' << format_float(curve.phi[i]) << '\n';
}

/// Flat key=value document, one entry per line, insertion order preserved.
struct KeyValueDoc {
  std::vector<std::pair<std::string, std::string>> entries;

  void add(const std::string& key, const std::string& value) { entries.emplace_back(key, value); }
  void add(const std::string& key, double value) { add(key, format_float(value)); }
  void add(const std::string& key, bool value) { add(key, std::string(value ? "true" : "false")); }
  void add(const std::string& key, std::int64_t value) { add(key, std::to_string(value)); }
};

inline void write_key_value(std::ostream& os, const KeyValueDoc& doc) {
  for (const auto& [k, v] : doc.entries) os << k << '=' << v << '\n';
}

/// Per-path trace: t, full-state components, control components. Stage-1 rows
/// carry the stage-1 state in the leading components and "nan" in the rest.
inline void write_trace_csv(std::ostream& os, const PathTrace& trace, int n_state, int n_control) {
  os << 't';
  for (int i = 0; i < n_state; ++i) os << ",x_" << i;
  for (int i = 0; i < n_control; ++i) os << ",u_" << i;
  os << '\n';
  auto row = [&](double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    os << format_float(t);
    for (int i = 0; i < n_state; ++i)
      os << ',' << (i < x.size() ? format_float(x(i)) : std::string("nan"));
    for (int i = 0; i < n_control; ++i)
      os << ',' << (i < u.size() ? format_float(u(i)) : std::string("nan"));
    os << '\n';
  };
  for (std::size_t j = 0; j < trace.x1.size(); ++j)
    row(static_cast<double>(j) * trace.dt, trace.x1[j], trace.u1[j]);
  for (std::size_t j = 0; j < trace.x.size(); ++j)
    row(static_cast<double>(trace.switch_node + static_cast<int>(j)) * trace.dt, trace.x[j],
        trace.u[j]);
}

}  // namespace mlq
