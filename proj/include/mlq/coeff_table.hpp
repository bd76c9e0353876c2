#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mlq/time_grid.hpp"

namespace mlq {

/// Deterministic matrix-valued coefficient sampled in time.
///
/// A table holds either a single sample (a constant coefficient) or one
/// sample per grid node. Evaluation is exact at nodes and linear in between.
class CoeffTable {
 public:
  CoeffTable() = default;

  static CoeffTable constant(Eigen::MatrixXd value) {
    CoeffTable t;
    t.samples_.push_back(std::move(value));
    return t;
  }

  static CoeffTable constant(double value) {
    return constant(Eigen::MatrixXd::Constant(1, 1, value));
  }

  static CoeffTable sampled(std::vector<Eigen::MatrixXd> samples) {
    if (samples.empty()) throw std::invalid_argument("CoeffTable: no samples");
    for (const auto& s : samples) {
      if (s.rows() != samples.front().rows() || s.cols() != samples.front().cols())
        throw std::invalid_argument("CoeffTable: inconsistent sample shapes");
    }
    CoeffTable t;
    t.samples_ = std::move(samples);
    return t;
  }

  static CoeffTable zero(int rows, int cols) {
    return constant(Eigen::MatrixXd::Zero(rows, cols));
  }

  Eigen::Index rows() const { return samples_.empty() ? 0 : samples_.front().rows(); }
  Eigen::Index cols() const { return samples_.empty() ? 0 : samples_.front().cols(); }
  bool empty() const { return samples_.empty(); }
  bool is_constant() const { return samples_.size() == 1; }
  std::size_t sample_count() const { return samples_.size(); }
  const Eigen::MatrixXd& sample(std::size_t k) const { return samples_.at(k); }
  const std::vector<Eigen::MatrixXd>& samples() const { return samples_; }

  /// Value at time t relative to `grid`; throws std::domain_error outside [t0, t1].
  Eigen::MatrixXd at(const TimeGrid& grid, double t) const {
    Eigen::MatrixXd out;
    eval(grid, t, out);
    return out;
  }

  void eval(const TimeGrid& grid, double t, Eigen::MatrixXd& out) const {
    if (samples_.empty()) throw std::logic_error("CoeffTable: evaluated before assignment");
    if (samples_.size() == 1) {
      out = samples_[0];
      return;
    }
    if (!grid.contains(t))
      throw std::domain_error("CoeffTable: time outside the grid span");
    if (static_cast<int>(samples_.size()) != grid.n_nodes())
      throw std::invalid_argument("CoeffTable: sample count does not match the grid");
    const double s = (t - grid.t0) / grid.dt();
    int k = static_cast<int>(std::floor(s));
    if (k < 0) k = 0;
    if (k > grid.n_steps - 1) k = grid.n_steps - 1;
    const double theta = s - k;
    if (theta < kNodeSnap) {
      out = samples_[static_cast<std::size_t>(k)];
    } else if (theta > 1.0 - kNodeSnap) {
      out = samples_[static_cast<std::size_t>(k) + 1];
    } else {
      out = (1.0 - theta) * samples_[static_cast<std::size_t>(k)] +
            theta * samples_[static_cast<std::size_t>(k) + 1];
    }
  }

  /// Like eval, but constant tables hand back a reference to their single
  /// sample instead of copying (used in integrator inner loops).
  const Eigen::MatrixXd& eval_ref(const TimeGrid& grid, double t, Eigen::MatrixXd& buf) const {
    if (samples_.size() == 1) return samples_[0];
    eval(grid, t, buf);
    return buf;
  }

  friend bool operator==(const CoeffTable& a, const CoeffTable& b) {
    if (a.samples_.size() != b.samples_.size()) return false;
    for (std::size_t i = 0; i < a.samples_.size(); ++i) {
      if (a.samples_[i].rows() != b.samples_[i].rows() ||
          a.samples_[i].cols() != b.samples_[i].cols() ||
          a.samples_[i] != b.samples_[i])
        return false;
    }
    return true;
  }

 private:
  static constexpr double kNodeSnap = 1e-9;
  std::vector<Eigen::MatrixXd> samples_;
};

}  // namespace mlq
