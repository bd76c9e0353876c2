#pragma once

#include <cmath>
#include <stdexcept>

namespace mlq {

/// Uniform time grid on [t0, t1] with n_steps intervals (n_steps + 1 nodes).
struct TimeGrid {
  double t0 = 0.0;
  double t1 = 1.0;
  int n_steps = 2;

  TimeGrid() = default;
  TimeGrid(double start, double end, int steps) : t0(start), t1(end), n_steps(steps) {
    if (!(t1 > t0)) throw std::invalid_argument("TimeGrid: t1 must exceed t0");
    if (n_steps < 2) throw std::invalid_argument("TimeGrid: need at least 2 steps");
  }

  double dt() const { return (t1 - t0) / n_steps; }
  int n_nodes() const { return n_steps + 1; }
  double node(int k) const { return t0 + k * (t1 - t0) / n_steps; }

  bool contains(double t) const {
    const double slack = 1e-12 * (t1 - t0);
    return t >= t0 - slack && t <= t1 + slack;
  }
};

inline bool operator==(const TimeGrid& a, const TimeGrid& b) {
  return a.t0 == b.t0 && a.t1 == b.t1 && a.n_steps == b.n_steps;
}

}  // namespace mlq
