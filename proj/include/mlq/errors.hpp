#pragma once

#include <stdexcept>
#include <string>

namespace mlq {

/// Loss of positivity of R + DᵀPD during a backward Riccati sweep.
class RiccatiBlowupError : public std::runtime_error {
 public:
  RiccatiBlowupError(const std::string& what, int node)
      : std::runtime_error(what), node_(node) {}
  int node() const { return node_; }

 private:
  int node_;
};

/// Terminal weight sits exactly on a Riccati equilibrium, so the stage-2
/// solution is the constant G2 and the generic closed form does not apply.
class DegenerateTerminalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite state produced while generating Monte Carlo paths.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mlq
