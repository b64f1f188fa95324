#pragma once

#include <stdexcept>
#include <string>

namespace copush {

// Caller broke a documented precondition (shape mismatch, bad argument).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid configuration or unusable input data.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure while stepping the simulator.
class SimulationFault : public std::runtime_error {
 public:
  SimulationFault(const std::string& what, int step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

// Optimizer or training loop produced a non-finite value.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int iteration)
      : std::runtime_error(what + " (iteration " + std::to_string(iteration) +
                           ")"),
        iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

#define COPUSH_REQUIRE(cond, msg)                  \
  do {                                             \
    if (!(cond)) throw ::copush::ContractViolation(msg); \
  } while (0)

}  // namespace copush
