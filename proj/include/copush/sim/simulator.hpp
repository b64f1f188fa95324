#pragma once

#include <functional>
#include <vector>

#include "copush/sim/config.hpp"
#include "copush/sim/state.hpp"

namespace copush::sim {

// Adjoint (or gradient) with respect to the positions in one SimState.
struct StateGradient {
  Vec2List particles;
  Vec2List robots;

  StateGradient() = default;
  StateGradient(std::size_t n_particles, int n_robots)
      : particles(n_particles, Vec2::Zero()),
        robots(static_cast<std::size_t>(n_robots), Vec2::Zero()) {}
};

// Per-control-step loss over a recorded trajectory. Called for t = 1..T with
// the state after step t; adds dL/dpositions into `grad` (may be null when
// only the value is wanted) and returns L.
using StepLossFn =
    std::function<double(int t, const SimState& state, StateGradient* grad)>;

// Full rollout with enough recorded state to run the adjoint pass.
struct Trajectory {
  std::vector<SimState> states;  // T + 1 control-step states
  ActionPlan plan;               // commands as given (before clamping)
  bool recorded = false;

  // Particle state at the start of every substep (the tape).
  struct Substep {
    Vec2List x, v;
    Mat2List C, F;
    Vec2List robots;
    double mass = 0.0;    // per particle
    double volume = 0.0;  // per particle
  };
  std::vector<Substep> tape;

  int horizon() const { return static_cast<int>(states.size()) - 1; }
  const SimState& final_state() const { return states.back(); }
};

// Sum of per-step losses and the gradient with respect to the plan.
struct PlanGradient {
  double loss = 0.0;
  ActionPlan grad;
};

class Simulator {
 public:
  explicit Simulator(SimConfig config);

  const SimConfig& config() const { return config_; }

  // Advances one control step (substeps_per_control substeps).
  SimState step(const SimState& state, const Vec2List& actions) const;

  // trajectory[0] = state0, trajectory[t+1] = step(trajectory[t], plan[t]).
  std::vector<SimState> rollout(const SimState& state0,
                                const ActionPlan& plan) const;

  // Rollout that also stores the tape for backward().
  Trajectory record(const SimState& state0, const ActionPlan& plan) const;

  // Reverse-mode gradient of sum_t loss(t, states[t]) over t = 1..T with
  // respect to every command of the plan.
  PlanGradient backward(const Trajectory& trajectory,
                        const StepLossFn& loss) const;

  // Node masses after the particle-to-grid transfer of `particles`.
  std::vector<double> grid_mass(const ParticleField& particles) const;
  // Total particle momentum after one substep with no robots present.
  Vec2 momentum_after_free_substep(const ParticleField& particles) const;

  // Command actually applied for a team of n robots.
  Vec2 clamp_command(const Vec2& a, int n_robots) const;

 private:
  struct Workspace;

  void substep(Trajectory::Substep& io, const Vec2List& robot_vel,
               Workspace& ws) const;
  void substep_backward(const Trajectory::Substep& in,
                        const Vec2List& robot_vel, Workspace& ws,
                        Vec2List& gx, Vec2List& gv, Mat2List& gC,
                        Mat2List& gF, Vec2List& gr, Vec2List& gu) const;
  void check_finite(const Trajectory::Substep& s, int step) const;

  SimConfig config_;
  int nodes_;  // grid nodes per axis, including the stencil halo
};

}  // namespace copush::sim
