#pragma once

#include <cstdint>
#include <vector>

#include "copush/scene/loss.hpp"
#include "copush/sim/simulator.hpp"

namespace copush::plan {

using sim::Vec2;

struct GmpConfig {
  double learning_rate = 0.1;
  // Adam updates; 0 returns the initial plan.
  int iterations = 50;
  scene::LossOptions loss;
  // Std of the initial commands; negative means velocity_limit / 3.
  double init_scale = -1.0;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct GmpResult {
  sim::ActionPlan plan;               // best iterate
  std::vector<double> loss_history;   // loss of iterate k, k = 0..iterations
  int best_iteration = 0;
  double best_loss = 0.0;
};

// Adam on the summed per-step loss over the whole rollout. Commands are kept
// in units of the velocity limit inside the optimizer and clamped to the
// limit after every update.
GmpResult plan(const sim::Simulator& simulator, const sim::SimState& state0,
               const scene::GoalSpec& goal, int horizon, const GmpConfig& cfg);

// Plans over `horizon` steps from `state` and returns the first command slice.
sim::Vec2List replan_receding(const sim::Simulator& simulator, const sim::SimState& state,
                              const scene::GoalSpec& goal, int horizon, const GmpConfig& cfg);

// Sum over t = 1..T of the step loss along the rollout of `plan`.
double plan_cost(const sim::Simulator& simulator, const sim::SimState& state0,
                 const sim::ActionPlan& plan, const scene::StepLoss& loss);

}  // namespace copush::plan
