#pragma once

#include <cstdint>
#include <vector>

#include "copush/scene/loss.hpp"
#include "copush/sim/simulator.hpp"

namespace copush::plan {

struct MppiConfig {
  int n_samples = 1200;
  int horizon = 100;
  int n_stages = 30;
  // Gaussian perturbation in units of the velocity limit.
  double noise_mean = 0.0;
  double noise_std = 1.0;
  // Softmin temperature on summed loss; <= 0 selects the std of the
  // first stage's sample costs.
  double temperature = 0.0;
  // Keep the current mean plan as one unperturbed sample (needs n_samples > 1).
  bool include_mean = true;
  scene::LossOptions loss;
  std::uint64_t seed = 0;
  int jobs = 1;

  void validate() const;
};

struct MppiResult {
  sim::ActionPlan plan;                   // final mean plan, clamped
  std::vector<double> cost_history;       // mean-plan cost, initial then after each stage
  std::vector<double> best_sample_cost;   // per stage
  std::vector<double> last_weights;       // importance weights of the final stage
  double temperature = 0.0;
};

// exp(-(c - min c) / temperature), normalized to sum 1.
std::vector<double> importance_weights(const std::vector<double>& costs, double temperature);

// Open-loop path-integral planning from a zero plan, or from `init` when given.
MppiResult mppi_plan(const sim::Simulator& simulator, const sim::SimState& state0,
                     const scene::GoalSpec& goal, const MppiConfig& cfg,
                     const sim::ActionPlan* init = nullptr);

}  // namespace copush::plan
