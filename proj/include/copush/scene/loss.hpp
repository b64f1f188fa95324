#pragma once

#include "copush/scene/grid.hpp"
#include "copush/scene/scene.hpp"
#include "copush/sim/simulator.hpp"

namespace copush::scene {

struct LossCoeffs {
  double mass = 500.0;   // c1
  double dist = 500.0;   // c2
  double grasp = 1.0;    // c3
};

enum class DistMode {
  kDensityDotSdf,  // <density(s_t), SDF(s_g)>, differentiable
  kSdfDotSdf,      // <SDF(s_t), SDF(s_g)>, value only (zero gradient)
};

struct LossOptions {
  LossCoeffs coeffs;
  int lattice_res = 32;
  double grasp_temperature = 1e-3;  // metres
  // L_mass uses sqrt(d^2 + delta^2) - delta per cell, delta = this * particle mass.
  double mass_smoothing = 0.05;
  DistMode dist_mode = DistMode::kDensityDotSdf;
};

struct LossTerms {
  double mass = 0.0;
  double dist = 0.0;
  double grasp = 0.0;       // softmin form, the one that is optimized
  double grasp_hard = 0.0;  // hard minimum, for logs
  double total = 0.0;
};

// Per-step manipulation loss c1 L_mass + c2 L_dist + c3 L_grasp against a
// fixed goal. Goal raster and SDF are computed once at construction.
class StepLoss {
 public:
  StepLoss(const GoalSpec& goal, double particle_mass, LossOptions options = {});

  // Adds gradients w.r.t. particle and robot positions into grad when given.
  LossTerms evaluate(const sim::SimState& state, sim::StateGradient* grad = nullptr) const;

  // Adapter for Simulator::backward (sums total over t = 1..T).
  sim::StepLossFn as_step_fn() const;

  const LossOptions& options() const { return options_; }
  const Lattice& lattice() const { return lattice_; }
  const std::vector<double>& goal_density() const { return goal_density_; }
  const SdfGrid& goal_sdf() const { return goal_sdf_; }

 private:
  LossOptions options_;
  Lattice lattice_;
  double particle_mass_;
  std::vector<double> goal_density_;
  SdfGrid goal_sdf_;
};

// Soft minimum of robot-surface-to-particle distances for one robot:
// -tau log sum exp(-(|r - x_p| - R) / tau). Adds gradients when asked.
double soft_grasp_distance(const Vec2& robot, double radius, const Vec2List& particles,
                           double tau, Vec2* grad_robot, Vec2List* grad_particles);

}  // namespace copush::scene
