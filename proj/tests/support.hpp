#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "copush/common/rng.hpp"
#include "copush/scene/loss.hpp"
#include "copush/scene/scene.hpp"
#include "copush/sim/simulator.hpp"

namespace copush::testing {

using sim::Vec2;
using sim::Vec2List;

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Straight 64-particle rope with two robots beside it and a goal shifted up.
struct SmallScene {
  sim::SimConfig cfg;
  sim::SimState s0;
  scene::GoalSpec goal;
};

inline SmallScene small_scene(int n_particles = 64) {
  SmallScene sc;
  scene::Cubic straight;
  scene::RopeSpec rope;
  rope.n_particles = n_particles;
  sc.s0.particles = scene::build_rope_scene(sc.cfg, straight, rope);
  sc.s0.robots = sim::RobotSet::at({Vec2(0.45, 0.46), Vec2(0.6, 0.54)}, sc.cfg.robot_radius);
  scene::Cubic shifted = straight;
  shifted.coeffs[3] = 0.55;
  sc.goal = scene::make_goal(shifted, sc.s0.particles);
  return sc;
}

inline sim::ActionPlan random_plan(int horizon, int n_robots, std::uint64_t seed) {
  sim::ActionPlan plan(horizon, n_robots);
  auto rng = make_rng(seed, "plan");
  for (auto& a : plan.flat())
    a = Vec2(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)) * 0.01 + Vec2(0.0, 0.005);
  return plan;
}

// Central-difference derivative of a plan-valued function at every command.
inline sim::ActionPlan fd_gradient(const std::function<double(const sim::ActionPlan&)>& f,
                                   const sim::ActionPlan& plan, double h) {
  sim::ActionPlan g(plan.horizon(), plan.n_robots());
  for (int t = 0; t < plan.horizon(); ++t)
    for (int r = 0; r < plan.n_robots(); ++r)
      for (int d = 0; d < 2; ++d) {
        auto p = plan, m = plan;
        p.at(t, r)[d] += h;
        m.at(t, r)[d] -= h;
        g.at(t, r)[d] = (f(p) - f(m)) / (2.0 * h);
      }
  return g;
}

inline double summed_loss(const sim::Simulator& simu, const sim::SimState& s0,
                          const sim::ActionPlan& plan, const sim::StepLossFn& loss) {
  auto traj = simu.rollout(s0, plan);
  double total = 0.0;
  for (int t = 1; t < static_cast<int>(traj.size()); ++t) total += loss(t, traj[t], nullptr);
  return total;
}

}  // namespace copush::testing
