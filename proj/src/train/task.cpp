#include "copush/train/task.hpp"

#include "copush/common/error.hpp"
#include "copush/common/rng.hpp"
#include "copush/scene/grid.hpp"

namespace copush::train {

void TaskConfig::validate() const {
  if (n_particles < 8) throw ConfigError("scene.n_particles must be >= 8");
  if (!(rope_half_width > 0.0)) throw ConfigError("scene.rope_half_width must be positive");
  if (n_robots < 1) throw ConfigError("scene.n_robots must be >= 1");
  if (horizon < 1) throw ConfigError("scene.horizon must be >= 1");
  if (!(robot_offset >= 0.0)) throw ConfigError("scene.robot_offset must be >= 0");
  if (iou_res < 2) throw ConfigError("scene.iou_res must be >= 2");
  if (!(goal_margin >= 0.0 && goal_margin < 0.5)) throw ConfigError("scene.goal_margin must lie in [0, 0.5)");
}

sim::SimState initial_state(const sim::SimConfig& sim, const TaskConfig& task, int n_robots) {
  const scene::Cubic straight;
  scene::RopeSpec rope;
  rope.n_particles = task.n_particles;
  rope.half_width = task.rope_half_width;
  sim::SimState s;
  s.particles = scene::build_rope_scene(sim, straight, rope);
  s.robots = sim::RobotSet::at(scene::default_robot_positions(straight, n_robots, task.robot_offset),
                               sim.robot_radius);
  return s;
}

scene::GoalSpec goal_from_curve(const TaskConfig& task, const sim::SimState& s0,
                                const scene::Cubic& curve) {
  return scene::make_goal(curve, s0.particles, task.rope_half_width);
}

scene::GoalSpec sample_goal(const TaskConfig& task, const sim::SimState& s0, std::uint64_t seed,
                            const std::string& split, int id) {
  auto rng = make_rng(seed, "scene.goal." + split, static_cast<std::uint64_t>(id));
  return goal_from_curve(task, s0, scene::sample_goal_curve(rng, task.goal_margin));
}

double final_reward(const TaskConfig& task, const sim::SimState& s0, const sim::SimState& sT,
                    const scene::GoalSpec& goal) {
  return scene::reward(sT.particles.positions, s0.particles.positions, goal.particles,
                       scene::Lattice::square(task.iou_res));
}

}  // namespace copush::train
