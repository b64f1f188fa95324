#pragma once

#include <cstdint>
#include <string>

#include "copush/scene/scene.hpp"
#include "copush/sim/config.hpp"
#include "copush/sim/state.hpp"

namespace copush::train {

// Rope-shaping task shared by data collection, training and evaluation.
struct TaskConfig {
  int n_particles = 512;
  double rope_half_width = 0.02;
  int n_robots = 3;
  int horizon = 40;
  // Distance of the initial robot centres from the rope centreline.
  double robot_offset = 0.06;
  // Lattice resolution of the IoU reward.
  int iou_res = 32;
  // Workspace margin the sampled goal curves must keep.
  double goal_margin = 0.1;

  void validate() const;
};

// Straight rope across the workspace with n_robots spread along it.
sim::SimState initial_state(const sim::SimConfig& sim, const TaskConfig& task, int n_robots);

// Goal `id` of a named split ("train", "test", ...); independent per id.
scene::GoalSpec sample_goal(const TaskConfig& task, const sim::SimState& s0, std::uint64_t seed,
                            const std::string& split, int id);
scene::GoalSpec goal_from_curve(const TaskConfig& task, const sim::SimState& s0,
                                const scene::Cubic& curve);

// r(s_T) against the initial state on the task's IoU lattice.
double final_reward(const TaskConfig& task, const sim::SimState& s0, const sim::SimState& sT,
                    const scene::GoalSpec& goal);

}  // namespace copush::train
