#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "copush/nn/layers.hpp"
#include "copush/plan/gmp.hpp"
#include "copush/train/task.hpp"

namespace copush::train {

// One GMP demonstration. Observations are not stored: replaying the plan
// from the task's initial state regenerates them exactly.
struct Demo {
  int goal_id = 0;
  int variant = 0;  // index among demos of the same goal and horizon
  int horizon = 0;
  int n_robots = 0;
  scene::Cubic goal;
  std::uint64_t gmp_seed = 0;
  std::uint64_t obs_seed = 0;  // particle subset of the observation
  sim::ActionPlan plan;
  std::vector<double> loss_history;
  double reward = 0.0;  // r(s_T) of the executed plan
};

struct DatasetManifest {
  int demo_count = 0;
  int goal_count = 0;
  std::vector<int> horizons;
  int n_robots = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  int skipped = 0;
  std::vector<std::string> skip_notes;
  std::string demos_hash;  // FNV-1a of the demo stream file
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Demo> demos;
};

struct CollectConfig {
  int n_goals = 20;
  int demos_per_goal = 3;
  std::vector<int> horizons = {40};
  std::string split = "train";

  void validate() const;
};

// (observation, normalized action) pair for one control step.
struct Sample {
  nn::Mat obs;      // N_r x d_in
  nn::Mask mask;    // visibility mask at that step
  nn::Mat target;   // N_r x 2, command / action_scale
  int goal_id = 0;
};

using ProgressFn = std::function<void(const std::string&)>;

// Plans every (goal, horizon, variant) with GMP, executes the plan and keeps
// the result. GMP failures are skipped and counted in the manifest.
Dataset collect(const sim::SimConfig& sim, const TaskConfig& task, const plan::GmpConfig& gmp,
                const CollectConfig& cfg, std::uint64_t seed, const std::string& config_hash,
                int jobs = 1, const ProgressFn& progress = nullptr);

// Replays a demo and returns its per-step samples. The replayed final reward
// is written to replay_reward when given.
std::vector<Sample> materialize(const Demo& demo, const sim::SimConfig& sim, const TaskConfig& task,
                                int obs_particles, double action_scale,
                                double* replay_reward = nullptr);

std::vector<Sample> materialize_all(const Dataset& ds, const sim::SimConfig& sim,
                                    const TaskConfig& task, int obs_particles, double action_scale,
                                    int jobs = 1);

// <dir>/manifest.json and <dir>/demos.jsonl.
void save_dataset(const std::string& dir, Dataset& ds);
// Throws ConfigError when files are missing, malformed or the hash differs.
Dataset load_dataset(const std::string& dir);

}  // namespace copush::train
