#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "copush/plan/gmp.hpp"
#include "copush/plan/mppi.hpp"
#include "copush/policy/policy.hpp"
#include "copush/sim/config.hpp"
#include "copush/train/bc.hpp"
#include "copush/train/dataset.hpp"
#include "copush/train/ppo.hpp"
#include "copush/train/task.hpp"

namespace copush::cli {

struct TrainSection {
  train::CollectConfig collect;
  train::BcConfig bc;
  train::PpoConfig ppo;
};

struct EvalSection {
  int n_goals = 20;
  std::string goal_split = "test";
  std::vector<std::string> suites = {"compare", "sweep", "robots", "kidnap", "timing"};
  // Methods of the comparison: gmp, mppi, random, bc_attention, bc_mlp, ppo.
  std::vector<std::string> methods = {"gmp", "mppi", "random", "bc_attention", "bc_mlp", "ppo"};
  // Methods evaluated under the physics sweeps.
  std::vector<std::string> sweep_methods = {"bc_attention", "bc_mlp", "ppo"};
  std::map<std::string, std::vector<double>> sweep_ranges = {{"friction", {1.0, 2.5}},
                                                             {"yield_stress", {15.0, 45.0}},
                                                             {"velocity_limit", {0.005, 0.02}},
                                                             {"robot_radius", {0.02, 0.035}}};
  std::vector<int> robot_counts = {3, 4, 5};
  int kidnap_episodes = 5;
  int kidnap_step = 20;
  int kidnap_victim = 0;
  int kidnap_window = 10;
  std::vector<int> timing_counts = {6, 100};
  int timing_repeats = 20;
};

// Every tunable of a run. Planner and PPO losses share gmp.loss.
struct RunConfig {
  std::uint64_t seed = 0;
  sim::SimConfig sim;
  train::TaskConfig scene;
  plan::GmpConfig gmp;
  plan::MppiConfig mppi;
  policy::PolicyConfig policy;
  TrainSection train;
  EvalSection eval;

  void validate() const;
  // Copies shared settings (loss, horizons) into the per-module configs.
  void resolve();
};

std::string to_json_text(const RunConfig& cfg, int indent = 2);
// Missing keys keep their defaults; unknown keys and wrong types throw
// ConfigError naming the key path.
RunConfig config_from_json_text(const std::string& text);
RunConfig load_config(const std::string& path);
// Fingerprint of the canonical serialization.
std::string config_hash(const RunConfig& cfg);

}  // namespace copush::cli
