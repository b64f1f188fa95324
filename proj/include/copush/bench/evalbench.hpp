#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "copush/plan/gmp.hpp"
#include "copush/plan/mppi.hpp"
#include "copush/policy/policy.hpp"
#include "copush/train/task.hpp"

namespace copush::bench {

enum class MethodKind { kGmp, kMppi, kRandom, kPolicy };

// A controller under evaluation. Planners run open loop from the initial
// state; policies are queried every step and their outputs smoothed.
struct Method {
  std::string name;
  MethodKind kind = MethodKind::kRandom;
  std::shared_ptr<const policy::Policy> policy;
  plan::GmpConfig gmp;
  plan::MppiConfig mppi;  // horizon is overridden by the episode horizon
  bool smoothing = true;

  static Method planner_gmp(std::string name, const plan::GmpConfig& cfg);
  static Method planner_mppi(std::string name, const plan::MppiConfig& cfg);
  static Method random(std::string name);
  static Method learned(std::string name, std::shared_ptr<const policy::Policy> p);
};

struct EvalSetup {
  sim::SimConfig sim;
  train::TaskConfig task;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string config_hash;
  std::string goal_split = "test";
};

struct EpisodeSpec {
  sim::SimConfig sim;
  train::TaskConfig task;
  int n_robots = 3;
  int goal_id = 0;
  scene::Cubic goal;
  std::uint64_t seed = 0;
  // Teleport robot `kidnap_victim` to a corner before step kidnap_step and
  // zero its commands from then on; negative disables.
  int kidnap_step = -1;
  int kidnap_victim = 0;
  bool record_attention = false;
};

struct EpisodeResult {
  double reward = 0.0;
  double time_per_step = 0.0;  // controller compute only, seconds
  bool failed = false;
  std::string note;
  std::vector<policy::AttentionTrace> attention;  // per step, when recorded
  std::vector<nn::Mask> masks;                    // per step, when recorded
};

EpisodeResult run_episode(const Method& method, const EpisodeSpec& spec);

struct ReportRow {
  std::string experiment, method, param;
  int episode = 0;
  double reward = 0.0;
  double time_per_step = 0.0;
  bool failed = false;
  std::string note;
};

struct Stats {
  double mean = 0.0;
  double std = 0.0;
  int count = 0;
  int failed = 0;
};

struct Report {
  std::string config_hash;
  std::vector<ReportRow> rows;

  // Failed episodes are excluded from mean and std and counted separately.
  Stats stats(const std::string& experiment, const std::string& method,
              const std::string& param = "") const;
  // Deterministic rewards table: experiment,method,param,episode,reward,status.
  std::string csv() const;
  // Wall-clock table: experiment,method,param,episode,time_per_step.
  std::string timing_csv() const;
  // Mean/std summary per (experiment, method, param).
  std::string summary_csv() const;
  void append(const Report& other);
};

// Population mean and standard deviation; the one routine every report uses.
Stats summarize(const std::vector<double>& values, int failed = 0);

std::string csv_header(const std::string& config_hash);
void write_text(const std::string& path, const std::string& body);

// Goal curves of the evaluation split, ids 0..count-1.
std::vector<scene::Cubic> eval_goals(const EvalSetup& setup, int count);

// Seed of evaluation episode k; shared by every experiment so that runs with
// identical settings see identical particle subsets and noise.
std::uint64_t episode_seed(std::uint64_t root, int episode);

Report compare_methods(const std::vector<Method>& methods, const std::vector<scene::Cubic>& goals,
                       const EvalSetup& setup, int n_robots);

struct SweepRange {
  std::string param;  // friction | yield_stress | velocity_limit | robot_radius
  double lo = 0.0, hi = 0.0;
};
std::vector<SweepRange> default_sweep_ranges();
// Applies value to the named field; throws ConfigError for unknown names.
void set_physics_param(sim::SimConfig& cfg, const std::string& param, double value);

Report generalization_sweep(const std::vector<Method>& methods, const std::vector<SweepRange>& ranges,
                            const std::vector<scene::Cubic>& goals, const EvalSetup& setup,
                            int n_robots);

Report robot_count_eval(const Method& method, const std::vector<int>& counts,
                        const std::vector<scene::Cubic>& goals, const EvalSetup& setup);

struct KidnapEpisode {
  int episode = 0;
  int goal_id = 0;
  double reward = 0.0;
  std::vector<double> self_attention;      // per step, mean over kept robots, layers, heads
  std::vector<double> neighbor_attention;  // per step, weight on the nearest neighbour
  std::vector<policy::AttentionTrace> traces;
  std::vector<nn::Mask> masks;
  double before = 0.0, after = 0.0;        // neighbour means over the two windows
};

struct KidnapReport {
  int t_kidnap = 0, window = 10, victim = 0;
  std::vector<KidnapEpisode> episodes;
  int increased() const;
  // Long format: episode,step,self,neighbor.
  std::string blocks_csv(const std::string& config_hash) const;
  // JSON lines: header, then one record per (episode, step, layer, head).
  std::string traces_jsonl(const std::string& config_hash) const;
};

KidnapReport kidnap_study(const Method& method, const std::vector<scene::Cubic>& goals,
                          const EvalSetup& setup, int n_robots, int t_kidnap, int victim,
                          int window = 10);

struct TimingRow {
  int n_robots = 0;
  double median_s = 0.0;
  double mean_s = 0.0;
};
// Median per-step act() latency on random observations and robot layouts.
std::vector<TimingRow> timing_scaling(const policy::Policy& policy, const std::vector<int>& counts,
                                      int repeats, std::uint64_t seed);

}  // namespace copush::bench
