#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "copush/policy/policy.hpp"
#include "copush/scene/loss.hpp"
#include "copush/sim/config.hpp"
#include "copush/train/task.hpp"

namespace copush::train {

struct PpoConfig {
  double learning_rate = 3e-4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  int buffer_size = 2048;
  int batch_size = 32;
  int epochs = 10;
  int total_steps = 20480;
  double init_log_std = -0.5;
  // Step reward is -reward_scale * per-step loss.
  double reward_scale = 0.1;
  double max_grad_norm = 0.5;
  // Episodes draw goals uniformly from this many goals of the train split.
  int n_goals = 20;
  scene::LossOptions loss;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PpoResult {
  policy::Policy policy;                 // Gaussian mean network (MLP)
  std::vector<double> log_std;           // per action dimension
  std::vector<double> episode_reward;    // r(s_T) of every finished training episode
  std::vector<double> episode_return;    // sum of step rewards
  int env_steps = 0;
  bool diverged = false;
};

// Generalized advantage estimates and returns for one buffer. dones[t] marks
// that the episode ended after step t; last_value bootstraps the tail.
void gae(const std::vector<double>& rewards, const std::vector<double>& values,
         const std::vector<bool>& dones, double last_value, double gamma, double lambda,
         std::vector<double>& advantages, std::vector<double>& returns);

// In place: zero mean, unit std (left unchanged when the std is 0).
void normalize_advantages(std::vector<double>& adv);

// Mean of -min(r A, clip(r, 1-eps, 1+eps) A) with r = exp(logp_new - logp_old).
// dlogp receives dL/dlogp_new per sample when given.
double clipped_surrogate(const std::vector<double>& logp_new, const std::vector<double>& logp_old,
                         const std::vector<double>& adv, double clip, std::vector<double>* dlogp);

// Clipped-surrogate PPO with a diagonal Gaussian head over normalized
// commands and a value network of the same hidden shape.
PpoResult ppo_fit(const sim::SimConfig& sim, const TaskConfig& task,
                  const policy::PolicyConfig& pcfg, const PpoConfig& cfg,
                  const std::function<void(const std::string&)>& progress = nullptr);

}  // namespace copush::train
