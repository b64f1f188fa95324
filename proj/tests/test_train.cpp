#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "copush/common/error.hpp"
#include "copush/policy/observation.hpp"
#include "copush/train/bc.hpp"
#include "copush/train/dataset.hpp"
#include "copush/train/ppo.hpp"

namespace copush {
namespace {

namespace fs = std::filesystem;

train::TaskConfig tiny_task() {
  train::TaskConfig t;
  t.n_particles = 64;
  t.horizon = 4;
  t.n_robots = 2;
  return t;
}

policy::PolicyConfig tiny_policy() {
  policy::PolicyConfig p;
  p.obs_particles = 6;
  p.d_feat = 16;
  p.heads = 2;
  p.d_k = 8;
  p.d_v = 8;
  p.mlp_hidden = {16, 16};
  return p;
}

plan::GmpConfig quick_gmp() {
  plan::GmpConfig g;
  g.iterations = 2;
  return g;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("copush_test_" + name);
  fs::remove_all(p);
  return p;
}

TEST(Collect, OneGoalOneHorizonGivesOneDemoOfHorizonSteps) {
  sim::SimConfig sc;
  const auto task = tiny_task();
  train::CollectConfig cc;
  cc.n_goals = 1;
  cc.demos_per_goal = 1;
  cc.horizons = {4};
  const auto ds = train::collect(sc, task, quick_gmp(), cc, 5, "h");
  ASSERT_EQ(ds.demos.size(), 1u);
  EXPECT_EQ(ds.manifest.demo_count, 1);
  EXPECT_EQ(ds.manifest.skipped, 0);
  EXPECT_EQ(ds.demos[0].plan.horizon(), 4);
  const auto samples = train::materialize(ds.demos[0], sc, task, 6, sc.velocity_limit);
  ASSERT_EQ(samples.size(), 4u);
  for (const auto& s : samples) {
    EXPECT_EQ(s.obs.rows(), 2);
    EXPECT_EQ(s.obs.cols(), policy::observation_width(6));
    EXPECT_LE(s.target.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(Collect, ReplayReproducesRecordedReward) {
  sim::SimConfig sc;
  auto task = tiny_task();
  task.horizon = 6;
  train::CollectConfig cc;
  cc.n_goals = 2;
  cc.demos_per_goal = 1;
  cc.horizons = {6};
  const auto ds = train::collect(sc, task, quick_gmp(), cc, 9, "h");
  for (const auto& d : ds.demos) {
    double replay = -1.0;
    train::materialize(d, sc, task, 6, sc.velocity_limit, &replay);
    EXPECT_NEAR(replay, d.reward, 1e-9);
  }
}

TEST(Collect, JobCountDoesNotChangeDemos) {
  sim::SimConfig sc;
  const auto task = tiny_task();
  train::CollectConfig cc;
  cc.n_goals = 2;
  cc.demos_per_goal = 2;
  cc.horizons = {3};
  const auto a = train::collect(sc, task, quick_gmp(), cc, 2, "h", 1);
  const auto b = train::collect(sc, task, quick_gmp(), cc, 2, "h", 3);
  ASSERT_EQ(a.demos.size(), 4u);
  ASSERT_EQ(b.demos.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_TRUE(a.demos[k].plan == b.demos[k].plan);
    EXPECT_EQ(a.demos[k].reward, b.demos[k].reward);
  }
  EXPECT_NE(a.demos[0].gmp_seed, a.demos[1].gmp_seed);
}

TEST(Dataset, SaveLoadRoundTripAndHashCheck) {
  sim::SimConfig sc;
  const auto task = tiny_task();
  train::CollectConfig cc;
  cc.n_goals = 2;
  cc.demos_per_goal = 1;
  cc.horizons = {3};
  auto ds = train::collect(sc, task, quick_gmp(), cc, 4, "abc");
  const auto dir = temp_dir("dataset");
  train::save_dataset(dir.string(), ds);
  const auto back = train::load_dataset(dir.string());
  EXPECT_EQ(back.manifest.demo_count, 2);
  EXPECT_EQ(back.manifest.config_hash, "abc");
  EXPECT_EQ(back.manifest.demos_hash, ds.manifest.demos_hash);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_TRUE(back.demos[k].plan == ds.demos[k].plan);
    EXPECT_EQ(back.demos[k].goal, ds.demos[k].goal);
    EXPECT_EQ(back.demos[k].obs_seed, ds.demos[k].obs_seed);
    EXPECT_EQ(back.demos[k].reward, ds.demos[k].reward);
  }
  {
    std::ofstream out(dir / "demos.jsonl", std::ios::app);
    out << "\n";
  }
  EXPECT_THROW(train::load_dataset(dir.string()), ConfigError);
  EXPECT_THROW(train::load_dataset((dir / "missing").string()), ConfigError);
}

// Samples with a fixed observation and target, repeated.
std::vector<train::Sample> repeated_pair(int copies) {
  auto rng = make_rng(3, "pair");
  train::Sample s;
  s.obs.resize(2, policy::observation_width(6));
  for (Eigen::Index k = 0; k < s.obs.size(); ++k) s.obs.data()[k] = uniform(rng, -0.5, 0.5);
  s.mask = policy::visibility_mask({sim::Vec2(0.2, 0.2), sim::Vec2(0.4, 0.2)});
  s.target.resize(2, 2);
  s.target << 0.3, -0.5, 0.8, 0.1;
  return std::vector<train::Sample>(static_cast<std::size_t>(copies), s);
}

TEST(Bc, RepeatedPairIsFitBelowOneMillionth) {
  const auto samples = repeated_pair(64);
  train::BcConfig cfg;
  cfg.max_epochs = 2000;
  cfg.patience = 2000;
  for (auto arch : {policy::Arch::kAttention, policy::Arch::kMlp}) {
    const auto res = train::bc_fit(samples, arch, tiny_policy(), 0.015, cfg);
    EXPECT_LT(train::bc_loss(res.policy, samples), 1e-6) << policy::to_string(arch);
    EXPECT_FALSE(res.diverged);
  }
}

std::vector<train::Sample> tiny_dataset() {
  sim::SimConfig sc;
  const auto task = tiny_task();
  train::CollectConfig cc;
  cc.n_goals = 5;
  cc.demos_per_goal = 1;
  cc.horizons = {4};
  const auto ds = train::collect(sc, task, quick_gmp(), cc, 1, "h");
  return train::materialize_all(ds, sc, task, 6, sc.velocity_limit);
}

TEST(Bc, ValidationSplitIsByGoalAndReturnsBestEpoch) {
  const auto samples = tiny_dataset();
  train::BcConfig cfg;
  cfg.val_fraction = 0.4;
  cfg.max_epochs = 60;
  cfg.batch_size = 4;
  cfg.seed = 7;
  const auto val = train::validation_goals(samples, cfg.val_fraction, cfg.seed);
  ASSERT_EQ(val.size(), 2u);
  EXPECT_EQ(val, train::validation_goals(samples, cfg.val_fraction, cfg.seed));

  const auto res = train::bc_fit(samples, policy::Arch::kAttention, tiny_policy(), 0.015, cfg);
  ASSERT_GE(res.best_epoch, 0);
  std::vector<train::Sample> val_set;
  for (const auto& s : samples)
    if (std::find(val.begin(), val.end(), s.goal_id) != val.end()) val_set.push_back(s);
  EXPECT_NEAR(train::bc_loss(res.policy, val_set), res.best_val, 1e-12);
  EXPECT_EQ(res.best_val, *std::min_element(res.val_loss.begin(), res.val_loss.end()));

  // training loss along the sequence of improving checkpoints
  double best_val = INFINITY, last_train = INFINITY;
  int violations = 0;
  for (std::size_t e = 0; e < res.val_loss.size(); ++e)
    if (res.val_loss[e] < best_val) {
      best_val = res.val_loss[e];
      violations += res.train_loss[e] > last_train;
      last_train = res.train_loss[e];
    }
  EXPECT_EQ(violations, 0);
}

TEST(Bc, MlpRejectsMixedRobotCountsAndEmptyData) {
  auto samples = repeated_pair(4);
  auto extra = samples.front();
  extra.obs.conservativeResize(3, Eigen::NoChange);
  extra.obs.row(2).setZero();
  extra.target.conservativeResize(3, Eigen::NoChange);
  extra.target.row(2).setZero();
  extra.mask = policy::visibility_mask({sim::Vec2(0.2, 0.2), sim::Vec2(0.4, 0.2), sim::Vec2(0.9, 0.9)});
  samples.push_back(extra);
  train::BcConfig cfg;
  cfg.max_epochs = 1;
  EXPECT_THROW(train::bc_fit(samples, policy::Arch::kMlp, tiny_policy(), 0.015, cfg), ConfigError);
  EXPECT_NO_THROW(train::bc_fit(samples, policy::Arch::kAttention, tiny_policy(), 0.015, cfg));
  EXPECT_THROW(train::bc_fit({}, policy::Arch::kAttention, tiny_policy(), 0.015, cfg), ConfigError);
}

TEST(Ppo, UnitRatioGivesVanillaPolicyGradient) {
  const std::vector<double> lp = {-1.0, -0.3, -2.2, -0.7};
  const std::vector<double> adv = {0.5, -1.5, 2.0, -0.1};
  std::vector<double> g;
  const double loss = train::clipped_surrogate(lp, lp, adv, 0.2, &g);
  EXPECT_NEAR(loss, -std::accumulate(adv.begin(), adv.end(), 0.0) / 4.0, 1e-15);
  for (std::size_t k = 0; k < adv.size(); ++k) EXPECT_DOUBLE_EQ(g[k], -adv[k] / 4.0);
}

TEST(Ppo, ClippedBranchHasNoGradient) {
  const double big = std::log(1.5), small = std::log(0.5);
  std::vector<double> g;
  // ratio 1.5 with positive advantage: clipped, constant
  train::clipped_surrogate({big}, {0.0}, {1.0}, 0.2, &g);
  EXPECT_EQ(g[0], 0.0);
  // ratio 0.5 with negative advantage: clipped, constant
  train::clipped_surrogate({small}, {0.0}, {-1.0}, 0.2, &g);
  EXPECT_EQ(g[0], 0.0);
  // ratio 1.5 with negative advantage: the unclipped term is the minimum
  const double loss = train::clipped_surrogate({big}, {0.0}, {-1.0}, 0.2, &g);
  EXPECT_NEAR(loss, 1.5, 1e-12);
  EXPECT_NEAR(g[0], 1.5, 1e-12);
  // inside the trust region the gradient is -r A
  train::clipped_surrogate({std::log(1.1)}, {0.0}, {2.0}, 0.2, &g);
  EXPECT_NEAR(g[0], -2.2, 1e-12);
}

TEST(Ppo, AdvantageNormalization) {
  std::vector<double> adv = {3.0, -1.0, 4.0, 1.0, -5.0, 9.0, 2.0};
  train::normalize_advantages(adv);
  double mean = 0.0, var = 0.0;
  for (double a : adv) mean += a;
  mean /= adv.size();
  for (double a : adv) var += (a - mean) * (a - mean);
  EXPECT_NEAR(mean, 0.0, 1e-6);
  EXPECT_NEAR(std::sqrt(var / adv.size()), 1.0, 1e-6);
}

TEST(Ppo, GaeMatchesDirectSum) {
  const std::vector<double> r = {1.0, -0.5, 2.0, 0.3, -1.0};
  const std::vector<double> v = {0.2, 0.1, -0.4, 0.7, 0.5};
  const std::vector<bool> done = {false, false, true, false, false};
  const double last = 0.9, gamma = 0.9, lambda = 0.8;
  std::vector<double> adv, ret;
  train::gae(r, v, done, last, gamma, lambda, adv, ret);
  // delta_t and discounted sums written out per episode segment
  auto next_v = [&](std::size_t t) { return t + 1 < v.size() ? v[t + 1] : last; };
  for (std::size_t t = 0; t < r.size(); ++t) {
    double a = 0.0, w = 1.0;
    for (std::size_t l = t; l < r.size(); ++l) {
      const double delta = r[l] + (done[l] ? 0.0 : gamma * next_v(l)) - v[l];
      a += w * delta;
      if (done[l]) break;
      w *= gamma * lambda;
    }
    EXPECT_NEAR(adv[t], a, 1e-12) << t;
    EXPECT_NEAR(ret[t], a + v[t], 1e-12);
  }
}

TEST(Ppo, ShortRunIsDeterministicAndCountsEpisodes) {
  sim::SimConfig sc;
  const auto task = tiny_task();
  train::PpoConfig cfg;
  cfg.buffer_size = 16;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.total_steps = 32;
  cfg.n_goals = 3;
  cfg.seed = 2;
  const auto a = train::ppo_fit(sc, task, tiny_policy(), cfg);
  const auto b = train::ppo_fit(sc, task, tiny_policy(), cfg);
  EXPECT_EQ(a.env_steps, 32);
  EXPECT_EQ(a.episode_reward.size(), 8u);
  EXPECT_EQ(a.episode_reward, b.episode_reward);
  EXPECT_EQ(a.log_std, b.log_std);
  EXPECT_FALSE(a.diverged);
  for (double ls : a.log_std) {
    EXPECT_TRUE(std::isfinite(ls));
    EXPECT_NE(ls, cfg.init_log_std);
  }
  EXPECT_EQ(a.policy.arch(), policy::Arch::kMlp);
}

TEST(Ppo, RejectsBadConfig) {
  train::PpoConfig cfg;
  cfg.clip = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace copush
