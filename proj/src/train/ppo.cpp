#include "copush/train/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include "copush/common/error.hpp"
#include "copush/nn/checkpoint.hpp"
#include "copush/policy/observation.hpp"

namespace copush::train {

namespace {
constexpr double kLogSqrtTwoPi = 0.91893853320467274178;
}

void PpoConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.ppo.learning_rate must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("train.ppo.gamma must lie in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("train.ppo.gae_lambda must lie in [0, 1]");
  if (!(clip > 0.0)) throw ConfigError("train.ppo.clip must be positive");
  if (!(entropy_coef >= 0.0) || !(value_coef >= 0.0))
    throw ConfigError("train.ppo loss coefficients must be >= 0");
  if (buffer_size < 1 || batch_size < 1 || epochs < 1)
    throw ConfigError("train.ppo buffer_size, batch_size and epochs must be >= 1");
  if (total_steps < 1) throw ConfigError("train.ppo.total_steps must be >= 1");
  if (!(reward_scale > 0.0)) throw ConfigError("train.ppo.reward_scale must be positive");
  if (!(max_grad_norm > 0.0)) throw ConfigError("train.ppo.max_grad_norm must be positive");
  if (n_goals < 1) throw ConfigError("train.ppo.n_goals must be >= 1");
}

void gae(const std::vector<double>& rewards, const std::vector<double>& values,
         const std::vector<bool>& dones, double last_value, double gamma, double lambda,
         std::vector<double>& advantages, std::vector<double>& returns) {
  const std::size_t n = rewards.size();
  COPUSH_REQUIRE(values.size() == n && dones.size() == n, "gae: length mismatch");
  advantages.assign(n, 0.0);
  returns.assign(n, 0.0);
  double next_adv = 0.0;
  double next_value = last_value;
  for (std::size_t k = n; k-- > 0;) {
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * live - values[k];
    next_adv = delta + gamma * lambda * live * next_adv;
    advantages[k] = next_adv;
    returns[k] = next_adv + values[k];
    next_value = values[k];
  }
}

void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(adv.size()));
  for (double& a : adv) a = sd > 0.0 ? (a - mean) / sd : a - mean;
}

double clipped_surrogate(const std::vector<double>& logp_new, const std::vector<double>& logp_old,
                         const std::vector<double>& adv, double clip, std::vector<double>* dlogp) {
  const std::size_t n = adv.size();
  COPUSH_REQUIRE(n > 0 && logp_new.size() == n && logp_old.size() == n,
                 "clipped_surrogate: length mismatch");
  if (dlogp) dlogp->assign(n, 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double r = std::exp(logp_new[k] - logp_old[k]);
    const double unclipped = r * adv[k];
    const double clipped = std::clamp(r, 1.0 - clip, 1.0 + clip) * adv[k];
    total -= std::min(unclipped, clipped);
    // the clipped branch is constant in the parameters
    if (dlogp && unclipped <= clipped) (*dlogp)[k] = -unclipped / static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

PpoResult ppo_fit(const sim::SimConfig& sim, const TaskConfig& task,
                  const policy::PolicyConfig& pcfg, const PpoConfig& cfg,
                  const std::function<void(const std::string&)>& progress) {
  cfg.validate();
  task.validate();
  pcfg.validate();
  const sim::Simulator simulator(sim);
  const int nr = task.n_robots;
  const int na = 2 * nr;
  const sim::SimState s0 = initial_state(sim, task, nr);
  const int n_particles = static_cast<int>(s0.particles.size());
  const int d_in = policy::observation_width(pcfg.obs_particles);
  const int d_flat = d_in * nr;
  const double limit = sim.effective_limit(nr);

  PpoResult res;
  res.policy = policy::Policy::make_mlp(d_in, nr, pcfg, limit, cfg.seed);
  std::vector<int> widths{d_flat};
  widths.insert(widths.end(), pcfg.mlp_hidden.begin(), pcfg.mlp_hidden.end());
  widths.push_back(1);
  nn::Mlp critic("value", widths, pcfg.mlp_activation);
  {
    auto rng = make_rng(cfg.seed, "ppo.value.init");
    critic.init(rng);
  }
  nn::Tensor log_std("ppo.log_std", 1, na);
  log_std.value.setConstant(cfg.init_log_std);

  auto& actor = res.policy.mlp();
  nn::ParamList params = actor.params();
  params.push_back(&log_std);
  for (nn::Tensor* t : critic.params()) params.push_back(t);
  nn::Adam adam(cfg.learning_rate);

  auto goal_rng = make_rng(cfg.seed, "ppo.goal");
  auto act_rng = make_rng(cfg.seed, "ppo.action");
  auto batch_rng = make_rng(cfg.seed, "ppo.batches");

  // episode state
  int episode = 0, t = 0;
  double ep_return = 0.0;
  sim::SimState state = s0;
  scene::GoalSpec goal;
  std::unique_ptr<scene::StepLoss> loss;
  std::vector<int> idx;
  auto reset = [&] {
    const int id = static_cast<int>(uniform_index(goal_rng, static_cast<std::size_t>(cfg.n_goals)));
    goal = sample_goal(task, s0, cfg.seed, "train", id);
    loss = std::make_unique<scene::StepLoss>(goal, s0.particles.mass, cfg.loss);
    idx = policy::downsample_particles(n_particles, pcfg.obs_particles,
                                       substream_seed(cfg.seed, "ppo.obs", static_cast<std::uint64_t>(episode)));
    state = s0;
    t = 0;
    ep_return = 0.0;
  };
  auto observe = [&] { return actor.flatten(policy::build_observation(state, goal, idx)); };
  reset();

  const int buf = cfg.buffer_size;
  nn::Mat obs(buf, d_flat), actions(buf, na);
  std::vector<double> logp(buf), values(buf), rewards(buf);
  std::vector<bool> dones(buf);
  std::vector<nn::NamedMatrix> last_good = nn::snapshot(params);

  while (res.env_steps < cfg.total_steps) {
    const int n = std::min(buf, cfg.total_steps - res.env_steps);
    for (int k = 0; k < n; ++k) {
      const nn::Mat x = observe();
      const nn::Mat mu = actor.forward(x);
      obs.row(k) = x;
      values[k] = critic.forward(x)(0, 0);
      double lp = 0.0;
      sim::Vec2List cmd(static_cast<std::size_t>(nr));
      for (int j = 0; j < na; ++j) {
        const double sd = std::exp(log_std.value(0, j));
        const double e = standard_normal(act_rng);
        actions(k, j) = mu(0, j) + sd * e;
        lp += -0.5 * e * e - log_std.value(0, j) - kLogSqrtTwoPi;
        cmd[static_cast<std::size_t>(j / 2)][j % 2] = std::clamp(actions(k, j), -1.0, 1.0) * limit;
      }
      logp[k] = lp;
      state = simulator.step(state, cmd);
      rewards[k] = -cfg.reward_scale * loss->evaluate(state).total;
      ep_return += rewards[k];
      ++t;
      dones[k] = t == task.horizon;
      if (dones[k]) {
        res.episode_reward.push_back(final_reward(task, s0, state, goal));
        res.episode_return.push_back(ep_return);
        ++episode;
        reset();
      }
    }
    res.env_steps += n;
    const double last_value = critic.forward(observe())(0, 0);
    std::vector<double> adv, ret;
    gae(std::vector<double>(rewards.begin(), rewards.begin() + n),
        std::vector<double>(values.begin(), values.begin() + n),
        std::vector<bool>(dones.begin(), dones.begin() + n), last_value, cfg.gamma, cfg.gae_lambda,
        adv, ret);

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs && !res.diverged; ++epoch) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(batch_rng, i)]);
      for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
        const int m = std::min(cfg.batch_size, n - b0);
        nn::Mat x(m, d_flat), a(m, na);
        std::vector<double> old_lp(m), badv(m), bret(m);
        for (int r = 0; r < m; ++r) {
          const int k = order[static_cast<std::size_t>(b0 + r)];
          x.row(r) = obs.row(k);
          a.row(r) = actions.row(k);
          old_lp[r] = logp[k];
          badv[r] = adv[k];
          bret[r] = ret[k];
        }
        normalize_advantages(badv);
        nn::zero_grad(params);
        nn::Mlp::Cache ac, vc;
        const nn::Mat mu = actor.forward(x, &ac);
        const nn::Mat v = critic.forward(x, &vc);
        std::vector<double> new_lp(m, 0.0);
        for (int r = 0; r < m; ++r)
          for (int j = 0; j < na; ++j) {
            const double z = (a(r, j) - mu(r, j)) * std::exp(-log_std.value(0, j));
            new_lp[r] += -0.5 * z * z - log_std.value(0, j) - kLogSqrtTwoPi;
          }
        std::vector<double> dlp;
        double total = clipped_surrogate(new_lp, old_lp, badv, cfg.clip, &dlp);
        nn::Mat dmu(m, na), dv(m, 1);
        for (int r = 0; r < m; ++r) {
          for (int j = 0; j < na; ++j) {
            const double inv_var = std::exp(-2.0 * log_std.value(0, j));
            const double diff = a(r, j) - mu(r, j);
            dmu(r, j) = dlp[r] * diff * inv_var;
            log_std.grad(0, j) += dlp[r] * (diff * diff * inv_var - 1.0);
          }
          const double e = v(r, 0) - bret[r];
          total += cfg.value_coef * e * e / m;
          dv(r, 0) = 2.0 * cfg.value_coef * e / m;
        }
        for (int j = 0; j < na; ++j) {
          total -= cfg.entropy_coef * (0.5 + kLogSqrtTwoPi + log_std.value(0, j));
          log_std.grad(0, j) -= cfg.entropy_coef;
        }
        if (!std::isfinite(total)) {
          res.diverged = true;
          break;
        }
        actor.backward(ac, dmu);
        critic.backward(vc, dv);
        double norm2 = 0.0;
        for (const nn::Tensor* p : params) norm2 += p->grad.squaredNorm();
        const double norm = std::sqrt(norm2);
        if (norm > cfg.max_grad_norm)
          for (nn::Tensor* p : params) p->grad *= cfg.max_grad_norm / norm;
        adam.step(params);
      }
    }
    if (res.diverged) {
      nn::restore(params, last_good);
      break;
    }
    last_good = nn::snapshot(params);
    if (progress) {
      const std::size_t tail = std::min<std::size_t>(res.episode_reward.size(), 20);
      double mean = 0.0;
      for (std::size_t k = res.episode_reward.size() - tail; k < res.episode_reward.size(); ++k)
        mean += res.episode_reward[k];
      std::ostringstream os;
      os << "ppo steps " << res.env_steps << " episodes " << res.episode_reward.size()
         << " recent reward " << (tail ? mean / tail : 0.0);
      progress(os.str());
    }
  }
  res.log_std.assign(log_std.value.data(), log_std.value.data() + na);
  return res;
}

}  // namespace copush::train
