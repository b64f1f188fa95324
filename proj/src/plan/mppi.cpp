#include "copush/plan/mppi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "copush/common/error.hpp"
#include "copush/common/parallel.hpp"
#include "copush/common/rng.hpp"
#include "copush/plan/gmp.hpp"

namespace copush::plan {

void MppiConfig::validate() const {
  if (n_samples < 1) throw ConfigError("mppi.n_samples must be >= 1");
  if (horizon < 1) throw ConfigError("mppi.horizon must be >= 1");
  if (n_stages < 1) throw ConfigError("mppi.n_stages must be >= 1");
  if (!(noise_std >= 0.0)) throw ConfigError("mppi.noise_std must be >= 0");
  if (!std::isfinite(noise_mean)) throw ConfigError("mppi.noise_mean must be finite");
  if (!std::isfinite(temperature)) throw ConfigError("mppi.temperature must be finite");
}

std::vector<double> importance_weights(const std::vector<double>& costs, double temperature) {
  COPUSH_REQUIRE(!costs.empty() && temperature > 0.0, "importance_weights: bad input");
  double lo = std::numeric_limits<double>::infinity();
  for (double c : costs)
    if (std::isfinite(c)) lo = std::min(lo, c);
  COPUSH_REQUIRE(std::isfinite(lo), "importance_weights: no finite cost");
  std::vector<double> w(costs.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < costs.size(); ++k) {
    w[k] = std::isfinite(costs[k]) ? std::exp(-(costs[k] - lo) / temperature) : 0.0;
    sum += w[k];
  }
  for (double& x : w) x /= sum;
  return w;
}

MppiResult mppi_plan(const sim::Simulator& simulator, const sim::SimState& state0,
                     const scene::GoalSpec& goal, const MppiConfig& cfg,
                     const sim::ActionPlan* init) {
  cfg.validate();
  const int nr = state0.robots.size();
  const double limit = simulator.config().effective_limit(nr);
  const scene::StepLoss loss(goal, state0.particles.mass, cfg.loss);

  MppiResult out;
  sim::ActionPlan mean(cfg.horizon, nr);
  if (init) {
    COPUSH_REQUIRE(init->horizon() == cfg.horizon && init->n_robots() == nr,
                   "mppi: initial plan shape mismatch");
    mean = *init;
    mean.clamp(limit);
  }
  out.cost_history.push_back(plan_cost(simulator, state0, mean, loss));
  out.temperature = cfg.temperature;

  const std::size_t n = static_cast<std::size_t>(cfg.n_samples);
  std::vector<sim::ActionPlan> samples(n);
  std::vector<double> costs(n);
  for (int stage = 0; stage < cfg.n_stages; ++stage) {
    parallel_for(n, cfg.jobs, [&](std::size_t k) {
      auto rng = make_rng(cfg.seed, "mppi.noise",
                          static_cast<std::uint64_t>(stage) * n + k);
      sim::ActionPlan p = mean;
      // sample 0 is the unperturbed mean plan
      if (k > 0 || !cfg.include_mean || n == 1)
        for (auto& a : p.flat()) {
          const Vec2 eps(cfg.noise_mean + cfg.noise_std * standard_normal(rng),
                         cfg.noise_mean + cfg.noise_std * standard_normal(rng));
          a = (a + eps * limit).cwiseMax(-limit).cwiseMin(limit);
        }
      try {
        costs[k] = plan_cost(simulator, state0, p, loss);
      } catch (const SimulationFault&) {
        costs[k] = std::numeric_limits<double>::infinity();
      }
      samples[k] = std::move(p);
    });
    double best = std::numeric_limits<double>::infinity();
    for (double c : costs)
      if (std::isfinite(c)) best = std::min(best, c);
    if (!std::isfinite(best)) throw DivergenceError("mppi: every rollout failed", stage);
    out.best_sample_cost.push_back(best);

    if (!(out.temperature > 0.0)) {
      double mu = 0.0, var = 0.0;
      int count = 0;
      for (double c : costs)
        if (std::isfinite(c)) mu += c, ++count;
      mu /= count;
      for (double c : costs)
        if (std::isfinite(c)) var += (c - mu) * (c - mu);
      out.temperature = count > 1 ? std::sqrt(var / (count - 1)) : 0.0;
      if (!(out.temperature > 0.0)) out.temperature = 1.0;
    }
    out.last_weights = importance_weights(costs, out.temperature);
    sim::ActionPlan next(cfg.horizon, nr);
    for (std::size_t k = 0; k < n; ++k) {
      if (out.last_weights[k] == 0.0) continue;
      for (std::size_t q = 0; q < next.flat().size(); ++q)
        next.flat()[q] += out.last_weights[k] * samples[k].flat()[q];
    }
    next.clamp(limit);
    mean = std::move(next);
    out.cost_history.push_back(plan_cost(simulator, state0, mean, loss));
  }
  out.plan = std::move(mean);
  return out;
}

}  // namespace copush::plan
