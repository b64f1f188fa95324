#include "copush/plan/gmp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "copush/common/error.hpp"
#include "copush/common/rng.hpp"

namespace copush::plan {

void GmpConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("gmp.learning_rate must be positive");
  if (iterations < 0) throw ConfigError("gmp.iterations must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("gmp.beta1 and gmp.beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("gmp.adam_eps must be positive");
}

double plan_cost(const sim::Simulator& simulator, const sim::SimState& state0,
                 const sim::ActionPlan& plan, const scene::StepLoss& loss) {
  const auto traj = simulator.rollout(state0, plan);
  double total = 0.0;
  for (std::size_t t = 1; t < traj.size(); ++t) total += loss.evaluate(traj[t]).total;
  return total;
}

GmpResult plan(const sim::Simulator& simulator, const sim::SimState& state0,
               const scene::GoalSpec& goal, int horizon, const GmpConfig& cfg) {
  cfg.validate();
  COPUSH_REQUIRE(horizon >= 1, "gmp: horizon must be >= 1");
  const int nr = state0.robots.size();
  const double limit = simulator.config().effective_limit(nr);
  const double init_scale = cfg.init_scale < 0.0 ? limit / 3.0 : cfg.init_scale;

  sim::ActionPlan current(horizon, nr);
  auto rng = make_rng(cfg.seed, "gmp.init");
  for (auto& a : current.flat()) {
    a = Vec2(standard_normal(rng), standard_normal(rng)) * init_scale;
    a = a.cwiseMax(-limit).cwiseMin(limit);
  }

  const scene::StepLoss loss(goal, state0.particles.mass, cfg.loss);
  const auto loss_fn = loss.as_step_fn();
  const std::size_t n = current.flat().size();
  std::vector<Vec2> m(n, Vec2::Zero()), v(n, Vec2::Zero());

  GmpResult out;
  out.best_loss = INFINITY;
  for (int it = 0;; ++it) {
    const bool last = it == cfg.iterations;
    double value;
    sim::PlanGradient g;
    if (last) {
      value = plan_cost(simulator, state0, current, loss);
    } else {
      g = simulator.backward(simulator.record(state0, current), loss_fn);
      value = g.loss;
    }
    if (!std::isfinite(value)) {
      std::ostringstream os;
      os << "gmp: non-finite loss " << value << ", last finite loss "
         << (out.loss_history.empty() ? NAN : out.loss_history.back())
         << ", plan max |a| " << current.max_abs();
      throw DivergenceError(os.str(), it);
    }
    out.loss_history.push_back(value);
    if (value < out.best_loss) {
      out.best_loss = value;
      out.best_iteration = it;
      out.plan = current;
    }
    if (last) break;

    const double c1 = 1.0 - std::pow(cfg.beta1, it + 1);
    const double c2 = 1.0 - std::pow(cfg.beta2, it + 1);
    double descent = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      // gradient w.r.t. the normalized command a / limit
      const Vec2 gk = g.grad.flat()[k] * limit;
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk.cwiseProduct(gk);
      const Vec2 step = -cfg.learning_rate * (m[k] / c1).cwiseQuotient(
                                                 ((v[k] / c2).cwiseSqrt().array() + cfg.adam_eps).matrix());
      if (it == 0) descent += step.dot(gk);
      Vec2& a = current.flat()[k];
      a = ((a / limit + step).cwiseMax(-1.0).cwiseMin(1.0)) * limit;
    }
    if (it == 0 && descent > 0.0)
      throw std::logic_error("gmp: first Adam step is not a descent direction");
  }
  return out;
}

sim::Vec2List replan_receding(const sim::Simulator& simulator, const sim::SimState& state,
                              const scene::GoalSpec& goal, int horizon, const GmpConfig& cfg) {
  return plan(simulator, state, goal, horizon, cfg).plan.step(0);
}

}  // namespace copush::plan
