#include "copush/policy/observation.hpp"

#include <cmath>

#include "copush/common/error.hpp"
#include "copush/common/rng.hpp"

namespace copush::policy {

std::vector<int> downsample_particles(int n_total, int n, std::uint64_t seed) {
  COPUSH_REQUIRE(n >= 1, "downsample: need at least one particle");
  COPUSH_REQUIRE(n <= n_total, "downsample: cannot pick " + std::to_string(n) + " of " +
                                   std::to_string(n_total) + " particles");
  auto rng = make_rng(seed, "policy.downsample");
  const double offset = uniform(rng, 0.0, 1.0);
  const double stride = static_cast<double>(n_total) / n;
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k)
    idx[static_cast<std::size_t>(k)] = std::min(n_total - 1, static_cast<int>(std::floor((k + offset) * stride)));
  return idx;
}

int nearest_neighbor(const Vec2List& robots, int i) {
  int best = -1;
  double best_d = INFINITY;
  for (int j = 0; j < static_cast<int>(robots.size()); ++j) {
    if (j == i) continue;
    const double d = (robots[j] - robots[i]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

nn::Mask visibility_mask(const Vec2List& robots) {
  const int n = static_cast<int>(robots.size());
  nn::Mask m = nn::Mask::Constant(n, n, false);
  for (int i = 0; i < n; ++i) {
    m(i, i) = true;
    const int j = nearest_neighbor(robots, i);
    if (j >= 0) m(i, j) = true;
  }
  return m;
}

nn::Mat build_observation(const sim::SimState& state, const scene::GoalSpec& goal,
                          const std::vector<int>& indices) {
  const auto& x = state.particles.positions;
  COPUSH_REQUIRE(goal.particles.size() == x.size(), "observation: goal/body particle count mismatch");
  const int n = static_cast<int>(indices.size());
  const int nr = state.robots.size();
  nn::Mat obs = nn::Mat::Zero(nr, observation_width(n));
  for (int i = 0; i < nr; ++i) {
    const Vec2& r = state.robots.positions[i];
    auto row = obs.row(i);
    for (int k = 0; k < n; ++k) {
      const std::size_t p = static_cast<std::size_t>(indices[static_cast<std::size_t>(k)]);
      COPUSH_REQUIRE(p < x.size(), "observation: particle index out of range");
      const Vec2 a = x[p] - r;
      const Vec2 b = goal.particles[p] - r;
      const Vec2 d = goal.particles[p] - x[p];
      row(3 * k) = a.x();
      row(3 * k + 1) = a.y();
      row(3 * n + 3 * k) = b.x();
      row(3 * n + 3 * k + 1) = b.y();
      row(6 * n + 3 + 3 * k) = d.x();
      row(6 * n + 3 + 3 * k + 1) = d.y();
    }
    const int j = nearest_neighbor(state.robots.positions, i);
    if (j >= 0) {
      const Vec2 c = state.robots.positions[j] - r;
      row(6 * n) = c.x();
      row(6 * n + 1) = c.y();
    }
  }
  return obs;
}

}  // namespace copush::policy
