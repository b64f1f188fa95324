#pragma once

#include <cstdint>
#include <vector>

#include "copush/nn/layers.hpp"
#include "copush/scene/scene.hpp"
#include "copush/sim/state.hpp"

namespace copush::policy {

using sim::Vec2;
using sim::Vec2List;

// n indices spread with a constant stride over [0, n_total), shifted by a
// seeded offset below one stride.
std::vector<int> downsample_particles(int n_total, int n, std::uint64_t seed);

// Index of the closest other robot (ties to the lower index), -1 when alone.
int nearest_neighbor(const Vec2List& robots, int i);

// mask(i, j) is true for j == i and j == nearest_neighbor(i).
nn::Mask visibility_mask(const Vec2List& robots);

// 3 n (current particles, robot frame) + 3 n (goal particles, robot frame)
// + 3 (nearest neighbour offset) + 3 n (goal minus current particles).
inline int observation_width(int n_particles) { return 9 * n_particles + 3; }

// One row per robot. Frames are robot-centred translations; z offsets are
// zero because robots and body share the plane.
nn::Mat build_observation(const sim::SimState& state, const scene::GoalSpec& goal,
                          const std::vector<int>& indices);

}  // namespace copush::policy
