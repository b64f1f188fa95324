#pragma once

#include <array>

#include "copush/common/rng.hpp"
#include "copush/sim/state.hpp"

namespace copush::scene {

using sim::Vec2;
using sim::Vec2List;

// y = a3 x^3 + a2 x^2 + a1 x + a0 for x in [x_begin, x_end].
struct Cubic {
  std::array<double, 4> coeffs{0.0, 0.0, 0.0, 0.5};  // a3, a2, a1, a0
  double x_begin = 0.2;
  double x_end = 0.8;

  double y(double x) const;
  double slope(double x) const;
  Vec2 point(double x) const { return {x, y(x)}; }
  // Unit normal (left of the direction of increasing x).
  Vec2 normal(double x) const;

  double arc_length() const;
  // x where the arc length measured from x_begin reaches s.
  double x_at_arc_length(double s) const;

  bool operator==(const Cubic&) const = default;
};

// n points equally spaced in arc length, endpoints included.
Vec2List centerline(const Cubic& curve, int n);

// Throws ConfigError naming the first x where the curve leaves the
// workspace shrunk by `margin`.
void check_inside(const Cubic& curve, double margin);

// Random goal curve: a3 in [-1, 1], a2 in [-0.8, 0.8], a1 in [-0.5, 0.5],
// a0 chosen so the mean height over [x_begin, x_end] is 0.5; redrawn until
// the curve keeps `margin` from every wall.
Cubic sample_goal_curve(Rng& rng, double margin = 0.1);

}  // namespace copush::scene
