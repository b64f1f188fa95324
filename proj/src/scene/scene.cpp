#include "copush/scene/scene.hpp"

#include <cmath>

#include "copush/common/error.hpp"

namespace copush::scene {

namespace {
constexpr double kGoldenFraction = 0.6180339887498949;
}

Vec2List sample_rope(const Cubic& curve, const RopeSpec& rope) {
  COPUSH_REQUIRE(rope.n_particles >= 1, "rope: need at least one particle");
  COPUSH_REQUIRE(rope.half_width > 0.0, "rope: half width must be positive");
  check_inside(curve, rope.half_width);
  const int n = rope.n_particles;
  const double total = curve.arc_length();
  Vec2List out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double s = total * (i + 0.5) / n;
    const double x = curve.x_at_arc_length(s);
    const double frac = std::fmod(0.5 + i * kGoldenFraction, 1.0);
    const double across = rope.half_width * (2.0 * frac - 1.0);
    out.push_back(curve.point(x) + across * curve.normal(x));
  }
  return out;
}

sim::ParticleField build_rope_scene(const sim::SimConfig& cfg, const Cubic& curve,
                                    const RopeSpec& rope) {
  Vec2List pos = sample_rope(curve, rope);
  const double area = curve.arc_length() * 2.0 * rope.half_width;
  const double volume = area / rope.n_particles;
  return sim::ParticleField::at_rest(std::move(pos), cfg.density * volume, volume);
}

int box_particle_count(const Vec2& half_extents, double spacing) {
  const int nx = static_cast<int>(std::floor(2.0 * half_extents.x() / spacing + 1e-9));
  const int ny = static_cast<int>(std::floor(2.0 * half_extents.y() / spacing + 1e-9));
  return nx * ny;
}

BoxScene build_box_scene(const sim::SimConfig& cfg, const Vec2& center,
                         const Vec2& half_extents, double spacing) {
  if (spacing <= 0.0) spacing = 0.5 * cfg.dx();
  const Vec2 lo = center - half_extents, hi = center + half_extents;
  if (!(half_extents.x() > 0.0 && half_extents.y() > 0.0))
    throw ConfigError("box: half extents must be positive");
  if (lo.x() < 0.0 || lo.y() < 0.0 || hi.x() > 1.0 || hi.y() > 1.0)
    throw ConfigError("box lies outside the workspace");
  const int nx = static_cast<int>(std::floor(2.0 * half_extents.x() / spacing + 1e-9));
  const int ny = static_cast<int>(std::floor(2.0 * half_extents.y() / spacing + 1e-9));
  if (nx < 1 || ny < 1) throw ConfigError("box: smaller than one lattice spacing");
  // centre the lattice inside the rectangle
  const Vec2 start = center - 0.5 * Vec2((nx - 1) * spacing, (ny - 1) * spacing);
  Vec2List pos;
  pos.reserve(static_cast<std::size_t>(nx) * ny);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) pos.push_back(start + spacing * Vec2(i, j));
  const double volume = 4.0 * half_extents.x() * half_extents.y() / (nx * ny);
  BoxScene out;
  out.particles = sim::ParticleField::at_rest(std::move(pos), cfg.density * volume, volume);
  out.config = cfg;
  out.config.yield_stress = std::max(cfg.yield_stress, 100.0 * cfg.youngs_modulus);
  return out;
}

GoalSpec make_goal(const Cubic& curve, const sim::ParticleField& templ, double half_width) {
  GoalSpec g;
  g.curve = curve;
  g.rope.half_width = half_width;
  g.rope.n_particles = static_cast<int>(templ.size());
  g.particles = sample_rope(curve, g.rope);
  return g;
}

Vec2List default_robot_positions(const Cubic& rope, int n_robots, double offset) {
  COPUSH_REQUIRE(n_robots >= 1, "need at least one robot");
  Vec2List out;
  const double total = rope.arc_length();
  for (int i = 0; i < n_robots; ++i) {
    const double x = rope.x_at_arc_length(total * (i + 0.5) / n_robots);
    const double side = (i % 2 == 0) ? -1.0 : 1.0;
    Vec2 p = rope.point(x) + side * offset * rope.normal(x);
    out.push_back(p.cwiseMax(0.0).cwiseMin(1.0));
  }
  return out;
}

}  // namespace copush::scene
