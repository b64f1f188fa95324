#pragma once

#include "copush/scene/curve.hpp"
#include "copush/sim/config.hpp"
#include "copush/sim/state.hpp"

namespace copush::scene {

struct RopeSpec {
  double half_width = 0.02;
  int n_particles = 512;
};

// Particles along the curve: equally spaced arc-length stations, each
// paired with an offset across the rope drawn from a golden-ratio sequence,
// which fills the band uniformly. Particle i has the same (station, offset)
// in every rope built with the same count, which gives goal correspondence.
sim::ParticleField build_rope_scene(const sim::SimConfig& cfg, const Cubic& curve,
                                    const RopeSpec& rope);

// Positions only (no mass bookkeeping).
Vec2List sample_rope(const Cubic& curve, const RopeSpec& rope);

struct BoxScene {
  sim::ParticleField particles;
  sim::SimConfig config;  // yield stress raised so the block stays nearly rigid
};

// Lattice fill at `spacing` (defaults to half a grid cell):
// floor(2 hx / spacing) x floor(2 hy / spacing) particles at lattice centres.
BoxScene build_box_scene(const sim::SimConfig& cfg, const Vec2& center,
                         const Vec2& half_extents, double spacing = 0.0);
int box_particle_count(const Vec2& half_extents, double spacing);

struct GoalSpec {
  Cubic curve;
  RopeSpec rope;
  Vec2List particles;  // fixed for the episode
};

// Goal built with the same sampling as build_rope_scene; the particle count
// follows the template.
GoalSpec make_goal(const Cubic& curve, const sim::ParticleField& templ,
                   double half_width = 0.02);

// Default team layout: robots spread along the rope, alternating sides.
Vec2List default_robot_positions(const Cubic& rope, int n_robots, double offset = 0.06);

}  // namespace copush::scene
