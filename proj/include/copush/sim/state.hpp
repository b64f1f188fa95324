#pragma once

#include <Eigen/Core>
#include <vector>

#include "copush/common/error.hpp"

namespace copush::sim {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Vec2List = std::vector<Vec2, Eigen::aligned_allocator<Vec2>>;
using Mat2List = std::vector<Mat2, Eigen::aligned_allocator<Mat2>>;

// Planar soft body. z is implicit (SimConfig::plane_z) and v_z is zero.
struct ParticleField {
  Vec2List positions;
  Vec2List velocities;
  Mat2List affine;       // APIC velocity-gradient estimate per particle
  Mat2List deformation;  // deformation gradient per particle
  double mass = 0.0;     // per particle
  double volume = 0.0;   // per particle, rest configuration

  std::size_t size() const { return positions.size(); }
  double total_mass() const { return mass * static_cast<double>(size()); }

  // Zero velocities, identity deformation.
  static ParticleField at_rest(Vec2List positions, double mass, double volume);
};

struct RobotSet {
  Vec2List positions;
  Vec2List velocities;  // last applied planar velocity (m/s)
  double radius = 0.02;

  int size() const { return static_cast<int>(positions.size()); }
  static RobotSet at(Vec2List positions, double radius);
};

struct SimState {
  ParticleField particles;
  RobotSet robots;
  int step_index = 0;
};

// T x N_r x 2 robot commands.
class ActionPlan {
 public:
  ActionPlan() = default;
  ActionPlan(int horizon, int n_robots)
      : horizon_(horizon),
        n_robots_(n_robots),
        commands_(static_cast<std::size_t>(horizon) * n_robots,
                  Vec2::Zero()) {
    COPUSH_REQUIRE(horizon >= 0 && n_robots >= 1, "ActionPlan: bad shape");
  }

  int horizon() const { return horizon_; }
  int n_robots() const { return n_robots_; }

  Vec2& at(int t, int i) { return commands_[index(t, i)]; }
  const Vec2& at(int t, int i) const { return commands_[index(t, i)]; }

  // Commands of step t, one per robot.
  Vec2List step(int t) const {
    return Vec2List(commands_.begin() + index(t, 0),
                    commands_.begin() + index(t, 0) + n_robots_);
  }
  void set_step(int t, const Vec2List& a) {
    COPUSH_REQUIRE(static_cast<int>(a.size()) == n_robots_,
                   "ActionPlan::set_step: robot count mismatch");
    std::copy(a.begin(), a.end(), commands_.begin() + index(t, 0));
  }

  Vec2List& flat() { return commands_; }
  const Vec2List& flat() const { return commands_; }

  // Largest |component| over all commands.
  double max_abs() const;
  void clamp(double limit);

  bool operator==(const ActionPlan& o) const {
    return horizon_ == o.horizon_ && n_robots_ == o.n_robots_ &&
           commands_ == o.commands_;
  }

 private:
  std::size_t index(int t, int i) const {
    COPUSH_REQUIRE(t >= 0 && t < horizon_ && i >= 0 && i < n_robots_,
                   "ActionPlan: index out of range");
    return static_cast<std::size_t>(t) * n_robots_ + i;
  }

  int horizon_ = 0;
  int n_robots_ = 1;
  Vec2List commands_;
};

}  // namespace copush::sim
