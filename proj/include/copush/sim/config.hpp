#pragma once

#include <string>

namespace copush::sim {

// How Table-style "velocity limit" applies when more than two robots act.
enum class VelocityLimitMode {
  kPerRobot,  // every robot gets the full limit on each axis
  kShared,    // limit is scaled by 2 / N_r (quoted for a pair of robots)
};

struct SimConfig {
  // Coulomb coefficient. Used for robot/body contact and for body/floor drag.
  double friction = 1.5;
  double yield_stress = 30.0;
  // Per-axis bound on robot commands.
  double velocity_limit = 0.015;
  double robot_radius = 0.02;
  double dt = 5e-4;
  int grid_res = 32;
  double youngs_modulus = 300.0;
  double poisson_ratio = 0.2;
  int substeps_per_control = 20;

  // Areal density of the body (kg / m^2).
  double density = 1.0;
  // Normal acceleration pressing the body on the floor; friction * this is
  // the Coulomb deceleration of moving material.
  double floor_accel = 40.0;
  // Extra viscous drag on grid velocities (1/s).
  double damping = 0.0;
  // Robot velocity in m/s per unit command. A command is the displacement
  // per control period when gain == 1 / (substeps * dt).
  double command_gain = 100.0;
  // Exponential falloff of the grid contact band around robot discs (1/m).
  double contact_softness = 50.0;
  // Velocity scale (m/s) over which contact and floor friction switch
  // smoothly between stick and slip.
  double smoothing_speed = 0.05;
  // Grid nodes closer than this many cells to the border cannot move outward.
  int boundary_cells = 2;
  // Constant height of the planar scene, carried so 3D interfaces stay uniform.
  double plane_z = 0.0;
  VelocityLimitMode limit_mode = VelocityLimitMode::kPerRobot;

  double dx() const { return 1.0 / grid_res; }
  double mu() const { return youngs_modulus / (2.0 * (1.0 + poisson_ratio)); }
  double lambda() const {
    return youngs_modulus * poisson_ratio /
           ((1.0 + poisson_ratio) * (1.0 - 2.0 * poisson_ratio));
  }
  double control_period() const { return dt * substeps_per_control; }
  // Command bound actually applied for a team of n robots.
  double effective_limit(int n_robots) const;

  // Throws ConfigError when a field is out of range.
  void validate() const;
};

std::string to_string(VelocityLimitMode mode);
VelocityLimitMode velocity_limit_mode_from_string(const std::string& s);

}  // namespace copush::sim
