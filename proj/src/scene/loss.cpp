#include "copush/scene/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace copush::scene {

StepLoss::StepLoss(const GoalSpec& goal, double particle_mass, LossOptions options)
    : options_(options),
      lattice_(Lattice::square(options.lattice_res)),
      particle_mass_(particle_mass) {
  goal_density_ = density(goal.particles, particle_mass_, lattice_);
  goal_sdf_ = sdf(occupancy(goal.particles, lattice_));
}

double soft_grasp_distance(const Vec2& robot, double radius, const Vec2List& particles,
                           double tau, Vec2* grad_robot, Vec2List* grad_particles) {
  if (particles.empty()) return 0.0;
  double dmin = std::numeric_limits<double>::infinity();
  std::vector<double> d(particles.size());
  for (std::size_t p = 0; p < particles.size(); ++p) {
    d[p] = (robot - particles[p]).norm() - radius;
    dmin = std::min(dmin, d[p]);
  }
  double z = 0.0;
  for (double dp : d) z += std::exp(-(dp - dmin) / tau);
  const double value = dmin - tau * std::log(z);
  if (grad_robot || grad_particles) {
    for (std::size_t p = 0; p < particles.size(); ++p) {
      const double w = std::exp(-(d[p] - dmin) / tau) / z;
      if (w == 0.0) continue;
      const Vec2 off = robot - particles[p];
      const double n = off.norm();
      if (n == 0.0) continue;
      const Vec2 dir = off / n;
      if (grad_robot) *grad_robot += w * dir;
      if (grad_particles) (*grad_particles)[p] -= w * dir;
    }
  }
  return value;
}

LossTerms StepLoss::evaluate(const sim::SimState& state, sim::StateGradient* grad) const {
  const Vec2List& x = state.particles.positions;
  const LossCoeffs& c = options_.coeffs;
  LossTerms terms;

  const std::vector<double> rho = density(x, particle_mass_, lattice_);
  const double delta = options_.mass_smoothing * particle_mass_;
  std::vector<double> weights(rho.size(), 0.0);
  for (std::size_t i = 0; i < rho.size(); ++i) {
    const double diff = rho[i] - goal_density_[i];
    const double root = std::sqrt(diff * diff + delta * delta);
    terms.mass += root - delta;
    weights[i] = c.mass * diff / root;
  }
  if (options_.dist_mode == DistMode::kDensityDotSdf) {
    for (std::size_t i = 0; i < rho.size(); ++i) {
      terms.dist += rho[i] * goal_sdf_.distance[i];
      weights[i] += c.dist * goal_sdf_.distance[i];
    }
  } else {
    const SdfGrid own = sdf(occupancy(x, lattice_));
    for (std::size_t i = 0; i < rho.size(); ++i)
      terms.dist += own.distance[i] * goal_sdf_.distance[i];
  }

  const double radius = state.robots.radius;
  for (int r = 0; r < state.robots.size(); ++r) {
    Vec2* gr = grad ? &grad->robots[r] : nullptr;
    Vec2List* gp = grad ? &grad->particles : nullptr;
    if (gr) {
      // scale by c3 after accumulation
      Vec2 local = Vec2::Zero();
      Vec2List local_p(x.size(), Vec2::Zero());
      terms.grasp += soft_grasp_distance(state.robots.positions[r], radius, x,
                                         options_.grasp_temperature, &local, &local_p);
      *gr += c.grasp * local;
      for (std::size_t p = 0; p < x.size(); ++p) (*gp)[p] += c.grasp * local_p[p];
    } else {
      terms.grasp += soft_grasp_distance(state.robots.positions[r], radius, x,
                                         options_.grasp_temperature, nullptr, nullptr);
    }
    double hard = std::numeric_limits<double>::infinity();
    for (const auto& p : x) hard = std::min(hard, (state.robots.positions[r] - p).norm() - radius);
    if (!x.empty()) terms.grasp_hard += hard;
  }

  if (grad) density_backward(x, particle_mass_, lattice_, weights, grad->particles);
  terms.total = c.mass * terms.mass + c.dist * terms.dist + c.grasp * terms.grasp;
  return terms;
}

sim::StepLossFn StepLoss::as_step_fn() const {
  return [this](int, const sim::SimState& s, sim::StateGradient* g) {
    return evaluate(s, g).total;
  };
}

}  // namespace copush::scene
