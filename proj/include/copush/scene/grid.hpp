#pragma once

#include <vector>

#include "copush/sim/state.hpp"

namespace copush::scene {

using sim::Vec2;
using sim::Vec2List;

// Evaluation lattice over the unit workspace. The scene is planar, so the
// lattice is a single slab (nz = 1) at the body's height.
struct Lattice {
  int nx = 32;
  int ny = 32;
  int nz = 1;

  static Lattice square(int res) { return {res, res, 1}; }
  double cell() const { return 1.0 / nx; }
  std::size_t cells() const { return static_cast<std::size_t>(nx) * ny * nz; }
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * ny + j; }
  bool operator==(const Lattice&) const = default;
};

struct OccupancyGrid {
  Lattice lattice;
  std::vector<double> occupancy;  // 0 or 1 per cell

  std::size_t count() const;
};

struct SdfGrid {
  Lattice lattice;
  std::vector<double> distance;  // metres, negative inside
};

// Binary occupancy: a cell is 1 when any particle falls in it.
OccupancyGrid occupancy(const Vec2List& particles, const Lattice& lattice);

// |a and b| / |a or b|; 1 when both are empty.
double iou(const OccupancyGrid& a, const OccupancyGrid& b);

// max((f(s_t, s_g) - f(s_0, s_g)) / max(1 - f(s_0, s_g), eps), 0) with
// f = iou of binary occupancies.
double reward(const Vec2List& current, const Vec2List& initial, const Vec2List& goal,
              const Lattice& lattice, double eps = 1e-6);
// Same metric from precomputed similarities.
double reward_from_similarity(double f_t, double f_0, double eps = 1e-6);

// Exact Euclidean distance transform between cell centres. Outside cells
// hold (distance to the nearest occupied centre) - cell/2, inside cells hold
// -((distance to the nearest free centre) - cell/2). A lone occupied cell is
// -cell/2 with +cell/2 at its edge neighbours. Throws on an empty grid.
SdfGrid sdf(const OccupancyGrid& occ);

// Bilinear mass raster on cell centres. Weight falling outside the lattice is
// folded into the border cell, so the raster sums to the total mass.
std::vector<double> density(const Vec2List& particles, double particle_mass,
                            const Lattice& lattice);

// Adds d(sum_c weights[c] * density_c)/dx_p for every particle into grad.
void density_backward(const Vec2List& particles, double particle_mass,
                      const Lattice& lattice, const std::vector<double>& weights,
                      Vec2List& grad);

}  // namespace copush::scene
