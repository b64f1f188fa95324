#include "copush/scene/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "copush/common/error.hpp"

namespace copush::scene {

std::size_t OccupancyGrid::count() const {
  std::size_t n = 0;
  for (double v : occupancy) n += v > 0.5 ? 1 : 0;
  return n;
}

OccupancyGrid occupancy(const Vec2List& particles, const Lattice& lattice) {
  OccupancyGrid g{lattice, std::vector<double>(lattice.cells(), 0.0)};
  for (const auto& p : particles) {
    const int i = std::clamp(static_cast<int>(std::floor(p.x() * lattice.nx)), 0, lattice.nx - 1);
    const int j = std::clamp(static_cast<int>(std::floor(p.y() * lattice.ny)), 0, lattice.ny - 1);
    g.occupancy[lattice.index(i, j)] = 1.0;
  }
  return g;
}

double iou(const OccupancyGrid& a, const OccupancyGrid& b) {
  COPUSH_REQUIRE(a.lattice == b.lattice, "iou: lattices differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t c = 0; c < a.occupancy.size(); ++c) {
    const bool x = a.occupancy[c] > 0.5, y = b.occupancy[c] > 0.5;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double reward_from_similarity(double f_t, double f_0, double eps) {
  return std::max((f_t - f_0) / std::max(1.0 - f_0, eps), 0.0);
}

double reward(const Vec2List& current, const Vec2List& initial, const Vec2List& goal,
              const Lattice& lattice, double eps) {
  const OccupancyGrid g = occupancy(goal, lattice);
  return reward_from_similarity(iou(occupancy(current, lattice), g),
                                iou(occupancy(initial, lattice), g), eps);
}

namespace {

constexpr double kFar = 1e20;  // stands in for "no seed cell"

// 1D squared distance transform of a sampled function: lower envelope of
// parabolas rooted at every sample.
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
            std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  auto meet = [&](int q, int p) {
    return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
  };
  for (int q = 1; q < n; ++q) {
    double s = meet(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = meet(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double diff = q - v[k];
    d[q] = diff * diff + f[v[k]];
  }
}

// Squared distance (in cells) from every cell to the nearest seed cell;
// kFar or more where there is no seed.
std::vector<double> squared_edt(const std::vector<char>& seed, const Lattice& lat) {
  std::vector<double> grid(lat.cells(), kFar);
  for (std::size_t c = 0; c < grid.size(); ++c)
    if (seed[c]) grid[c] = 0.0;
  const int n = std::max(lat.nx, lat.ny);
  std::vector<double> f, d, z(n + 1);
  std::vector<int> v(n);
  f.resize(lat.ny);
  d.resize(lat.ny);
  for (int i = 0; i < lat.nx; ++i) {
    for (int j = 0; j < lat.ny; ++j) f[j] = grid[lat.index(i, j)];
    edt_1d(f, d, v, z);
    for (int j = 0; j < lat.ny; ++j) grid[lat.index(i, j)] = d[j];
  }
  f.resize(lat.nx);
  d.resize(lat.nx);
  for (int j = 0; j < lat.ny; ++j) {
    for (int i = 0; i < lat.nx; ++i) f[i] = grid[lat.index(i, j)];
    edt_1d(f, d, v, z);
    for (int i = 0; i < lat.nx; ++i) grid[lat.index(i, j)] = d[i];
  }
  return grid;
}

}  // namespace

SdfGrid sdf(const OccupancyGrid& occ) {
  const Lattice& lat = occ.lattice;
  std::vector<char> inside(lat.cells()), outside(lat.cells());
  bool any = false;
  for (std::size_t c = 0; c < lat.cells(); ++c) {
    inside[c] = occ.occupancy[c] > 0.5;
    outside[c] = !inside[c];
    any = any || inside[c];
  }
  if (!any) throw ContractViolation("sdf: occupancy grid is empty");
  const std::vector<double> to_body = squared_edt(inside, lat);
  const std::vector<double> to_free = squared_edt(outside, lat);
  const double h = lat.cell();
  SdfGrid out{lat, std::vector<double>(lat.cells())};
  for (std::size_t c = 0; c < lat.cells(); ++c) {
    if (inside[c]) {
      // a fully occupied lattice has no free cell; treat the border as free
      const double d = to_free[c] < 0.5 * kFar ? std::sqrt(to_free[c]) : 1.0;
      out.distance[c] = -(d - 0.5) * h;
    } else {
      out.distance[c] = (std::sqrt(to_body[c]) - 0.5) * h;
    }
  }
  return out;
}

namespace {

struct Bilinear {
  int i0, i1, j0, j1;
  double wx0, wx1, wy0, wy1;
  double dwx, dwy;  // d(wx1)/dx, d(wy1)/dy
};

Bilinear bilinear(const Vec2& p, const Lattice& lat) {
  Bilinear b;
  const double gx = p.x() * lat.nx - 0.5, gy = p.y() * lat.ny - 0.5;
  const int ix = static_cast<int>(std::floor(gx)), iy = static_cast<int>(std::floor(gy));
  const double fx = gx - ix, fy = gy - iy;
  b.i0 = std::clamp(ix, 0, lat.nx - 1);
  b.i1 = std::clamp(ix + 1, 0, lat.nx - 1);
  b.j0 = std::clamp(iy, 0, lat.ny - 1);
  b.j1 = std::clamp(iy + 1, 0, lat.ny - 1);
  b.wx1 = fx;
  b.wx0 = 1.0 - fx;
  b.wy1 = fy;
  b.wy0 = 1.0 - fy;
  b.dwx = lat.nx;
  b.dwy = lat.ny;
  return b;
}

}  // namespace

std::vector<double> density(const Vec2List& particles, double particle_mass,
                            const Lattice& lattice) {
  std::vector<double> rho(lattice.cells(), 0.0);
  for (const auto& p : particles) {
    const Bilinear b = bilinear(p, lattice);
    rho[lattice.index(b.i0, b.j0)] += particle_mass * b.wx0 * b.wy0;
    rho[lattice.index(b.i1, b.j0)] += particle_mass * b.wx1 * b.wy0;
    rho[lattice.index(b.i0, b.j1)] += particle_mass * b.wx0 * b.wy1;
    rho[lattice.index(b.i1, b.j1)] += particle_mass * b.wx1 * b.wy1;
  }
  return rho;
}

void density_backward(const Vec2List& particles, double particle_mass,
                      const Lattice& lattice, const std::vector<double>& weights,
                      Vec2List& grad) {
  COPUSH_REQUIRE(grad.size() == particles.size(), "density_backward: size mismatch");
  for (std::size_t p = 0; p < particles.size(); ++p) {
    const Bilinear b = bilinear(particles[p], lattice);
    const double w00 = weights[lattice.index(b.i0, b.j0)];
    const double w10 = weights[lattice.index(b.i1, b.j0)];
    const double w01 = weights[lattice.index(b.i0, b.j1)];
    const double w11 = weights[lattice.index(b.i1, b.j1)];
    const double gx = ((w10 - w00) * b.wy0 + (w11 - w01) * b.wy1) * b.dwx;
    const double gy = ((w01 - w00) * b.wx0 + (w11 - w10) * b.wx1) * b.dwy;
    grad[p] += particle_mass * Vec2(gx, gy);
  }
}

}  // namespace copush::scene
