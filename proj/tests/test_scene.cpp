#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "copush/common/error.hpp"
#include "support.hpp"

using namespace copush;
using copush::testing::rel_err;
using scene::Cubic;
using scene::Lattice;
using sim::Vec2;
using sim::Vec2List;

namespace {

// Distance from p to the curve by dense sampling.
double curve_distance(const Cubic& c, const Vec2& p) {
  constexpr int kSamples = 20000;
  double best = 1e300;
  for (int i = 0; i <= kSamples; ++i) {
    const double x = c.x_begin + (c.x_end - c.x_begin) * i / kSamples;
    best = std::min(best, (c.point(x) - p).norm());
  }
  return best;
}

scene::OccupancyGrid cells(const Lattice& lat, std::initializer_list<std::pair<int, int>> on) {
  scene::OccupancyGrid g{lat, std::vector<double>(lat.cells(), 0.0)};
  for (auto [i, j] : on) g.occupancy[lat.index(i, j)] = 1.0;
  return g;
}

Vec2 centroid(const Vec2List& pts) {
  Vec2 c = Vec2::Zero();
  for (const auto& p : pts) c += p;
  return c / static_cast<double>(pts.size());
}

}  // namespace

TEST(RopeScene, StraightRopeIsHorizontalWithEvenStations) {
  sim::SimConfig cfg;
  Cubic straight;
  auto pts = scene::centerline(straight, 7);
  for (int i = 0; i < 7; ++i) {
    EXPECT_NEAR(pts[i].y(), 0.5, 1e-12);
    EXPECT_NEAR(pts[i].x(), 0.2 + 0.1 * i, 1e-9);
  }
  scene::RopeSpec rope;
  auto pf = scene::build_rope_scene(cfg, straight, rope);
  for (const auto& p : pf.positions) EXPECT_LE(std::abs(p.y() - 0.5), rope.half_width + 1e-12);
}

TEST(RopeScene, ParticlesStayWithinHalfWidthOfCurve) {
  sim::SimConfig cfg;
  auto rng = make_rng(4, "curves");
  for (int k = 0; k < 3; ++k) {
    Cubic c = scene::sample_goal_curve(rng);
    scene::RopeSpec rope;
    rope.n_particles = 200;
    auto pf = scene::build_rope_scene(cfg, c, rope);
    for (const auto& p : pf.positions) EXPECT_LE(curve_distance(c, p), rope.half_width + 1e-4);
  }
}

TEST(RopeScene, EmitsRequestedCountAtRest) {
  sim::SimConfig cfg;
  scene::RopeSpec rope;
  auto pf = scene::build_rope_scene(cfg, Cubic{}, rope);
  ASSERT_EQ(pf.size(), 512u);
  for (std::size_t i = 0; i < pf.size(); ++i) {
    EXPECT_EQ(pf.velocities[i], Vec2::Zero());
    EXPECT_EQ(pf.deformation[i], sim::Mat2::Identity());
  }
  EXPECT_NEAR(pf.total_mass(), cfg.density * 0.6 * 0.04, 1e-12);
}

TEST(RopeScene, CurveOutsideWorkspaceNamesX) {
  Cubic c;
  c.coeffs = {0.0, 0.0, 1.0, 0.3};  // y reaches 1.1 at x = 0.8
  try {
    scene::build_rope_scene(sim::SimConfig{}, c, scene::RopeSpec{});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x="), std::string::npos);
  }
}

TEST(GoalSampler, CurvesAreCenteredAndInside) {
  auto rng = make_rng(1, "goals");
  for (int k = 0; k < 50; ++k) {
    Cubic c = scene::sample_goal_curve(rng);
    EXPECT_NO_THROW(scene::check_inside(c, 0.1));
    double mean = 0.0;
    for (int i = 0; i < 1000; ++i) mean += c.y(0.2 + 0.6 * (i + 0.5) / 1000) / 1000;
    EXPECT_NEAR(mean, 0.5, 1e-6);
    EXPECT_LE(std::abs(c.coeffs[0]), 1.0);
    EXPECT_LE(std::abs(c.coeffs[1]), 0.8);
    EXPECT_LE(std::abs(c.coeffs[2]), 0.5);
  }
}

TEST(BoxScene, ParticlesFillRectangleWithLatticeCount) {
  sim::SimConfig cfg;
  auto box = scene::build_box_scene(cfg, Vec2(0.5, 0.5), Vec2(0.1, 0.05));
  const double spacing = 0.5 * cfg.dx();
  EXPECT_EQ(static_cast<int>(box.particles.size()),
            scene::box_particle_count(Vec2(0.1, 0.05), spacing));
  EXPECT_EQ(box.particles.size(), static_cast<std::size_t>(12 * 6));
  for (const auto& p : box.particles.positions) {
    EXPECT_LE(std::abs(p.x() - 0.5), 0.1);
    EXPECT_LE(std::abs(p.y() - 0.5), 0.05);
  }
  EXPECT_GT(box.config.yield_stress, cfg.yield_stress);
}

TEST(BoxScene, OutsideWorkspaceIsRejected) {
  EXPECT_THROW(scene::build_box_scene(sim::SimConfig{}, Vec2(0.95, 0.5), Vec2(0.1, 0.05)),
               ConfigError);
}

TEST(BoxScene, PushTranslatesCentroidAlongPush) {
  sim::SimConfig cfg;
  auto box = scene::build_box_scene(cfg, Vec2(0.5, 0.5), Vec2(0.1, 0.05));
  sim::SimState s;
  s.particles = box.particles;
  s.robots = sim::RobotSet::at({Vec2(0.37, 0.5)}, cfg.robot_radius);
  sim::Simulator simu(box.config);
  sim::ActionPlan plan(40, 1);
  for (int t = 0; t < 40; ++t) plan.at(t, 0) = Vec2(0.005, 0.0);
  auto traj = simu.rollout(s, plan);
  const Vec2 shift = centroid(traj.back().particles.positions) - centroid(s.particles.positions);
  EXPECT_GT(shift.x(), 0.02);
  EXPECT_LT(std::abs(shift.y()), 0.25 * shift.x());
}

TEST(Goal, SameCurveReproducesInitialParticles) {
  sim::SimConfig cfg;
  auto rng = make_rng(2, "goals");
  Cubic c = scene::sample_goal_curve(rng);
  auto pf = scene::build_rope_scene(cfg, c, scene::RopeSpec{});
  auto goal = scene::make_goal(c, pf);
  ASSERT_EQ(goal.particles.size(), pf.size());
  EXPECT_EQ(goal.particles, pf.positions);
  const auto lat = Lattice::square(32);
  EXPECT_EQ(scene::iou(scene::occupancy(pf.positions, lat), scene::occupancy(goal.particles, lat)),
            1.0);
}

TEST(Goal, CountFollowsTemplate) {
  scene::RopeSpec rope;
  rope.n_particles = 100;
  auto pf = scene::build_rope_scene(sim::SimConfig{}, Cubic{}, rope);
  Cubic shifted;
  shifted.coeffs[3] = 0.6;
  EXPECT_EQ(scene::make_goal(shifted, pf).particles.size(), 100u);
}

TEST(Occupancy, SingleParticleAtCellCentre) {
  const auto lat = Lattice::square(32);
  auto g = scene::occupancy({Vec2((5 + 0.5) / 32, (9 + 0.5) / 32)}, lat);
  EXPECT_EQ(g.count(), 1u);
  EXPECT_EQ(g.occupancy[lat.index(5, 9)], 1.0);
}

TEST(Occupancy, EmptySetGivesEmptyGrid) {
  auto g = scene::occupancy({}, Lattice::square(32));
  EXPECT_EQ(g.count(), 0u);
  EXPECT_EQ(g.occupancy.size(), 32u * 32u);
}

TEST(Occupancy, MatchesBruteForceBinning) {
  auto pf = scene::build_rope_scene(sim::SimConfig{}, Cubic{{0.5, -0.3, 0.1, 0.45}}, {});
  const auto lat = Lattice::square(32);
  std::set<std::pair<int, int>> bins;
  for (const auto& p : pf.positions)
    bins.insert({std::min(31, static_cast<int>(p.x() * 32)), std::min(31, static_cast<int>(p.y() * 32))});
  auto g = scene::occupancy(pf.positions, lat);
  EXPECT_EQ(g.count(), bins.size());
  for (auto [i, j] : bins) EXPECT_EQ(g.occupancy[lat.index(i, j)], 1.0);
}

TEST(Occupancy, InvariantUnderPermutation) {
  auto pf = scene::build_rope_scene(sim::SimConfig{}, Cubic{}, {});
  auto shuffled = pf.positions;
  std::shuffle(shuffled.begin(), shuffled.end(), make_rng(5, "perm"));
  const auto lat = Lattice::square(32);
  EXPECT_EQ(scene::occupancy(pf.positions, lat).occupancy, scene::occupancy(shuffled, lat).occupancy);
}

TEST(Iou, IdenticalDisjointAndPartial) {
  const auto lat = Lattice::square(8);
  auto a = cells(lat, {{1, 1}, {2, 2}});
  auto b = cells(lat, {{1, 1}, {2, 2}, {3, 3}, {4, 4}});
  auto c = cells(lat, {{6, 6}});
  EXPECT_EQ(scene::iou(a, a), 1.0);
  EXPECT_EQ(scene::iou(a, c), 0.0);
  EXPECT_EQ(scene::iou(a, b), 0.5);
  EXPECT_EQ(scene::iou(a, b), scene::iou(b, a));
  EXPECT_EQ(scene::iou(cells(lat, {}), cells(lat, {})), 1.0);
}

TEST(Iou, LatticeMismatchIsContractViolation) {
  EXPECT_THROW(scene::iou(cells(Lattice::square(8), {}), cells(Lattice::square(16), {})),
               ContractViolation);
}

TEST(Reward, ExamplesFromDefinition) {
  EXPECT_EQ(scene::reward_from_similarity(0.2, 0.2), 0.0);
  EXPECT_NEAR(scene::reward_from_similarity(0.6, 0.2), 0.5, 1e-15);
  EXPECT_EQ(scene::reward_from_similarity(0.1, 0.2), 0.0);
  EXPECT_EQ(scene::reward_from_similarity(1.0, 0.3), 1.0);
  auto pf = scene::build_rope_scene(sim::SimConfig{}, Cubic{}, {});
  Cubic up;
  up.coeffs[3] = 0.6;
  auto goal = scene::make_goal(up, pf);
  const auto lat = Lattice::square(32);
  EXPECT_EQ(scene::reward(pf.positions, pf.positions, goal.particles, lat), 0.0);
  EXPECT_EQ(scene::reward(goal.particles, pf.positions, goal.particles, lat), 1.0);
}

TEST(Reward, StaysInUnitInterval) {
  auto rng = make_rng(6, "reward");
  const auto lat = Lattice::square(16);
  for (int k = 0; k < 200; ++k) {
    Vec2List a, b, c;
    for (int i = 0; i < 20; ++i) {
      a.emplace_back(uniform(rng, 0, 1), uniform(rng, 0, 1));
      b.emplace_back(uniform(rng, 0, 1), uniform(rng, 0, 1));
      c.emplace_back(uniform(rng, 0, 1), uniform(rng, 0, 1));
    }
    const double r = scene::reward(a, b, c, lat);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
  }
}

TEST(Sdf, SingleCellConvention) {
  const auto lat = Lattice::square(16);
  auto s = scene::sdf(cells(lat, {{7, 7}}));
  const double h = lat.cell();
  EXPECT_NEAR(s.distance[lat.index(7, 7)], -h / 2, 1e-15);
  EXPECT_NEAR(s.distance[lat.index(8, 7)], h / 2, 1e-15);
  EXPECT_NEAR(s.distance[lat.index(7, 9)], 1.5 * h, 1e-15);
}

TEST(Sdf, EmptyGridThrows) {
  EXPECT_THROW(scene::sdf(cells(Lattice::square(8), {})), ContractViolation);
}

TEST(Sdf, LipschitzAcrossNeighbours) {
  auto pf = scene::build_rope_scene(sim::SimConfig{}, Cubic{{-0.8, 0.4, 0.2, 0.4}}, {});
  const auto lat = Lattice::square(32);
  auto s = scene::sdf(scene::occupancy(pf.positions, lat));
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j)
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const int a = i + di, b = j + dj;
          if (a < 0 || b < 0 || a >= 32 || b >= 32) continue;
          EXPECT_LE(std::abs(s.distance[lat.index(i, j)] - s.distance[lat.index(a, b)]),
                    lat.cell() * std::sqrt(3.0) + 1e-12);
        }
}

TEST(Sdf, MatchesBruteForceEverywhere) {
  auto pf = scene::build_rope_scene(sim::SimConfig{}, Cubic{{0.6, 0.2, -0.3, 0.5}}, {});
  const auto lat = Lattice::square(32);
  auto occ = scene::occupancy(pf.positions, lat);
  auto s = scene::sdf(occ);
  const double h = lat.cell();
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j) {
      const bool inside = occ.occupancy[lat.index(i, j)] > 0.5;
      double best = 1e300;
      for (int a = 0; a < 32; ++a)
        for (int b = 0; b < 32; ++b)
          if ((occ.occupancy[lat.index(a, b)] > 0.5) != inside)
            best = std::min(best, h * std::hypot(a - i, b - j));
      const double expect = inside ? -(best - h / 2) : best - h / 2;
      ASSERT_NEAR(s.distance[lat.index(i, j)], expect, 1e-12) << i << "," << j;
    }
  // far corner explicitly
  double corner = 1e300;
  for (int a = 0; a < 32; ++a)
    for (int b = 0; b < 32; ++b)
      if (occ.occupancy[lat.index(a, b)] > 0.5) corner = std::min(corner, h * std::hypot(a, b));
  EXPECT_NEAR(s.distance[lat.index(0, 0)], corner - h / 2, 1e-12);
}

TEST(Density, SumsToTotalMass) {
  auto pf = scene::build_rope_scene(sim::SimConfig{}, Cubic{{0.9, -0.5, 0.0, 0.47}}, {});
  Vec2List pts = pf.positions;
  pts.emplace_back(0.001, 0.999);  // weight partly outside the lattice
  auto rho = scene::density(pts, pf.mass, Lattice::square(32));
  const double sum = std::accumulate(rho.begin(), rho.end(), 0.0);
  EXPECT_LT(rel_err(sum, pf.mass * pts.size()), 1e-10);
}

TEST(Loss, SelfMatchFloor) {
  auto sc = copush::testing::small_scene();
  sim::SimState at_goal = sc.s0;
  at_goal.particles.positions = sc.goal.particles;
  // robots resting on the goal rope surface
  at_goal.robots.positions = {sc.goal.particles[10] + Vec2(0.0, -0.02 - 1e-9),
                              sc.goal.particles[40] + Vec2(0.0, 0.02 + 1e-9)};
  scene::StepLoss loss(sc.goal, sc.s0.particles.mass);
  auto terms = loss.evaluate(at_goal);
  EXPECT_NEAR(terms.mass, 0.0, 1e-12);
  double dot = 0.0;
  for (std::size_t c = 0; c < loss.goal_density().size(); ++c)
    dot += loss.goal_density()[c] * loss.goal_sdf().distance[c];
  EXPECT_NEAR(terms.dist, dot, 1e-12);
  EXPECT_LT(dot, 0.0);
  EXPECT_LE(terms.grasp_hard, 0.02);
  EXPECT_LE(std::abs(terms.grasp), 0.03);
}

TEST(Loss, GraspGrowsAsRobotRetreats) {
  auto sc = copush::testing::small_scene();
  scene::StepLoss loss(sc.goal, sc.s0.particles.mass);
  double prev = -1e300;
  for (double off : {0.03, 0.05, 0.08, 0.12, 0.2}) {
    auto s = sc.s0;
    s.robots.positions = {Vec2(0.5, 0.5 - off), Vec2(0.6, 0.5 + off)};
    const double g = loss.evaluate(s).grasp;
    EXPECT_GT(g, prev);
    prev = g;
  }
}

TEST(Loss, ParticleGradientMatchesFiniteDifferences) {
  auto sc = copush::testing::small_scene();
  auto s = sc.s0;
  auto rng = make_rng(8, "jitter");
  for (auto& p : s.particles.positions) p += Vec2(uniform(rng, -0.01, 0.01), uniform(rng, 0.0, 0.03));
  scene::StepLoss loss(sc.goal, sc.s0.particles.mass);
  sim::StateGradient g(s.particles.size(), s.robots.size());
  loss.evaluate(s, &g);
  const double h = 1e-7;
  int good = 0, total = 0;
  for (std::size_t p = 0; p < s.particles.size(); p += 4)
    for (int d = 0; d < 2; ++d) {
      auto a = s, b = s;
      a.particles.positions[p][d] += h;
      b.particles.positions[p][d] -= h;
      const double fd = (loss.evaluate(a).total - loss.evaluate(b).total) / (2 * h);
      good += rel_err(g.particles[p][d], fd) < 1e-3;
      ++total;
    }
  EXPECT_EQ(good, total);
  for (int r = 0; r < 2; ++r)
    for (int d = 0; d < 2; ++d) {
      auto a = s, b = s;
      a.robots.positions[r][d] += h;
      b.robots.positions[r][d] -= h;
      const double fd = (loss.evaluate(a).total - loss.evaluate(b).total) / (2 * h);
      EXPECT_LT(rel_err(g.robots[r][d], fd), 1e-3);
    }
}

TEST(Loss, SdfVariantHasValueWithoutGradient) {
  auto sc = copush::testing::small_scene();
  scene::LossOptions opt;
  opt.dist_mode = scene::DistMode::kSdfDotSdf;
  scene::StepLoss loss(sc.goal, sc.s0.particles.mass, opt);
  sim::StateGradient g(sc.s0.particles.size(), 2);
  auto terms = loss.evaluate(sc.s0, &g);
  EXPECT_TRUE(std::isfinite(terms.dist));
  EXPECT_NE(terms.dist, 0.0);
}

TEST(Loss, DecreasesAlongInterpolationToGoal) {
  auto sc = copush::testing::small_scene(512);
  Cubic bent{{0.8, -0.4, 0.1, 0.4}};
  sc.goal = scene::make_goal(bent, sc.s0.particles);
  scene::LossOptions opt;
  opt.coeffs.grasp = 0.0;  // robots stay put; only the body moves
  scene::StepLoss loss(sc.goal, sc.s0.particles.mass, opt);
  constexpr int kSteps = 50;
  int down = 0;
  double prev = 0.0;
  for (int k = 0; k <= kSteps; ++k) {
    const double a = static_cast<double>(k) / kSteps;
    auto s = sc.s0;
    for (std::size_t p = 0; p < s.particles.size(); ++p)
      s.particles.positions[p] = (1 - a) * sc.s0.particles.positions[p] + a * sc.goal.particles[p];
    const double value = loss.evaluate(s).total;
    if (k > 0 && value < prev) ++down;
    prev = value;
  }
  EXPECT_GE(down, static_cast<int>(0.9 * kSteps));
}
