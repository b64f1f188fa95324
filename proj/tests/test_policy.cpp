#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <numeric>

#include "copush/common/error.hpp"
#include "copush/policy/observation.hpp"
#include "copush/policy/policy.hpp"
#include "support.hpp"

using namespace copush;
using nn::Mat;
using sim::Vec2;
using sim::Vec2List;

namespace {

Mat random_obs(int n_robots, int d_in, Rng& rng) {
  Mat m(n_robots, d_in);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -1.0, 1.0);
  return m;
}

Vec2List random_robots(int n, Rng& rng) {
  Vec2List r;
  for (int i = 0; i < n; ++i) r.emplace_back(uniform(rng, 0, 1), uniform(rng, 0, 1));
  return r;
}

policy::PolicyConfig small_config() {
  policy::PolicyConfig cfg;
  cfg.obs_particles = 4;
  cfg.d_feat = 16;
  cfg.heads = 2;
  cfg.d_k = 8;
  cfg.d_v = 8;
  return cfg;
}

double seconds_per_call(const std::function<void()>& f, int reps) {
  std::vector<double> t;
  for (int r = 0; r < reps; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    f();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

}  // namespace

TEST(Downsample, FullCountIsIdentity) {
  auto idx = policy::downsample_particles(50, 50, 9);
  std::vector<int> expect(50);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(idx, expect);
}

TEST(Downsample, StridesDifferByAtMostOne) {
  for (std::uint64_t seed : {0u, 1u, 2u, 3u}) {
    auto idx = policy::downsample_particles(2328, 102, seed);
    ASSERT_EQ(idx.size(), 102u);
    int lo = 1 << 30, hi = 0;
    for (std::size_t k = 1; k < idx.size(); ++k) {
      lo = std::min(lo, idx[k] - idx[k - 1]);
      hi = std::max(hi, idx[k] - idx[k - 1]);
    }
    EXPECT_LE(hi - lo, 1);
    EXPECT_GE(lo, 22);
    EXPECT_EQ(idx, policy::downsample_particles(2328, 102, seed));
  }
  EXPECT_THROW(policy::downsample_particles(10, 11, 0), ContractViolation);
}

TEST(Observation, OriginRobotSeesWorldPositions) {
  auto sc = copush::testing::small_scene();
  sc.s0.robots = sim::RobotSet::at({Vec2::Zero()}, 0.02);
  auto idx = policy::downsample_particles(64, 8, 1);
  Mat obs = policy::build_observation(sc.s0, sc.goal, idx);
  ASSERT_EQ(obs.cols(), policy::observation_width(8));
  for (int k = 0; k < 8; ++k) {
    EXPECT_EQ(obs(0, 3 * k), sc.s0.particles.positions[idx[k]].x());
    EXPECT_EQ(obs(0, 3 * k + 1), sc.s0.particles.positions[idx[k]].y());
    EXPECT_EQ(obs(0, 3 * k + 2), 0.0);
  }
  EXPECT_EQ(obs.block(0, 6 * 8, 1, 3), Mat::Zero(1, 3));  // no neighbour
}

TEST(Observation, PaperWidthForDownsampledRope) {
  EXPECT_EQ(policy::observation_width(102), 921);
}

TEST(Observation, NearestNeighbourOffsets) {
  auto sc = copush::testing::small_scene();
  sc.s0.robots = sim::RobotSet::at({Vec2(0.2, 0.5), Vec2(0.4, 0.5), Vec2(0.9, 0.5)}, 0.02);
  EXPECT_EQ(policy::nearest_neighbor(sc.s0.robots.positions, 0), 1);
  EXPECT_EQ(policy::nearest_neighbor(sc.s0.robots.positions, 1), 0);
  EXPECT_EQ(policy::nearest_neighbor(sc.s0.robots.positions, 2), 1);
  auto idx = policy::downsample_particles(64, 4, 0);
  Mat obs = policy::build_observation(sc.s0, sc.goal, idx);
  EXPECT_NEAR(obs(0, 24), 0.2, 1e-15);
  EXPECT_EQ(obs(0, 25), 0.0);
  EXPECT_EQ(obs(0, 26), 0.0);
  // ties go to the lower index
  EXPECT_EQ(policy::nearest_neighbor({Vec2(0.5, 0.5), Vec2(0.4, 0.5), Vec2(0.6, 0.5)}, 0), 1);
}

TEST(Observation, GoalEqualsStateZeroesDifference) {
  auto sc = copush::testing::small_scene();
  sc.goal.particles = sc.s0.particles.positions;
  auto idx = policy::downsample_particles(64, 10, 0);
  Mat obs = policy::build_observation(sc.s0, sc.goal, idx);
  EXPECT_EQ(obs.rightCols(30), Mat::Zero(2, 30));
}

TEST(Observation, TranslationLeavesFramedPartsUnchanged) {
  auto sc = copush::testing::small_scene();
  auto idx = policy::downsample_particles(64, 10, 0);
  Mat a = policy::build_observation(sc.s0, sc.goal, idx);
  const Vec2 shift(0.013, -0.021);
  for (auto& p : sc.s0.particles.positions) p += shift;
  for (auto& p : sc.s0.robots.positions) p += shift;
  for (auto& p : sc.goal.particles) p += shift;
  Mat b = policy::build_observation(sc.s0, sc.goal, idx);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Act, PermutingRobotsPermutesActions) {
  auto cfg = small_config();
  const int d_in = policy::observation_width(cfg.obs_particles);
  auto pol = policy::Policy::make_attention(d_in, cfg, 1.0, 3);
  auto rng = make_rng(11, "perm");
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 5;
    Mat obs = random_obs(n, d_in, rng);
    Vec2List robots = random_robots(n, rng);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Mat pobs(n, d_in);
    Vec2List probots(n);
    for (int i = 0; i < n; ++i) {
      pobs.row(i) = obs.row(perm[i]);
      probots[i] = robots[perm[i]];
    }
    Mat y = pol.forward(obs, policy::visibility_mask(robots));
    Mat py = pol.forward(pobs, policy::visibility_mask(probots));
    for (int i = 0; i < n; ++i) EXPECT_LT((py.row(i) - y.row(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Act, DistantRobotDoesNotChangeOthers) {
  auto cfg = small_config();
  const int d_in = policy::observation_width(cfg.obs_particles);
  auto pol = policy::Policy::make_attention(d_in, cfg, 1.0, 4);
  auto rng = make_rng(12, "far");
  Vec2List robots{Vec2(0.3, 0.3), Vec2(0.35, 0.3), Vec2(0.5, 0.32)};
  Mat obs = random_obs(3, d_in, rng);
  Mat y = pol.forward(obs, policy::visibility_mask(robots));
  Vec2List more = robots;
  more.emplace_back(0.95, 0.95);
  Mat obs4(4, d_in);
  obs4 << obs, random_obs(1, d_in, rng);
  Mat y4 = pol.forward(obs4, policy::visibility_mask(more));
  EXPECT_LT((y4.topRows(3) - y).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Act, AttentionStaysInsideVisibilityMask) {
  auto cfg = small_config();
  const int d_in = policy::observation_width(cfg.obs_particles);
  auto pol = policy::Policy::make_attention(d_in, cfg, 1.0, 5);
  auto rng = make_rng(13, "mask");
  Vec2List robots = random_robots(6, rng);
  auto mask = policy::visibility_mask(robots);
  policy::AttentionTrace trace;
  pol.forward(random_obs(6, d_in, rng), mask, &trace);
  ASSERT_EQ(trace.size(), 2u);
  for (const auto& layer : trace)
    for (const auto& a : layer)
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
          if (!mask(i, j)) EXPECT_EQ(a(i, j), 0.0);
}

TEST(Act, ZeroWeightsGiveZeroActions) {
  auto cfg = small_config();
  const int d_in = policy::observation_width(cfg.obs_particles);
  auto rng = make_rng(14, "zero");
  for (auto arch : {policy::Arch::kAttention, policy::Arch::kMlp}) {
    auto pol = arch == policy::Arch::kAttention ? policy::Policy::make_attention(d_in, cfg, 0.015, 1)
                                                : policy::Policy::make_mlp(d_in, 3, cfg, 0.015, 1);
    for (auto* t : pol.params()) t->value.setZero();
    Vec2List robots = random_robots(3, rng);
    for (const auto& a : pol.act(random_obs(3, d_in, rng), policy::visibility_mask(robots), 0.015))
      EXPECT_EQ(a, Vec2::Zero());
  }
}

TEST(Act, OutputsAreClampedToLimit) {
  auto cfg = small_config();
  const int d_in = policy::observation_width(cfg.obs_particles);
  auto pol = policy::Policy::make_attention(d_in, cfg, 100.0, 2);
  auto rng = make_rng(15, "clamp");
  Vec2List robots = random_robots(4, rng);
  for (const auto& a : pol.act(random_obs(4, d_in, rng), policy::visibility_mask(robots), 0.01))
    EXPECT_LE(a.cwiseAbs().maxCoeff(), 0.01);
}

TEST(ActMlp, RejectsOtherRobotCounts) {
  auto cfg = small_config();
  const int d_in = policy::observation_width(cfg.obs_particles);
  auto pol = policy::Policy::make_mlp(d_in, 3, cfg, 1.0, 1);
  auto rng = make_rng(16, "mlp");
  Vec2List robots = random_robots(4, rng);
  EXPECT_THROW(pol.forward(random_obs(4, d_in, rng), policy::visibility_mask(robots)),
               ContractViolation);
}

TEST(ActMlp, PermutingRobotsChangesOutput) {
  auto cfg = small_config();
  const int d_in = policy::observation_width(cfg.obs_particles);
  auto pol = policy::Policy::make_mlp(d_in, 3, cfg, 1.0, 2);
  auto rng = make_rng(17, "mlp");
  Mat obs = random_obs(3, d_in, rng);
  Vec2List robots = random_robots(3, rng);
  Mat y = pol.forward(obs, policy::visibility_mask(robots));
  Mat pobs(3, d_in);
  pobs << obs.row(1), obs.row(0), obs.row(2);
  Mat py = pol.forward(pobs, policy::visibility_mask(robots));
  EXPECT_GT((py.row(0) - y.row(1)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Act, HundredRobotTeamRunsAndLatencyIsRecorded) {
  policy::PolicyConfig cfg;  // full width, 921-dim rows
  const int d_in = policy::observation_width(cfg.obs_particles);
  auto pol = policy::Policy::make_attention(d_in, cfg, 0.015, 1);
  auto rng = make_rng(18, "time");
  Mat obs6 = random_obs(6, d_in, rng), obs100 = random_obs(100, d_in, rng);
  auto m6 = policy::visibility_mask(random_robots(6, rng));
  auto m100 = policy::visibility_mask(random_robots(100, rng));
  EXPECT_EQ(pol.act(obs100, m100, 0.015).size(), 100u);
  const double t6 = seconds_per_call([&] { pol.act(obs6, m6, 0.015); }, 51);
  const double t100 = seconds_per_call([&] { pol.act(obs100, m100, 0.015); }, 51);
  RecordProperty("latency_6", std::to_string(t6));
  RecordProperty("latency_100", std::to_string(t100));
  std::printf("latency N=6 %.3g s, N=100 %.3g s\n", t6, t100);
}

TEST(Smooth, WindowAverages) {
  std::deque<Vec2List> h{{Vec2(1.0, 2.0)}};
  EXPECT_EQ(policy::smooth(h, 5)[0], Vec2(1.0, 2.0));
  std::deque<Vec2List> same(5, Vec2List{Vec2(0.3, -0.1)});
  EXPECT_NEAR((policy::smooth(same, 5)[0] - Vec2(0.3, -0.1)).norm(), 0.0, 1e-16);
  std::deque<Vec2List> two{{Vec2(0.0, 0.0)}, {Vec2(1.0, 1.0)}};
  EXPECT_EQ(policy::smooth(two, 5)[0], Vec2(0.5, 0.5));
  policy::ActionSmoother s(2);
  s.push({Vec2(1.0, 0.0)});
  s.push({Vec2(2.0, 0.0)});
  EXPECT_EQ(s.push({Vec2(4.0, 0.0)})[0], Vec2(3.0, 0.0));
  EXPECT_THROW(policy::smooth({}, 5), ContractViolation);
}

TEST(PolicyCheckpoint, RoundTripPreservesOutputs) {
  auto cfg = small_config();
  cfg.embed_activation = nn::Activation::kRelu;
  const int d_in = policy::observation_width(cfg.obs_particles);
  auto rng = make_rng(19, "ckpt");
  const auto path = (std::filesystem::temp_directory_path() / "copush_policy_test.bin").string();
  for (auto arch : {policy::Arch::kAttention, policy::Arch::kMlp}) {
    auto pol = arch == policy::Arch::kAttention ? policy::Policy::make_attention(d_in, cfg, 0.015, 7)
                                                : policy::Policy::make_mlp(d_in, 3, cfg, 0.015, 7);
    pol.save(path);
    auto back = policy::Policy::load(path);
    EXPECT_EQ(back.arch(), arch);
    EXPECT_EQ(back.action_scale(), 0.015);
    Mat obs = random_obs(3, d_in, rng);
    auto mask = policy::visibility_mask(random_robots(3, rng));
    EXPECT_EQ(pol.forward(obs, mask), back.forward(obs, mask));
  }
  std::filesystem::remove(path);
}
