#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <numeric>

#include "copush/common/error.hpp"
#include "copush/nn/checkpoint.hpp"
#include "copush/nn/layers.hpp"
#include "support.hpp"

using namespace copush;
using copush::testing::rel_err;
using nn::Mat;
using nn::Mask;

namespace {

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  return m;
}

Mask random_mask(int n, Rng& rng) {
  Mask m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = i == j || uniform(rng, 0, 1) < 0.5;
  return m;
}

// Dense per-head recomputation of masked attention.
Mat reference_attention(const Mat& x, nn::Attention& att, const Mask& mask) {
  const int n = static_cast<int>(x.rows());
  Mat y(n, att.out());
  for (int h = 0; h < att.heads(); ++h) {
    const Mat q = x * att.wq()[h].value, k = x * att.wk()[h].value, v = x * att.wv()[h].value;
    for (int i = 0; i < n; ++i) {
      std::vector<double> w(n, 0.0);
      double z = 0.0;
      for (int j = 0; j < n; ++j)
        if (mask(i, j)) z += w[j] = std::exp(q.row(i).dot(k.row(j)) * att.scale());
      for (int c = 0; c < att.d_v(); ++c) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += w[j] / z * v(j, c);
        y(i, h * att.d_v() + c) = acc;
      }
    }
  }
  return y;
}

}  // namespace

TEST(Attention, SingleTokenWithIdentityWeightsReturnsInput) {
  nn::Attention att("a", 3, 1, 3, 3);
  att.wq()[0].value = Mat::Identity(3, 3);
  att.wk()[0].value = Mat::Identity(3, 3);
  att.wv()[0].value = Mat::Identity(3, 3);
  Mat x(1, 3);
  x << 0.3, -2.0, 7.5;
  Mask m = Mask::Constant(1, 1, true);
  EXPECT_EQ(att.forward(x, {{0, m}}), x);
}

TEST(Attention, SelfOnlyMaskGivesValueProjection) {
  auto rng = make_rng(1, "t");
  nn::Attention att("a", 5, 2, 3, 4);
  att.init(rng);
  Mat x = random_mat(4, 5, rng);
  Mask m = Mask::Identity(4, 4);
  Mat y = att.forward(x, {{0, m}});
  for (int h = 0; h < 2; ++h)
    EXPECT_LT((y.middleCols(4 * h, 4) - x * att.wv()[h].value).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Attention, MatchesDenseReferenceAndRowsSumToOne) {
  auto rng = make_rng(2, "t");
  nn::Attention att("a", 8, 2, 4, 5);
  att.init(rng);
  Mat x = random_mat(3, 8, rng);
  Mask m = Mask::Constant(3, 3, true);
  nn::Attention::Cache cache;
  Mat y = att.forward(x, {{0, m}}, &cache);
  EXPECT_LT((y - reference_attention(x, att, m)).cwiseAbs().maxCoeff(), 1e-12);
  for (const auto& head : cache.attn)
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(head[0].row(i).sum(), 1.0, 1e-12);
}

TEST(Attention, ScaleFollowsInputWidthUnlessAsked) {
  EXPECT_DOUBLE_EQ(nn::Attention("a", 16, 2, 4, 4).scale(), 0.25);
  EXPECT_DOUBLE_EQ(nn::Attention("a", 16, 2, 4, 4, true).scale(), 0.5);
}

TEST(Attention, MaskedEntriesCarryExactlyZero) {
  auto rng = make_rng(3, "t");
  nn::Attention att("a", 6, 3, 4, 2);
  att.init(rng);
  for (int trial = 0; trial < 50; ++trial) {
    Mat x = random_mat(5, 6, rng, 3.0);
    Mask m = random_mask(5, rng);
    nn::Attention::Cache cache;
    att.forward(x, {{0, m}}, &cache);
    for (const auto& head : cache.attn)
      for (int i = 0; i < 5; ++i) {
        EXPECT_NEAR(head[0].row(i).sum(), 1.0, 1e-12);
        for (int j = 0; j < 5; ++j)
          if (!m(i, j)) EXPECT_EQ(head[0](i, j), 0.0);
      }
  }
}

TEST(Attention, PermutationEquivariant) {
  auto rng = make_rng(4, "t");
  nn::Attention att("a", 6, 2, 3, 3);
  att.init(rng);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 6;
    Mat x = random_mat(n, 6, rng);
    Mask m = random_mask(n, rng);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Mat px(n, 6);
    Mask pm(n, n);
    for (int i = 0; i < n; ++i) {
      px.row(i) = x.row(perm[i]);
      for (int j = 0; j < n; ++j) pm(i, j) = m(perm[i], perm[j]);
    }
    nn::Attention::Cache c1, c2;
    Mat y = att.forward(x, {{0, m}}, &c1);
    Mat py = att.forward(px, {{0, pm}}, &c2);
    for (int i = 0; i < n; ++i) {
      EXPECT_LT((py.row(i) - y.row(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
      for (int h = 0; h < 2; ++h)
        for (int j = 0; j < n; ++j)
          EXPECT_NEAR(c2.attn[h][0](i, j), c1.attn[h][0](perm[i], perm[j]), 1e-12);
    }
  }
}

TEST(Attention, AllMaskedRowIsContractViolation) {
  nn::Attention att("a", 2, 1, 2, 2);
  Mask m = Mask::Constant(2, 2, false);
  m(0, 0) = true;
  EXPECT_THROW(att.forward(Mat::Zero(2, 2), {{0, m}}), ContractViolation);
}

TEST(Linear, ZeroWeightsGiveBias) {
  nn::Linear lin("l", 4, 3);
  lin.bias().value << 1.0, -2.0, 0.5;
  Mat y = lin.forward(Mat::Random(5, 4));
  for (int i = 0; i < 5; ++i) EXPECT_EQ(y.row(i), lin.bias().value.row(0));
}

TEST(Linear, ShapeMismatchIsContractViolation) {
  nn::Linear lin("l", 4, 3);
  EXPECT_THROW(lin.forward(Mat::Zero(2, 5)), ContractViolation);
  EXPECT_THROW(nn::mse(Mat::Zero(2, 2), Mat::Zero(2, 3)), ContractViolation);
}

TEST(Mse, ZeroOnIdenticalInputs) {
  Mat y = Mat::Random(4, 3);
  EXPECT_EQ(nn::mse(y, y), 0.0);
}

// Loss of embed -> attention -> linear head against a fixed target.
struct TinyNet {
  nn::Linear embed{"e", 5, 6};
  nn::Attention att{"a", 6, 2, 3, 3};
  nn::Mlp head{"h", {6, 4, 2}, nn::Activation::kTanh};
  std::vector<nn::AttentionGroup> groups;

  double loss(const Mat& x, const Mat& target, bool with_grad) {
    Mat e = nn::activate(embed.forward(x), nn::Activation::kTanh);
    nn::Attention::Cache ac;
    Mat a = att.forward(e, groups, &ac);
    nn::Mlp::Cache hc;
    Mat y = head.forward(a, &hc);
    Mat g;
    const double l = nn::mse(y, target, &g);
    if (with_grad) {
      Mat da = head.backward(hc, g);
      Mat de = att.backward(ac, groups, da);
      embed.backward(x, nn::activate_backward(e, de, nn::Activation::kTanh));
    }
    return l;
  }
  nn::ParamList params() {
    nn::ParamList p = embed.params();
    for (auto* t : att.params()) p.push_back(t);
    for (auto* t : head.params()) p.push_back(t);
    return p;
  }
};

TEST(Backprop, NetworkGradientsMatchFiniteDifferences) {
  auto rng = make_rng(5, "t");
  TinyNet net;
  net.embed.init(rng);
  net.att.init(rng);
  net.head.init(rng);
  for (auto* t : net.params())
    for (Eigen::Index i = 0; i < t->value.size(); ++i) t->value.data()[i] += 0.1 * standard_normal(rng);
  Mat x = random_mat(7, 5, rng);
  Mat target = random_mat(7, 2, rng);
  net.groups = {{0, random_mask(4, rng)}, {4, random_mask(3, rng)}};
  nn::zero_grad(net.params());
  net.loss(x, target, true);
  const double h = 1e-6;
  int checked = 0;
  for (auto* t : net.params())
    for (Eigen::Index i = 0; i < t->value.size(); ++i) {
      const double keep = t->value.data()[i];
      t->value.data()[i] = keep + h;
      const double lp = net.loss(x, target, false);
      t->value.data()[i] = keep - h;
      const double lm = net.loss(x, target, false);
      t->value.data()[i] = keep;
      const double fd = (lp - lm) / (2 * h);
      const double an = t->grad.data()[i];
      if (std::abs(fd) < 1e-9 && std::abs(an) < 1e-9) continue;
      EXPECT_LT(rel_err(an, fd), 1e-4) << t->name << "[" << i << "]";
      ++checked;
    }
  EXPECT_GT(checked, 100);
}

TEST(Adam, FitsSingleRepeatedPair) {
  auto rng = make_rng(6, "t");
  nn::Mlp net("m", {8, 16, 2}, nn::Activation::kTanh);
  net.init(rng);
  Mat x = random_mat(1, 8, rng);
  Mat target(1, 2);
  target << 0.3, -0.7;
  nn::Adam opt(1e-3);
  double l = 1.0;
  for (int it = 0; it < 2000 && l >= 1e-6; ++it) {
    nn::zero_grad(net.params());
    nn::Mlp::Cache c;
    Mat g;
    l = nn::mse(net.forward(x, &c), target, &g);
    net.backward(c, g);
    opt.step(net.params());
  }
  EXPECT_LT(l, 1e-6);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto rng = make_rng(7, "t");
  std::vector<nn::NamedMatrix> t{{"a", random_mat(3, 4, rng)}, {"bb", random_mat(1, 7, rng)},
                                 {"empty", Mat(0, 0)}};
  t[0].value(1, 1) = -0.0;
  t[1].value(0, 3) = 1e-310;  // subnormal
  const auto path = (std::filesystem::temp_directory_path() / "copush_ckpt_test.bin").string();
  nn::save_checkpoint(path, t);
  auto back = nn::load_checkpoint(path);
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(back[i].name, t[i].name);
    ASSERT_EQ(back[i].value.rows(), t[i].value.rows());
    ASSERT_EQ(back[i].value.cols(), t[i].value.cols());
    EXPECT_EQ(0, std::memcmp(back[i].value.data(), t[i].value.data(),
                             sizeof(double) * t[i].value.size()));
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsForeignAndTruncatedFiles) {
  const auto path = (std::filesystem::temp_directory_path() / "copush_ckpt_bad.bin").string();
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("not a checkpoint", f);
    std::fclose(f);
  }
  EXPECT_THROW(nn::load_checkpoint(path), ConfigError);
  nn::save_checkpoint(path, {{"a", Mat::Ones(10, 10)}});
  std::filesystem::resize_file(path, 60);
  EXPECT_THROW(nn::load_checkpoint(path), ConfigError);
  std::filesystem::remove(path);
  EXPECT_THROW(nn::load_checkpoint(path), ConfigError);
}
