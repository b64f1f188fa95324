#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "copush/common/rng.hpp"

namespace copush::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A named parameter with its gradient accumulator.
struct Tensor {
  std::string name;
  Mat value;
  Mat grad;

  Tensor() = default;
  Tensor(std::string n, int rows, int cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}
};

using ParamList = std::vector<Tensor*>;

void zero_grad(const ParamList& params);
// Uniform in +-sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Mat& w, Rng& rng);

enum class Activation { kNone, kTanh, kRelu };
std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

Mat activate(const Mat& z, Activation a);
// dL/dz from dL/dy, given y = activate(z).
Mat activate_backward(const Mat& y, const Mat& dy, Activation a);

// Y = X W + b, W is in x out.
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out);

  int in() const { return static_cast<int>(w_.value.rows()); }
  int out() const { return static_cast<int>(w_.value.cols()); }

  void init(Rng& rng);
  Mat forward(const Mat& x) const;
  // Accumulates parameter gradients and returns dL/dX.
  Mat backward(const Mat& x, const Mat& dy);

  ParamList params() { return {&w_, &b_}; }
  Tensor& weight() { return w_; }
  Tensor& bias() { return b_; }

 private:
  Tensor w_, b_;
};

// Fully connected stack with an activation after every hidden layer and a
// linear output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, const std::vector<int>& widths, Activation hidden);

  void init(Rng& rng);

  struct Cache {
    std::vector<Mat> inputs;  // input of each layer
  };
  Mat forward(const Mat& x, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& dy);

  ParamList params();
  int in() const { return layers_.front().in(); }
  int out() const { return layers_.back().out(); }

 private:
  std::vector<Linear> layers_;
  Activation hidden_ = Activation::kTanh;
};

// Rows of one attention problem inside a stacked batch.
struct AttentionGroup {
  int offset = 0;
  Mask mask;  // mask(i, j): row offset + i may attend to row offset + j
};

// Throws ContractViolation when a row has no visible entry.
void check_mask(const Mask& mask);

// Multi-head masked self-attention. Per head h:
// Y_h = softmax(scale (X Wq_h)(X Wk_h)^T) X Wv_h, masked logits set to -inf,
// Y = [Y_1, ..., Y_m]. scale is 1/sqrt(d_in), or 1/sqrt(d_k) on request.
class Attention {
 public:
  Attention() = default;
  Attention(const std::string& name, int d_in, int heads, int d_k, int d_v,
            bool scale_by_dk = false);

  int d_in() const { return d_in_; }
  int heads() const { return heads_; }
  int d_k() const { return d_k_; }
  int d_v() const { return d_v_; }
  int out() const { return heads_ * d_v_; }
  double scale() const;

  void init(Rng& rng);

  struct Cache {
    Mat x;
    std::vector<Mat> q, k, v;               // per head, stacked rows
    std::vector<std::vector<Mat>> attn;     // [head][group]
  };
  Mat forward(const Mat& x, const std::vector<AttentionGroup>& groups,
              Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const std::vector<AttentionGroup>& groups, const Mat& dy);

  ParamList params();
  std::vector<Tensor>& wq() { return wq_; }
  std::vector<Tensor>& wk() { return wk_; }
  std::vector<Tensor>& wv() { return wv_; }

 private:
  int d_in_ = 0, heads_ = 0, d_k_ = 0, d_v_ = 0;
  bool scale_by_dk_ = false;
  std::vector<Tensor> wq_, wk_, wv_;
};

// Row-wise softmax over visible entries; masked entries are exactly 0.
Mat masked_softmax(const Mat& logits, const Mask& mask);

// mean over all entries of (pred - target)^2; grad (optional) gets dL/dpred.
double mse(const Mat& pred, const Mat& target, Mat* grad = nullptr);

class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const ParamList& params);
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

}  // namespace copush::nn
