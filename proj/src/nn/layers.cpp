#include "copush/nn/layers.hpp"

#include <cmath>
#include <limits>

#include "copush/common/error.hpp"

namespace copush::nn {

void zero_grad(const ParamList& params) {
  for (Tensor* t : params) t->grad.setZero();
}

void glorot_uniform(Mat& w, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng, -bound, bound);
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kNone: return "none";
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
  }
  return "none";
}

Activation activation_from_string(const std::string& s) {
  if (s == "none") return Activation::kNone;
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + s + "'");
}

Mat activate(const Mat& z, Activation a) {
  switch (a) {
    case Activation::kNone: return z;
    case Activation::kTanh: return z.array().tanh().matrix();
    case Activation::kRelu: return z.cwiseMax(0.0);
  }
  return z;
}

Mat activate_backward(const Mat& y, const Mat& dy, Activation a) {
  switch (a) {
    case Activation::kNone: return dy;
    case Activation::kTanh: return (dy.array() * (1.0 - y.array().square())).matrix();
    case Activation::kRelu: return (dy.array() * (y.array() > 0.0).cast<double>()).matrix();
  }
  return dy;
}

Linear::Linear(const std::string& name, int in, int out)
    : w_(name + ".weight", in, out), b_(name + ".bias", 1, out) {}

void Linear::init(Rng& rng) {
  glorot_uniform(w_.value, rng);
  b_.value.setZero();
}

Mat Linear::forward(const Mat& x) const {
  COPUSH_REQUIRE(x.cols() == w_.value.rows(), "linear: input width mismatch");
  Mat y = x * w_.value;
  y.rowwise() += b_.value.row(0);
  return y;
}

Mat Linear::backward(const Mat& x, const Mat& dy) {
  COPUSH_REQUIRE(dy.cols() == w_.value.cols() && dy.rows() == x.rows(),
                 "linear: gradient shape mismatch");
  w_.grad.noalias() += x.transpose() * dy;
  b_.grad.row(0) += dy.colwise().sum();
  return dy * w_.value.transpose();
}

Mlp::Mlp(const std::string& name, const std::vector<int>& widths, Activation hidden)
    : hidden_(hidden) {
  COPUSH_REQUIRE(widths.size() >= 2, "mlp: need input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    layers_.emplace_back(name + "." + std::to_string(i), widths[i], widths[i + 1]);
}

void Mlp::init(Rng& rng) {
  for (auto& l : layers_) l.init(rng);
}

Mat Mlp::forward(const Mat& x, Cache* cache) const {
  if (cache) cache->inputs.clear();
  Mat h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (cache) cache->inputs.push_back(h);
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size()) h = activate(h, hidden_);
  }
  return h;
}

Mat Mlp::backward(const Cache& cache, const Mat& dy) {
  Mat g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (i + 1 < layers_.size()) g = activate_backward(cache.inputs[i + 1], g, hidden_);
    g = layers_[i].backward(cache.inputs[i], g);
  }
  return g;
}

ParamList Mlp::params() {
  ParamList out;
  for (auto& l : layers_)
    for (Tensor* t : l.params()) out.push_back(t);
  return out;
}

void check_mask(const Mask& mask) {
  COPUSH_REQUIRE(mask.rows() == mask.cols(), "attention: mask must be square");
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    COPUSH_REQUIRE(mask.row(i).any(), "attention: mask row " + std::to_string(i) +
                                          " has no visible entry");
}

Mat masked_softmax(const Mat& logits, const Mask& mask) {
  Mat out = Mat::Zero(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
      if (mask(i, j)) hi = std::max(hi, logits(i, j));
    double sum = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
      if (mask(i, j)) sum += out(i, j) = std::exp(logits(i, j) - hi);
    out.row(i) /= sum;
  }
  return out;
}

Attention::Attention(const std::string& name, int d_in, int heads, int d_k, int d_v,
                     bool scale_by_dk)
    : d_in_(d_in), heads_(heads), d_k_(d_k), d_v_(d_v), scale_by_dk_(scale_by_dk) {
  COPUSH_REQUIRE(d_in >= 1 && heads >= 1 && d_k >= 1 && d_v >= 1, "attention: bad shape");
  for (int h = 0; h < heads; ++h) {
    const std::string p = name + ".head" + std::to_string(h);
    wq_.emplace_back(p + ".wq", d_in, d_k);
    wk_.emplace_back(p + ".wk", d_in, d_k);
    wv_.emplace_back(p + ".wv", d_in, d_v);
  }
}

double Attention::scale() const {
  return 1.0 / std::sqrt(static_cast<double>(scale_by_dk_ ? d_k_ : d_in_));
}

void Attention::init(Rng& rng) {
  for (int h = 0; h < heads_; ++h) {
    glorot_uniform(wq_[h].value, rng);
    glorot_uniform(wk_[h].value, rng);
    glorot_uniform(wv_[h].value, rng);
  }
}

Mat Attention::forward(const Mat& x, const std::vector<AttentionGroup>& groups,
                       Cache* cache) const {
  COPUSH_REQUIRE(x.cols() == d_in_, "attention: input width mismatch");
  Mat y(x.rows(), out());
  if (cache) {
    cache->x = x;
    cache->q.assign(heads_, Mat());
    cache->k.assign(heads_, Mat());
    cache->v.assign(heads_, Mat());
    cache->attn.assign(heads_, std::vector<Mat>(groups.size()));
  }
  const double s = scale();
  for (int h = 0; h < heads_; ++h) {
    const Mat q = x * wq_[h].value;
    const Mat k = x * wk_[h].value;
    const Mat v = x * wv_[h].value;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto& grp = groups[g];
      const Eigen::Index n = grp.mask.rows();
      COPUSH_REQUIRE(grp.offset >= 0 && grp.offset + n <= x.rows(), "attention: group out of range");
      check_mask(grp.mask);
      const Mat logits = s * q.middleRows(grp.offset, n) * k.middleRows(grp.offset, n).transpose();
      Mat a = masked_softmax(logits, grp.mask);
      y.block(grp.offset, h * d_v_, n, d_v_) = a * v.middleRows(grp.offset, n);
      if (cache) cache->attn[h][g] = std::move(a);
    }
    if (cache) {
      cache->q[h] = q;
      cache->k[h] = k;
      cache->v[h] = v;
    }
  }
  return y;
}

Mat Attention::backward(const Cache& cache, const std::vector<AttentionGroup>& groups,
                        const Mat& dy) {
  COPUSH_REQUIRE(dy.rows() == cache.x.rows() && dy.cols() == out(),
                 "attention: gradient shape mismatch");
  const double s = scale();
  Mat dx = Mat::Zero(cache.x.rows(), d_in_);
  for (int h = 0; h < heads_; ++h) {
    Mat dq = Mat::Zero(cache.x.rows(), d_k_);
    Mat dk = Mat::Zero(cache.x.rows(), d_k_);
    Mat dv = Mat::Zero(cache.x.rows(), d_v_);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto& grp = groups[g];
      const Eigen::Index n = grp.mask.rows();
      const Mat& a = cache.attn[h][g];
      const Mat dyh = dy.block(grp.offset, h * d_v_, n, d_v_);
      dv.middleRows(grp.offset, n) += a.transpose() * dyh;
      const Mat da = dyh * cache.v[h].middleRows(grp.offset, n).transpose();
      // softmax backward; masked entries have a == 0 and drop out
      const Eigen::VectorXd rowdot = (da.array() * a.array()).rowwise().sum();
      const Mat dlogits = (a.array() * (da.array().colwise() - rowdot.array())).matrix() * s;
      dq.middleRows(grp.offset, n) += dlogits * cache.k[h].middleRows(grp.offset, n);
      dk.middleRows(grp.offset, n) += dlogits.transpose() * cache.q[h].middleRows(grp.offset, n);
    }
    wq_[h].grad.noalias() += cache.x.transpose() * dq;
    wk_[h].grad.noalias() += cache.x.transpose() * dk;
    wv_[h].grad.noalias() += cache.x.transpose() * dv;
    dx.noalias() += dq * wq_[h].value.transpose();
    dx.noalias() += dk * wk_[h].value.transpose();
    dx.noalias() += dv * wv_[h].value.transpose();
  }
  return dx;
}

ParamList Attention::params() {
  ParamList out;
  for (int h = 0; h < heads_; ++h) {
    out.push_back(&wq_[h]);
    out.push_back(&wk_[h]);
    out.push_back(&wv_[h]);
  }
  return out;
}

double mse(const Mat& pred, const Mat& target, Mat* grad) {
  COPUSH_REQUIRE(pred.rows() == target.rows() && pred.cols() == target.cols(),
                 "mse: shape mismatch");
  const Mat diff = pred - target;
  const double n = static_cast<double>(diff.size());
  if (grad) *grad = diff * (2.0 / n);
  return diff.squaredNorm() / n;
}

void Adam::step(const ParamList& params) {
  if (m_.empty()) {
    for (Tensor* t : params) {
      m_.push_back(Mat::Zero(t->value.rows(), t->value.cols()));
      v_.push_back(Mat::Zero(t->value.rows(), t->value.cols()));
    }
  }
  COPUSH_REQUIRE(m_.size() == params.size(), "adam: parameter list changed");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

}  // namespace copush::nn
