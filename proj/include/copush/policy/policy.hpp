#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <variant>
#include <vector>

#include "copush/nn/layers.hpp"
#include "copush/sim/state.hpp"

namespace copush::policy {

using sim::Vec2List;

enum class Arch { kAttention, kMlp };
std::string to_string(Arch a);
Arch arch_from_string(const std::string& s);

struct PolicyConfig {
  int obs_particles = 102;
  int d_feat = 128;
  int heads = 4;
  int d_k = 32;
  int d_v = 32;
  int attention_layers = 2;
  bool scale_by_dk = false;
  nn::Activation embed_activation = nn::Activation::kTanh;
  std::vector<int> mlp_hidden = {64, 64};
  nn::Activation mlp_activation = nn::Activation::kTanh;
  int smoothing_window = 5;

  void validate() const;
};

// attention[layer][head] is the N x N attention matrix of that head.
using AttentionTrace = std::vector<std::vector<nn::Mat>>;

// Embedding layer, masked self-attention stack, then a linear head on
// [raw observation, attention output]. Rows are robots; any count works.
class AttentionPolicy {
 public:
  AttentionPolicy() = default;
  AttentionPolicy(int d_in, const PolicyConfig& cfg);

  void init(Rng& rng);

  struct Cache {
    nn::Mat obs, embed;
    std::vector<nn::Attention::Cache> attention;
    nn::Mat features;  // output of the last attention layer
  };
  // Stacked observations; groups give each sample's rows and mask.
  nn::Mat forward(const nn::Mat& obs, const std::vector<nn::AttentionGroup>& groups,
                  Cache* cache = nullptr) const;
  void backward(const Cache& cache, const std::vector<nn::AttentionGroup>& groups,
                const nn::Mat& d_out);

  nn::ParamList params();
  int d_in() const { return d_in_; }

 private:
  int d_in_ = 0;
  nn::Activation embed_activation_ = nn::Activation::kTanh;
  nn::Linear embed_;
  std::vector<nn::Attention> attention_;
  nn::Linear head_;
};

// Fixed-size MLP over the observation flattened in robot order.
class MlpPolicy {
 public:
  MlpPolicy() = default;
  MlpPolicy(int d_in, int n_robots, const PolicyConfig& cfg);

  void init(Rng& rng);
  int n_robots() const { return n_robots_; }
  int d_in() const { return d_in_; }

  // 1 x (N d_in); throws ContractViolation when the robot count differs.
  nn::Mat flatten(const nn::Mat& obs) const;
  // Rows are flattened observations; output rows are (vx0, vy0, vx1, ...).
  nn::Mat forward(const nn::Mat& flat, nn::Mlp::Cache* cache = nullptr) const;
  void backward(const nn::Mlp::Cache& cache, const nn::Mat& d_out);

  nn::ParamList params() { return net_.params(); }

 private:
  int d_in_ = 0;
  int n_robots_ = 0;
  nn::Mlp net_;
};

// Either architecture behind one interface. Network outputs are in units of
// action_scale (the training velocity limit).
class Policy {
 public:
  Policy() = default;
  static Policy make_attention(int d_in, const PolicyConfig& cfg, double action_scale,
                               std::uint64_t seed);
  static Policy make_mlp(int d_in, int n_robots, const PolicyConfig& cfg, double action_scale,
                         std::uint64_t seed);

  Arch arch() const;
  const PolicyConfig& config() const { return cfg_; }
  double action_scale() const { return action_scale_; }
  int d_in() const;
  AttentionPolicy& attention() { return std::get<AttentionPolicy>(net_); }
  MlpPolicy& mlp() { return std::get<MlpPolicy>(net_); }
  nn::ParamList params();

  // N x 2 network output for one observation, before scaling and clamping.
  nn::Mat forward(const nn::Mat& obs, const nn::Mask& mask, AttentionTrace* trace = nullptr) const;
  // Commands scaled by action_scale and clamped to +-limit per axis.
  Vec2List act(const nn::Mat& obs, const nn::Mask& mask, double limit,
               AttentionTrace* trace = nullptr) const;

  // A non-empty header is stored as a leading empty tensor named "header:<text>".
  void save(const std::string& path, const std::string& header = "") const;
  static Policy load(const std::string& path);

 private:
  PolicyConfig cfg_;
  double action_scale_ = 1.0;
  std::variant<AttentionPolicy, MlpPolicy> net_;
};

// Element-wise mean of the latest `window` entries of the history.
Vec2List smooth(const std::deque<Vec2List>& history, int window);

// Keeps the latest H outputs and returns their mean.
class ActionSmoother {
 public:
  explicit ActionSmoother(int window = 5) : window_(window) {}
  Vec2List push(const Vec2List& actions);
  void reset() { history_.clear(); }

 private:
  int window_;
  std::deque<Vec2List> history_;
};

}  // namespace copush::policy
