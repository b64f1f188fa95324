#include "copush/policy/policy.hpp"

#include <cmath>

#include "copush/common/error.hpp"
#include "copush/nn/checkpoint.hpp"

namespace copush::policy {

std::string to_string(Arch a) { return a == Arch::kAttention ? "attention" : "mlp"; }

Arch arch_from_string(const std::string& s) {
  if (s == "attention") return Arch::kAttention;
  if (s == "mlp") return Arch::kMlp;
  throw ConfigError("unknown policy architecture '" + s + "'");
}

void PolicyConfig::validate() const {
  if (obs_particles < 1) throw ConfigError("policy.obs_particles must be >= 1");
  if (d_feat < 1 || heads < 1 || d_k < 1 || d_v < 1)
    throw ConfigError("policy widths must be >= 1");
  if (attention_layers < 1) throw ConfigError("policy.attention_layers must be >= 1");
  if (attention_layers > 1 && heads * d_v != d_feat)
    throw ConfigError("policy: heads * d_v must equal d_feat to stack attention layers");
  for (int w : mlp_hidden)
    if (w < 1) throw ConfigError("policy.mlp_hidden widths must be >= 1");
  if (smoothing_window < 1) throw ConfigError("policy.smoothing_window must be >= 1");
}

AttentionPolicy::AttentionPolicy(int d_in, const PolicyConfig& cfg)
    : d_in_(d_in), embed_activation_(cfg.embed_activation), embed_("embed", d_in, cfg.d_feat) {
  int width = cfg.d_feat;
  for (int l = 0; l < cfg.attention_layers; ++l) {
    attention_.emplace_back("attention" + std::to_string(l), width, cfg.heads, cfg.d_k, cfg.d_v,
                            cfg.scale_by_dk);
    width = attention_.back().out();
  }
  head_ = nn::Linear("head", d_in + width, 2);
}

void AttentionPolicy::init(Rng& rng) {
  embed_.init(rng);
  for (auto& a : attention_) a.init(rng);
  head_.init(rng);
}

nn::Mat AttentionPolicy::forward(const nn::Mat& obs, const std::vector<nn::AttentionGroup>& groups,
                                 Cache* cache) const {
  COPUSH_REQUIRE(obs.cols() == d_in_, "attention policy: observation width mismatch");
  nn::Mat h = nn::activate(embed_.forward(obs), embed_activation_);
  if (cache) {
    cache->obs = obs;
    cache->embed = h;
    cache->attention.assign(attention_.size(), {});
  }
  for (std::size_t l = 0; l < attention_.size(); ++l)
    h = attention_[l].forward(h, groups, cache ? &cache->attention[l] : nullptr);
  nn::Mat z(obs.rows(), obs.cols() + h.cols());
  z << obs, h;
  if (cache) cache->features = std::move(h);
  return head_.forward(z);
}

void AttentionPolicy::backward(const Cache& cache, const std::vector<nn::AttentionGroup>& groups,
                               const nn::Mat& d_out) {
  nn::Mat z(cache.obs.rows(), cache.obs.cols() + cache.features.cols());
  z << cache.obs, cache.features;
  const nn::Mat dz = head_.backward(z, d_out);
  nn::Mat dh = dz.rightCols(cache.features.cols());
  for (std::size_t l = attention_.size(); l-- > 0;)
    dh = attention_[l].backward(cache.attention[l], groups, dh);
  dh = nn::activate_backward(cache.embed, dh, embed_activation_);
  embed_.backward(cache.obs, dh);
}

nn::ParamList AttentionPolicy::params() {
  nn::ParamList out = embed_.params();
  for (auto& a : attention_)
    for (nn::Tensor* t : a.params()) out.push_back(t);
  for (nn::Tensor* t : head_.params()) out.push_back(t);
  return out;
}

MlpPolicy::MlpPolicy(int d_in, int n_robots, const PolicyConfig& cfg)
    : d_in_(d_in), n_robots_(n_robots) {
  COPUSH_REQUIRE(n_robots >= 1, "mlp policy: need at least one robot");
  std::vector<int> widths{d_in * n_robots};
  widths.insert(widths.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
  widths.push_back(2 * n_robots);
  net_ = nn::Mlp("mlp", widths, cfg.mlp_activation);
}

void MlpPolicy::init(Rng& rng) { net_.init(rng); }

nn::Mat MlpPolicy::flatten(const nn::Mat& obs) const {
  COPUSH_REQUIRE(obs.rows() == n_robots_,
                 "mlp policy: trained for " + std::to_string(n_robots_) + " robots, got " +
                     std::to_string(obs.rows()));
  COPUSH_REQUIRE(obs.cols() == d_in_, "mlp policy: observation width mismatch");
  return Eigen::Map<const nn::Mat>(obs.data(), 1, obs.size());
}

nn::Mat MlpPolicy::forward(const nn::Mat& flat, nn::Mlp::Cache* cache) const {
  return net_.forward(flat, cache);
}

void MlpPolicy::backward(const nn::Mlp::Cache& cache, const nn::Mat& d_out) {
  net_.backward(cache, d_out);
}

Policy Policy::make_attention(int d_in, const PolicyConfig& cfg, double action_scale,
                              std::uint64_t seed) {
  cfg.validate();
  Policy p;
  p.cfg_ = cfg;
  p.action_scale_ = action_scale;
  AttentionPolicy net(d_in, cfg);
  auto rng = make_rng(seed, "policy.init");
  net.init(rng);
  p.net_ = std::move(net);
  return p;
}

Policy Policy::make_mlp(int d_in, int n_robots, const PolicyConfig& cfg, double action_scale,
                        std::uint64_t seed) {
  cfg.validate();
  Policy p;
  p.cfg_ = cfg;
  p.action_scale_ = action_scale;
  MlpPolicy net(d_in, n_robots, cfg);
  auto rng = make_rng(seed, "policy.init");
  net.init(rng);
  p.net_ = std::move(net);
  return p;
}

Arch Policy::arch() const {
  return std::holds_alternative<AttentionPolicy>(net_) ? Arch::kAttention : Arch::kMlp;
}

int Policy::d_in() const {
  return std::visit([](const auto& n) { return n.d_in(); }, net_);
}

nn::ParamList Policy::params() {
  return std::visit([](auto& n) { return n.params(); }, net_);
}

nn::Mat Policy::forward(const nn::Mat& obs, const nn::Mask& mask, AttentionTrace* trace) const {
  if (const auto* att = std::get_if<AttentionPolicy>(&net_)) {
    COPUSH_REQUIRE(mask.rows() == obs.rows(), "policy: mask does not match robot count");
    const std::vector<nn::AttentionGroup> groups{{0, mask}};
    if (!trace) return att->forward(obs, groups);
    AttentionPolicy::Cache cache;
    nn::Mat out = att->forward(obs, groups, &cache);
    trace->clear();
    for (const auto& layer : cache.attention) {
      std::vector<nn::Mat> heads;
      for (const auto& h : layer.attn) heads.push_back(h[0]);
      trace->push_back(std::move(heads));
    }
    return out;
  }
  const auto& mlp = std::get<MlpPolicy>(net_);
  const nn::Mat y = mlp.forward(mlp.flatten(obs));
  return Eigen::Map<const nn::Mat>(y.data(), obs.rows(), 2);
}

Vec2List Policy::act(const nn::Mat& obs, const nn::Mask& mask, double limit,
                     AttentionTrace* trace) const {
  const nn::Mat y = forward(obs, mask, trace);
  Vec2List out(static_cast<std::size_t>(y.rows()));
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    out[static_cast<std::size_t>(i)] =
        (sim::Vec2(y(i, 0), y(i, 1)) * action_scale_).cwiseMax(-limit).cwiseMin(limit);
  return out;
}

namespace {

constexpr const char* kMetaName = "policy.meta";

double act_code(nn::Activation a) { return static_cast<double>(static_cast<int>(a)); }
nn::Activation act_from_code(double c) {
  const int i = static_cast<int>(c);
  if (i < 0 || i > 2) throw ConfigError("checkpoint: bad activation code");
  return static_cast<nn::Activation>(i);
}

}  // namespace

void Policy::save(const std::string& path, const std::string& header) const {
  std::vector<double> meta{
      static_cast<double>(arch() == Arch::kAttention ? 0 : 1),
      static_cast<double>(d_in()),
      static_cast<double>(arch() == Arch::kMlp ? std::get<MlpPolicy>(net_).n_robots() : 0),
      static_cast<double>(cfg_.obs_particles),
      static_cast<double>(cfg_.d_feat),
      static_cast<double>(cfg_.heads),
      static_cast<double>(cfg_.d_k),
      static_cast<double>(cfg_.d_v),
      static_cast<double>(cfg_.attention_layers),
      cfg_.scale_by_dk ? 1.0 : 0.0,
      act_code(cfg_.embed_activation),
      act_code(cfg_.mlp_activation),
      static_cast<double>(cfg_.smoothing_window),
      action_scale_,
      static_cast<double>(cfg_.mlp_hidden.size())};
  for (int w : cfg_.mlp_hidden) meta.push_back(w);
  std::vector<nn::NamedMatrix> tensors;
  if (!header.empty()) tensors.push_back({"header:" + header, nn::Mat()});
  tensors.push_back({kMetaName, Eigen::Map<const nn::Mat>(meta.data(), 1, static_cast<Eigen::Index>(meta.size()))});
  auto& self = const_cast<Policy&>(*this);
  for (auto& t : nn::snapshot(self.params())) tensors.push_back(std::move(t));
  nn::save_checkpoint(path, tensors);
}

Policy Policy::load(const std::string& path) {
  const auto tensors = nn::load_checkpoint(path);
  std::size_t meta = 0;
  while (meta < tensors.size() && tensors[meta].name.rfind("header:", 0) == 0) ++meta;
  if (meta == tensors.size() || tensors[meta].name != kMetaName || tensors[meta].value.rows() != 1 ||
      tensors[meta].value.cols() < 15)
    throw ConfigError("'" + path + "' is not a policy checkpoint");
  const auto& m = tensors[meta].value;
  PolicyConfig cfg;
  cfg.obs_particles = static_cast<int>(m(0, 3));
  cfg.d_feat = static_cast<int>(m(0, 4));
  cfg.heads = static_cast<int>(m(0, 5));
  cfg.d_k = static_cast<int>(m(0, 6));
  cfg.d_v = static_cast<int>(m(0, 7));
  cfg.attention_layers = static_cast<int>(m(0, 8));
  cfg.scale_by_dk = m(0, 9) != 0.0;
  cfg.embed_activation = act_from_code(m(0, 10));
  cfg.mlp_activation = act_from_code(m(0, 11));
  cfg.smoothing_window = static_cast<int>(m(0, 12));
  const int n_hidden = static_cast<int>(m(0, 14));
  if (m.cols() != 15 + n_hidden) throw ConfigError("checkpoint '" + path + "': bad policy header");
  cfg.mlp_hidden.clear();
  for (int i = 0; i < n_hidden; ++i) cfg.mlp_hidden.push_back(static_cast<int>(m(0, 15 + i)));
  const int d_in = static_cast<int>(m(0, 1));
  Policy p = m(0, 0) == 0.0 ? make_attention(d_in, cfg, m(0, 13), 0)
                            : make_mlp(d_in, static_cast<int>(m(0, 2)), cfg, m(0, 13), 0);
  nn::restore(p.params(), tensors);
  return p;
}

Vec2List smooth(const std::deque<Vec2List>& history, int window) {
  COPUSH_REQUIRE(!history.empty(), "smooth: empty history");
  COPUSH_REQUIRE(window >= 1, "smooth: window must be >= 1");
  const std::size_t take = std::min<std::size_t>(history.size(), static_cast<std::size_t>(window));
  Vec2List out(history.back().size(), sim::Vec2::Zero());
  for (std::size_t k = history.size() - take; k < history.size(); ++k) {
    COPUSH_REQUIRE(history[k].size() == out.size(), "smooth: robot count changed");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += history[k][i];
  }
  for (auto& a : out) a /= static_cast<double>(take);
  return out;
}

Vec2List ActionSmoother::push(const Vec2List& actions) {
  history_.push_back(actions);
  while (static_cast<int>(history_.size()) > window_) history_.pop_front();
  return smooth(history_, window_);
}

}  // namespace copush::policy
