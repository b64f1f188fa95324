#include "copush/train/bc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "copush/common/error.hpp"
#include "copush/nn/checkpoint.hpp"

namespace copush::train {

void BcConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.bc.learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("train.bc.batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("train.bc.max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("train.bc.patience must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw ConfigError("train.bc.val_fraction must lie in [0, 1)");
}

std::vector<int> validation_goals(const std::vector<Sample>& samples, double val_fraction,
                                  std::uint64_t seed) {
  std::set<int> ids;
  for (const auto& s : samples) ids.insert(s.goal_id);
  std::vector<int> order(ids.begin(), ids.end());
  if (order.size() < 2) return {};
  auto rng = make_rng(seed, "bc.split");
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  const auto n_val = std::min(order.size() - 1,
                              static_cast<std::size_t>(std::lround(val_fraction * order.size())));
  order.resize(n_val);
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

// Forward pass over a minibatch; returns predictions stacked like targets.
struct Batch {
  nn::Mat obs, target;
  std::vector<nn::AttentionGroup> groups;
};

Batch make_batch(const std::vector<const Sample*>& items, policy::Arch arch) {
  Batch b;
  if (arch == policy::Arch::kAttention) {
    int rows = 0;
    for (const Sample* s : items) rows += static_cast<int>(s->obs.rows());
    b.obs.resize(rows, items.front()->obs.cols());
    b.target.resize(rows, 2);
    int off = 0;
    for (const Sample* s : items) {
      const int n = static_cast<int>(s->obs.rows());
      b.obs.middleRows(off, n) = s->obs;
      b.target.middleRows(off, n) = s->target;
      b.groups.push_back({off, s->mask});
      off += n;
    }
  } else {
    const auto n = items.front()->obs.size();
    b.obs.resize(static_cast<Eigen::Index>(items.size()), n);
    b.target.resize(static_cast<Eigen::Index>(items.size()), items.front()->target.size());
    for (std::size_t k = 0; k < items.size(); ++k) {
      const Sample& s = *items[k];
      COPUSH_REQUIRE(s.obs.size() == n, "bc: mlp needs a constant robot count");
      b.obs.row(static_cast<Eigen::Index>(k)) = Eigen::Map<const nn::Mat>(s.obs.data(), 1, n);
      b.target.row(static_cast<Eigen::Index>(k)) =
          Eigen::Map<const nn::Mat>(s.target.data(), 1, s.target.size());
    }
  }
  return b;
}

double batch_loss(policy::Policy& p, const Batch& b, bool train) {
  nn::Mat grad;
  if (p.arch() == policy::Arch::kAttention) {
    policy::AttentionPolicy::Cache cache;
    const nn::Mat y = p.attention().forward(b.obs, b.groups, train ? &cache : nullptr);
    const double l = nn::mse(y, b.target, train ? &grad : nullptr);
    if (train) p.attention().backward(cache, b.groups, grad);
    return l;
  }
  nn::Mlp::Cache cache;
  const nn::Mat y = p.mlp().forward(b.obs, train ? &cache : nullptr);
  const double l = nn::mse(y, b.target, train ? &grad : nullptr);
  if (train) p.mlp().backward(cache, grad);
  return l;
}

double dataset_loss(policy::Policy& p, const std::vector<const Sample*>& items, int batch) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < items.size(); k += static_cast<std::size_t>(batch)) {
    std::vector<const Sample*> chunk(items.begin() + static_cast<std::ptrdiff_t>(k),
                                     items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), k + batch)));
    const Batch b = make_batch(chunk, p.arch());
    total += batch_loss(p, b, false) * static_cast<double>(b.target.size());
    count += static_cast<std::size_t>(b.target.size());
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace

double bc_loss(const policy::Policy& policy, const std::vector<Sample>& samples) {
  std::vector<const Sample*> items;
  for (const auto& s : samples) items.push_back(&s);
  return dataset_loss(const_cast<policy::Policy&>(policy), items, 256);
}

BcResult bc_fit(const std::vector<Sample>& samples, policy::Arch arch,
                const policy::PolicyConfig& pcfg, double action_scale, const BcConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw ConfigError("empty dataset");
  const int d_in = static_cast<int>(samples.front().obs.cols());
  const int n_robots = static_cast<int>(samples.front().obs.rows());
  BcResult res;
  res.policy = arch == policy::Arch::kAttention
                   ? policy::Policy::make_attention(d_in, pcfg, action_scale, cfg.seed)
                   : policy::Policy::make_mlp(d_in, n_robots, pcfg, action_scale, cfg.seed);

  const auto val_ids = validation_goals(samples, cfg.val_fraction, cfg.seed);
  std::vector<const Sample*> train_set, val_set;
  for (const auto& s : samples) {
    COPUSH_REQUIRE(s.obs.cols() == d_in, "bc: observation width differs between samples");
    if (arch == policy::Arch::kMlp && s.obs.rows() != n_robots)
      throw ConfigError("bc: the mlp policy needs a constant robot count");
    (std::binary_search(val_ids.begin(), val_ids.end(), s.goal_id) ? val_set : train_set).push_back(&s);
  }

  auto params = res.policy.params();
  nn::Adam adam(cfg.learning_rate);
  auto rng = make_rng(cfg.seed, "bc.batches");
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<nn::NamedMatrix> best = nn::snapshot(params);
  res.best_val = INFINITY;
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t k = 0; k < order.size(); k += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const Sample*> chunk;
      for (std::size_t j = k; j < std::min(order.size(), k + cfg.batch_size); ++j)
        chunk.push_back(train_set[order[j]]);
      nn::zero_grad(params);
      const double l = batch_loss(res.policy, make_batch(chunk, arch), true);
      if (!std::isfinite(l)) {
        res.diverged = true;
        break;
      }
      adam.step(params);
      sum += l;
      ++batches;
    }
    if (res.diverged) break;
    const double train_loss = sum / batches;
    const double val_loss = val_set.empty() ? train_loss : dataset_loss(res.policy, val_set, 256);
    if (!std::isfinite(val_loss)) {
      res.diverged = true;
      break;
    }
    res.train_loss.push_back(train_loss);
    res.val_loss.push_back(val_loss);
    if (val_loss < res.best_val) {
      res.best_val = val_loss;
      res.best_train = train_loss;
      res.best_epoch = epoch;
      best = nn::snapshot(params);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  nn::restore(params, best);
  return res;
}

}  // namespace copush::train
