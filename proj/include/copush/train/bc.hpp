#pragma once

#include <cstdint>
#include <vector>

#include "copush/policy/policy.hpp"
#include "copush/train/dataset.hpp"

namespace copush::train {

struct BcConfig {
  double learning_rate = 1e-3;
  int batch_size = 64;
  int max_epochs = 200;
  // Stop after this many epochs without a better validation loss.
  int patience = 10;
  // Fraction of goals (not samples) held out for validation.
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BcResult {
  policy::Policy policy;            // parameters of the best validation epoch
  std::vector<double> train_loss;   // mean minibatch MSE per epoch
  std::vector<double> val_loss;     // per epoch; equals train_loss without a validation split
  int best_epoch = -1;
  double best_val = 0.0;
  double best_train = 0.0;
  bool diverged = false;            // a non-finite loss stopped training
};

// Goal ids held out for validation: a seeded shuffle of the distinct ids,
// round(val_fraction * count) of them, none when only one goal exists.
std::vector<int> validation_goals(const std::vector<Sample>& samples, double val_fraction,
                                  std::uint64_t seed);

// Mean squared error of normalized actions over samples.
double bc_loss(const policy::Policy& policy, const std::vector<Sample>& samples);

// Minimizes the action MSE with Adam over shuffled minibatches.
BcResult bc_fit(const std::vector<Sample>& samples, policy::Arch arch,
                const policy::PolicyConfig& pcfg, double action_scale, const BcConfig& cfg);

}  // namespace copush::train
