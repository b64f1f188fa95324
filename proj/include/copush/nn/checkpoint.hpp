#pragma once

#include <string>
#include <vector>

#include "copush/nn/layers.hpp"

namespace copush::nn {

// Flat binary weights file, little-endian:
//   "CPNN" | u32 version | u64 tensor count
//   per tensor: u64 name length | name | u64 rows | u64 cols | rows*cols f64 (row-major)
struct NamedMatrix {
  std::string name;
  Mat value;
};

void save_checkpoint(const std::string& path, const std::vector<NamedMatrix>& tensors);
// Throws ConfigError on a missing, truncated or foreign file.
std::vector<NamedMatrix> load_checkpoint(const std::string& path);

std::vector<NamedMatrix> snapshot(const ParamList& params);
// Copies values by name; every parameter must be present with the same shape.
void restore(const ParamList& params, const std::vector<NamedMatrix>& tensors);

}  // namespace copush::nn
