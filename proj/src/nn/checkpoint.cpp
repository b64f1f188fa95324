#include "copush/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "copush/common/error.hpp"

namespace copush::nn {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[4] = {'C', 'P', 'N', 'N'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is, const std::string& path) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw ConfigError("checkpoint '" + path + "' is truncated");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedMatrix>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write checkpoint '" + path + "'");
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint64_t>(os, tensors.size());
  for (const auto& t : tensors) {
    put<std::uint64_t>(os, t.name.size());
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(t.value.cols()));
    os.write(reinterpret_cast<const char*>(t.value.data()),
             static_cast<std::streamsize>(sizeof(double) * t.value.size()));
  }
  if (!os) throw ConfigError("failed writing checkpoint '" + path + "'");
}

std::vector<NamedMatrix> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read checkpoint '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw ConfigError("'" + path + "' is not a checkpoint");
  const auto version = get<std::uint32_t>(is, path);
  if (version != kVersion)
    throw ConfigError("checkpoint '" + path + "' has unsupported version " + std::to_string(version));
  const auto count = get<std::uint64_t>(is, path);
  std::vector<NamedMatrix> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedMatrix t;
    const auto len = get<std::uint64_t>(is, path);
    if (len > (1u << 16)) throw ConfigError("checkpoint '" + path + "' is corrupt");
    t.name.resize(len);
    if (!is.read(t.name.data(), static_cast<std::streamsize>(len)))
      throw ConfigError("checkpoint '" + path + "' is truncated");
    const auto rows = get<std::uint64_t>(is, path);
    const auto cols = get<std::uint64_t>(is, path);
    if (rows > (1u << 24) || cols > (1u << 24) || rows * cols > (1u << 28))
      throw ConfigError("checkpoint '" + path + "' is corrupt");
    t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!is.read(reinterpret_cast<char*>(t.value.data()),
                 static_cast<std::streamsize>(sizeof(double) * rows * cols)))
      throw ConfigError("checkpoint '" + path + "' is truncated");
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<NamedMatrix> snapshot(const ParamList& params) {
  std::vector<NamedMatrix> out;
  for (const Tensor* t : params) out.push_back({t->name, t->value});
  return out;
}

void restore(const ParamList& params, const std::vector<NamedMatrix>& tensors) {
  std::unordered_map<std::string, const Mat*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.value;
  for (Tensor* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw ConfigError("checkpoint lacks tensor '" + p->name + "'");
    if (it->second->rows() != p->value.rows() || it->second->cols() != p->value.cols())
      throw ConfigError("checkpoint tensor '" + p->name + "' has the wrong shape");
    p->value = *it->second;
  }
}

}  // namespace copush::nn
