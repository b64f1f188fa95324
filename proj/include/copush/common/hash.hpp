#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "copush/common/rng.hpp"

namespace copush {

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Short content fingerprint used in artifact headers.
inline std::string content_hash(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

}  // namespace copush
