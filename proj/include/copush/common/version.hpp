#pragma once

namespace copush {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace copush
