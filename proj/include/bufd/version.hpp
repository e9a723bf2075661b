#pragma once

namespace bufd {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace bufd
