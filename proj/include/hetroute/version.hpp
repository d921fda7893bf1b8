#pragma once

namespace hetroute {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace hetroute
