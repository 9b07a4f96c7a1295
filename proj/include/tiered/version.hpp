#pragma once

namespace tiered {

inline constexpr const char* kVersion = "0.3.0";

}  // namespace tiered
