#pragma once

namespace deae {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace deae
