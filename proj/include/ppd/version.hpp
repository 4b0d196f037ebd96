#pragma once

namespace ppd {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ppd
