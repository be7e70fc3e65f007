#pragma once

namespace semortho {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace semortho
