#pragma once

namespace protoclr {

inline constexpr const char* kVersion = "0.1.0";

} // namespace protoclr
