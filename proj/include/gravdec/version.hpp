#pragma once

namespace gravdec {
inline constexpr const char* kVersion = "0.1.0";
}
