#pragma once

namespace flexcoop {

inline constexpr const char* kVersion = "0.1.0";

}
