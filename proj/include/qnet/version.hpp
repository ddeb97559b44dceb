#pragma once

#include "qnet/slh.hpp"

namespace qnet {

inline constexpr const char* version_string = "1.0.0";

}  // namespace qnet
