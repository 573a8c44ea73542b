#pragma once

namespace qdmsim {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace qdmsim
