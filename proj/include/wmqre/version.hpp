#pragma once

namespace wmqre {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace wmqre
