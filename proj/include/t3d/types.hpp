#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace t3d {

using Token = std::int32_t;
using Tokens = std::vector<Token>;
using Rng = std::mt19937_64;

// Platform-independent draws; std:: distributions are implementation-defined.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

}  // namespace t3d
