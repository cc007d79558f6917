#pragma once

// Versioned binary checkpoint:
//   magic "T3DCKPT\0" | u32 version | 8 x i64 ModelConfig fields | u32 tensor count
//   per tensor: u32 name length | name bytes | u32 rank | rank x u64 dims | f64 LE values

#include <filesystem>
#include <iosfwd>

#include "t3d/denoiser.hpp"

namespace t3d {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const DenoiserParams& params);
DenoiserParams read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const DenoiserParams& params);
DenoiserParams load_checkpoint(const std::filesystem::path& path);

}  // namespace t3d
