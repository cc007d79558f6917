#pragma once

// Forward (noising) process with the linear schedule alpha(t) = 1 - t.
// Only positions at index >= `region_begin` are ever masked or corrupted;
// everything before it is conditioning context and stays clean.

#include <cstddef>
#include <span>

#include "t3d/types.hpp"

namespace t3d {

struct NoiseSchedule {
  // Probability that a token survives to time t.
  static double alpha(double t);
};

struct CorruptionConfig {
  double p_rand = 0.1;
  void validate() const;
};

Tokens mask_sequence(const Tokens& x0, double t, Token mask_id, Rng& rng, std::size_t region_begin = 0);

// Rebuilds the decoder state after `keep_steps` steps: generated position i
// is clean iff 1 <= order[i] <= keep_steps. order[i] == 0 marks padding that
// was never decoded (left masked).
Tokens mask_by_order(const Tokens& x0, std::span<const int> order, int keep_steps, Token mask_id);

// Every masked position (at or after region_begin) becomes a uniform draw
// from the vocabulary minus the mask token with probability p_rand.
Tokens corrupt_with_random(const Tokens& xt, const CorruptionConfig& cfg, Token mask_id, std::size_t vocab_size,
                           Rng& rng, std::size_t region_begin = 0);

}  // namespace t3d
