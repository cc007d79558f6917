#pragma once

// Reverse-process generation with low-confidence remasking.
//
// Decoding walks the generation region block by block (blocks aligned to
// absolute positions, size DecodeConfig::block_size). Each step runs one
// forward pass, scores every still-masked position of the current block by
// its confidence (largest post-temperature probability, mask token
// excluded) and commits the most confident ones. Ties go to the lowest
// position. The three modes differ only in how many positions a step
// commits:
//   full     one per step
//   static   block_size / steps_per_block per step
//   dynamic  all positions with confidence >= threshold, at least one

#include <optional>
#include <string>
#include <vector>

#include "t3d/denoiser.hpp"
#include "t3d/types.hpp"

namespace t3d {

enum class DecodeMode { Full, Static, Dynamic };

std::string to_string(DecodeMode mode);
DecodeMode decode_mode_from_string(const std::string& s);

struct DecodeConfig {
  int block_size = 4;
  DecodeMode mode = DecodeMode::Full;
  int steps_per_block = 4;
  double threshold = 0.9;
  double temperature = 0.0;  // 0 = greedy
  int max_new_tokens = 16;
  std::optional<Token> stop_token;

  void validate() const;
  // Tokens committed per step in static mode.
  int tokens_per_step() const;
  bool operator==(const DecodeConfig&) const = default;
};

// block_size / steps_per_block for static decoding, 1 for full decoding.
double tokps(const DecodeConfig& cfg);

struct Trajectory {
  Tokens prompt;
  Tokens output;           // generated region; padding after an early stop holds the mask id
  std::vector<int> order;  // 1-based global step per output position, 0 for padding
  int steps_total = 0;
  std::vector<std::vector<std::size_t>> per_step_positions;  // indices into output
  DecodeConfig config;

  // Full sequences (prompt + region) held by the decoder after each step;
  // states[s] is the state after s steps. Filled only on request.
  std::vector<Tokens> states;

  std::size_t generated_length() const;  // positions with order > 0
};

struct DecodeOptions {
  bool record_states = false;
};

Trajectory decode(const DenoiserParams& params, const Tokens& prompt, const DecodeConfig& cfg, Rng& rng,
                  DecodeOptions opts = {});

// One token per step whatever the configured mode.
Trajectory decode_full(const DenoiserParams& params, const Tokens& prompt, const DecodeConfig& cfg, Rng& rng,
                       DecodeOptions opts = {});
Trajectory decode_static(const DenoiserParams& params, const Tokens& prompt, const DecodeConfig& cfg, Rng& rng,
                         DecodeOptions opts = {});
Trajectory decode_dynamic(const DenoiserParams& params, const Tokens& prompt, const DecodeConfig& cfg, Rng& rng,
                          DecodeOptions opts = {});

// Prompt followed by the generated region masked according to the recorded
// order after `upto_step` steps.
Tokens replay_states(const Trajectory& traj, int upto_step, Token mask_id);

// Step index of each output position relative to the first step of its
// decoding block (1-based), 0 for padding.
std::vector<int> within_block_steps(const Trajectory& traj);

// Per-position decoding distribution used by the decoder: softmax of
// logits / T (T = 1 when greedy) with the mask token removed.
struct PositionScore {
  std::size_t position;
  double confidence;
  Token argmax;
};
std::vector<double> decoding_distribution(std::span<const double> logits_row, double temperature, Token mask_id);

}  // namespace t3d
