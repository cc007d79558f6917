#pragma once

// Block-causal transformer denoiser: bidirectional attention inside each
// block of `block_size` tokens, causal across blocks. Pre-norm layers,
// learned positional embeddings, GELU MLP. No time conditioning; the mask
// pattern of the input carries the noise level.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "t3d/numcore.hpp"
#include "t3d/types.hpp"

namespace t3d {

struct ModelConfig {
  std::int64_t vocab_size = 17;  // includes the mask token
  std::int64_t mask_id = 16;
  std::int64_t d_model = 32;
  std::int64_t n_layers = 2;
  std::int64_t n_heads = 2;
  std::int64_t d_ff = 64;
  std::int64_t max_len = 32;
  std::int64_t block_size = 4;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  numcore::Tensor ln1_gain, ln1_bias;
  numcore::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  numcore::Tensor ln2_gain, ln2_bias;
  numcore::Tensor w1, b1, w2, b2;
};

struct DenoiserParams {
  ModelConfig config;
  numcore::Tensor tok_emb;  // [vocab, d_model]
  numcore::Tensor pos_emb;  // [max_len, d_model]
  std::vector<LayerParams> layers;
  numcore::Tensor lnf_gain, lnf_bias;
  numcore::Tensor out_w;  // [d_model, vocab], zero at init
  numcore::Tensor out_b;  // [vocab], zero at init

  // Stable, serialization order.
  std::vector<std::pair<std::string, numcore::Tensor*>> named();
  std::vector<std::pair<std::string, const numcore::Tensor*>> named() const;

  // Deep copy. A frozen copy carries no gradient storage at all.
  DenoiserParams clone() const;
  DenoiserParams frozen_copy() const;

  void zero_grad();
  bool bitwise_equal(const DenoiserParams& other) const;
  std::size_t parameter_count() const;
};

DenoiserParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// L x L visibility matrix, row-major: entry (i, j) is true iff block(j) <= block(i).
std::vector<std::vector<bool>> block_attention_mask(std::size_t length, std::size_t block_size);

// Logits for a batch of equal-length sequences, rows = n_seq * L.
numcore::Tensor forward_logits_batch(numcore::Tape& tape, const DenoiserParams& params,
                                     std::span<const Tokens> batch);

// Logits [L x V] for one sequence. Length must be a multiple of block_size.
numcore::Tensor forward_logits(numcore::Tape& tape, const DenoiserParams& params, const Tokens& tokens);

// sum_{i in positions} log p(x0[i] | xt). Every position must be masked in xt.
numcore::Tensor sequence_log_prob(numcore::Tape& tape, const DenoiserParams& params, const Tokens& xt,
                                  const Tokens& x0, std::span<const std::size_t> positions);

// Same quantity read off precomputed row log-probabilities, without the mask
// check. Used when inputs have been corrupted with random tokens.
numcore::Tensor target_log_prob(numcore::Tape& tape, const numcore::Tensor& log_probs, const Tokens& x0,
                                std::span<const std::size_t> positions);

}  // namespace t3d
