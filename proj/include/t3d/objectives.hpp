#pragma once

// Training losses. All of them are built from one primitive: the summed
// log-probability of target tokens at a set of positions, read from a
// single forward pass over the (possibly corrupted) state.

#include <optional>
#include <span>
#include <vector>

#include "t3d/decoder.hpp"
#include "t3d/denoiser.hpp"
#include "t3d/numcore.hpp"

namespace t3d {

struct LossConfig {
  double lambda = 0.2;        // path-consistency weight
  double beta = 1.0;          // log-ratio temperature
  double delta_clamp = 20.0;  // |beta * log-ratio| bound
  int block_size = 4;         // B in the path weights

  void validate() const;
};

struct LossValue {
  numcore::Tensor value;
  bool skipped = false;  // no target positions; value is a constant 0
};

enum class BatchSource { TeacherTrajectory, ReferenceRollout, RandomMasking };

// One training pair. `state` is x_t with every target position masked;
// `input` is what the model actually sees (state after random-token
// corruption, or state itself). `fake` is only used by DDO.
struct DistillItem {
  Tokens state;
  Tokens input;
  Tokens target;
  Tokens fake;
  std::vector<std::size_t> positions;
  std::vector<int> order;
};

struct DistillBatch {
  std::vector<DistillItem> items;
  BatchSource source = BatchSource::TeacherTrajectory;

  // targets mask-free on positions; positions masked in state
  void validate(Token mask_id) const;
};

// Row log-probabilities of the shortest block-aligned prefix covering
// `last_position`. Rows up to last_position equal the full-length forward
// bit for bit (block causality).
numcore::Tensor prefix_log_probs(numcore::Tape& tape, const DenoiserParams& params, const Tokens& seq,
                                 std::size_t last_position);

// Mean over positions of -log p(x0[i] | xt). Positions must be masked in xt.
LossValue mdm_loss(numcore::Tape& tape, const DenoiserParams& params, const Tokens& x0, const Tokens& xt,
                   std::span<const std::size_t> positions);

// Trajectory cross-entropy: mdm_loss per item on (input, target), averaged
// over items that have positions.
LossValue naive_td_loss(numcore::Tape& tape, const DenoiserParams& params, const DistillBatch& batch);

// Mask a teacher sample with q(x_t | x_0) at time t (generation region only)
// and apply mdm_loss.
LossValue marginal_self_distill_loss(numcore::Tape& tape, const DenoiserParams& params, const Tokens& x0, double t,
                                     Rng& rng, std::size_t region_begin = 0);

struct DdoTerms {
  numcore::Tensor loss;
  double delta_real = 0.0;  // clamped, beta-scaled
  double delta_fake = 0.0;
  bool skipped = false;
};

// -log sigma(D_real) - log(1 - sigma(D_fake)),
// D = clamp(beta * (log p_theta(x0|xt) - log p_ref(x0|xt)), +-delta_clamp).
// `reference` must be a frozen copy; it never receives gradient.
DdoTerms ddo_step_loss(numcore::Tape& tape, const DenoiserParams& theta, const DenoiserParams& reference,
                       const Tokens& input, const Tokens& x0_real, const Tokens& x0_fake,
                       std::span<const std::size_t> positions, const LossConfig& cfg);

// (B - step + 1) / B for within-block step indices 1..B.
std::vector<double> path_weights(std::span<const int> within_block_step, int block_size);

struct PathOptions {
  std::optional<std::size_t> only_block;  // restrict to one decoding block (absolute block index)
  bool uniform_weights = false;
};

// For every decoding step, rebuild the state just before it and accumulate
// -w_i log p(x0_i | state) over the tokens committed at that step;
// normalised by the token count.
LossValue path_loss(numcore::Tape& tape, const DenoiserParams& params, const Trajectory& traj, int block_size,
                    PathOptions opts = {});

struct T3dLoss {
  numcore::Tensor total;
  double ddo = 0.0;
  double path = 0.0;
  double mean_delta_real = 0.0;
  double mean_delta_fake = 0.0;
};

// L = mean DDO over batch items + lambda * mean path loss over trajs.
// path_blocks, when non-empty, gives the decoding block scored per trajectory.
T3dLoss t3d_loss(numcore::Tape& tape, const DenoiserParams& theta, const DenoiserParams& reference,
                 const DistillBatch& batch, std::span<const Trajectory> trajs, const LossConfig& cfg,
                 std::span<const std::size_t> path_blocks = {});

}  // namespace t3d
