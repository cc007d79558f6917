#include "t3d/objectives.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "t3d/diffusion.hpp"
#include "t3d/errors.hpp"

namespace t3d {

using numcore::Tape;
using numcore::Tensor;

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("loss config: lambda must be >= 0");
  if (!(beta > 0.0)) throw ConfigError("loss config: beta must be > 0");
  if (!(delta_clamp > 0.0)) throw ConfigError("loss config: delta_clamp must be > 0");
  if (block_size < 1) throw ConfigError("loss config: block_size must be positive");
}

void DistillBatch::validate(Token mask_id) const {
  for (const auto& item : items) {
    if (item.state.size() != item.target.size() || item.input.size() != item.state.size()) {
      throw DimensionError("distill item: state, input and target differ in length");
    }
    for (std::size_t i : item.positions) {
      if (i >= item.state.size()) throw DimensionError("distill item: position outside sequence");
      if (item.state[i] != mask_id) throw ContractError("distill item: target position not masked in state");
      if (item.target[i] == mask_id) throw ContractError("distill item: target holds a mask token");
    }
  }
}

Tensor prefix_log_probs(Tape& tape, const DenoiserParams& params, const Tokens& seq, std::size_t last_position) {
  const auto block = static_cast<std::size_t>(params.config.block_size);
  const std::size_t len = std::min(seq.size(), (last_position / block + 1) * block);
  if (len == seq.size()) return numcore::log_softmax_rows(tape, forward_logits(tape, params, seq));
  Tokens prefix(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(len));
  return numcore::log_softmax_rows(tape, forward_logits(tape, params, prefix));
}

namespace {

void require_masked(const Tokens& xt, std::span<const std::size_t> positions, Token mask_id, const char* op) {
  for (std::size_t i : positions) {
    if (i >= xt.size()) throw DimensionError(std::string(op) + ": position outside sequence");
    if (xt[i] != mask_id) {
      throw ContractError(std::string(op) + ": position " + std::to_string(i) + " is not masked in x_t");
    }
  }
}

std::size_t last_of(std::span<const std::size_t> positions) {
  return *std::max_element(positions.begin(), positions.end());
}

// Mean cross-entropy without the masking precondition.
LossValue masked_ce(Tape& tape, const DenoiserParams& params, const Tokens& input, const Tokens& target,
                    std::span<const std::size_t> positions) {
  if (input.size() != target.size()) throw DimensionError("cross-entropy: input and target differ in length");
  if (positions.empty()) return {Tensor::scalar(0.0), true};
  auto lp = prefix_log_probs(tape, params, input, last_of(positions));
  auto total = target_log_prob(tape, lp, target, positions);
  return {numcore::scale(tape, total, -1.0 / static_cast<double>(positions.size())), false};
}

Tensor mean_of(Tape& tape, const std::vector<Tensor>& terms) {
  Tensor acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = numcore::add(tape, acc, terms[i]);
  return numcore::scale(tape, acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

LossValue mdm_loss(Tape& tape, const DenoiserParams& params, const Tokens& x0, const Tokens& xt,
                   std::span<const std::size_t> positions) {
  require_masked(xt, positions, static_cast<Token>(params.config.mask_id), "mdm_loss");
  return masked_ce(tape, params, xt, x0, positions);
}

LossValue naive_td_loss(Tape& tape, const DenoiserParams& params, const DistillBatch& batch) {
  batch.validate(static_cast<Token>(params.config.mask_id));
  std::vector<Tensor> terms;
  for (const auto& item : batch.items) {
    auto l = masked_ce(tape, params, item.input, item.target, item.positions);
    if (!l.skipped) terms.push_back(l.value);
  }
  if (terms.empty()) return {Tensor::scalar(0.0), true};
  return {mean_of(tape, terms), false};
}

LossValue marginal_self_distill_loss(Tape& tape, const DenoiserParams& params, const Tokens& x0, double t, Rng& rng,
                                     std::size_t region_begin) {
  const auto mask = static_cast<Token>(params.config.mask_id);
  auto xt = mask_sequence(x0, t, mask, rng, region_begin);
  std::vector<std::size_t> positions;
  for (std::size_t i = region_begin; i < xt.size(); ++i) {
    if (xt[i] == mask) positions.push_back(i);
  }
  return mdm_loss(tape, params, x0, xt, positions);
}

DdoTerms ddo_step_loss(Tape& tape, const DenoiserParams& theta, const DenoiserParams& reference, const Tokens& input,
                       const Tokens& x0_real, const Tokens& x0_fake, std::span<const std::size_t> positions,
                       const LossConfig& cfg) {
  cfg.validate();
  if (reference.out_w.requires_grad()) {
    throw ContractError("ddo_step_loss: reference parameters must be a frozen (stop-gradient) copy");
  }
  if (x0_real.size() != input.size() || x0_fake.size() != input.size()) {
    throw DimensionError("ddo_step_loss: real/fake completions differ in length from x_t");
  }
  const auto mask = static_cast<Token>(theta.config.mask_id);
  std::vector<bool> is_target(input.size(), false);
  for (std::size_t i : positions) {
    if (i >= input.size()) throw DimensionError("ddo_step_loss: position outside sequence");
    if (x0_real[i] == mask || x0_fake[i] == mask) {
      throw ContractError("ddo_step_loss: real/fake completion leaves a target position masked");
    }
    is_target[i] = true;
  }
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (!is_target[i] && x0_real[i] != x0_fake[i]) {
      throw ContractError("ddo_step_loss: real and fake completions disagree outside the target positions");
    }
  }
  if (positions.empty()) return {Tensor::scalar(0.0), 0.0, 0.0, true};

  const std::size_t last = last_of(positions);
  auto lp_theta = prefix_log_probs(tape, theta, input, last);
  Tape ref_tape(false);
  auto lp_ref = prefix_log_probs(ref_tape, reference, input, last);

  auto delta = [&](const Tokens& x0) {
    auto log_theta = target_log_prob(tape, lp_theta, x0, positions);
    const double log_ref = target_log_prob(ref_tape, lp_ref, x0, positions).item();
    auto diff = numcore::sub(tape, log_theta, Tensor::scalar(log_ref));
    return numcore::clamp(tape, numcore::scale(tape, diff, cfg.beta), -cfg.delta_clamp, cfg.delta_clamp);
  };
  auto d_real = delta(x0_real);
  auto d_fake = delta(x0_fake);
  auto loss = numcore::scale(
      tape, numcore::add(tape, numcore::log_sigmoid(tape, d_real), numcore::log_one_minus_sigmoid(tape, d_fake)),
      -1.0);
  return {loss, d_real.item(), d_fake.item(), false};
}

std::vector<double> path_weights(std::span<const int> within_block_step, int block_size) {
  if (block_size < 1) throw ConfigError("path weights: block_size must be positive");
  std::vector<double> w(within_block_step.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const int step = within_block_step[i];
    if (step < 1 || step > block_size) {
      throw ContractError("path weights: step index " + std::to_string(step) + " outside [1, " +
                          std::to_string(block_size) + "]");
    }
    w[i] = static_cast<double>(block_size - step + 1) / static_cast<double>(block_size);
  }
  return w;
}

LossValue path_loss(Tape& tape, const DenoiserParams& params, const Trajectory& traj, int block_size,
                    PathOptions opts) {
  const auto mask = static_cast<Token>(params.config.mask_id);
  const std::size_t P = traj.prompt.size();
  const auto decode_block = static_cast<std::size_t>(traj.config.block_size);
  auto within = within_block_steps(traj);

  // step -> output indices committed at that step
  std::map<int, std::vector<std::size_t>> by_step;
  for (std::size_t i = 0; i < traj.order.size(); ++i) {
    if (traj.order[i] == 0) continue;
    if (opts.only_block && (P + i) / decode_block != *opts.only_block) continue;
    by_step[traj.order[i]].push_back(i);
  }
  if (by_step.empty()) return {Tensor::scalar(0.0), true};

  std::vector<Tensor> step_terms;
  std::size_t tokens = 0;
  for (const auto& [step, idx] : by_step) {
    auto state = replay_states(traj, step - 1, mask);
    Tokens x0 = state;
    std::vector<std::size_t> positions;
    std::vector<int> steps;
    for (std::size_t i : idx) {
      positions.push_back(P + i);
      x0[P + i] = traj.output[i];
      steps.push_back(within[i]);
    }
    auto weights = path_weights(steps, block_size);
    if (opts.uniform_weights) std::fill(weights.begin(), weights.end(), 1.0);
    auto lp = prefix_log_probs(tape, params, state, last_of(positions));
    std::vector<std::size_t> cols(positions.size());
    for (std::size_t n = 0; n < positions.size(); ++n) cols[n] = static_cast<std::size_t>(x0[positions[n]]);
    auto picked = numcore::pick(tape, lp, positions, cols);
    auto w = Tensor::from({weights.size()}, weights);
    step_terms.push_back(numcore::sum(tape, numcore::mul(tape, picked, w)));
    tokens += positions.size();
  }
  Tensor acc = step_terms.front();
  for (std::size_t i = 1; i < step_terms.size(); ++i) acc = numcore::add(tape, acc, step_terms[i]);
  return {numcore::scale(tape, acc, -1.0 / static_cast<double>(tokens)), false};
}

T3dLoss t3d_loss(Tape& tape, const DenoiserParams& theta, const DenoiserParams& reference, const DistillBatch& batch,
                 std::span<const Trajectory> trajs, const LossConfig& cfg, std::span<const std::size_t> path_blocks) {
  cfg.validate();
  batch.validate(static_cast<Token>(theta.config.mask_id));
  if (!path_blocks.empty() && path_blocks.size() != trajs.size()) {
    throw DimensionError("t3d_loss: path_blocks must be empty or match trajs");
  }
  T3dLoss out;
  std::vector<Tensor> ddo_terms;
  double dr = 0.0, df = 0.0;
  for (const auto& item : batch.items) {
    auto d = ddo_step_loss(tape, theta, reference, item.input, item.target, item.fake, item.positions, cfg);
    if (d.skipped) continue;
    ddo_terms.push_back(d.loss);
    dr += d.delta_real;
    df += d.delta_fake;
  }
  Tensor ddo = ddo_terms.empty() ? Tensor::scalar(0.0) : mean_of(tape, ddo_terms);
  if (!ddo_terms.empty()) {
    out.mean_delta_real = dr / static_cast<double>(ddo_terms.size());
    out.mean_delta_fake = df / static_cast<double>(ddo_terms.size());
  }

  std::vector<Tensor> path_terms;
  if (cfg.lambda > 0.0) {
    for (std::size_t n = 0; n < trajs.size(); ++n) {
      PathOptions opts;
      if (!path_blocks.empty()) opts.only_block = path_blocks[n];
      auto p = path_loss(tape, theta, trajs[n], cfg.block_size, opts);
      if (!p.skipped) path_terms.push_back(p.value);
    }
  }
  out.ddo = ddo.item();
  if (path_terms.empty()) {
    out.total = ddo;
    return out;
  }
  Tensor path = mean_of(tape, path_terms);
  out.path = path.item();
  out.total = numcore::add(tape, ddo, numcore::scale(tape, path, cfg.lambda));
  return out;
}

}  // namespace t3d
