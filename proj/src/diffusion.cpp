#include "t3d/diffusion.hpp"

#include <string>

#include "t3d/errors.hpp"

namespace t3d {

double NoiseSchedule::alpha(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("noise schedule: t must lie in [0, 1]");
  return 1.0 - t;
}

void CorruptionConfig::validate() const {
  if (!(p_rand >= 0.0 && p_rand <= 1.0)) throw ConfigError("p_rand must lie in [0, 1]");
}

Tokens mask_sequence(const Tokens& x0, double t, Token mask_id, Rng& rng, std::size_t region_begin) {
  const double keep = NoiseSchedule::alpha(t);
  Tokens xt = x0;
  for (std::size_t i = region_begin; i < x0.size(); ++i) {
    if (x0[i] == mask_id) throw ContractError("mask_sequence: x_0 already contains a mask token");
    // one draw per position regardless of t keeps streams aligned across t
    const double u = uniform01(rng);
    if (u >= keep) xt[i] = mask_id;
  }
  return xt;
}

Tokens mask_by_order(const Tokens& x0, std::span<const int> order, int keep_steps, Token mask_id) {
  if (keep_steps < 0) throw DomainError("mask_by_order: keep_steps must be non-negative");
  if (order.size() != x0.size()) throw DimensionError("mask_by_order: order and x_0 differ in length");
  Tokens xt(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    if (order[i] < 0) throw DomainError("mask_by_order: negative step index at " + std::to_string(i));
    const bool clean = order[i] >= 1 && order[i] <= keep_steps;
    xt[i] = clean ? x0[i] : mask_id;
  }
  return xt;
}

Tokens corrupt_with_random(const Tokens& xt, const CorruptionConfig& cfg, Token mask_id, std::size_t vocab_size,
                           Rng& rng, std::size_t region_begin) {
  cfg.validate();
  if (vocab_size < 2) throw ConfigError("corrupt_with_random: vocabulary has no non-mask tokens");
  Tokens out = xt;
  if (cfg.p_rand == 0.0) return out;
  for (std::size_t i = region_begin; i < xt.size(); ++i) {
    if (xt[i] != mask_id) continue;
    if (uniform01(rng) >= cfg.p_rand) continue;
    // uniform over vocab minus mask: draw from vocab_size - 1 slots, skip the mask id
    auto draw = static_cast<Token>(uniform_index(rng, vocab_size - 1));
    if (draw >= mask_id) ++draw;
    out[i] = draw;
  }
  return out;
}

}  // namespace t3d
