#include "t3d/optimizer.hpp"

#include <cmath>

#include "t3d/errors.hpp"

namespace t3d {

void AdamWConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optimizer: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight_decay must be >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("optimizer: grad_clip must be >= 0");
}

AdamW::AdamW(AdamWConfig cfg, const DenoiserParams& params) : cfg_(cfg) {
  cfg_.validate();
  for (const auto& [name, t] : params.named()) {
    m_.emplace_back(t->size(), 0.0);
    v_.emplace_back(t->size(), 0.0);
  }
}

double global_grad_norm(const DenoiserParams& params) {
  double ss = 0.0;
  for (const auto& [name, t] : params.named()) {
    if (!t->requires_grad()) continue;
    for (double g : t->grad()) ss += g * g;
  }
  return std::sqrt(ss);
}

double AdamW::step(DenoiserParams& params, double lr_scale) {
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) throw DivergenceError("optimizer: non-finite gradient norm");
  const double clip = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
  ++t_;
  const double lr = cfg_.learning_rate * lr_scale;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto named = params.named();
  for (std::size_t k = 0; k < named.size(); ++k) {
    auto& t = *named[k].second;
    if (!t.requires_grad()) throw StateError("optimizer: parameter " + named[k].first + " has no gradient storage");
    auto w = t.mutable_values();
    auto g = t.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    const double decay = t.rank() == 2 ? lr * cfg_.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= decay * w[i];
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  return norm;
}

}  // namespace t3d
