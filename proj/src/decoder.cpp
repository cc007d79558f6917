#include "t3d/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "t3d/diffusion.hpp"
#include "t3d/errors.hpp"

namespace t3d {

std::string to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::Full:
      return "full";
    case DecodeMode::Static:
      return "static";
    case DecodeMode::Dynamic:
      return "dynamic";
  }
  return "unknown";
}

DecodeMode decode_mode_from_string(const std::string& s) {
  if (s == "full") return DecodeMode::Full;
  if (s == "static") return DecodeMode::Static;
  if (s == "dynamic") return DecodeMode::Dynamic;
  throw ConfigError("unknown decode mode '" + s + "'");
}

void DecodeConfig::validate() const {
  if (block_size < 1) throw ConfigError("decode: block_size must be positive");
  if (max_new_tokens < 1) throw ConfigError("decode: max_new_tokens must be positive");
  if (!(temperature >= 0.0)) throw ConfigError("decode: temperature must be >= 0");
  if (mode == DecodeMode::Static) {
    if (steps_per_block < 1 || steps_per_block > block_size || block_size % steps_per_block != 0) {
      throw ConfigError("decode: static mode needs 1 <= steps_per_block <= block_size dividing block_size");
    }
  }
  if (mode == DecodeMode::Dynamic && !(threshold > 0.0 && threshold <= 1.0)) {
    throw ConfigError("decode: threshold must lie in (0, 1]");
  }
}

int DecodeConfig::tokens_per_step() const {
  if (mode == DecodeMode::Full) return 1;
  return block_size / steps_per_block;
}

double tokps(const DecodeConfig& cfg) {
  if (cfg.mode == DecodeMode::Static) return static_cast<double>(cfg.block_size) / cfg.steps_per_block;
  return 1.0;
}

std::size_t Trajectory::generated_length() const {
  return static_cast<std::size_t>(std::count_if(order.begin(), order.end(), [](int o) { return o > 0; }));
}

std::vector<double> decoding_distribution(std::span<const double> logits_row, double temperature, Token mask_id) {
  const double temp = temperature > 0.0 ? temperature : 1.0;
  std::vector<double> p(logits_row.size(), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logits_row.size(); ++j) {
    if (static_cast<Token>(j) != mask_id) mx = std::max(mx, logits_row[j] / temp);
  }
  double z = 0.0;
  for (std::size_t j = 0; j < logits_row.size(); ++j) {
    if (static_cast<Token>(j) == mask_id) continue;
    p[j] = std::exp(logits_row[j] / temp - mx);
    z += p[j];
  }
  for (double& v : p) v /= z;
  return p;
}

namespace {

enum class Policy { OnePerStep, FixedCount, Threshold };

Token sample_from(const std::vector<double>& p, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  Token last = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= 0.0) continue;
    acc += p[j];
    last = static_cast<Token>(j);
    if (u < acc) return last;
  }
  return last;
}

Trajectory run_decoder(const DenoiserParams& params, const Tokens& prompt, const DecodeConfig& cfg, Rng& rng,
                       DecodeOptions opts, Policy policy) {
  cfg.validate();
  const auto& mc = params.config;
  const Token mask = static_cast<Token>(mc.mask_id);
  const std::size_t P = prompt.size();
  const std::size_t G = static_cast<std::size_t>(cfg.max_new_tokens);
  const std::size_t total = P + G;
  const std::size_t B = static_cast<std::size_t>(cfg.block_size);
  const std::size_t model_block = static_cast<std::size_t>(mc.block_size);
  if (total > static_cast<std::size_t>(mc.max_len)) {
    throw ConfigError("decode: prompt + max_new_tokens exceeds the model's max_len");
  }
  if (total % model_block != 0) {
    throw ConfigError("decode: prompt + max_new_tokens must be a multiple of the model block size");
  }
  for (Token t : prompt) {
    if (t == mask || t < 0 || t >= mc.vocab_size) throw DomainError("decode: prompt token outside vocabulary");
  }

  Trajectory traj;
  traj.prompt = prompt;
  traj.config = cfg;
  traj.output.assign(G, mask);
  traj.order.assign(G, 0);

  Tokens state = prompt;
  state.resize(total, mask);
  if (opts.record_states) traj.states.push_back(state);

  const std::size_t first_block = P / B;
  const std::size_t last_block = (total - 1) / B;
  int step = 0;
  for (std::size_t blk = first_block; blk <= last_block; ++blk) {
    const std::size_t begin = std::max(blk * B, P);
    const std::size_t end = std::min((blk + 1) * B, total);
    const std::size_t forward_len = std::min(total, (end + model_block - 1) / model_block * model_block);
    std::size_t remaining = end - begin;
    while (remaining > 0) {
      numcore::Tape tape(false);
      Tokens window(state.begin(), state.begin() + static_cast<std::ptrdiff_t>(forward_len));
      auto logits = forward_logits(tape, params, window);
      const std::size_t V = logits.cols();

      std::vector<PositionScore> scores;
      std::vector<std::vector<double>> dists;
      for (std::size_t i = begin; i < end; ++i) {
        if (state[i] != mask) continue;
        auto row = logits.values().subspan(i * V, V);
        auto p = decoding_distribution(row, cfg.temperature, mask);
        const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        scores.push_back({i, p[best], static_cast<Token>(best)});
        dists.push_back(std::move(p));
      }
      std::vector<std::size_t> rank(scores.size());
      std::iota(rank.begin(), rank.end(), 0);
      std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
        return scores[a].confidence > scores[b].confidence;
      });

      std::size_t commit = 1;
      if (policy == Policy::FixedCount) {
        commit = std::min<std::size_t>(static_cast<std::size_t>(cfg.tokens_per_step()), scores.size());
      } else if (policy == Policy::Threshold) {
        commit = static_cast<std::size_t>(std::count_if(
            scores.begin(), scores.end(), [&](const PositionScore& s) { return s.confidence >= cfg.threshold; }));
        commit = std::max<std::size_t>(commit, 1);
      }

      std::vector<std::size_t> chosen(rank.begin(), rank.begin() + static_cast<std::ptrdiff_t>(commit));
      std::sort(chosen.begin(), chosen.end());  // sample in position order
      ++step;
      std::vector<std::size_t> committed;
      for (std::size_t c : chosen) {
        const std::size_t pos = scores[c].position;
        const Token tok = cfg.temperature > 0.0 ? sample_from(dists[c], rng) : scores[c].argmax;
        state[pos] = tok;
        traj.output[pos - P] = tok;
        traj.order[pos - P] = step;
        committed.push_back(pos - P);
      }
      traj.per_step_positions.push_back(std::move(committed));
      if (opts.record_states) traj.states.push_back(state);
      remaining -= commit;
    }
    if (cfg.stop_token) {
      const bool stopped = std::any_of(state.begin() + static_cast<std::ptrdiff_t>(P),
                                       state.begin() + static_cast<std::ptrdiff_t>(end),
                                       [&](Token t) { return t == *cfg.stop_token; });
      if (stopped) break;
    }
  }
  traj.steps_total = step;
  return traj;
}

}  // namespace

Trajectory decode_full(const DenoiserParams& params, const Tokens& prompt, const DecodeConfig& cfg, Rng& rng,
                       DecodeOptions opts) {
  DecodeConfig c = cfg;
  c.mode = DecodeMode::Full;
  return run_decoder(params, prompt, c, rng, opts, Policy::OnePerStep);
}

Trajectory decode_static(const DenoiserParams& params, const Tokens& prompt, const DecodeConfig& cfg, Rng& rng,
                         DecodeOptions opts) {
  DecodeConfig c = cfg;
  c.mode = DecodeMode::Static;
  return run_decoder(params, prompt, c, rng, opts, Policy::FixedCount);
}

Trajectory decode_dynamic(const DenoiserParams& params, const Tokens& prompt, const DecodeConfig& cfg, Rng& rng,
                          DecodeOptions opts) {
  DecodeConfig c = cfg;
  c.mode = DecodeMode::Dynamic;
  return run_decoder(params, prompt, c, rng, opts, Policy::Threshold);
}

Trajectory decode(const DenoiserParams& params, const Tokens& prompt, const DecodeConfig& cfg, Rng& rng,
                  DecodeOptions opts) {
  switch (cfg.mode) {
    case DecodeMode::Full:
      return decode_full(params, prompt, cfg, rng, opts);
    case DecodeMode::Static:
      return decode_static(params, prompt, cfg, rng, opts);
    case DecodeMode::Dynamic:
      return decode_dynamic(params, prompt, cfg, rng, opts);
  }
  throw ConfigError("decode: unknown mode");
}

Tokens replay_states(const Trajectory& traj, int upto_step, Token mask_id) {
  if (upto_step < 0 || upto_step > traj.steps_total) {
    throw DomainError("replay_states: step " + std::to_string(upto_step) + " outside [0, " +
                      std::to_string(traj.steps_total) + "]");
  }
  Tokens state = traj.prompt;
  auto region = mask_by_order(traj.output, traj.order, upto_step, mask_id);
  state.insert(state.end(), region.begin(), region.end());
  return state;
}

std::vector<int> within_block_steps(const Trajectory& traj) {
  const std::size_t P = traj.prompt.size();
  const std::size_t B = static_cast<std::size_t>(traj.config.block_size);
  std::vector<int> first_step((P + traj.output.size()) / B + 1, std::numeric_limits<int>::max());
  for (std::size_t i = 0; i < traj.order.size(); ++i) {
    if (traj.order[i] > 0) {
      auto& f = first_step[(P + i) / B];
      f = std::min(f, traj.order[i]);
    }
  }
  std::vector<int> out(traj.order.size(), 0);
  for (std::size_t i = 0; i < traj.order.size(); ++i) {
    if (traj.order[i] > 0) out[i] = traj.order[i] - first_step[(P + i) / B] + 1;
  }
  return out;
}

}  // namespace t3d
