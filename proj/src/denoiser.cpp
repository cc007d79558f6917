#include "t3d/denoiser.hpp"

#include <bit>
#include <cmath>
#include <numbers>

#include "t3d/errors.hpp"

namespace t3d {

using numcore::Tape;
using numcore::Tensor;

void ModelConfig::validate() const {
  if (vocab_size < 2 || d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 || max_len < 1 ||
      block_size < 1) {
    throw ConfigError("model config: sizes must be positive (vocab_size >= 2)");
  }
  if (d_model % n_heads != 0) throw ConfigError("model config: d_model must be divisible by n_heads");
  if (mask_id < 0 || mask_id >= vocab_size) throw ConfigError("model config: mask_id must be < vocab_size");
  if (max_len % block_size != 0) throw ConfigError("model config: max_len must be divisible by block_size");
}

namespace {

Tensor normal_tensor(numcore::Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(numcore::shape_size(shape));
  for (std::size_t i = 0; i < v.size(); i += 2) {
    // Box-Muller on our own uniform draws keeps init platform independent
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    v[i] = stddev * r * std::cos(2.0 * std::numbers::pi * u2);
    if (i + 1 < v.size()) v[i + 1] = stddev * r * std::sin(2.0 * std::numbers::pi * u2);
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor filled(numcore::Shape shape, double value) {
  return Tensor::from(shape, std::vector<double>(numcore::shape_size(shape), value), true);
}

template <class Self, class Out>
void collect_named(Self& p, Out& out) {
  out.emplace_back("tok_emb", &p.tok_emb);
  out.emplace_back("pos_emb", &p.pos_emb);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    out.emplace_back(pre + "ln1.gain", &L.ln1_gain);
    out.emplace_back(pre + "ln1.bias", &L.ln1_bias);
    out.emplace_back(pre + "attn.wq", &L.wq);
    out.emplace_back(pre + "attn.bq", &L.bq);
    out.emplace_back(pre + "attn.wk", &L.wk);
    out.emplace_back(pre + "attn.bk", &L.bk);
    out.emplace_back(pre + "attn.wv", &L.wv);
    out.emplace_back(pre + "attn.bv", &L.bv);
    out.emplace_back(pre + "attn.wo", &L.wo);
    out.emplace_back(pre + "attn.bo", &L.bo);
    out.emplace_back(pre + "ln2.gain", &L.ln2_gain);
    out.emplace_back(pre + "ln2.bias", &L.ln2_bias);
    out.emplace_back(pre + "mlp.w1", &L.w1);
    out.emplace_back(pre + "mlp.b1", &L.b1);
    out.emplace_back(pre + "mlp.w2", &L.w2);
    out.emplace_back(pre + "mlp.b2", &L.b2);
  }
  out.emplace_back("ln_f.gain", &p.lnf_gain);
  out.emplace_back("ln_f.bias", &p.lnf_bias);
  out.emplace_back("out.w", &p.out_w);
  out.emplace_back("out.b", &p.out_b);
}

DenoiserParams copy_with(const DenoiserParams& src, bool requires_grad) {
  DenoiserParams dst;
  dst.config = src.config;
  dst.layers.resize(src.layers.size());
  auto from = src.named();
  auto to = dst.named();
  for (std::size_t i = 0; i < from.size(); ++i) *to[i].second = from[i].second->clone(requires_grad);
  return dst;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> DenoiserParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  collect_named(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> DenoiserParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  collect_named(*this, out);
  return out;
}

DenoiserParams DenoiserParams::clone() const { return copy_with(*this, true); }
DenoiserParams DenoiserParams::frozen_copy() const { return copy_with(*this, false); }

void DenoiserParams::zero_grad() {
  for (auto& [name, t] : named()) {
    if (t->requires_grad()) t->zero_grad();
  }
}

bool DenoiserParams::bitwise_equal(const DenoiserParams& other) const {
  if (!(config == other.config) || layers.size() != other.layers.size()) return false;
  auto a = named();
  auto b = other.named();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].second->shape() != b[i].second->shape()) return false;
    auto va = a[i].second->values();
    auto vb = b[i].second->values();
    for (std::size_t j = 0; j < va.size(); ++j) {
      if (std::bit_cast<std::uint64_t>(va[j]) != std::bit_cast<std::uint64_t>(vb[j])) return false;
    }
  }
  return true;
}

std::size_t DenoiserParams::parameter_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named()) n += t->size();
  return n;
}

DenoiserParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  constexpr double kStd = 0.02;
  const auto V = static_cast<std::size_t>(cfg.vocab_size);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto ff = static_cast<std::size_t>(cfg.d_ff);

  DenoiserParams p;
  p.config = cfg;
  p.tok_emb = normal_tensor({V, d}, kStd, rng);
  p.pos_emb = normal_tensor({static_cast<std::size_t>(cfg.max_len), d}, kStd, rng);
  for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
    LayerParams L;
    L.ln1_gain = filled({d}, 1.0);
    L.ln1_bias = filled({d}, 0.0);
    L.wq = normal_tensor({d, d}, kStd, rng);
    L.bq = filled({d}, 0.0);
    L.wk = normal_tensor({d, d}, kStd, rng);
    L.bk = filled({d}, 0.0);
    L.wv = normal_tensor({d, d}, kStd, rng);
    L.bv = filled({d}, 0.0);
    L.wo = normal_tensor({d, d}, kStd, rng);
    L.bo = filled({d}, 0.0);
    L.ln2_gain = filled({d}, 1.0);
    L.ln2_bias = filled({d}, 0.0);
    L.w1 = normal_tensor({d, ff}, kStd, rng);
    L.b1 = filled({ff}, 0.0);
    L.w2 = normal_tensor({ff, d}, kStd, rng);
    L.b2 = filled({d}, 0.0);
    p.layers.push_back(std::move(L));
  }
  p.lnf_gain = filled({d}, 1.0);
  p.lnf_bias = filled({d}, 0.0);
  p.out_w = filled({d, V}, 0.0);
  p.out_b = filled({V}, 0.0);
  return p;
}

std::vector<std::vector<bool>> block_attention_mask(std::size_t length, std::size_t block_size) {
  if (block_size == 0 || length % block_size != 0) {
    throw DimensionError("block_attention_mask: block size must divide the length");
  }
  std::vector<std::vector<bool>> mask(length, std::vector<bool>(length));
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j < length; ++j) mask[i][j] = (j / block_size) <= (i / block_size);
  }
  return mask;
}

Tensor forward_logits_batch(Tape& tape, const DenoiserParams& params, std::span<const Tokens> batch) {
  const auto& cfg = params.config;
  if (batch.empty()) throw DimensionError("forward_logits_batch: empty batch");
  const std::size_t L = batch.front().size();
  if (L == 0 || L > static_cast<std::size_t>(cfg.max_len)) {
    throw DimensionError("forward_logits: length " + std::to_string(L) + " outside (0, max_len]");
  }
  if (L % static_cast<std::size_t>(cfg.block_size) != 0) {
    throw DimensionError("forward_logits: length must be a multiple of block_size");
  }
  std::vector<Token> ids;
  std::vector<Token> pos;
  ids.reserve(batch.size() * L);
  pos.reserve(batch.size() * L);
  for (const auto& seq : batch) {
    if (seq.size() != L) throw DimensionError("forward_logits_batch: sequences differ in length");
    for (std::size_t i = 0; i < L; ++i) {
      if (seq[i] < 0 || seq[i] >= cfg.vocab_size) {
        throw DomainError("forward_logits: token " + std::to_string(seq[i]) + " outside vocabulary");
      }
      ids.push_back(seq[i]);
      pos.push_back(static_cast<Token>(i));
    }
  }
  using namespace numcore;
  Tensor h = add(tape, gather_rows(tape, params.tok_emb, ids), gather_rows(tape, params.pos_emb, pos));
  for (const auto& layer : params.layers) {
    Tensor a = layer_norm_rows(tape, h, layer.ln1_gain, layer.ln1_bias);
    Tensor q = add_row_bias(tape, matmul(tape, a, layer.wq), layer.bq);
    Tensor k = add_row_bias(tape, matmul(tape, a, layer.wk), layer.bk);
    Tensor v = add_row_bias(tape, matmul(tape, a, layer.wv), layer.bv);
    Tensor att = block_attention(tape, q, k, v, static_cast<std::size_t>(cfg.n_heads), L,
                                 static_cast<std::size_t>(cfg.block_size));
    h = add(tape, h, add_row_bias(tape, matmul(tape, att, layer.wo), layer.bo));
    Tensor m = layer_norm_rows(tape, h, layer.ln2_gain, layer.ln2_bias);
    Tensor f = gelu(tape, add_row_bias(tape, matmul(tape, m, layer.w1), layer.b1));
    h = add(tape, h, add_row_bias(tape, matmul(tape, f, layer.w2), layer.b2));
  }
  Tensor hf = layer_norm_rows(tape, h, params.lnf_gain, params.lnf_bias);
  return add_row_bias(tape, matmul(tape, hf, params.out_w), params.out_b);
}

Tensor forward_logits(Tape& tape, const DenoiserParams& params, const Tokens& tokens) {
  return forward_logits_batch(tape, params, std::span<const Tokens>(&tokens, 1));
}

Tensor target_log_prob(Tape& tape, const Tensor& log_probs, const Tokens& x0,
                       std::span<const std::size_t> positions) {
  if (positions.empty()) return Tensor::scalar(0.0);
  std::vector<std::size_t> cols(positions.size());
  for (std::size_t n = 0; n < positions.size(); ++n) {
    if (positions[n] >= x0.size()) throw DimensionError("target position outside sequence");
    if (x0[positions[n]] < 0 || static_cast<std::size_t>(x0[positions[n]]) >= log_probs.cols()) {
      throw DomainError("target token outside vocabulary");
    }
    cols[n] = static_cast<std::size_t>(x0[positions[n]]);
  }
  return numcore::sum(tape, numcore::pick(tape, log_probs, positions, cols));
}

Tensor sequence_log_prob(Tape& tape, const DenoiserParams& params, const Tokens& xt, const Tokens& x0,
                         std::span<const std::size_t> positions) {
  if (xt.size() != x0.size()) throw DimensionError("sequence_log_prob: x_t and x_0 differ in length");
  for (std::size_t i : positions) {
    if (i >= xt.size()) throw DimensionError("sequence_log_prob: position outside sequence");
    if (xt[i] != params.config.mask_id) {
      throw ContractError("sequence_log_prob: position " + std::to_string(i) + " is not masked in x_t");
    }
  }
  if (positions.empty()) return Tensor::scalar(0.0);
  auto lp = numcore::log_softmax_rows(tape, forward_logits(tape, params, xt));
  return target_log_prob(tape, lp, x0, positions);
}

}  // namespace t3d
