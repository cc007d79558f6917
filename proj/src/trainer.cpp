#include "t3d/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "t3d/diffusion.hpp"
#include "t3d/errors.hpp"
#include "t3d/trajectory_io.hpp"

namespace t3d {

using numcore::Tape;
using numcore::Tensor;

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::Mdm:
      return "mdm";
    case LossKind::NaiveTd:
      return "naive_td";
    case LossKind::MarginalSd:
      return "marginal_sd";
    case LossKind::Ddo:
      return "ddo";
    case LossKind::T3d:
      return "t3d";
  }
  return "unknown";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "mdm") return LossKind::Mdm;
  if (s == "naive_td") return LossKind::NaiveTd;
  if (s == "marginal_sd") return LossKind::MarginalSd;
  if (s == "ddo") return LossKind::Ddo;
  if (s == "t3d") return LossKind::T3d;
  throw ConfigError("unknown loss '" + s + "'");
}

void TrainConfig::validate() const {
  optimizer().validate();
  if (ref_update_interval < 1) throw ConfigError("train: ref_update_interval must be >= 1");
  if (total_steps < 0) throw ConfigError("train: total_steps must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (warmup_steps < 0) throw ConfigError("train: warmup_steps must be >= 0");
  if (!(p_rand >= 0.0 && p_rand <= 1.0)) throw ConfigError("train: p_rand must lie in [0, 1]");
  if (student_steps_per_block < 1) throw ConfigError("train: student_steps_per_block must be >= 1");
  if (!(fake_temperature >= 0.0)) throw ConfigError("train: fake_temperature must be >= 0");
  loss_config.validate();
}

AdamWConfig TrainConfig::optimizer() const {
  return {learning_rate, adam_beta1, adam_beta2, adam_eps, weight_decay, grad_clip};
}

std::string train_log_csv(const std::vector<StepLog>& log) {
  std::ostringstream os;
  os.precision(10);
  os << "step,loss_total,loss_ddo,loss_path,grad_norm,ref_round\n";
  for (const auto& r : log) {
    os << r.step << ',' << r.loss_total << ',' << r.loss_ddo << ',' << r.loss_path << ',' << r.grad_norm << ','
       << r.ref_round << '\n';
  }
  return os.str();
}

void write_train_log(const std::filesystem::path& path, const std::vector<StepLog>& log) {
  std::ofstream os(path);
  if (!os) throw StateError("cannot open " + path.string() + " for writing");
  os << train_log_csv(log);
}

RolloutSpec::RolloutSpec() {
  decode.mode = DecodeMode::Full;
  decode.temperature = 0.0;
}

DenoiserParams snapshot_reference(const DenoiserParams& theta) { return theta.frozen_copy(); }

namespace {

double lr_scale(const TrainConfig& cfg, int step) {
  if (cfg.warmup_steps <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(step + 1) / cfg.warmup_steps);
}

void check_finite(double v, int step, const std::string& what) {
  if (!std::isfinite(v)) {
    throw DivergenceError(what + " became non-finite at step " + std::to_string(step));
  }
}

}  // namespace

TrainResult train_teacher(const TaskSampler& tasks, const ModelConfig& model_cfg, const TrainConfig& cfg,
                          std::uint64_t init_seed, TrainHook hook) {
  cfg.validate();
  model_cfg.validate();
  const auto& spec = tasks.spec();
  spec.check_capacity(model_cfg);

  TrainResult res;
  res.params = init_params(model_cfg, init_seed);
  AdamW opt(cfg.optimizer(), res.params);
  Rng rng(cfg.seed);
  const Token mask = static_cast<Token>(model_cfg.mask_id);
  const auto mb = static_cast<std::size_t>(model_cfg.block_size);
  const auto P = static_cast<std::size_t>(spec.prompt_len);
  const auto L = static_cast<std::size_t>(spec.sequence_length());
  const std::size_t first_block = P / mb, last_block = (L - 1) / mb;
  const CorruptionConfig corrupt{cfg.p_rand};

  for (int step = 0; step < cfg.total_steps; ++step) {
    const std::size_t b = first_block + uniform_index(rng, last_block - first_block + 1);
    const std::size_t begin = std::max(b * mb, P), end = (b + 1) * mb;
    std::vector<Tokens> inputs, targets;
    std::vector<std::size_t> rows, cols;
    for (int n = 0; n < cfg.batch_size; ++n) {
      Tokens x0 = tasks.sample_train(rng).sequence();
      x0.resize(end);
      Tokens xt = x0;
      const double t = uniform01(rng);
      bool any = false;
      for (std::size_t i = begin; i < end; ++i) {
        if (uniform01(rng) >= NoiseSchedule::alpha(t)) {
          xt[i] = mask;
          any = true;
        }
      }
      if (!any) xt[begin + uniform_index(rng, end - begin)] = mask;
      for (std::size_t i = begin; i < end; ++i) {
        if (xt[i] == mask) {
          rows.push_back(static_cast<std::size_t>(n) * end + i);
          cols.push_back(static_cast<std::size_t>(x0[i]));
        }
      }
      inputs.push_back(corrupt_with_random(xt, corrupt, mask, static_cast<std::size_t>(model_cfg.vocab_size), rng,
                                           begin));
    }

    res.params.zero_grad();
    double loss_value = 0.0;
    try {
      Tape tape;
      auto lp = numcore::log_softmax_rows(tape, forward_logits_batch(tape, res.params, inputs));
      auto loss = numcore::scale(tape, numcore::sum(tape, numcore::pick(tape, lp, rows, cols)),
                                 -1.0 / static_cast<double>(rows.size()));
      loss_value = loss.item();
      check_finite(loss_value, step + 1, "teacher loss");
      tape.backward(loss);
    } catch (const OverflowError& e) {
      throw DivergenceError("teacher training diverged at step " + std::to_string(step + 1) + ": " + e.what());
    }
    const double gnorm = opt.step(res.params, lr_scale(cfg, step));
    res.log.push_back({step + 1, loss_value, 0.0, 0.0, gnorm, 0});
    res.steps_run = step + 1;
    if (hook.fn && hook.interval > 0 && (step + 1) % hook.interval == 0 && hook.fn(step + 1, res.params)) {
      res.stopped_early = true;
      break;
    }
  }
  return res;
}

bool replay_verified(const Trajectory& traj, Token mask_id) {
  if (traj.states.size() != static_cast<std::size_t>(traj.steps_total) + 1) return false;
  for (int s = 0; s <= traj.steps_total; ++s) {
    if (replay_states(traj, s, mask_id) != traj.states[static_cast<std::size_t>(s)]) return false;
  }
  return true;
}

std::vector<Trajectory> collect_trajectories(const DenoiserParams& teacher, const TaskSampler& tasks,
                                             const RolloutSpec& spec, RolloutStats* stats) {
  spec.decode.validate();
  const auto& task = tasks.spec();
  task.check_capacity(teacher.config);
  if (spec.decode.max_new_tokens != task.answer_len) {
    throw ConfigError("rollout: max_new_tokens must equal the task answer_len");
  }
  const Token mask = static_cast<Token>(teacher.config.mask_id);
  Rng rng(spec.seed);
  std::vector<Trajectory> out;
  RolloutStats st;
  for (std::size_t n = 0; n < spec.n_prompts; ++n) {
    auto ex = tasks.sample_train(rng);
    auto traj = decode(teacher, ex.prompt, spec.decode, rng, {.record_states = true});
    bool ok = replay_verified(traj, mask);
    if (ok) {
      try {
        validate_trajectory(traj);
      } catch (const CorruptRecordError&) {
        ok = false;
      }
    }
    if (!ok) {
      ++st.dropped;
      continue;
    }
    traj.states.clear();
    out.push_back(std::move(traj));
    ++st.written;
  }
  if (stats) *stats = st;
  return out;
}

RolloutStats collect_trajectories(const DenoiserParams& teacher, const TaskSampler& tasks, const RolloutSpec& spec,
                                  const std::filesystem::path& path) {
  RolloutStats st;
  auto trajs = collect_trajectories(teacher, tasks, spec, &st);
  save_trajectories(path, trajs);
  return st;
}

Tokens complete_with_schedule(const DenoiserParams& ref, const Tokens& state, const std::vector<std::size_t>& positions,
                              int steps, double temperature, Rng& rng) {
  const Token mask = static_cast<Token>(ref.config.mask_id);
  Tokens x = state;
  if (positions.empty()) return x;
  std::vector<std::size_t> remaining = positions;
  const std::size_t last = *std::max_element(positions.begin(), positions.end());
  const auto mb = static_cast<std::size_t>(ref.config.block_size);
  const std::size_t len = std::min(x.size(), (last / mb + 1) * mb);
  const std::size_t s = std::max<std::size_t>(1, static_cast<std::size_t>(steps));
  const std::size_t per_step = (positions.size() + s - 1) / s;
  while (!remaining.empty()) {
    Tape tape(false);
    Tokens window(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(len));
    auto logits = forward_logits(tape, ref, window);
    const std::size_t V = logits.cols();
    std::vector<std::vector<double>> dists;
    std::vector<double> conf;
    for (std::size_t i : remaining) {
      auto p = decoding_distribution(logits.values().subspan(i * V, V), temperature, mask);
      conf.push_back(*std::max_element(p.begin(), p.end()));
      dists.push_back(std::move(p));
    }
    std::vector<std::size_t> rank(remaining.size());
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
    const std::size_t k = std::min(per_step, remaining.size());
    std::vector<std::size_t> chosen(rank.begin(), rank.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t c : chosen) {
      const auto& p = dists[c];
      Token tok;
      if (temperature > 0.0) {
        const double u = uniform01(rng);
        double acc = 0.0;
        tok = static_cast<Token>(std::max_element(p.begin(), p.end()) - p.begin());
        for (std::size_t j = 0; j < p.size(); ++j) {
          if (p[j] <= 0.0) continue;
          acc += p[j];
          tok = static_cast<Token>(j);
          if (u < acc) break;
        }
      } else {
        tok = static_cast<Token>(std::max_element(p.begin(), p.end()) - p.begin());
      }
      x[remaining[c]] = tok;
    }
    std::vector<std::size_t> rest;
    for (std::size_t r = 0; r < remaining.size(); ++r) {
      if (!std::binary_search(chosen.begin(), chosen.end(), r)) rest.push_back(remaining[r]);
    }
    remaining = std::move(rest);
  }
  return x;
}

SampledState sample_block_state(const std::vector<Trajectory>& dataset, const ModelConfig& model, double p_rand,
                                Rng& rng) {
  const Token mask = static_cast<Token>(model.mask_id);
  SampledState out;
  out.traj_index = uniform_index(rng, dataset.size());
  const auto& traj = dataset[out.traj_index];
  const std::size_t P = traj.prompt.size();
  const auto B = static_cast<std::size_t>(traj.config.block_size);

  std::vector<std::size_t> blocks;
  for (std::size_t i = 0; i < traj.order.size(); ++i) {
    const std::size_t b = (P + i) / B;
    if (traj.order[i] > 0 && (blocks.empty() || blocks.back() != b)) blocks.push_back(b);
  }
  if (blocks.empty()) throw ContractError("distill: trajectory without generated tokens");
  out.block = blocks[uniform_index(rng, blocks.size())];

  int first_step = traj.steps_total;
  auto& item = out.item;
  for (std::size_t i = 0; i < traj.order.size(); ++i) {
    if (traj.order[i] > 0 && (P + i) / B == out.block) {
      first_step = std::min(first_step, traj.order[i]);
      item.positions.push_back(P + i);
      item.order.push_back(traj.order[i]);
    }
  }
  item.state = replay_states(traj, first_step - 1, mask);
  item.target = replay_states(traj, traj.steps_total, mask);
  item.input = corrupt_with_random(item.state, CorruptionConfig{p_rand}, mask,
                                   static_cast<std::size_t>(model.vocab_size), rng, P);
  return out;
}

namespace {

void check_dataset(const std::vector<Trajectory>& dataset, const ModelConfig& model, const TrainConfig& cfg) {
  if (dataset.empty()) throw ConfigError("distill: empty trajectory dataset");
  for (const auto& traj : dataset) {
    const std::size_t L = traj.prompt.size() + traj.output.size();
    if (L > static_cast<std::size_t>(model.max_len) || L % static_cast<std::size_t>(model.block_size) != 0) {
      throw ConfigError("distill: trajectory length does not fit the student model");
    }
    for (const Tokens* seq : {&traj.prompt, &traj.output}) {
      for (Token t : *seq) {
        if (t < 0 || t >= model.vocab_size) throw ConfigError("distill: dataset/model vocabulary mismatch");
      }
    }
    if (traj.config.block_size != cfg.loss_config.block_size) {
      throw ConfigError("distill: trajectory block size differs from loss_config.block_size");
    }
  }
}

}  // namespace

TrainResult distill(const std::vector<Trajectory>& dataset, const DenoiserParams& student_init, const TrainConfig& cfg,
                    TrainHook hook) {
  cfg.validate();
  const auto& model = student_init.config;
  check_dataset(dataset, model, cfg);
  const Token mask = static_cast<Token>(model.mask_id);
  const bool needs_ref = cfg.loss == LossKind::Ddo || cfg.loss == LossKind::T3d;
  LossConfig loss_cfg = cfg.loss_config;
  if (cfg.loss == LossKind::Ddo) loss_cfg.lambda = 0.0;

  TrainResult res;
  res.params = student_init.clone();
  AdamW opt(cfg.optimizer(), res.params);
  Rng rng(cfg.seed);
  std::optional<DenoiserParams> ref;
  int ref_round = 0;

  for (int step = 0; step < cfg.total_steps; ++step) {
    if (needs_ref && step % cfg.ref_update_interval == 0) {
      ref = snapshot_reference(res.params);
      ref_round = step / cfg.ref_update_interval;
      ++res.ref_snapshots;
      if (hook.on_snapshot) hook.on_snapshot(step, *ref);
    }

    std::vector<SampledState> samples;
    for (int n = 0; n < cfg.batch_size; ++n) {
      auto s = sample_block_state(dataset, model, cfg.p_rand, rng);
      auto& item = s.item;
      const std::size_t P = dataset[s.traj_index].prompt.size();
      if (cfg.loss == LossKind::Mdm) {
        // Random masking of the sampled block instead of the trajectory state.
        Tokens xt = item.target;
        for (std::size_t i = P; i < xt.size(); ++i) {
          if (i > item.positions.back()) xt[i] = mask;
        }
        const double t = uniform01(rng);
        std::vector<std::size_t> kept;
        for (std::size_t i : item.positions) {
          if (uniform01(rng) >= NoiseSchedule::alpha(t)) {
            xt[i] = mask;
            kept.push_back(i);
          }
        }
        if (kept.empty()) {
          kept.push_back(item.positions[uniform_index(rng, item.positions.size())]);
          xt[kept.back()] = mask;
        }
        item.positions = kept;
        item.state = xt;
        item.input = corrupt_with_random(xt, CorruptionConfig{cfg.p_rand}, mask,
                                         static_cast<std::size_t>(model.vocab_size), rng, P);
      } else if (cfg.loss == LossKind::MarginalSd) {
        const double t = uniform01(rng);
        item.state = mask_sequence(item.target, t, mask, rng, P);
        item.positions.clear();
        for (std::size_t i = P; i < item.state.size(); ++i) {
          if (item.state[i] == mask && item.target[i] != mask) item.positions.push_back(i);
        }
        item.input = corrupt_with_random(item.state, CorruptionConfig{cfg.p_rand}, mask,
                                         static_cast<std::size_t>(model.vocab_size), rng, P);
      } else if (needs_ref) {
        item.fake = complete_with_schedule(*ref, item.state, item.positions, cfg.student_steps_per_block,
                                           cfg.fake_temperature, rng);
        for (std::size_t i = 0; i < item.fake.size(); ++i) {
          if (!std::binary_search(item.positions.begin(), item.positions.end(), i)) item.fake[i] = item.target[i];
        }
      }
      samples.push_back(std::move(s));
    }

    std::size_t active = 0;
    for (const auto& s : samples) active += s.item.positions.empty() ? 0 : 1;

    res.params.zero_grad();
    StepLog row;
    row.step = step + 1;
    row.ref_round = ref_round;
    try {
      for (const auto& s : samples) {
        if (s.item.positions.empty()) continue;
        const double w = 1.0 / static_cast<double>(active);
        Tape tape;
        DistillBatch one;
        one.items = {s.item};
        Tensor loss;
        if (needs_ref) {
          const Trajectory* traj = &dataset[s.traj_index];
          const std::size_t blocks[] = {s.block};
          auto l = t3d_loss(tape, res.params, *ref, one, std::span<const Trajectory>(traj, 1), loss_cfg, blocks);
          loss = l.total;
          row.loss_ddo += w * l.ddo;
          row.loss_path += w * l.path;
        } else {
          one.source = cfg.loss == LossKind::NaiveTd ? BatchSource::TeacherTrajectory : BatchSource::RandomMasking;
          loss = naive_td_loss(tape, res.params, one).value;
        }
        row.loss_total += w * loss.item();
        tape.backward(numcore::scale(tape, loss, w));
      }
    } catch (const OverflowError& e) {
      throw DivergenceError("distillation diverged at step " + std::to_string(step + 1) + ": " + e.what());
    }
    check_finite(row.loss_total, step + 1, "distillation loss");
    row.grad_norm = active ? opt.step(res.params, lr_scale(cfg, step)) : 0.0;
    res.log.push_back(row);
    res.steps_run = step + 1;
    if (hook.fn && hook.interval > 0 && (step + 1) % hook.interval == 0 && hook.fn(step + 1, res.params)) {
      res.stopped_early = true;
      break;
    }
  }
  return res;
}

}  // namespace t3d
