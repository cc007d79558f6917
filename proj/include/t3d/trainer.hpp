#pragma once

// Training pipelines: teacher pretraining with the masked-diffusion loss,
// rollout collection, and distillation of a few-step student from teacher
// trajectories with a periodically refreshed frozen reference.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "t3d/decoder.hpp"
#include "t3d/denoiser.hpp"
#include "t3d/objectives.hpp"
#include "t3d/optimizer.hpp"
#include "t3d/tasks.hpp"

namespace t3d {

// ddo is t3d without the path term and never builds trajectory states for it.
enum class LossKind { Mdm, NaiveTd, MarginalSd, Ddo, T3d };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& s);

struct TrainConfig {
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  int warmup_steps = 0;  // linear learning-rate warmup
  int total_steps = 1000;
  int batch_size = 16;
  int ref_update_interval = 10;
  double p_rand = 0.1;
  LossKind loss = LossKind::T3d;
  LossConfig loss_config;
  // Static schedule the student is distilled for; also the schedule the
  // reference uses to complete fake samples.
  int student_steps_per_block = 1;
  double fake_temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  AdamWConfig optimizer() const;
};

struct StepLog {
  int step = 0;
  double loss_total = 0.0;
  double loss_ddo = 0.0;
  double loss_path = 0.0;
  double grad_norm = 0.0;
  int ref_round = 0;
};

void write_train_log(const std::filesystem::path& path, const std::vector<StepLog>& log);
std::string train_log_csv(const std::vector<StepLog>& log);

// Called after every `interval` optimizer steps with the step count; returning
// true stops training early.
struct TrainHook {
  int interval = 0;
  std::function<bool(int step, const DenoiserParams& params)> fn;
  // Distillation only: called with the step count already taken whenever
  // a new reference snapshot is made.
  std::function<void(int step, const DenoiserParams& ref)> on_snapshot;
};

struct TrainResult {
  DenoiserParams params;
  std::vector<StepLog> log;
  int steps_run = 0;
  int ref_snapshots = 0;
  bool stopped_early = false;
};

// Masked-diffusion pretraining. Each step draws one answer block b for the
// batch; earlier blocks stay clean, block b is masked at a uniform time t
// (at least one position), masks may be swapped for random tokens with
// probability p_rand, and the loss is the mean cross-entropy over block b's
// masked positions.
TrainResult train_teacher(const TaskSampler& tasks, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                          std::uint64_t init_seed, TrainHook hook = {});

struct RolloutSpec {
  DecodeConfig decode;  // defaults to one token per step
  std::size_t n_prompts = 256;
  std::uint64_t seed = 0;

  RolloutSpec();
};

struct RolloutStats {
  std::size_t written = 0;
  std::size_t dropped = 0;  // failed replay verification
};

// Decodes prompts from the task's training distribution with state recording
// and keeps only records whose replay matches every recorded state.
std::vector<Trajectory> collect_trajectories(const DenoiserParams& teacher, const TaskSampler& tasks,
                                             const RolloutSpec& spec, RolloutStats* stats = nullptr);

// Same, writing JSON lines to `path`.
RolloutStats collect_trajectories(const DenoiserParams& teacher, const TaskSampler& tasks, const RolloutSpec& spec,
                                  const std::filesystem::path& path);

// True iff replay reconstructs every state in traj.states.
bool replay_verified(const Trajectory& traj, Token mask_id);

// Deep, gradient-free copy.
DenoiserParams snapshot_reference(const DenoiserParams& theta);

// Completes `positions` of `state` with the reference using a static
// low-confidence schedule of `steps` steps, sampling at `temperature`.
Tokens complete_with_schedule(const DenoiserParams& ref, const Tokens& state, const std::vector<std::size_t>& positions,
                              int steps, double temperature, Rng& rng);

// One distillation example: the trajectory state just before block `block`
// starts decoding.
struct SampledState {
  std::size_t traj_index = 0;
  std::size_t block = 0;
  DistillItem item;
};

SampledState sample_block_state(const std::vector<Trajectory>& dataset, const ModelConfig& model, double p_rand,
                                Rng& rng);

TrainResult distill(const std::vector<Trajectory>& dataset, const DenoiserParams& student_init,
                    const TrainConfig& train_cfg, TrainHook hook = {});

}  // namespace t3d
