#pragma once

// Exact-match evaluation of a denoiser on held-out task prompts.

#include <filesystem>
#include <string>
#include <vector>

#include "t3d/decoder.hpp"
#include "t3d/tasks.hpp"

namespace t3d {

struct EvalReport {
  std::string task;
  DecodeMode mode = DecodeMode::Full;
  int block_size = 0;
  double tokps = 1.0;  // static: B / S; otherwise realised tokens per step
  double accuracy = 0.0;
  double avg_steps = 0.0;
  double avg_len = 0.0;
  long forward_passes = 0;  // total over the evaluation set
  double wall_ms = 0.0;
  std::size_t n = 0;
};

struct EvalOptions {
  std::uint64_t seed = 0;          // sampling seed when temperature > 0
  bool report_wall_clock = false;  // otherwise wall_ms is 0, keeping reports reproducible
};

// Decodes each prompt and grades position-wise equality over the answer
// region (prompt and padding excluded).
EvalReport evaluate(const DenoiserParams& params, const TaskSpec& spec, const std::vector<TaskExample>& examples,
                    const DecodeConfig& cfg, EvalOptions opts = {});

// First n held-out prompts of the sampler.
EvalReport evaluate(const DenoiserParams& params, const TaskSampler& tasks, const DecodeConfig& cfg, std::size_t n,
                    EvalOptions opts = {});

// Static decoding grid: one row per (block size, TokPS) pair.
std::vector<EvalReport> evaluate_grid(const DenoiserParams& params, const TaskSampler& tasks,
                                      const std::vector<int>& block_sizes, const std::vector<int>& tokps_values,
                                      std::size_t n, EvalOptions opts = {});

std::string eval_csv(const std::vector<EvalReport>& reports);
void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports);

}  // namespace t3d
