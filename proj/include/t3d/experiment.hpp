#pragma once

// JSON-configured experiment pipeline: train-teacher -> rollout -> distill
// -> eval (-> analyze), writing checkpoints, trajectory files, CSV reports and
// a manifest into one artifact directory.
//
// Config layout (every section optional, field names match the structs):
//   output_dir, stages
//   task      TaskSpec fields + n_heldout, n_validation
//   model     ModelConfig fields
//   teacher   TrainConfig fields + init_seed
//   rollout   n_prompts, seed, decode{DecodeConfig fields}
//   distill   TrainConfig fields
//   eval      n, block_sizes, tokps, full, dynamic_thresholds, models
//   analyze   TcReportOptions fields + n_prompts (held-out prompts; gen_len defaults to answer_len)

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "t3d/analysis.hpp"
#include "t3d/trainer.hpp"

namespace t3d {

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EvalPlan {
  std::size_t n = 100;
  std::vector<int> block_sizes{4};
  std::vector<int> tokps{1, 2, 4};
  bool full = true;
  std::vector<double> dynamic_thresholds;
  std::vector<std::string> models{"teacher", "student"};
};

struct ExperimentConfig {
  std::filesystem::path output_dir = "t3d_run";
  std::vector<std::string> stages{"train-teacher", "rollout", "distill", "eval"};
  TaskSpec task;
  std::size_t n_heldout = 200;
  std::size_t n_validation = 0;
  ModelConfig model;
  TrainConfig teacher;
  std::uint64_t teacher_init_seed = 0;
  RolloutSpec rollout;
  TrainConfig distill;
  EvalPlan eval;
  TcReportOptions analyze;
  std::size_t analyze_prompts = 8;

  // Raw document after overrides; hashed and echoed into the manifest.
  nlohmann::json source;
};

inline const std::vector<std::string>& all_stages() {
  static const std::vector<std::string> s{"train-teacher", "rollout", "distill", "eval", "analyze"};
  return s;
}

// Applies `key.path=value` overrides; the value is parsed as JSON when it
// parses, otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Unknown keys and invalid values raise ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides = {});

// 64-bit FNV-1a over the canonical (sorted-key, compact) JSON dump.
std::uint64_t fnv1a64(const std::string& bytes);
std::string config_hash(const nlohmann::json& doc);

struct StageResult {
  std::string stage;
  std::string status;  // ok | failed | skipped
  std::string detail;
};

struct ExperimentResult {
  std::filesystem::path dir;
  std::vector<StageResult> stages;
  bool ok = true;
};

// Artifact names inside the output directory.
namespace artifacts {
inline constexpr const char* kTeacher = "teacher.ckpt";
inline constexpr const char* kTeacherLog = "teacher_log.csv";
inline constexpr const char* kTrajectories = "trajectories.jsonl";
inline constexpr const char* kStudent = "student.ckpt";
inline constexpr const char* kDistillLog = "distill_log.csv";
inline constexpr const char* kTcReport = "tc_report.csv";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kStatus = "status.json";
}  // namespace artifacts

std::string eval_report_name(const std::string& model);  // eval_<model>.csv

// Runs the requested stages in pipeline order. Stages not requested read
// their inputs from artifacts already in the directory. A failing stage
// stops the run, leaves earlier artifacts in place and writes status.json;
// the manifest is written in both cases.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Best-effort `git describe --always --dirty`; empty when unavailable.
std::string git_describe();

}  // namespace t3d
