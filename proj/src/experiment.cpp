#include "t3d/experiment.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include "t3d/checkpoint.hpp"
#include "t3d/errors.hpp"
#include "t3d/evaluation.hpp"
#include "t3d/trajectory_io.hpp"

namespace t3d {

using nlohmann::json;

namespace {

// Copies `given` over `defaults`, rejecting keys the defaults do not know.
json overlay(json defaults, const json& given, const std::string& where, const std::set<std::string>& extra = {}) {
  if (given.is_null()) return defaults;
  if (!given.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : given.items()) {
    if (!defaults.contains(k) && !extra.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
    defaults[k] = v;
  }
  return defaults;
}

template <class T>
T field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

json section(const json& doc, const char* key) { return doc.contains(key) ? doc.at(key) : json(); }

json to_json(const LossConfig& c) {
  return {{"lambda", c.lambda}, {"beta", c.beta}, {"delta_clamp", c.delta_clamp}, {"block_size", c.block_size}};
}

json to_json(const TcReportOptions& o) {
  return {{"gen_len", o.gen_len},
          {"teacher_tokens_per_step", o.teacher_tokens_per_step},
          {"student_tokens_per_step", o.student_tokens_per_step},
          {"temperature", o.temperature},
          {"max_leaves", o.max_leaves},
          {"fallback_rollouts", o.fallback_rollouts},
          {"seed", o.seed}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"mask_id", c.mask_id},   {"d_model", c.d_model},
          {"n_layers", c.n_layers},     {"n_heads", c.n_heads},   {"d_ff", c.d_ff},
          {"max_len", c.max_len},       {"block_size", c.block_size}};
}

ModelConfig model_config_from_json(const json& given) {
  const json j = overlay(to_json(ModelConfig{}), given, "model");
  ModelConfig c;
  c.vocab_size = field<std::int64_t>(j, "vocab_size");
  // A vocabulary override without mask_id keeps the mask as the last id.
  c.mask_id = given.is_object() && given.contains("vocab_size") && !given.contains("mask_id")
                  ? c.vocab_size - 1
                  : field<std::int64_t>(j, "mask_id");
  c.d_model = field<std::int64_t>(j, "d_model");
  c.n_layers = field<std::int64_t>(j, "n_layers");
  c.n_heads = field<std::int64_t>(j, "n_heads");
  c.d_ff = field<std::int64_t>(j, "d_ff");
  c.max_len = field<std::int64_t>(j, "max_len");
  c.block_size = field<std::int64_t>(j, "block_size");
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return c;
}

json to_json(const TaskSpec& s) {
  return {{"kind", to_string(s.kind)},   {"vocab_size", s.vocab_size}, {"prompt_len", s.prompt_len},
          {"answer_len", s.answer_len},  {"modulus", s.modulus},       {"train_seed", s.train_seed},
          {"heldout_seed", s.heldout_seed}};
}

TaskSpec task_spec_from_json(const json& given) {
  const json j = overlay(to_json(TaskSpec{}), given, "task", {"n_heldout", "n_validation"});
  TaskSpec s;
  s.kind = task_kind_from_string(field<std::string>(j, "kind"));
  s.vocab_size = field<int>(j, "vocab_size");
  s.prompt_len = field<int>(j, "prompt_len");
  s.answer_len = field<int>(j, "answer_len");
  s.modulus = field<int>(j, "modulus");
  s.train_seed = field<std::uint64_t>(j, "train_seed");
  s.heldout_seed = field<std::uint64_t>(j, "heldout_seed");
  s.validate();
  return s;
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"weight_decay", c.weight_decay},
          {"grad_clip", c.grad_clip},
          {"warmup_steps", c.warmup_steps},
          {"total_steps", c.total_steps},
          {"batch_size", c.batch_size},
          {"ref_update_interval", c.ref_update_interval},
          {"p_rand", c.p_rand},
          {"loss", to_string(c.loss)},
          {"loss_config", to_json(c.loss_config)},
          {"student_steps_per_block", c.student_steps_per_block},
          {"fake_temperature", c.fake_temperature},
          {"seed", c.seed}};
}

namespace {

TrainConfig train_config_from(const json& given, const TrainConfig& defaults, const std::string& where,
                              const std::set<std::string>& extra = {}) {
  json j = overlay(to_json(defaults), given, where, extra);
  j["loss_config"] = overlay(to_json(defaults.loss_config), given.is_object() && given.contains("loss_config")
                                                                ? given.at("loss_config")
                                                                : json(),
                             where + ".loss_config");
  TrainConfig c;
  c.learning_rate = field<double>(j, "learning_rate");
  c.adam_beta1 = field<double>(j, "adam_beta1");
  c.adam_beta2 = field<double>(j, "adam_beta2");
  c.adam_eps = field<double>(j, "adam_eps");
  c.weight_decay = field<double>(j, "weight_decay");
  c.grad_clip = field<double>(j, "grad_clip");
  c.warmup_steps = field<int>(j, "warmup_steps");
  c.total_steps = field<int>(j, "total_steps");
  c.batch_size = field<int>(j, "batch_size");
  c.ref_update_interval = field<int>(j, "ref_update_interval");
  c.p_rand = field<double>(j, "p_rand");
  c.loss = loss_kind_from_string(field<std::string>(j, "loss"));
  const json& lc = j.at("loss_config");
  c.loss_config.lambda = field<double>(lc, "lambda");
  c.loss_config.beta = field<double>(lc, "beta");
  c.loss_config.delta_clamp = field<double>(lc, "delta_clamp");
  c.loss_config.block_size = field<int>(lc, "block_size");
  c.student_steps_per_block = field<int>(j, "student_steps_per_block");
  c.fake_temperature = field<double>(j, "fake_temperature");
  c.seed = field<std::uint64_t>(j, "seed");
  c.validate();
  return c;
}

}  // namespace

TrainConfig train_config_from_json(const json& j) { return train_config_from(j, TrainConfig{}, "train"); }

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (node->is_null()) *node = json::object();
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

ExperimentConfig experiment_config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> top{"output_dir", "stages", "task",    "model",  "teacher",
                                         "rollout",    "distill", "eval", "analyze"};
  for (const auto& [k, v] : doc.items()) {
    if (!top.count(k)) throw ConfigError("unknown top-level key '" + k + "'");
  }

  ExperimentConfig c;
  c.source = doc;
  if (doc.contains("output_dir")) c.output_dir = field<std::string>(doc, "output_dir");
  if (doc.contains("stages")) {
    c.stages = field<std::vector<std::string>>(doc, "stages");
    for (const auto& s : c.stages) {
      if (std::find(all_stages().begin(), all_stages().end(), s) == all_stages().end())
        throw ConfigError("unknown stage '" + s + "'");
    }
  }

  const json task = section(doc, "task");
  c.task = task_spec_from_json(task);
  if (task.is_object()) {
    c.n_heldout = task.value("n_heldout", c.n_heldout);
    c.n_validation = task.value("n_validation", c.n_validation);
  }

  // Model defaults follow the task: vocabulary plus mask, length rounded up
  // to a whole block.
  ModelConfig model_defaults;
  model_defaults.vocab_size = c.task.vocab_size + 1;
  model_defaults.mask_id = c.task.vocab_size;
  const auto len = static_cast<std::int64_t>(c.task.sequence_length());
  model_defaults.max_len = (len + model_defaults.block_size - 1) / model_defaults.block_size * model_defaults.block_size;
  json model_given = section(doc, "model");
  json model_json = to_json(model_defaults);
  if (model_given.is_object()) {
    for (const auto& [k, v] : model_given.items()) model_json[k] = v;
    if (model_given.contains("vocab_size") && !model_given.contains("mask_id"))
      model_json["mask_id"] = model_json["vocab_size"].get<std::int64_t>() - 1;
  } else if (!model_given.is_null()) {
    throw ConfigError("model: expected an object");
  }
  c.model = model_config_from_json(model_json);
  c.task.check_capacity(c.model);

  const json teacher = section(doc, "teacher");
  TrainConfig teacher_defaults;
  teacher_defaults.loss = LossKind::Mdm;
  teacher_defaults.learning_rate = 1e-3;
  teacher_defaults.loss_config.block_size = static_cast<int>(c.model.block_size);
  c.teacher = train_config_from(teacher, teacher_defaults, "teacher", {"init_seed"});
  if (teacher.is_object()) c.teacher_init_seed = teacher.value("init_seed", c.teacher_init_seed);

  const json rollout = section(doc, "rollout");
  DecodeConfig decode_defaults;
  decode_defaults.block_size = static_cast<int>(c.model.block_size);
  decode_defaults.steps_per_block = decode_defaults.block_size;
  decode_defaults.max_new_tokens = c.task.answer_len;
  const json rj = overlay({{"n_prompts", c.rollout.n_prompts}, {"seed", c.rollout.seed}, {"decode", json::object()}},
                          rollout, "rollout");
  c.rollout.n_prompts = field<std::size_t>(rj, "n_prompts");
  c.rollout.seed = field<std::uint64_t>(rj, "seed");
  try {
    c.rollout.decode = decode_config_from_json(overlay(to_json(decode_defaults), rj.at("decode"), "rollout.decode"));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("rollout.decode: ") + e.what());
  }

  TrainConfig distill_defaults;
  distill_defaults.loss_config.block_size = static_cast<int>(c.model.block_size);
  c.distill = train_config_from(section(doc, "distill"), distill_defaults, "distill");

  const EvalPlan ed;
  const json ej = overlay({{"n", ed.n},
                           {"block_sizes", ed.block_sizes},
                           {"tokps", ed.tokps},
                           {"full", ed.full},
                           {"dynamic_thresholds", ed.dynamic_thresholds},
                           {"models", ed.models}},
                          section(doc, "eval"), "eval");
  c.eval.n = field<std::size_t>(ej, "n");
  c.eval.block_sizes = field<std::vector<int>>(ej, "block_sizes");
  c.eval.tokps = field<std::vector<int>>(ej, "tokps");
  c.eval.full = field<bool>(ej, "full");
  c.eval.dynamic_thresholds = field<std::vector<double>>(ej, "dynamic_thresholds");
  c.eval.models = field<std::vector<std::string>>(ej, "models");
  for (const auto& m : c.eval.models) {
    if (m != "teacher" && m != "student") throw ConfigError("eval.models: unknown model '" + m + "'");
  }
  if (c.eval.n > c.n_heldout) throw ConfigError("eval.n exceeds task.n_heldout");

  TcReportOptions analyze_defaults;
  analyze_defaults.gen_len = static_cast<std::size_t>(c.task.answer_len);
  analyze_defaults.student_tokens_per_step =
      static_cast<std::size_t>(c.model.block_size / std::max(1, c.distill.student_steps_per_block));
  const json aj = overlay(to_json(analyze_defaults), section(doc, "analyze"), "analyze", {"n_prompts"});
  c.analyze.gen_len = field<std::size_t>(aj, "gen_len");
  c.analyze.teacher_tokens_per_step = field<std::size_t>(aj, "teacher_tokens_per_step");
  c.analyze.student_tokens_per_step = field<std::size_t>(aj, "student_tokens_per_step");
  c.analyze.temperature = field<double>(aj, "temperature");
  c.analyze.max_leaves = field<double>(aj, "max_leaves");
  c.analyze.fallback_rollouts = field<std::size_t>(aj, "fallback_rollouts");
  c.analyze.seed = field<std::uint64_t>(aj, "seed");
  c.analyze_prompts = aj.value("n_prompts", c.analyze_prompts);
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    doc = json::parse(is, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return experiment_config_from_json(doc);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const json& doc) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(doc.dump())));
  return buf;
}

std::string eval_report_name(const std::string& model) { return "eval_" + model + ".csv"; }

std::string git_describe() {
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen("git describe --always --dirty 2>/dev/null", "r"), pclose);
  if (!pipe) return {};
  std::array<char, 256> buf{};
  std::string out;
  while (std::fgets(buf.data(), buf.size(), pipe.get())) out += buf.data();
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out;
}

namespace {

bool wants(const ExperimentConfig& cfg, const std::string& stage) {
  return std::find(cfg.stages.begin(), cfg.stages.end(), stage) != cfg.stages.end();
}

DenoiserParams load_model(const std::filesystem::path& path, const ModelConfig& expected) {
  if (!std::filesystem::exists(path)) throw StateError("missing artifact " + path.string());
  DenoiserParams p = load_checkpoint(path);
  if (!(p.config == expected)) throw ConfigError(path.string() + " was trained with a different model config");
  return p;
}

std::vector<EvalReport> evaluate_plan(const DenoiserParams& params, const TaskSampler& tasks, const EvalPlan& plan) {
  std::vector<EvalReport> rows;
  const int answer = tasks.spec().answer_len;
  const int mb = static_cast<int>(params.config.block_size);
  if (plan.full) {
    DecodeConfig full;
    full.block_size = mb;
    full.mode = DecodeMode::Full;
    full.steps_per_block = mb;
    full.max_new_tokens = answer;
    rows.push_back(evaluate(params, tasks, full, plan.n));
  }
  auto grid = evaluate_grid(params, tasks, plan.block_sizes, plan.tokps, plan.n);
  rows.insert(rows.end(), grid.begin(), grid.end());
  for (double th : plan.dynamic_thresholds) {
    DecodeConfig dyn;
    dyn.block_size = mb;
    dyn.mode = DecodeMode::Dynamic;
    dyn.threshold = th;
    dyn.max_new_tokens = answer;
    rows.push_back(evaluate(params, tasks, dyn, plan.n));
  }
  return rows;
}

json manifest_json(const ExperimentConfig& cfg, const std::vector<StageResult>& stages) {
  json st = json::object();
  for (const auto& s : stages) st[s.stage] = {{"status", s.status}, {"detail", s.detail}};
  const std::string git = git_describe();
  return {{"config", cfg.source},
          {"config_hash", config_hash(cfg.source)},
          {"seeds",
           {{"task_train", cfg.task.train_seed},
            {"task_heldout", cfg.task.heldout_seed},
            {"teacher_init", cfg.teacher_init_seed},
            {"teacher", cfg.teacher.seed},
            {"rollout", cfg.rollout.seed},
            {"distill", cfg.distill.seed},
            {"analyze", cfg.analyze.seed}}},
          {"git_describe", git.empty() ? json(nullptr) : json(git)},
          {"stages", st}};
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  ExperimentResult result;
  result.dir = cfg.output_dir;
  fs::create_directories(cfg.output_dir);
  fs::remove(cfg.output_dir / artifacts::kStatus);

  const TaskSampler tasks(cfg.task, cfg.n_heldout, cfg.n_validation);
  const fs::path teacher_path = cfg.output_dir / artifacts::kTeacher;
  const fs::path student_path = cfg.output_dir / artifacts::kStudent;
  const fs::path traj_path = cfg.output_dir / artifacts::kTrajectories;

  auto run_stage = [&](const std::string& name, auto&& body) {
    if (!result.ok) return;
    if (!wants(cfg, name)) {
      result.stages.push_back({name, "skipped", ""});
      return;
    }
    std::cerr << "[t3d] stage " << name << "\n";
    try {
      std::string detail = body();
      result.stages.push_back({name, "ok", detail});
    } catch (const std::exception& e) {
      result.ok = false;
      result.stages.push_back({name, "failed", e.what()});
      json status = {{"failed_stage", name}, {"error", e.what()}};
      write_text(cfg.output_dir / artifacts::kStatus, status.dump(2) + "\n");
    }
  };

  run_stage("train-teacher", [&] {
    TrainResult r = train_teacher(tasks, cfg.model, cfg.teacher, cfg.teacher_init_seed);
    write_train_log(cfg.output_dir / artifacts::kTeacherLog, r.log);
    save_checkpoint(teacher_path, r.params);
    return std::to_string(r.steps_run) + " steps";
  });

  run_stage("rollout", [&] {
    const DenoiserParams teacher = load_model(teacher_path, cfg.model);
    RolloutStats stats = collect_trajectories(teacher, tasks, cfg.rollout, traj_path);
    return std::to_string(stats.written) + " written, " + std::to_string(stats.dropped) + " dropped";
  });

  run_stage("distill", [&] {
    const DenoiserParams teacher = load_model(teacher_path, cfg.model);
    if (!fs::exists(traj_path)) throw StateError("missing artifact " + traj_path.string());
    const auto dataset = load_trajectories(traj_path);
    TrainResult r = distill(dataset, teacher, cfg.distill);
    write_train_log(cfg.output_dir / artifacts::kDistillLog, r.log);
    save_checkpoint(student_path, r.params);
    return std::to_string(r.steps_run) + " steps, " + std::to_string(r.ref_snapshots) + " reference snapshots";
  });

  run_stage("eval", [&] {
    std::string detail;
    for (const auto& m : cfg.eval.models) {
      const DenoiserParams p = load_model(m == "teacher" ? teacher_path : student_path, cfg.model);
      const auto rows = evaluate_plan(p, tasks, cfg.eval);
      write_eval_csv(cfg.output_dir / eval_report_name(m), rows);
      if (!rows.empty()) detail += m + " " + std::to_string(rows.front().accuracy) + "; ";
    }
    return detail;
  });

  run_stage("analyze", [&] {
    const DenoiserParams teacher = load_model(teacher_path, cfg.model);
    const DenoiserParams student = load_model(student_path, cfg.model);
    std::vector<Tokens> prompts;
    const auto& held = tasks.heldout();
    for (std::size_t i = 0; i < std::min(cfg.analyze_prompts, held.size()); ++i) prompts.push_back(held[i].prompt);
    const TcReport rep = tc_reduction_report(teacher, student, prompts, cfg.analyze);
    write_tc_report(cfg.output_dir / artifacts::kTcReport, rep);
    return "gap " + std::to_string(rep.gap);
  });

  write_text(cfg.output_dir / artifacts::kManifest, manifest_json(cfg, result.stages).dump(2) + "\n");
  return result;
}

}  // namespace t3d
