#include "t3d/evaluation.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include "t3d/errors.hpp"

namespace t3d {

EvalReport evaluate(const DenoiserParams& params, const TaskSpec& spec, const std::vector<TaskExample>& examples,
                    const DecodeConfig& cfg, EvalOptions opts) {
  spec.check_capacity(params.config);
  if (cfg.max_new_tokens != spec.answer_len) throw ConfigError("eval: max_new_tokens must equal answer_len");
  EvalReport r;
  r.task = to_string(spec.kind);
  r.mode = cfg.mode;
  r.block_size = cfg.block_size;
  r.n = examples.size();
  if (examples.empty()) return r;

  Rng rng(opts.seed);
  const auto start = std::chrono::steady_clock::now();
  long correct = 0, steps = 0, generated = 0;
  for (const auto& ex : examples) {
    auto traj = decode(params, ex.prompt, cfg, rng);
    correct += traj.output == ex.answer ? 1 : 0;
    steps += traj.steps_total;
    generated += static_cast<long>(traj.generated_length());
  }
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  const double n = static_cast<double>(examples.size());
  r.accuracy = static_cast<double>(correct) / n;
  r.avg_steps = static_cast<double>(steps) / n;
  r.avg_len = static_cast<double>(generated) / n;
  r.forward_passes = steps;
  r.wall_ms = opts.report_wall_clock ? ms : 0.0;
  r.tokps = cfg.mode == DecodeMode::Static ? tokps(cfg)
                                           : (steps > 0 ? static_cast<double>(generated) / static_cast<double>(steps)
                                                        : 0.0);
  return r;
}

EvalReport evaluate(const DenoiserParams& params, const TaskSampler& tasks, const DecodeConfig& cfg, std::size_t n,
                    EvalOptions opts) {
  const auto& held = tasks.heldout();
  if (n > held.size()) throw ConfigError("eval: requested more prompts than the held-out set holds");
  std::vector<TaskExample> subset(held.begin(), held.begin() + static_cast<std::ptrdiff_t>(n));
  return evaluate(params, tasks.spec(), subset, cfg, opts);
}

std::vector<EvalReport> evaluate_grid(const DenoiserParams& params, const TaskSampler& tasks,
                                      const std::vector<int>& block_sizes, const std::vector<int>& tokps_values,
                                      std::size_t n, EvalOptions opts) {
  std::vector<EvalReport> out;
  for (int b : block_sizes) {
    for (int k : tokps_values) {
      if (k < 1 || b % k != 0) throw ConfigError("eval grid: TokPS must divide the block size");
      DecodeConfig cfg;
      cfg.mode = DecodeMode::Static;
      cfg.block_size = b;
      cfg.steps_per_block = b / k;
      cfg.max_new_tokens = tasks.spec().answer_len;
      out.push_back(evaluate(params, tasks, cfg, n, opts));
    }
  }
  return out;
}

std::string eval_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os.precision(10);
  os << "task,mode,block_size,tokps,accuracy,avg_steps,avg_len,forward_passes,wall_ms\n";
  for (const auto& r : reports) {
    os << r.task << ',' << to_string(r.mode) << ',' << r.block_size << ',' << r.tokps << ',' << r.accuracy << ','
       << r.avg_steps << ',' << r.avg_len << ',' << r.forward_passes << ',' << r.wall_ms << '\n';
  }
  return os.str();
}

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
  std::ofstream os(path);
  if (!os) throw StateError("cannot open " + path.string() + " for writing");
  os << eval_csv(reports);
}

}  // namespace t3d
