#include "t3d/cli.hpp"

#include <CLI11.hpp>
#include <ostream>

#include "t3d/errors.hpp"
#include "t3d/experiment.hpp"

namespace t3d {

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trajectory self-distillation for masked diffusion language models"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"train-teacher", "Pretrain the teacher with the masked-diffusion loss"},
      {"rollout", "Collect verified teacher trajectories"},
      {"distill", "Distill a few-step student from the trajectories"},
      {"eval", "Evaluate checkpoints on held-out prompts"},
      {"analyze", "Conditional total-correlation report"},
      {"run", "Run the stages listed in the config"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "Override a config key, e.g. --set distill.total_steps=200");
  }

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command != "run") overrides.push_back("stages=[\"" + command + "\"]");
    const ExperimentConfig cfg = load_experiment_config(config_path, overrides);
    const ExperimentResult res = run_experiment(cfg);
    for (const auto& s : res.stages) {
      if (s.status != "skipped") out << s.stage << ": " << s.status << (s.detail.empty() ? "" : " (" + s.detail + ")") << "\n";
    }
    out << "artifacts in " << res.dir.string() << "\n";
    return res.ok ? 0 : 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace t3d
