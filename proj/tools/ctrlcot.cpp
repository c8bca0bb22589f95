// ctrlcot: dual-granularity CoT compression pipeline driver.
//
// One subcommand per pipeline stage, a shared TOML config, a per-run
// manifest with hash-gated resumability, and a choice of live or replay
// backends. Exit codes: 0 success, 1 configuration error, 2 stage error,
// 3 replay miss.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ctrlcot/pipeline.hpp"

namespace {

struct PruneOptions {
  std::string text;
  std::string input_file;
  std::string gamma = "0.5";
  std::string model_file;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctrlcot: tiered CoT generation, logic-preserving token pruning, "
               "budget-tagged SFT export, and budget-conditioned evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string run_dir;
  std::string backend;
  bool force = false;
  app.add_option("--config", config_path, "pipeline config file (TOML)")->required();
  app.add_option("--run-dir", run_dir, "run directory (overrides run.run_dir)");
  app.add_option("--backend", backend, "backend override: live or replay")
      ->check(CLI::IsMember({"live", "replay"}));
  app.add_flag("--force", force, "rerun the stage even when outputs are up to date");

  struct StageSpec {
    const char* name;
    const char* help;
  };
  static const StageSpec stages[] = {
      {"hra", "generate tiered CoTs and keep the answer-consistent ones"},
      {"split", "assign training problems to disjoint buckets A and B"},
      {"lpd-build", "build keep/drop labels from teacher compressions"},
      {"lpd-train", "train the token pruner on the labeled dataset"},
      {"dag-build", "prune bucket-A seeds into ratio-conditioned training data"},
      {"dag-apply", "drive the ratio-conditioned endpoint over bucket B and filter"},
      {"pool", "pool semantic- and ratio-axis traces per problem"},
      {"export-sft", "export budget-tagged SFT records and the trainer config"},
      {"bfr-select", "select per-problem shortest correct traces over a budget grid"},
      {"eval", "run budget-conditioned evaluation over the test split"},
      {"report", "reduce evaluation traces to metric tables and plot data"},
      {"recover", "expand compressed traces into readable CoTs"},
  };
  for (const auto& s : stages) app.add_subcommand(s.name, s.help);

  auto* prune_cmd = app.add_subcommand("prune", "prune a single text to a target ratio");
  PruneOptions prune_opts;
  prune_cmd->add_option("--text", prune_opts.text, "text to prune");
  prune_cmd->add_option("--input", prune_opts.input_file, "file with the text to prune");
  prune_cmd->add_option("--gamma", prune_opts.gamma, "keep ratio in (0,1]")->required();
  prune_cmd->add_option("--model-file", prune_opts.model_file,
                        "pruner model (default: <run-dir>/pruner.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    ctrlcot::Pipeline pipeline(config_path, run_dir, backend, force);
    const std::string stage = app.get_subcommands().front()->get_name();
    if (stage == "prune") {
      std::string text = prune_opts.text;
      if (text.empty() && !prune_opts.input_file.empty())
        text = ctrlcot::read_file(prune_opts.input_file);
      if (text.empty())
        throw ctrlcot::ConfigError("prune: provide --text or --input");
      std::cout << pipeline.prune_text(text, ctrlcot::rat_from_decimal(prune_opts.gamma),
                                       prune_opts.model_file)
                << "\n";
      return 0;
    }
    pipeline.run_stage(stage);
    return 0;
  } catch (const ctrlcot::ReplayMissError& e) {
    std::cerr << "ctrlcot: " << e.what() << "\n";
    return 3;
  } catch (const ctrlcot::ConfigError& e) {
    std::cerr << "ctrlcot: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ctrlcot: " << e.what() << "\n";
    return 2;
  }
}
