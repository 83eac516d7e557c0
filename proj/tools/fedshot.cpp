#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedshot/cli/commands.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value config file");
  cmd->add_option("--set", args.overrides, "override a config key (key=value, repeatable)");
  cmd->add_option("--out", args.out_dir, "output directory (overrides out_dir)");
}

fedshot::ExperimentConfig build_config(const CommonArgs& args) {
  fedshot::ExperimentConfig cfg;
  if (!args.config_path.empty())
    cfg = fedshot::ExperimentConfig::from_file(args.config_path);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw fedshot::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  return cfg;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const fedshot::ConfigError*>(&e)) return 1;
  if (dynamic_cast<const fedshot::ClientTimeout*>(&e)) return 3;
  if (dynamic_cast<const fedshot::TransportError*>(&e)) return 3;
  if (dynamic_cast<const fedshot::Error*>(&e)) return 2;  // data / format errors
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated few-shot audio classification"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string checkpoint;

  auto* gen = app.add_subcommand("gen-synthetic", "write the synthetic WAV dataset");
  add_common(gen, args);
  auto* extract = app.add_subcommand("extract", "populate the feature cache from a manifest");
  add_common(extract, args);
  auto* local = app.add_subcommand("train-local", "train one client without federation");
  add_common(local, args);
  auto* fed = app.add_subcommand("train-fed", "run synchronous federated training");
  add_common(fed, args);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the novel classes");
  add_common(eval, args);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  auto* bench = app.add_subcommand("bench", "time aggregation and weight updates");
  add_common(bench, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const auto cfg = build_config(args);
    if (gen->parsed()) return fedshot::cli::cmd_gen_synthetic(cfg);
    if (extract->parsed()) return fedshot::cli::cmd_extract(cfg);
    if (local->parsed()) return fedshot::cli::cmd_train_local(cfg);
    if (fed->parsed()) return fedshot::cli::cmd_train_fed(cfg);
    if (eval->parsed()) return fedshot::cli::cmd_eval(cfg, checkpoint);
    if (bench->parsed()) return fedshot::cli::cmd_bench(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 1;
}
