// Command-line front end: `ttsa run CONFIG` and `ttsa reference CONFIG`.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "ttsa/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Two-time-scale stochastic approximation simulation and verification"};
  app.require_subcommand(1);

  std::string config;
  unsigned threads = 0;
  std::uint64_t seed = 0;
  std::string out;
  bool allow_invalid = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("config", config, "Experiment config (JSON)")->required();
    cmd->add_option("--out", out, "Output directory (overrides the config)");
  };

  CLI::App* run = app.add_subcommand("run", "Simulate and write report.json, snapshots.csv, fdd.csv");
  add_common(run);
  run->add_option("--threads", threads, "Worker threads (default: hardware count)");
  CLI::Option* seed_opt = run->add_option("--seed", seed, "Override run.master_seed");
  run->add_flag("--allow-invalid-schedule", allow_invalid, "Simulate even if a step-size condition fails");

  CLI::App* reference = app.add_subcommand("reference", "Write limits.json without simulating");
  add_common(reference);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : ttsa::kExitConfigError;
  }

  ttsa::RunOptions opts;
  opts.threads = threads;
  if (*seed_opt) opts.seed = seed;
  if (!out.empty()) opts.out = out;
  opts.allow_invalid_schedule = allow_invalid;

  if (run->parsed()) return ttsa::run_experiment(config, opts, std::cerr);
  return ttsa::emit_reference(config, opts, std::cerr);
}
