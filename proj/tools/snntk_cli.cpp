#include "snntk/experiment.hpp"
#include "snntk/numerics.hpp"
#include "snntk/parallel.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int fail(int code, const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic network NTK lab"};
  app.set_version_flag("--version", snntk::kVersion);
  app.require_subcommand(1);

  std::string config_path, manifest_path, output_dir;
  unsigned threads = 0;
  std::optional<std::uint64_t> seed_override;

  auto* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("config", config_path, "JSON config file")->required();
  run->add_option("--output-dir", output_dir, "override output_dir from the config");
  run->add_option("--threads", threads, "worker threads (0 = hardware)");
  run->add_option("--seed-override", seed_override, "replace the config seed");

  auto* validate = app.add_subcommand("validate", "check a config without running it");
  validate->add_option("config", config_path, "JSON config file")->required();

  auto* report = app.add_subcommand("report", "verify and summarize a finished run");
  report->add_option("manifest", manifest_path, "manifest.json of a run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : snntk::kExitConfig;
  }

  if (*report) return snntk::report_manifest(manifest_path, std::cout, std::cerr);

  snntk::ExperimentConfig cfg;
  try {
    cfg = snntk::load_config(config_path);
  } catch (const snntk::ConfigError& e) {
    return fail(snntk::kExitConfig, e.what());
  }
  if (*validate) {
    std::cout << snntk::config_to_json(cfg) << "\n";
    return snntk::kExitOk;
  }

  if (!output_dir.empty()) cfg.output_dir = output_dir;
  if (seed_override) cfg.seed = *seed_override;
  if (threads > 0) snntk::set_thread_count(threads);
  try {
    const snntk::RunResult r = snntk::run_experiment(cfg);
    std::cout << "wrote " << r.artifacts.size() << " artifacts, manifest " << r.manifest_path.string()
              << "\n";
    if (r.exit_code != snntk::kExitOk) return fail(r.exit_code, r.message);
    return snntk::kExitOk;
  } catch (const std::exception& e) {
    return fail(snntk::kExitNumeric, e.what());
  }
}
