#pragma once

#include "snntk/dataset.hpp"
#include "snntk/krr.hpp"
#include "snntk/snn.hpp"
#include "snntk/train.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace snntk {

inline constexpr const char* kVersion = "snntk 0.1.0";

/// Schema violation; the message names the field (and line for syntax errors).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A hard invariant (PSD, symmetry, gradient check, digest) failed.
class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitInvariant = 4,
};

struct DatasetSpec {
  enum class Kind { kSynthetic, kIdx } kind = Kind::kSynthetic;
  Eigen::Index n = 16;
  Eigen::Index d = 8;
  Eigen::Index n_test = 0;
  std::filesystem::path images;  // idx only
  std::filesystem::path labels;  // idx only, optional
  EncoderSpec encoder;
};

struct KrrSpec {
  bool empirical = true;      // fit on Θ^(μ)(0)
  bool limiting = true;       // also fit on the limiting MC kernel
  double tolerance = 1e-4;    // train until exp(-(λ₀ + β) T) <= tolerance
};

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  SnnConfig model;  // d is taken from the dataset, m from the sweep
  ObjectiveSpec objective;
  TrainConfig training;
  std::optional<double> flow_time;  // overrides training.steps when set
  std::vector<Eigen::Index> sweep;
  int replicates = 1;
  std::int64_t s_w = 1 << 16;
  int s_zeta = 4;
  double bound_slack = 1.05;
  std::optional<Eigen::Index> negative_control_m;
  std::optional<int> negative_control_steps;  // defaults to training.steps
  KrrSpec krr;
  bool gradient_check = false;
  std::filesystem::path output_dir = "out";
};

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"kernel-concentration", "convergence",
                                              "weight-drift", "krr-gap", "kron-structure"};
  return names;
}

/// Parses and validates a JSON config. Relative paths resolve against
/// `base_dir`. Unknown keys are rejected by name.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Normalized JSON form of a config (what the manifest echoes).
std::string config_to_json(const ExperimentConfig& cfg);

struct ArtifactEntry {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uint64_t bytes = 0;
};

struct StageTime {
  std::string name;
  double seconds = 0.0;
};

struct RunResult {
  int exit_code = kExitOk;
  std::string message;
  std::vector<ArtifactEntry> artifacts;
  std::filesystem::path manifest_path;
};

/// Runs the recipe, writing artifacts and manifest.json into cfg.output_dir.
/// Never throws for numerical trouble: a failed run leaves a manifest
/// flagged incomplete and reports the exit code.
RunResult run_experiment(const ExperimentConfig& cfg);

/// Prints a summary of a finished run; returns the exit code.
int report_manifest(const std::filesystem::path& manifest_path, std::ostream& out,
                    std::ostream& err);

}  // namespace snntk
