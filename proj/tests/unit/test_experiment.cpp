#include "snntk/experiment.hpp"
#include "snntk/io.hpp"
#include "snntk/parallel.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <sstream>

using namespace snntk;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("snntk_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string small_config(const std::string& experiment, const fs::path& out) {
  nlohmann::json j{{"experiment", experiment},
                   {"seed", 7},
                   {"dataset", {{"kind", "synthetic"}, {"n", 4}, {"d", 3}, {"n_test", 2}}},
                   {"model", {{"sigma0", 0.1}, {"activation", "tanh"}, {"mc_samples", 2}}},
                   {"objective", {{"kind", "mse-plus-kl-surrogate"}, {"beta", 0.1}}},
                   {"training", {{"eta", 0.1}, {"steps", 20}, {"record_every", 5}}},
                   {"sweep", {16, 64}},
                   {"limiting", {{"s_w", 2048}, {"s_zeta", 2}}},
                   {"krr", {{"kernel", "both"}, {"tolerance", 1e-2}}},
                   {"output_dir", out.string()}};
  return j.dump(2);
}

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config rejects unknown keys by name") {
  auto j = nlohmann::json::parse(small_config("convergence", "x"));
  j["model"]["sigma_zero"] = 0.3;
  const std::string msg = error_of(j.dump());
  CHECK(msg.find("model.sigma_zero") != std::string::npos);
  CHECK(msg.find("unknown key") != std::string::npos);
}

TEST_CASE("config reports type errors and syntax positions") {
  auto j = nlohmann::json::parse(small_config("convergence", "x"));
  j["training"]["steps"] = "many";
  CHECK(error_of(j.dump()).find("training.steps") != std::string::npos);
  CHECK(error_of("{\n  \"experiment\": ,\n}").find("line 2") != std::string::npos);
  CHECK(error_of(R"({"experiment": "nope", "sweep": [4]})").find("nope") != std::string::npos);
  j = nlohmann::json::parse(small_config("convergence", "x"));
  j["sweep"] = {64, 16};
  CHECK(error_of(j.dump()).find("strictly increasing") != std::string::npos);
  j = nlohmann::json::parse(small_config("krr-gap", "x"));
  j["objective"]["kind"] = "mse";
  CHECK(error_of(j.dump()).find("objective.kind") != std::string::npos);
}

TEST_CASE("config round trips through its normalized form") {
  const ExperimentConfig a = parse_config(small_config("weight-drift", "out"));
  const ExperimentConfig b = parse_config(config_to_json(a));
  CHECK(config_to_json(a) == config_to_json(b));
  CHECK(a.model.d == 3);
  CHECK(a.sweep == std::vector<Eigen::Index>{16, 64});
}

TEST_CASE("flow_time overrides the step count") {
  auto j = nlohmann::json::parse(small_config("weight-drift", "x"));
  j["training"]["flow_time"] = 3.0;
  CHECK(parse_config(j.dump()).training.steps == 30);
}

TEST_CASE("every recipe runs, reports and is deterministic") {
  for (const std::string& name : experiment_names()) {
    CAPTURE(name);
    const fs::path d1 = scratch(name + "_a"), d2 = scratch(name + "_b");
    const RunResult r1 = run_experiment(parse_config(small_config(name, d1)));
    const RunResult r2 = run_experiment(parse_config(small_config(name, d2)));
    CHECK_MESSAGE(r1.exit_code == kExitOk, r1.message);
    REQUIRE(r1.artifacts.size() == r2.artifacts.size());
    REQUIRE(!r1.artifacts.empty());
    for (std::size_t i = 0; i < r1.artifacts.size(); ++i) {
      CHECK(r1.artifacts[i].path == r2.artifacts[i].path);
      CHECK(r1.artifacts[i].sha256 == r2.artifacts[i].sha256);
    }
    std::ostringstream out, err;
    CHECK(report_manifest(r1.manifest_path, out, err) == kExitOk);
    CHECK(out.str().find(name) != std::string::npos);
  }
}

TEST_CASE("report flags tampered, missing and empty manifests") {
  const fs::path dir = scratch("report");
  const RunResult r = run_experiment(parse_config(small_config("kron-structure", dir)));
  REQUIRE(r.exit_code == kExitOk);
  std::ostringstream out, err;

  atomic_write(dir / "kron.csv", "tampered\n");
  CHECK(report_manifest(r.manifest_path, out, err) == kExitInvariant);
  CHECK(err.str().find("digest mismatch: kron.csv") != std::string::npos);

  fs::remove(dir / "kron.csv");
  err.str("");
  CHECK(report_manifest(r.manifest_path, out, err) == kExitInvariant);
  CHECK(err.str().find("missing artifact: kron.csv") != std::string::npos);

  atomic_write(dir / "empty.json", R"({"artifacts": []})");
  err.str("");
  CHECK(report_manifest(dir / "empty.json", out, err) != kExitOk);
  CHECK(err.str().find("no artifacts") != std::string::npos);
}

TEST_CASE("numerical failure leaves an incomplete manifest") {
  const fs::path dir = scratch("diverge");
  auto j = nlohmann::json::parse(small_config("weight-drift", dir));
  j["training"]["eta"] = 1e6;
  j["training"]["steps"] = 200;
  const RunResult r = run_experiment(parse_config(j.dump()));
  CHECK(r.exit_code == kExitNumeric);
  const auto manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
  CHECK(manifest["incomplete"] == true);
}

TEST_CASE("cli exit codes") {
  const fs::path dir = scratch("cli");
  const std::string cli = SNNTK_CLI_PATH;
  atomic_write(dir / "good.json", small_config("kron-structure", dir / "out"));
  auto bad = nlohmann::json::parse(small_config("kron-structure", dir / "out"));
  bad["bogus"] = 1;
  atomic_write(dir / "bad.json", bad.dump());
  auto status = [](const std::string& cmd) {
    const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(raw);
  };
  CHECK(status(cli + " validate " + (dir / "good.json").string()) == 0);
  CHECK(status(cli + " validate " + (dir / "bad.json").string()) == kExitConfig);
  CHECK(status(cli + " run " + (dir / "good.json").string() + " --threads 1") == 0);
  CHECK(status(cli + " report " + (dir / "out" / "manifest.json").string()) == 0);
  CHECK(status(cli + " frobnicate") == kExitConfig);
}

TEST_CASE("training recipes emit readable checkpoints") {
  const fs::path dir = scratch("ckpt");
  const RunResult r = run_experiment(parse_config(small_config("weight-drift", dir)));
  REQUIRE(r.exit_code == kExitOk);
  std::istringstream in(read_text(dir / "params_m64.ckpt"));
  const SnnParams p = read_checkpoint(in);
  CHECK(p.width() == 64);
  CHECK(p.dim() == 3);
  CHECK((p.weights.mu - p.initial().mu).norm() > 0.0);
}

TEST_CASE("artifacts do not depend on the thread count") {
  for (const std::string name : {"kernel-concentration", "convergence"}) {
    CAPTURE(name);
    set_thread_count(1);
    const RunResult one = run_experiment(parse_config(small_config(name, scratch(name + "_t1"))));
    set_thread_count(3);
    const RunResult three = run_experiment(parse_config(small_config(name, scratch(name + "_t3"))));
    set_thread_count(0);
    REQUIRE(one.artifacts.size() == three.artifacts.size());
    for (std::size_t i = 0; i < one.artifacts.size(); ++i) {
      CHECK(one.artifacts[i].sha256 == three.artifacts[i].sha256);
    }
  }
}
