#include "snntk/experiment.hpp"

#include "snntk/gradcheck.hpp"
#include "snntk/io.hpp"
#include "snntk/ntk.hpp"
#include "snntk/rng.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <iostream>
#include <set>
#include <sstream>

namespace snntk {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------- config

std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  std::ostringstream os;
  os << "line " << line << ", column " << col;
  return os.str();
}

const char* type_name(const json& v) {
  if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
  return v.type_name();
}

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be rejected by name.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(path_, std::string("expected an object, got ") + type_name(obj_));
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  double number(const std::string& key, double fallback) {
    const json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_number()) expected(key, "number", *v);
    return v->get<double>();
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    const json* v = raw(key);
    if (!v) return fallback;
    if (!(v->is_number_integer() || v->is_number_unsigned())) expected(key, "integer", *v);
    return v->get<std::int64_t>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    const json* v = raw(key);
    if (!v) return fallback;
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (v->is_number_integer() && v->get<std::int64_t>() >= 0) return v->get<std::uint64_t>();
    expected(key, "non-negative integer", *v);
    return 0;
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_boolean()) expected(key, "boolean", *v);
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_string()) expected(key, "string", *v);
    return v->get<std::string>();
  }

  std::string required_string(const std::string& key) {
    if (!has(key)) fail(field(key), "required field is missing");
    return string(key, "");
  }

  Section child(const std::string& key) {
    const json* v = raw(key);
    static const json empty = json::object();
    return Section(v ? *v : empty, field(key));
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) fail(field(it.key()), "unknown key '" + it.key() + "'");
    }
  }

  [[noreturn]] void expected(const std::string& key, const char* what, const json& v) const {
    fail(field(key), std::string("expected ") + what + ", got " + type_name(v));
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw ConfigError("config field '" + where + "': " + what);
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto checked(const std::string& where, Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    Section::fail(where, e.what());
  }
}

std::string activation_name(const Activation& a) { return std::string(a.name()); }

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config syntax error at " + line_col(text, e.byte) + ": " + e.what());
  }
  ExperimentConfig cfg;
  Section top(root, "");
  cfg.experiment = top.required_string("experiment");
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), cfg.experiment) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    Section::fail("experiment", "unknown experiment '" + cfg.experiment + "' (expected one of " +
                                    list + ")");
  }
  cfg.seed = top.unsigned_integer("seed", 0);
  cfg.output_dir = top.string("output_dir", "out");
  cfg.replicates = static_cast<int>(top.integer("replicates", 1));
  if (cfg.replicates < 1) Section::fail("replicates", "must be >= 1");

  {
    Section ds = top.child("dataset");
    const std::string kind = ds.string("kind", "synthetic");
    cfg.dataset.n = ds.integer("n", 16);
    cfg.dataset.n_test = ds.integer("n_test", 0);
    if (cfg.dataset.n < 2) Section::fail("dataset.n", "must be >= 2");
    if (cfg.dataset.n_test < 0) Section::fail("dataset.n_test", "must be >= 0");
    if (kind == "synthetic") {
      cfg.dataset.kind = DatasetSpec::Kind::kSynthetic;
      cfg.dataset.d = ds.integer("d", 8);
      if (cfg.dataset.d < 1) Section::fail("dataset.d", "must be >= 1");
    } else if (kind == "idx") {
      cfg.dataset.kind = DatasetSpec::Kind::kIdx;
      cfg.dataset.images = base_dir / ds.required_string("images");
      const std::string labels = ds.string("labels", "");
      if (!labels.empty()) cfg.dataset.labels = base_dir / labels;
      cfg.dataset.d = ds.integer("d_out", 16);
      Section enc = ds.child("encoder");
      const std::string ek = enc.string("kind", "fixed-random-layer");
      if (ek == "fixed-random-layer") {
        cfg.dataset.encoder.kind = EncoderKind::kFixedRandomLayer;
      } else if (ek == "identity-normalize") {
        cfg.dataset.encoder.kind = EncoderKind::kIdentityNormalize;
      } else {
        Section::fail("dataset.encoder.kind", "unknown encoder '" + ek + "'");
      }
      cfg.dataset.encoder.activation = checked("dataset.encoder.activation", [&] {
        return parse_activation(enc.string("activation", "tanh"));
      });
      cfg.dataset.encoder.seed = enc.unsigned_integer("seed", 0);
      cfg.dataset.encoder.width = cfg.dataset.d;
      enc.finish();
      for (const auto& p : {cfg.dataset.images, cfg.dataset.labels}) {
        if (!p.empty() && !std::filesystem::exists(p)) {
          Section::fail("dataset", "file not found: " + p.string());
        }
      }
    } else {
      Section::fail("dataset.kind", "unknown dataset kind '" + kind + "'");
    }
    ds.finish();
  }

  {
    Section model = top.child("model");
    cfg.model.sigma0 = model.number("sigma0", 0.1);
    cfg.model.activation =
        checked("model.activation", [&] { return parse_activation(model.string("activation", "tanh")); });
    cfg.model.decoder =
        checked("model.decoder", [&] { return parse_activation(model.string("decoder", "identity")); });
    cfg.model.mc_samples = static_cast<int>(model.integer("mc_samples", 4));
    cfg.model.antithetic = model.boolean("antithetic", true);
    cfg.model.d = cfg.dataset.d;
    model.finish();
    checked("model", [&] {
      cfg.model.validate();
      return 0;
    });
  }

  {
    Section obj = top.child("objective");
    cfg.objective.kind =
        checked("objective.kind", [&] { return parse_objective_kind(obj.string("kind", "mse")); });
    cfg.objective.beta = obj.number("beta", 0.0);
    if (!(cfg.objective.beta >= 0.0)) Section::fail("objective.beta", "must be >= 0");
    obj.finish();
  }

  {
    Section tr = top.child("training");
    cfg.training.eta = tr.number("eta", 0.05);
    cfg.training.steps = static_cast<int>(tr.integer("steps", 100));
    cfg.training.record_every = static_cast<int>(tr.integer("record_every", 1));
    cfg.training.kernel_snapshot_every = static_cast<int>(tr.integer("kernel_snapshot_every", 0));
    cfg.training.fixed_draws = tr.boolean("fixed_draws", false);
    if (tr.has("flow_time")) cfg.flow_time = tr.number("flow_time", 0.0);
    if (const json* fr = tr.raw("freeze")) {
      if (!fr->is_array()) tr.expected("freeze", "array of group names", *fr);
      for (const json& g : *fr) {
        const std::string name = g.is_string() ? g.get<std::string>() : "";
        if (name == "mu") {
          cfg.training.freeze[0] = true;
        } else if (name == "sigma") {
          cfg.training.freeze[1] = true;
        } else if (name == "d") {
          cfg.training.freeze[2] = true;
        } else {
          Section::fail("training.freeze", "unknown group " + g.dump() + " (expected mu, sigma, d)");
        }
      }
    }
    tr.finish();
    checked("training", [&] {
      cfg.training.validate();
      return 0;
    });
    if (cfg.flow_time) {
      if (!(*cfg.flow_time >= 0.0)) Section::fail("training.flow_time", "must be >= 0");
      if (!(cfg.training.eta > 0.0)) Section::fail("training.eta", "must be > 0 with flow_time");
      cfg.training.steps = static_cast<int>(std::llround(*cfg.flow_time / cfg.training.eta));
    }
  }

  if (const json* sw = top.raw("sweep")) {
    if (!sw->is_array()) top.expected("sweep", "array of widths", *sw);
    for (const json& v : *sw) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 1) {
        Section::fail("sweep", "widths must be positive integers, got " + v.dump());
      }
      const auto m = static_cast<Eigen::Index>(v.get<std::int64_t>());
      if (!cfg.sweep.empty() && m <= cfg.sweep.back()) {
        Section::fail("sweep", "widths must be strictly increasing");
      }
      cfg.sweep.push_back(m);
    }
  }
  if (cfg.sweep.empty()) Section::fail("sweep", "at least one width is required");

  {
    Section lim = top.child("limiting");
    cfg.s_w = lim.integer("s_w", 1 << 16);
    cfg.s_zeta = static_cast<int>(lim.integer("s_zeta", 4));
    if (cfg.s_w < 1 || cfg.s_zeta < 1) Section::fail("limiting", "s_w and s_zeta must be >= 1");
    lim.finish();
  }

  {
    Section conv = top.child("convergence");
    cfg.bound_slack = conv.number("slack", 1.05);
    if (conv.has("negative_control_m")) {
      const auto m = conv.integer("negative_control_m", 0);
      if (m < 1) Section::fail("convergence.negative_control_m", "must be >= 1");
      cfg.negative_control_m = static_cast<Eigen::Index>(m);
    }
    if (conv.has("negative_control_steps")) {
      const auto steps = conv.integer("negative_control_steps", 0);
      if (steps < 1) Section::fail("convergence.negative_control_steps", "must be >= 1");
      cfg.negative_control_steps = static_cast<int>(steps);
    }
    conv.finish();
  }

  {
    Section krr = top.child("krr");
    const std::string kernel = krr.string("kernel", "both");
    if (kernel == "empirical-at-init") {
      cfg.krr = {true, false, cfg.krr.tolerance};
    } else if (kernel == "limiting-mc") {
      cfg.krr = {false, true, cfg.krr.tolerance};
    } else if (kernel != "both") {
      Section::fail("krr.kernel", "expected empirical-at-init, limiting-mc or both");
    }
    cfg.krr.tolerance = krr.number("tolerance", 1e-4);
    if (!(cfg.krr.tolerance > 0.0 && cfg.krr.tolerance < 1.0)) {
      Section::fail("krr.tolerance", "must lie in (0, 1)");
    }
    krr.finish();
  }

  {
    Section checks = top.child("checks");
    cfg.gradient_check = checks.boolean("gradient_check", false);
    checks.finish();
  }
  top.finish();

  if (cfg.experiment == "krr-gap") {
    if (cfg.objective.kind != ObjectiveKind::kMsePlusKlSurrogate) {
      Section::fail("objective.kind", "krr-gap trains with mse-plus-kl-surrogate");
    }
    if (cfg.dataset.n_test < 1) Section::fail("dataset.n_test", "krr-gap needs test points");
    if (!(cfg.training.eta > 0.0)) Section::fail("training.eta", "must be > 0 for krr-gap");
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.what());
  }
  return parse_config(text, path.parent_path());
}

namespace {

ojson config_json(const ExperimentConfig& cfg) {
  ojson j;
  j["experiment"] = cfg.experiment;
  j["seed"] = cfg.seed;
  j["replicates"] = cfg.replicates;
  ojson ds;
  if (cfg.dataset.kind == DatasetSpec::Kind::kSynthetic) {
    ds["kind"] = "synthetic";
    ds["n"] = cfg.dataset.n;
    ds["d"] = cfg.dataset.d;
  } else {
    ds["kind"] = "idx";
    ds["images"] = cfg.dataset.images.generic_string();
    ds["labels"] = cfg.dataset.labels.generic_string();
    ds["n"] = cfg.dataset.n;
    ds["d_out"] = cfg.dataset.d;
    ds["encoder"] = {
        {"kind", cfg.dataset.encoder.kind == EncoderKind::kFixedRandomLayer ? "fixed-random-layer"
                                                                            : "identity-normalize"},
        {"activation", activation_name(cfg.dataset.encoder.activation)},
        {"seed", cfg.dataset.encoder.seed}};
  }
  ds["n_test"] = cfg.dataset.n_test;
  j["dataset"] = ds;
  j["model"] = {{"sigma0", cfg.model.sigma0},
                {"activation", activation_name(cfg.model.activation)},
                {"decoder", activation_name(cfg.model.decoder)},
                {"mc_samples", cfg.model.mc_samples},
                {"antithetic", cfg.model.antithetic}};
  j["objective"] = {{"kind", std::string(objective_kind_name(cfg.objective.kind))},
                    {"beta", cfg.objective.beta}};
  ojson freeze = ojson::array();
  for (Group g : kAllGroups) {
    if (cfg.training.freeze[static_cast<std::size_t>(g)]) freeze.push_back(group_name(g));
  }
  j["training"] = {{"eta", cfg.training.eta},
                   {"steps", cfg.training.steps},
                   {"freeze", freeze},
                   {"record_every", cfg.training.record_every},
                   {"kernel_snapshot_every", cfg.training.kernel_snapshot_every},
                   {"fixed_draws", cfg.training.fixed_draws}};
  if (cfg.flow_time) j["training"]["flow_time"] = *cfg.flow_time;
  j["sweep"] = cfg.sweep;
  j["limiting"] = {{"s_w", cfg.s_w}, {"s_zeta", cfg.s_zeta}};
  j["convergence"] = {{"slack", cfg.bound_slack}};
  if (cfg.negative_control_m) j["convergence"]["negative_control_m"] = *cfg.negative_control_m;
  if (cfg.negative_control_steps) {
    j["convergence"]["negative_control_steps"] = *cfg.negative_control_steps;
  }
  j["krr"] = {{"kernel", cfg.krr.empirical && cfg.krr.limiting ? "both"
                         : cfg.krr.empirical                  ? "empirical-at-init"
                                                              : "limiting-mc"},
              {"tolerance", cfg.krr.tolerance}};
  j["checks"] = {{"gradient_check", cfg.gradient_check}};
  j["output_dir"] = cfg.output_dir.generic_string();
  return j;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg) { return config_json(cfg).dump(2); }

namespace {

// ---------------------------------------------------------------- run state

class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Serializes every artifact write: atomic temp-then-rename plus digest.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void write(const std::string& name, const std::string& content) {
    atomic_write(dir_ / name, content);
    entries_.push_back({name, sha256_hex(content), content.size()});
  }

  void write_json(const std::string& name, const ojson& j) { write(name, j.dump(2) + "\n"); }

  const std::vector<ArtifactEntry>& entries() const { return entries_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::vector<ArtifactEntry> entries_;
};

struct RunState {
  const ExperimentConfig& cfg;
  ArtifactWriter writer;
  std::vector<StageTime> stages;
  int kernels_checked = 0;
  int psd_failures = 0;
  std::vector<std::string> psd_messages;
  std::optional<bool> gradient_ok;
  std::optional<double> gradient_error;
  RngStream root;

  template <typename Fn>
  void stage(const std::string& name, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const auto stop = std::chrono::steady_clock::now();
    stages.push_back({name, std::chrono::duration<double>(stop - start).count()});
  }
};

std::string tag_m(Eigen::Index m) { return "m" + std::to_string(m); }

// Writes a kernel as CSV plus a JSON health summary and records PSD status.
ojson emit_kernel(RunState& st, const std::string& stem, const Matrix& kernel,
                  KernelMode mode, const std::string& provenance) {
  if (!all_finite(kernel)) throw NumericalFailure("kernel " + stem + " has non-finite entries");
  const KernelHealth h = kernel_health(kernel);
  ++st.kernels_checked;
  if (!h.psd_ok || !h.symmetric_ok) {
    ++st.psd_failures;
    std::ostringstream os;
    os << stem << ": lambda_min " << h.lambda_min << ", spectral norm " << h.spectral_norm
       << ", symmetry defect " << h.symmetry_defect;
    st.psd_messages.push_back(os.str());
  }
  const std::string mode_name = mode == KernelMode::kFull ? "full" : "kron-factor";
  st.writer.write(stem + ".csv",
                  matrix_csv(kernel, "mode=" + mode_name + " provenance=" + provenance));
  ojson summary{{"lambda0", h.lambda_min},
                {"frobenius_norm", h.frobenius},
                {"psd_margin", h.psd_margin},
                {"spectral_norm", h.spectral_norm},
                {"symmetry_defect", h.symmetry_defect},
                {"psd_ok", h.psd_ok},
                {"symmetric_ok", h.symmetric_ok},
                {"mode", mode_name},
                {"provenance", provenance}};
  st.writer.write_json(stem + ".json", summary);
  return summary;
}

Dataset build_dataset(const ExperimentConfig& cfg) {
  const DatasetSpec& ds = cfg.dataset;
  if (ds.kind == DatasetSpec::Kind::kSynthetic) {
    return synth_dataset(ds.n, ds.d, cfg.seed, 1e-8, ds.n_test);
  }
  const RawImages raw = load_idx_images(ds.images);
  Dataset out = encode(raw, ds.encoder, ds.d, ds.n, ds.n_test);
  if (!ds.labels.empty()) {
    std::vector<int> labels = load_idx_labels(ds.labels);
    labels.resize(static_cast<std::size_t>(std::min<Eigen::Index>(ds.n, Eigen::Index(labels.size()))));
    out.labels = std::move(labels);
  }
  return out;
}

SnnConfig model_at(const ExperimentConfig& cfg, Eigen::Index m) {
  SnnConfig c = cfg.model;
  c.m = m;
  c.d = cfg.dataset.d;
  return c;
}

bool is_linear(const SnnConfig& c) { return c.activation.is_identity() && c.decoder.is_identity(); }

KernelBlocks limiting_kernel(RunState& st, const Matrix& inputs) {
  const SnnConfig c = model_at(st.cfg, 1);
  if (is_linear(c)) return limiting_ntk_linear(c, inputs);
  return limiting_ntk_mc(c, inputs, st.cfg.s_w, st.cfg.s_zeta, st.root.child(4));
}

RngStream init_stream(const RunState& st, Eigen::Index m, int rep) {
  return st.root.child(1).child(static_cast<std::uint64_t>(m)).child(static_cast<std::uint64_t>(rep));
}
RngStream train_stream(const RunState& st, Eigen::Index m) {
  return st.root.child(2).child(static_cast<std::uint64_t>(m));
}
RngStream eval_stream(const RunState& st, Eigen::Index m, int rep) {
  return st.root.child(3).child(static_cast<std::uint64_t>(m)).child(static_cast<std::uint64_t>(rep));
}

std::string train_csv(const TrainRecord& rec) {
  std::ostringstream os;
  os << "step,flow_time,loss_mse,loss_total,drift_mu,drift_sigma,drift_d\n";
  for (std::size_t i = 0; i < rec.steps.size(); ++i) {
    os << rec.steps[i] << ',' << format_double(rec.times[i]) << ','
       << format_double(rec.loss_mse[i]) << ',' << format_double(rec.loss_total[i]);
    for (double v : rec.drift[i].frobenius) os << ',' << format_double(v);
    os << '\n';
  }
  return os.str();
}

void emit_checkpoint(RunState& st, const std::string& stem, const SnnParams& params) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, params);
  st.writer.write(stem + ".ckpt", os.str());
}

ojson optional_number(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

void maybe_gradient_check(RunState& st, const Dataset& data) {
  if (!st.cfg.gradient_check) return;
  st.stage("gradient-check", [&] {
    const SnnConfig c = model_at(st.cfg, st.cfg.sweep.front());
    const SnnParams p = init_params(c, init_stream(st, c.m, 0));
    const GradCheckResult r =
        finite_diff_check(p, c, data, st.cfg.objective, 1e-4, st.root.child(5));
    const double tol = is_linear(c) && c.sigma0 == 0.0 ? 1e-9 : 1e-5;
    st.gradient_error = r.max_relative_error;
    st.gradient_ok = r.max_relative_error < tol;
    st.writer.write_json("gradient_check.json",
                         ojson{{"m", c.m},
                               {"coordinates", r.coordinates},
                               {"max_relative_error", r.max_relative_error},
                               {"tolerance", tol},
                               {"worst_group", group_name(r.worst_group)},
                               {"worst_row", r.worst_row},
                               {"worst_col", r.worst_col},
                               {"passed", *st.gradient_ok}});
  });
}

// ---------------------------------------------------------------- recipes

ojson run_kernel_sweep(RunState& st, const Dataset& data, bool with_limit) {
  const ExperimentConfig& cfg = st.cfg;
  const Matrix& x = data.encoded;
  const Eigen::Index n = x.rows(), d = x.cols();
  KernelBlocks lim;
  Matrix lim_full;
  ojson summary;
  if (with_limit) {
    st.stage("limiting-kernel", [&] {
      lim = limiting_kernel(st, x);
      const Matrix total = assemble_total(lim);
      summary["limiting"] = emit_kernel(st, "kernel_limiting", total, lim.mode, lim.provenance);
      lim_full = kron_identity(total, d);
    });
  }
  std::ostringstream csv;
  csv << "m,replicate,frobenius,operator_norm,max_off_block,max_diag_spread\n";
  std::vector<double> widths, frob, off, spread;
  for (Eigen::Index m : cfg.sweep) {
    st.stage("width " + tag_m(m), [&] {
      const SnnConfig c = model_at(cfg, m);
      double f_sum = 0.0, o_sum = 0.0, s_sum = 0.0;
      for (int rep = 0; rep < cfg.replicates; ++rep) {
        const SnnParams p = init_params(c, init_stream(st, m, rep));
        const KernelBlocks k = empirical_ntk(p, c, x, eval_stream(st, m, rep));
        const Matrix total = assemble_total(k);
        if (rep == 0) emit_kernel(st, "kernel_empirical_" + tag_m(m), total, k.mode, k.provenance);
        KernelDistance dist;
        if (with_limit) dist = kernel_distance(total, lim_full);
        const KronReport kr = kron_structure_report(total, n, d);
        csv << m << ',' << rep << ',' << format_double(dist.frobenius) << ','
            << format_double(dist.operator_norm) << ',' << format_double(kr.max_off_block) << ','
            << format_double(kr.max_diag_spread) << '\n';
        f_sum += dist.frobenius;
        o_sum += kr.max_off_block;
        s_sum += kr.max_diag_spread;
      }
      widths.push_back(double(m));
      frob.push_back(f_sum / cfg.replicates);
      off.push_back(o_sum / cfg.replicates);
      spread.push_back(s_sum / cfg.replicates);
    });
  }
  st.writer.write(with_limit ? "concentration.csv" : "kron.csv", csv.str());
  ojson table = ojson::array();
  for (std::size_t i = 0; i < widths.size(); ++i) {
    ojson row{{"m", widths[i]}, {"max_off_block", off[i]}, {"max_diag_spread", spread[i]}};
    if (with_limit) row["frobenius"] = frob[i];
    table.push_back(row);
  }
  summary["widths"] = table;
  ojson slopes;
  if (widths.size() >= 2) {
    if (with_limit) slopes["frobenius"] = loglog_slope(widths, frob);
    slopes["max_off_block"] = loglog_slope(widths, off);
    slopes["max_diag_spread"] = loglog_slope(widths, spread);
  }
  summary["fitted_slopes"] = slopes;
  return summary;
}

ojson run_convergence(RunState& st, const Dataset& data) {
  const ExperimentConfig& cfg = st.cfg;
  std::vector<std::pair<Eigen::Index, bool>> runs;
  for (Eigen::Index m : cfg.sweep) runs.emplace_back(m, false);
  if (cfg.negative_control_m) runs.emplace_back(*cfg.negative_control_m, true);

  KernelBlocks lim;
  st.stage("limiting-kernel", [&] { lim = limiting_kernel(st, data.encoded); });
  const std::array<bool, 3> trained{!cfg.training.freeze[0], !cfg.training.freeze[1],
                                    !cfg.training.freeze[2]};
  const double lambda0_limit = least_eigenvalue(assemble_groups(lim, trained));

  ojson table = ojson::array();
  for (const auto& [m, control] : runs) {
    st.stage(std::string(control ? "negative control " : "train ") + tag_m(m), [&] {
      const SnnConfig c = model_at(cfg, m);
      SnnParams p = init_params(c, init_stream(st, m, 0));
      TrainConfig tcfg = cfg.training;
      if (control && cfg.negative_control_steps) {
        // Keep roughly the main run's number of records.
        const int steps = *cfg.negative_control_steps;
        tcfg.record_every = std::max(tcfg.record_every,
                                     static_cast<int>(std::int64_t(tcfg.record_every) * steps /
                                                      std::max(1, cfg.training.steps)));
        tcfg.steps = steps;
      }
      const TrainRecord rec = train(p, c, data, cfg.objective, tcfg, train_stream(st, m));
      const std::string stem = (control ? "control_" : "train_") + tag_m(m);
      st.writer.write(stem + ".csv", train_csv(rec));
      emit_checkpoint(st, "params_" + stem, p);
      for (const KernelSnapshot& snap : rec.kernel_snapshots) {
        emit_kernel(st, "kernel_" + stem + "_step" + std::to_string(snap.step),
                    assemble_total(snap.kernel), snap.kernel.mode, snap.kernel.provenance);
      }
      if (rec.diverged) throw NumericalFailure(stem + ": " + rec.message);
      const Eigen::Index n = data.size();
      const BoundReport emp = convergence_bound_report(rec, n, cfg.bound_slack);
      const BoundReport lim_rep = convergence_bound_report(rec, n, cfg.bound_slack, lambda0_limit);
      ojson row{{"m", m},
                {"negative_control", control},
                {"steps", tcfg.steps},
                {"lambda0_init", rec.lambda0_init},
                {"bound_violations", emp.violations},
                {"bound_checked", emp.checked},
                {"max_excess", emp.max_excess},
                {"lambda0_limiting", lambda0_limit},
                {"bound_violations_limiting", lim_rep.violations},
                {"max_excess_limiting", lim_rep.max_excess},
                {"final_loss_mse", rec.loss_mse.back()},
                {"initial_loss_mse", rec.loss_mse.front()}};
      st.writer.write_json(stem + ".json",
                           ojson{{"lambda0_init", rec.lambda0_init},
                                 {"bound_violations", emp.violations},
                                 {"fitted_slopes", nullptr},
                                 {"max_excess", emp.max_excess},
                                 {"slack", cfg.bound_slack}});
      table.push_back(row);
    });
  }
  return ojson{{"runs", table}, {"slack", cfg.bound_slack}};
}

ojson run_weight_drift(RunState& st, const Dataset& data) {
  const ExperimentConfig& cfg = st.cfg;
  std::vector<std::pair<Eigen::Index, TrainRecord>> runs;
  for (Eigen::Index m : cfg.sweep) {
    st.stage("train " + tag_m(m), [&] {
      const SnnConfig c = model_at(cfg, m);
      SnnParams p = init_params(c, init_stream(st, m, 0));
      TrainRecord rec = train(p, c, data, cfg.objective, cfg.training, train_stream(st, m));
      st.writer.write("train_" + tag_m(m) + ".csv", train_csv(rec));
      emit_checkpoint(st, "params_" + tag_m(m), p);
      if (rec.diverged) throw NumericalFailure(tag_m(m) + ": " + rec.message);
      runs.emplace_back(m, std::move(rec));
    });
  }
  const DriftTable table = weight_drift_report(runs);
  std::ostringstream csv;
  csv << "m,drift_mu,drift_sigma,drift_d\n";
  ojson rows = ojson::array();
  for (const DriftRow& r : table.rows) {
    csv << r.m;
    for (double v : r.relative) csv << ',' << format_double(v);
    csv << '\n';
    rows.push_back({{"m", r.m}, {"drift_mu", r.relative[0]}, {"drift_sigma", r.relative[1]},
                    {"drift_d", r.relative[2]}});
  }
  st.writer.write("drift_table.csv", csv.str());
  ojson slopes{{"mu", optional_number(table.slopes[0])},
               {"sigma", optional_number(table.slopes[1])},
               {"d", optional_number(table.slopes[2])}};
  const double t = cfg.training.steps * cfg.training.eta;
  st.writer.write_json("drift_summary.json",
                       ojson{{"lambda0_init", runs.empty() ? 0.0 : runs.front().second.lambda0_init},
                             {"bound_violations", nullptr},
                             {"fitted_slopes", slopes},
                             {"flow_time", t}});
  return ojson{{"widths", rows}, {"fitted_slopes", slopes}, {"flow_time", t}};
}

ojson run_krr_gap(RunState& st, const Dataset& data) {
  const ExperimentConfig& cfg = st.cfg;
  const double beta = cfg.objective.beta;
  const Eigen::Index n = data.size(), d = data.dim();
  Matrix all(n + data.test_encoded.rows(), d);
  all << data.encoded, data.test_encoded;

  KernelBlocks lim;
  st.stage("limiting-kernel", [&] {
    lim = limiting_kernel(st, all);
    emit_kernel(st, "kernel_limiting_mu", lim.theta_mu, lim.mode, lim.provenance);
  });
  const Matrix lim_mu_train = kron_identity(lim.theta_mu.topLeftCorner(n, n), d);

  std::ostringstream csv, detail;
  csv << "m,test_index,gap,pred_norm,eps_init\n";
  detail << "m,test_index,kernel,gap,uncentered_gap,pred_norm,eps_init\n";
  ojson mean_gap, mean_gap_limiting, mean_uncentered, bound_ratio, per_width = ojson::array();
  std::vector<double> widths, gaps;
  for (Eigen::Index m : cfg.sweep) {
    st.stage("width " + tag_m(m), [&] {
      const SnnConfig c = model_at(cfg, m);
      SnnParams p = init_params(c, init_stream(st, m, 0));
      const RngStream eval = eval_stream(st, m, 0);
      std::optional<LinearizedKrr> emp, limk;
      if (cfg.krr.empirical) {
        emp = fit_linearized(p, c, data.encoded, data.targets, data.test_encoded, beta,
                             KrrKernelSource::kEmpiricalInit, eval);
        emit_kernel(st, "kernel_mu_init_" + tag_m(m), emp->theta_mu_test, KernelMode::kFull,
                    "empirical(m=" + std::to_string(m) + ")");
      }
      if (cfg.krr.limiting) {
        limk = fit_linearized(p, c, data.encoded, data.targets, data.test_encoded, beta,
                              KrrKernelSource::kLimitingMc, eval, cfg.s_w, cfg.s_zeta);
      }
      const LinearizedKrr& ref = emp ? *emp : *limk;
      const double lambda0 = ref.lambda0;
      const double lambda_max = ref.centered.factorization.eigenvalues.maxCoeff();
      if (!(lambda0 + beta > 0.0)) {
        throw NumericalFailure(tag_m(m) + ": lambda0 + beta is not positive; flow time undefined");
      }
      const double flow_time = std::log(1.0 / cfg.krr.tolerance) / (lambda0 + beta);
      if (cfg.training.eta * (lambda_max + beta) >= 2.0) {
        std::ostringstream os;
        os << tag_m(m) << ": eta " << cfg.training.eta << " unstable for kernel norm "
           << lambda_max + beta;
        throw NumericalFailure(os.str());
      }
      TrainConfig tcfg = cfg.training;
      tcfg.freeze = {false, true, true};
      tcfg.steps = static_cast<int>(std::ceil(flow_time / tcfg.eta));
      tcfg.record_every = std::max(1, tcfg.steps / 100);
      tcfg.kernel_snapshot_every = tcfg.steps;
      const TrainRecord rec = train(p, c, data, cfg.objective, tcfg, train_stream(st, m));
      st.writer.write("train_" + tag_m(m) + ".csv", train_csv(rec));
      emit_checkpoint(st, "params_" + tag_m(m), p);
      if (rec.diverged) throw NumericalFailure(tag_m(m) + ": " + rec.message);

      double eps_theta = 0.0;
      for (const KernelSnapshot& snap : rec.kernel_snapshots) {
        eps_theta = std::max(eps_theta, kernel_distance(snap.kernel.theta_mu, lim_mu_train).operator_norm);
      }
      const std::string key = std::to_string(m);
      ojson row{{"m", m},
                {"lambda0", lambda0},
                {"flow_time", tcfg.steps * tcfg.eta},
                {"steps", tcfg.steps},
                {"eps_theta", eps_theta}};
      auto record = [&](const LinearizedKrr& k, const char* name, bool primary) {
        const GapReport g = net_vs_krr_gap(p, c, k, data.test_encoded, beta, eval);
        double eps_init = 0.0;
        for (std::size_t t = 0; t < g.gap.size(); ++t) {
          if (primary) {
            csv << m << ',' << t << ',' << format_double(g.gap[t]) << ','
                << format_double(g.pred_norm[t]) << ',' << format_double(g.eps_init[t]) << '\n';
          }
          detail << m << ',' << t << ',' << name << ',' << format_double(g.gap[t]) << ','
                 << format_double(g.uncentered_gap[t]) << ',' << format_double(g.pred_norm[t])
                 << ',' << format_double(g.eps_init[t]) << '\n';
          eps_init += g.eps_init[t];
        }
        eps_init /= double(g.gap.size());
        // Unscaled kernel, so the ridge enters as nβ; a singular Gram can
        // give a λ₀ a few ulps below zero.
        const double bound = residual_bound(eps_init, eps_theta, n,
                                            double(n) * std::max(lambda0, 0.0), double(n) * beta);
        row[std::string(name) + "_mean_gap"] = g.mean_gap;
        row[std::string(name) + "_mean_uncentered_gap"] = g.mean_uncentered_gap;
        row[std::string(name) + "_bound"] = bound;
        row["eps_init"] = eps_init;
        return std::pair{g, bound};
      };
      if (emp) {
        const auto [g, bound] = record(*emp, "empirical", true);
        mean_gap[key] = g.mean_gap;
        mean_uncentered[key] = g.mean_uncentered_gap;
        bound_ratio[key] = bound > 0 ? g.mean_gap / bound : 0.0;
        widths.push_back(double(m));
        gaps.push_back(g.mean_gap);
      }
      if (limk) {
        const auto [g, bound] = record(*limk, "limiting", !emp);
        mean_gap_limiting[key] = g.mean_gap;
        if (!emp) {
          mean_gap[key] = g.mean_gap;
          mean_uncentered[key] = g.mean_uncentered_gap;
          bound_ratio[key] = bound > 0 ? g.mean_gap / bound : 0.0;
          widths.push_back(double(m));
          gaps.push_back(g.mean_gap);
        }
      }
      per_width.push_back(row);
    });
  }
  st.writer.write("gap.csv", csv.str());
  st.writer.write("gap_detail.csv", detail.str());
  int inversions = 0;
  for (std::size_t i = 1; i < gaps.size(); ++i) inversions += gaps[i] > gaps[i - 1] ? 1 : 0;
  ojson summary{{"mean_gap", mean_gap},
                {"bound_ratio", bound_ratio},
                {"mean_uncentered_gap", mean_uncentered},
                {"mean_gap_limiting", mean_gap_limiting},
                {"inversions", inversions},
                {"beta", beta},
                {"widths", per_width}};
  if (widths.size() >= 2 && *std::min_element(gaps.begin(), gaps.end()) > 0.0) {
    summary["gap_slope"] = loglog_slope(widths, gaps);
  }
  st.writer.write_json("gap_summary.json", summary);
  return summary;
}

void write_manifest(RunState& st, bool incomplete, const std::string& message,
                    const ojson& summary) {
  ojson artifacts = ojson::array();
  for (const ArtifactEntry& e : st.writer.entries()) {
    artifacts.push_back({{"path", e.path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
  }
  ojson stages = ojson::array();
  for (const StageTime& s : st.stages) stages.push_back({{"name", s.name}, {"seconds", s.seconds}});
  ojson invariants{{"kernels_checked", st.kernels_checked},
                   {"psd_failures", st.psd_failures},
                   {"psd_messages", st.psd_messages},
                   {"gradient_check_passed", st.gradient_ok ? ojson(*st.gradient_ok) : ojson(nullptr)},
                   {"gradient_check_error", optional_number(st.gradient_error)}};
  ojson manifest{{"version", kVersion},
                 {"experiment", st.cfg.experiment},
                 {"incomplete", incomplete},
                 {"message", message},
                 {"config", config_json(st.cfg)},
                 {"artifacts", artifacts},
                 {"stages", stages},
                 {"invariants", invariants},
                 {"summary", summary}};
  atomic_write(st.writer.dir() / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.output_dir);
  RunState st{cfg, ArtifactWriter(cfg.output_dir), {}, 0, 0, {}, {}, {},
              RngStream(cfg.seed, mix64(0x5e1f))};
  RunResult result;
  ojson summary = ojson::object();
  bool incomplete = false;
  try {
    Dataset data;
    st.stage("dataset", [&] {
      data = build_dataset(cfg);
      std::ostringstream os;
      write_dataset_csv(os, data.encoded);
      st.writer.write("dataset.csv", os.str());
      if (data.test_encoded.rows() > 0) {
        std::ostringstream ts;
        write_dataset_csv(ts, data.test_encoded);
        st.writer.write("dataset_test.csv", ts.str());
      }
    });
    maybe_gradient_check(st, data);
    if (cfg.experiment == "kernel-concentration") {
      summary = run_kernel_sweep(st, data, true);
    } else if (cfg.experiment == "kron-structure") {
      summary = run_kernel_sweep(st, data, false);
    } else if (cfg.experiment == "convergence") {
      summary = run_convergence(st, data);
    } else if (cfg.experiment == "weight-drift") {
      summary = run_weight_drift(st, data);
    } else if (cfg.experiment == "krr-gap") {
      summary = run_krr_gap(st, data);
    }
    summary["psd_failures"] = st.psd_failures;
    st.writer.write_json("summary.json", summary);
    if (st.psd_failures > 0 || (st.gradient_ok && !*st.gradient_ok)) {
      result.exit_code = kExitInvariant;
      result.message = st.psd_failures > 0 ? "kernel PSD/symmetry check failed: " + st.psd_messages.front()
                                           : "gradient check failed";
    }
  } catch (const NumericalFailure& e) {
    incomplete = true;
    result.exit_code = kExitNumeric;
    result.message = e.what();
  } catch (const NumericError& e) {
    incomplete = true;
    result.exit_code = kExitNumeric;
    result.message = e.what();
  } catch (const DatasetError& e) {
    incomplete = true;
    result.exit_code = kExitConfig;
    result.message = e.what();
  } catch (const IdxError& e) {
    incomplete = true;
    result.exit_code = kExitConfig;
    result.message = e.what();
  }
  write_manifest(st, incomplete, result.message, summary);
  result.artifacts = st.writer.entries();
  result.manifest_path = cfg.output_dir / "manifest.json";
  return result;
}

// ---------------------------------------------------------------- report

namespace {

std::string fmt(const json& v) {
  if (v.is_null()) return "n/a";
  if (v.is_number_float()) {
    std::ostringstream os;
    os.precision(6);
    os << v.get<double>();
    return os.str();
  }
  return v.dump();
}

void report_summary(const std::string& experiment, const json& s, std::ostream& out) {
  if (experiment == "kernel-concentration" || experiment == "kron-structure") {
    out << "m          frobenius    max_off_block  max_diag_spread\n";
    for (const json& row : s.value("widths", json::array())) {
      out << fmt(row["m"]) << "\t" << fmt(row.value("frobenius", json())) << "\t"
          << fmt(row["max_off_block"]) << "\t" << fmt(row["max_diag_spread"]) << "\n";
    }
    const json slopes = s.value("fitted_slopes", json::object());
    for (const auto& [k, v] : slopes.items()) {
      out << "slope " << k << ": " << fmt(v) << "\n";
    }
    if (s.contains("limiting")) out << "limiting lambda0: " << fmt(s["limiting"]["lambda0"]) << "\n";
  } else if (experiment == "convergence") {
    for (const json& r : s.value("runs", json::array())) {
      out << (r["negative_control"].get<bool>() ? "negative control " : "run ") << "m=" << fmt(r["m"])
          << ": lambda0_init " << fmt(r["lambda0_init"]) << ", violations "
          << fmt(r["bound_violations"]) << "/" << fmt(r["bound_checked"]) << " (max excess "
          << fmt(r["max_excess"]) << "); with limiting lambda0 " << fmt(r["lambda0_limiting"])
          << ": violations " << fmt(r["bound_violations_limiting"]) << "\n";
    }
  } else if (experiment == "weight-drift") {
    out << "m\tdrift_mu\tdrift_sigma\tdrift_d\n";
    for (const json& r : s.value("widths", json::array())) {
      out << fmt(r["m"]) << "\t" << fmt(r["drift_mu"]) << "\t" << fmt(r["drift_sigma"]) << "\t"
          << fmt(r["drift_d"]) << "\n";
    }
    const json sl = s.value("fitted_slopes", json::object());
    out << "slope mu " << fmt(sl.value("mu", json())) << ", sigma " << fmt(sl.value("sigma", json()))
        << ", d " << fmt(sl.value("d", json())) << "\n";
  } else if (experiment == "krr-gap") {
    out << "m\tmean_gap\tbound_ratio\tmean_uncentered_gap\n";
    for (const json& row : s.value("widths", json::array())) {
      const std::string m = std::to_string(row["m"].get<long long>());
      out << m << "\t" << fmt(s["mean_gap"].value(m, json())) << "\t"
          << fmt(s["bound_ratio"].value(m, json())) << "\t"
          << fmt(s["mean_uncentered_gap"].value(m, json())) << "\n";
    }
    out << "inversions: " << fmt(s.value("inversions", json())) << "\n";
  }
}

}  // namespace

int report_manifest(const std::filesystem::path& manifest_path, std::ostream& out,
                    std::ostream& err) {
  json manifest;
  try {
    manifest = json::parse(read_text(manifest_path));
  } catch (const std::exception& e) {
    err << "cannot read manifest " << manifest_path.string() << ": " << e.what() << "\n";
    return kExitConfig;
  }
  const json artifacts = manifest.value("artifacts", json::array());
  if (!artifacts.is_array() || artifacts.empty()) {
    err << "no artifacts\n";
    return kExitInvariant;
  }
  const std::filesystem::path dir = manifest_path.parent_path();
  int status = kExitOk;
  for (const json& a : artifacts) {
    const std::string path = a.value("path", "");
    const std::filesystem::path full = dir / path;
    if (!std::filesystem::exists(full)) {
      err << "missing artifact: " << path << "\n";
      return kExitInvariant;
    }
    if (sha256_hex(read_text(full)) != a.value("sha256", "")) {
      err << "digest mismatch: " << path << "\n";
      status = kExitInvariant;
    }
  }
  const std::string experiment = manifest.value("experiment", "");
  out << "experiment: " << experiment << " (" << manifest.value("version", "") << ")\n";
  out << "artifacts: " << artifacts.size() << "\n";
  report_summary(experiment, manifest.value("summary", json::object()), out);

  const json inv = manifest.value("invariants", json::object());
  out << "kernels checked: " << fmt(inv.value("kernels_checked", json())) << ", PSD/symmetry failures: "
      << fmt(inv.value("psd_failures", json())) << "\n";
  if (inv.value("psd_failures", 0) > 0) {
    for (const json& msg : inv.value("psd_messages", json::array())) err << "PSD failure: " << msg.get<std::string>() << "\n";
    status = kExitInvariant;
  }
  const json grad = inv.value("gradient_check_passed", json());
  if (!grad.is_null()) {
    out << "gradient check: " << (grad.get<bool>() ? "passed" : "FAILED") << " (max relative error "
        << fmt(inv.value("gradient_check_error", json())) << ")\n";
    if (!grad.get<bool>()) status = kExitInvariant;
  }
  if (manifest.value("incomplete", false)) {
    err << "run incomplete: " << manifest.value("message", "") << "\n";
    if (status == kExitOk) status = kExitNumeric;
  }
  return status;
}

}  // namespace snntk
