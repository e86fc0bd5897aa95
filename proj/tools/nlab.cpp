// nlab: dataset tooling, staged training runs and run comparison.
//
//   nlab make-data --config run.cfg
//   nlab run --config run.cfg --stage all --seed 3 --out runs/s3
//   nlab report runs/* --out table.csv
//
// Exit codes: 0 ok, 2 config error, 3 io error or missing artifact, 4 numeric failure.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlab/config.hpp"
#include "nlab/data.hpp"
#include "nlab/nn.hpp"
#include "nlab/pipeline.hpp"
#include "nlab/selection.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nlab;

namespace {

enum Exit { ok = 0, config_error = 2, io_error = 3, numeric_error = 4 };

struct MissingArtifact : IoError {
  explicit MissingArtifact(const fs::path& p) : IoError("missing artifact: " + p.string()) {}
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw IoError("cannot write " + p.string());
}

void ensure_dir(const fs::path& p) {
  if (p.empty()) return;
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

LabeledDataset load_cifar_set(const std::string& list) {
  LabeledDataset all;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto part = load_cifar10_binary(config_detail::trim(item));
    if (all.size() == 0) {
      all = std::move(part);
      continue;
    }
    Tensor merged = Tensor::matrix(all.size() + part.size(), all.feature_width);
    std::copy(all.features.data.begin(), all.features.data.end(), merged.data.begin());
    std::copy(part.features.data.begin(), part.features.data.end(),
              merged.data.begin() + static_cast<std::ptrdiff_t>(all.features.size()));
    all.features = std::move(merged);
    all.clean_labels.insert(all.clean_labels.end(), part.clean_labels.begin(), part.clean_labels.end());
    all.noisy_labels.insert(all.noisy_labels.end(), part.noisy_labels.begin(), part.noisy_labels.end());
  }
  if (all.size() == 0) throw ConfigError("data.cifar_train/cifar_test list no files");
  return all;
}

int cmd_make_data(const RunConfig& cfg) {
  LabeledDataset train, test;
  if (cfg.data.source == "cifar10") {
    train = load_cifar_set(cfg.data.cifar_train);
    test = load_cifar_set(cfg.data.cifar_test);
  } else {
    train = generate_synthetic(cfg.data.synthetic);
    SyntheticSpec ts = cfg.data.synthetic;
    ts.samples = cfg.data.test_samples;
    ts.seed = cfg.data.test_seed;
    test = generate_synthetic(ts);
  }
  switch (cfg.noise.type) {
    case NoiseType::none: break;
    case NoiseType::symmetric: train = inject_symmetric(std::move(train), cfg.noise.ratio, cfg.noise.seed); break;
    case NoiseType::asymmetric_pair:
    case NoiseType::asymmetric_circular:
      train = inject_asymmetric(std::move(train), cfg.noise.ratio, noise_map(cfg.noise, train.class_count), cfg.noise.seed);
      break;
  }
  ensure_dir(fs::path(cfg.data.train_file).parent_path());
  ensure_dir(fs::path(cfg.data.test_file).parent_path());
  save_nlab(cfg.data.train_file, train);
  save_nlab(cfg.data.test_file, test);
  std::cout << "n=" << train.size() << " K=" << train.class_count << " noise_accuracy=" << json(noise_accuracy(train)).dump()
            << " test_n=" << test.size() << "\n";
  return ok;
}

/// metrics.jsonl keeps the records of every stage; rerunning a stage replaces its own lines.
class MetricsLog {
 public:
  MetricsLog(const fs::path& path, std::string stage) : stage_(std::move(stage)) {
    std::string kept;
    if (fs::exists(path)) {
      std::istringstream in(slurp(path));
      for (std::string line; std::getline(in, line);) {
        const auto j = json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.is_object() && j.value("stage", "") == stage_) continue;
        kept += line + "\n";
      }
    }
    spit(path, kept);
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw IoError("cannot append to " + path.string());
  }
  void write(json j) {
    j["stage"] = stage_;
    out_ << j.dump() << "\n";
    out_.flush();
  }

 private:
  std::string stage_;
  std::ofstream out_;
};

struct Workspace {
  RunConfig cfg;
  fs::path out;
  LabeledDataset train, test;
  Diagnostics diagnostics;
  json summary;

  NetworkSpec spec() const { return cfg.phase.architecture.spec(train.feature_width, train.class_count); }
  fs::path file(const char* name) const { return out / name; }

  Network load_network(const char* name) const {
    const fs::path p = file(name);
    if (!fs::exists(p)) throw MissingArtifact(p);
    Network net(spec(), cfg.phase.seed);
    std::ifstream in(p, std::ios::binary);
    read_params(in, net.params());
    return net;
  }
  void save_network(const char* name, const Network& net) const {
    std::ofstream os(file(name), std::ios::binary | std::ios::trunc);
    write_params(os, net.params());
    if (!os) throw IoError(std::string("cannot write ") + name);
  }
  std::vector<int> load_pseudo_labels() const {
    const fs::path p = file("pseudo_labels.csv");
    if (!fs::exists(p)) throw MissingArtifact(p);
    std::istringstream in(slurp(p));
    std::string line;
    std::getline(in, line);
    std::vector<int> labels;
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw IoError("malformed pseudo_labels.csv");
      labels.push_back(std::stoi(line.substr(comma + 1)));
    }
    if (labels.size() != train.size()) throw IoError("pseudo_labels.csv does not cover the training set");
    return labels;
  }
  void write_summary() const { spit(file("summary.json"), summary.dump(2) + "\n"); }
};

ExperimentResult streaming(MetricsLog& log) {
  ExperimentResult r;
  r.sink = [&log](const EpochRecord& rec) { log.write(to_json(rec)); };
  return r;
}

void put_optional(json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}

void finish_stage(Workspace& ws, MetricsLog& log, const std::string& stage, json fields, const ExperimentResult& result) {
  json warnings = json::array();
  for (const auto& w : ws.summary["warnings"])
    if (!w.is_string() || w.get<std::string>().rfind(stage + ": ", 0) != 0) warnings.push_back(w);
  for (const auto& w : result.warnings) warnings.push_back(stage + ": " + w);
  ws.summary["warnings"] = warnings;
  for (auto& [k, v] : fields.items()) ws.summary[k] = v;
  auto& done = ws.summary["stages_completed"];
  if (std::find(done.begin(), done.end(), stage) == done.end()) done.push_back(stage);
  fields["phase"] = "summary";
  fields["seed"] = ws.cfg.phase.seed;
  log.write(fields);
  ws.write_summary();
}

void stage_pretrain(Workspace& ws) {
  MetricsLog log(ws.file("metrics.jsonl"), "pretrain");
  auto result = streaming(log);
  if (!ws.cfg.phase.pretrain) {
    result.warnings.push_back("pretrain = false: no contrastive stage");
    finish_stage(ws, log, "pretrain", json::object(), result);
    return;
  }
  const Network net = pretrain_encoder(noisy_view(ws.train), ws.cfg.phase, &result);
  ws.save_network("encoder.nlpr", net);
  const auto* last = result.last("a1-contrastive");
  finish_stage(ws, log, "pretrain", {{"contrastive_final_loss", last ? last->train_loss : 0.0}}, result);
}

void stage_classify(Workspace& ws) {
  std::optional<Network> encoder;
  if (ws.cfg.phase.pretrain) encoder = ws.load_network("encoder.nlpr");
  MetricsLog log(ws.file("metrics.jsonl"), "classify");
  auto result = streaming(log);
  const auto a = run_pretraining_phase(noisy_view(ws.train), ws.cfg.phase, result, &ws.diagnostics, encoder ? &*encoder : nullptr);
  ws.save_network("phase_a.nlpr", a.network);
  std::string csv = "sample_index,pseudo_label\n";
  for (std::size_t i = 0; i < a.pseudo.labels.size(); ++i) csv += std::to_string(i) + "," + std::to_string(a.pseudo.labels[i]) + "\n";
  spit(ws.file("pseudo_labels.csv"), csv);
  const auto* r = result.last("a2-classifier");
  json f;
  put_optional(f, "phase_a_test_top1", r->test_top1);
  put_optional(f, "phase_a_train_top1_vs_clean", r->train_top1_vs_clean);
  put_optional(f, "pseudo_label_accuracy", a.pseudo.accuracy);
  put_optional(f, "clean_subset_size", r->clean_subset_size);
  put_optional(f, "clean_subset_accuracy", r->clean_subset_accuracy);
  put_optional(f, "final_test_top1", r->test_top1);
  finish_stage(ws, log, "classify", f, result);
}

void stage_finetune(Workspace& ws) {
  const Network phase_a = ws.load_network("phase_a.nlpr");
  const auto pseudo = ws.load_pseudo_labels();
  MetricsLog log(ws.file("metrics.jsonl"), "finetune");
  auto result = streaming(log);
  const auto b = run_finetuning_phase(ws.train.features, ws.train.image, pseudo, phase_a, ws.cfg.phase, result, &ws.diagnostics);
  ws.save_network("phase_b.nlpr", b.network);
  std::ofstream csv(ws.file("weights.csv"), std::ios::trunc);
  write_selection_csv(csv, b.selection.weights, pseudo, ws.train.clean_labels, ws.train.noisy_labels);
  if (!csv) throw IoError("cannot write weights.csv");
  const auto* r = result.last("b3-classifier");
  const auto* sel = result.last("b1-selection");
  json f;
  put_optional(f, "finetune_test_top1", r->test_top1);
  put_optional(f, "finetune_train_top1_vs_clean", r->train_top1_vs_clean);
  put_optional(f, "final_test_top1", r->test_top1);
  if (sel) {
    put_optional(f, "selection_subset_size", sel->clean_subset_size);
    put_optional(f, "selection_subset_accuracy", sel->clean_subset_accuracy);
  }
  f["gmm_degenerate"] = b.selection.degenerate;
  finish_stage(ws, log, "finetune", f, result);
}

void stage_bootstrap(Workspace& ws) {
  const Network phase_a = ws.load_network("phase_a.nlpr");
  const bool use_pseudo = ws.cfg.bootstrap_targets == "pseudo";
  const std::vector<int> targets = use_pseudo ? ws.load_pseudo_labels() : ws.train.noisy_labels;
  MetricsLog log(ws.file("metrics.jsonl"), "bootstrap");
  auto result = streaming(log);
  const auto sel = select_samples(phase_a, ws.train.features, targets, ws.cfg.phase.selection.gmm);
  if (sel.degenerate) result.warnings.push_back("degenerate loss distribution: all sample weights set to 1");
  const TrainingView view{&ws.train.features, ws.train.image, targets, ws.train.class_count};
  const Network net = run_bootstrap_variant(view, sel.weights, phase_a, ws.cfg.phase, result, &ws.diagnostics);
  ws.save_network("bootstrap.nlpr", net);
  const auto* r = result.last("bootstrap-classifier");
  json f;
  put_optional(f, "bootstrap_test_top1", r->test_top1);
  put_optional(f, "final_test_top1", r->test_top1);
  finish_stage(ws, log, "bootstrap", f, result);
}

LabeledDataset load_dataset(const std::string& path) {
  if (!fs::exists(path)) throw MissingArtifact(path);
  return load_nlab(path);
}

int cmd_run(RunConfig cfg, const std::string& stage, std::optional<std::uint64_t> seed, const std::string& out) {
  if (seed) cfg.phase.seed = *seed;
  if (!out.empty()) cfg.out = out;
  validate(cfg);
  static const std::vector<std::string> stages = {"pretrain", "classify", "finetune", "bootstrap", "all"};
  if (std::find(stages.begin(), stages.end(), stage) == stages.end())
    throw ConfigError("--stage: expected pretrain|classify|finetune|bootstrap|all, got '" + stage + "'");

  Workspace ws;
  ws.cfg = cfg;
  ws.out = cfg.out;
  ensure_dir(ws.out);
  spit(ws.file("config.txt"), render(cfg));
  fs::remove(ws.file("error.json"));
  ws.train = load_dataset(cfg.data.train_file);
  ws.test = load_dataset(cfg.data.test_file);
  if (ws.test.feature_width != ws.train.feature_width || ws.test.class_count != ws.train.class_count)
    throw IoError("train and test containers disagree on feature width or class count");
  ws.diagnostics = {&ws.train, &ws.test, cfg.phase.selection.threshold, cfg.phase.selection.gmm};

  if (fs::exists(ws.file("summary.json"))) {
    ws.summary = json::parse(slurp(ws.file("summary.json")), nullptr, false);
    if (ws.summary.is_discarded() || !ws.summary.is_object()) ws.summary = json::object();
  }
  ws.summary["seed"] = cfg.phase.seed;
  ws.summary["loss"] = to_string(cfg.phase.classifier.loss);
  ws.summary["noise_type"] = to_string(cfg.noise.type);
  ws.summary["noise_ratio"] = cfg.noise.ratio;
  ws.summary["pretrained"] = cfg.phase.pretrain;
  ws.summary["n_train"] = ws.train.size();
  ws.summary["n_test"] = ws.test.size();
  if (!ws.summary.contains("stages_completed")) ws.summary["stages_completed"] = json::array();
  if (!ws.summary.contains("warnings")) ws.summary["warnings"] = json::array();

  if (stage == "pretrain" || stage == "all") stage_pretrain(ws);
  if (stage == "classify" || stage == "all") stage_classify(ws);
  if (stage == "finetune" || stage == "all") stage_finetune(ws);
  if (stage == "bootstrap") stage_bootstrap(ws);
  std::cout << "final_test_top1=" << ws.summary.value("final_test_top1", json()).dump() << "\n";
  return ok;
}

std::string csv_field(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return "";
  const auto& v = j[key];
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out) {
  static const char* cols[] = {"loss", "noise_type", "noise_ratio", "pretrained", "seed", "phase_a_test_top1",
                               "finetune_test_top1", "bootstrap_test_top1", "final_test_top1", "pseudo_label_accuracy",
                               "clean_subset_size", "clean_subset_accuracy"};
  std::string csv = "run,status";
  for (auto* c : cols) csv += std::string(",") + c;
  csv += "\n";
  for (const auto& d : dirs) {
    const fs::path p = fs::path(d) / "summary.json";
    json j;
    std::string status = "ok";
    if (!fs::exists(p)) {
      status = "warning: missing summary.json";
    } else {
      j = json::parse(slurp(p), nullptr, false);
      if (j.is_discarded() || !j.is_object()) status = "warning: malformed summary.json";
    }
    std::string row = d + "," + status;
    for (auto* c : cols) row += "," + (status == "ok" ? csv_field(j, c) : std::string());
    csv += row + "\n";
    if (status != "ok") std::cerr << d << ": " << status << "\n";
  }
  if (out.empty()) {
    std::cout << csv;
  } else {
    ensure_dir(fs::path(out).parent_path());
    spit(out, csv);
  }
  return ok;
}

void write_error(const std::string& out_dir, const char* kind, const std::string& message, int code) {
  std::cerr << "error (" << kind << "): " << message << "\n";
  if (out_dir.empty() || !fs::is_directory(out_dir)) return;
  try {
    spit(fs::path(out_dir) / "error.json", json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() + "\n");
  } catch (const std::exception&) {
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nlab: contrastive pre-training and fine-tuning under label noise"};
  app.require_subcommand(1);
  std::string config_path, stage = "all", out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> run_dirs;

  auto* make = app.add_subcommand("make-data", "write the train/test NLAB containers described by the config");
  make->add_option("--config", config_path, "config file");

  auto* run = app.add_subcommand("run", "run one or all training stages");
  run->add_option("--config", config_path, "config file");
  run->add_option("--stage", stage, "pretrain|classify|finetune|bootstrap|all");
  run->add_option("--seed", seed, "experiment seed (overrides the config)");
  run->add_option("--out", out, "output directory (overrides the config)");

  auto* report = app.add_subcommand("report", "one CSV row per run directory");
  report->add_option("run_dirs", run_dirs, "run directories");
  report->add_option("--out", out, "CSV path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : config_error;
  }

  std::string out_dir;
  try {
    if (*report) return cmd_report(run_dirs, out);
    RunConfig cfg = load_config(config_path);
    out_dir = out.empty() ? cfg.out : out;
    if (*make) {
      validate(cfg);
      return cmd_make_data(cfg);
    }
    return cmd_run(cfg, stage, seed, out);
  } catch (const InvalidArgument& e) {
    write_error(out_dir, "config", e.what(), config_error);
    return config_error;
  } catch (const NumericFailure& e) {
    write_error(out_dir, "numeric", e.what(), numeric_error);
    return numeric_error;
  } catch (const IoError& e) {
    write_error(out_dir, "io", e.what(), io_error);
    return io_error;
  } catch (const FormatError& e) {
    write_error(out_dir, "io", e.what(), io_error);
    return io_error;
  } catch (const std::exception& e) {
    write_error(out_dir, "internal", e.what(), 1);
    return 1;
  }
}
