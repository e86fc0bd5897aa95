// Flat `key = value` run configuration.
//
//   # comment
//   classifier.loss = elr
//   model.encoder_widths = 128,64
//
// Every key has a default; unknown or repeated keys are rejected. render()
// writes every key in a fixed order, so parse(render(c)) == c and rendering
// a parsed rendering reproduces it byte for byte.
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nlab/core.hpp"
#include "nlab/data.hpp"
#include "nlab/pipeline.hpp"

namespace nlab {

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | cifar10
  SyntheticSpec synthetic = {4, 2000, SyntheticKind::mini_image, 1.0, 1, 16, 10, 3};
  std::size_t test_samples = 1000;
  std::uint64_t test_seed = 2;
  std::string cifar_train;  // comma-separated data_batch_*.bin paths
  std::string cifar_test;
  std::string train_file = "data/train.nlab";
  std::string test_file = "data/test.nlab";

  bool operator==(const DataConfig&) const = default;
};

struct NoiseConfig {
  NoiseType type = NoiseType::none;
  double ratio = 0.0;
  std::uint64_t seed = 1;
  std::string pairs;  // "src:dst,..." for asymmetric-pair; empty selects the default map
  std::size_t group_size = 2;  // asymmetric-circular

  bool operator==(const NoiseConfig&) const = default;
};

struct RunConfig {
  DataConfig data;
  NoiseConfig noise;
  PhaseConfig phase;
  std::string bootstrap_targets = "pseudo";  // pseudo | noisy
  std::string out = "runs/default";

  bool operator==(const RunConfig&) const = default;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_int(const std::string& key, const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  // strtod rather than from_chars: g++ 11 lacks the floating-point overload.
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

struct Field {
  std::string key;
  std::string doc;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <class T>
Field integer(std::string key, std::string doc, T& ref) {
  return {key, std::move(doc), [&ref] { return std::to_string(ref); },
          [&ref, key](const std::string& v) { ref = parse_int<T>(key, v); }};
}
inline Field real(std::string key, std::string doc, double& ref) {
  return {key, std::move(doc), [&ref] { return fmt_double(ref); },
          [&ref, key](const std::string& v) { ref = parse_double(key, v); }};
}
inline Field boolean(std::string key, std::string doc, bool& ref) {
  return {key, std::move(doc), [&ref] { return std::string(ref ? "true" : "false"); },
          [&ref, key](const std::string& v) { ref = parse_bool(key, v); }};
}
inline Field text(std::string key, std::string doc, std::string& ref) {
  return {key, std::move(doc), [&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }};
}
template <class E>
Field choice(std::string key, std::string doc, E& ref, std::vector<std::pair<std::string, E>> names) {
  return {key, std::move(doc),
          [&ref, names] {
            for (const auto& [n, e] : names)
              if (e == ref) return n;
            return std::string("?");
          },
          [&ref, names, key](const std::string& v) {
            for (const auto& [n, e] : names)
              if (n == v) {
                ref = e;
                return;
              }
            std::string allowed;
            for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : "|") + n;
            throw ConfigError(key + ": expected one of " + allowed + ", got '" + v + "'");
          }};
}
inline Field widths(std::string key, std::string doc, std::vector<std::size_t>& ref) {
  return {key, std::move(doc),
          [&ref] {
            std::string s;
            for (std::size_t i = 0; i < ref.size(); ++i) s += (i ? "," : "") + std::to_string(ref[i]);
            return s;
          },
          [&ref, key](const std::string& v) {
            std::vector<std::size_t> out;
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ',')) out.push_back(parse_int<std::size_t>(key, trim(item)));
            if (out.empty()) throw ConfigError(key + ": at least one width is required");
            ref = std::move(out);
          }};
}

inline void recipe_fields(std::vector<Field>& f, const std::string& p, AugmentRecipe& r) {
  f.push_back(integer(p + ".crop_padding", "reflective padding before the random crop, pixels", r.crop_padding));
  f.push_back(real(p + ".flip_prob", "horizontal flip probability", r.flip_prob));
  f.push_back(real(p + ".jitter", "colour distortion strength in [0, 1]", r.jitter));
  f.push_back(integer(p + ".blur_kernel", "Gaussian blur width (odd, 0 disables)", r.blur_kernel));
  f.push_back(real(p + ".blur_prob", "blur probability", r.blur_prob));
  f.push_back(real(p + ".grayscale_prob", "grayscale probability", r.grayscale_prob));
  f.push_back(real(p + ".rotation_degrees", "maximum random rotation, degrees", r.rotation_degrees));
  f.push_back(real(p + ".noise_stddev", "additive Gaussian noise for non-image features", r.noise_stddev));
}

inline std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f;
  auto& d = c.data;
  f.push_back(text("data.source", "synthetic | cifar10", d.source));
  f.push_back(choice("data.kind", "synthetic generator: mini_image | blobs | ring", d.synthetic.kind,
                     {{"mini_image", SyntheticKind::mini_image}, {"blobs", SyntheticKind::blobs}, {"ring", SyntheticKind::ring}}));
  f.push_back(integer("data.classes", "synthetic class count", d.synthetic.classes));
  f.push_back(integer("data.samples", "synthetic training samples", d.synthetic.samples));
  f.push_back(integer("data.test_samples", "synthetic test samples", d.test_samples));
  f.push_back(real("data.separation", "class separation (larger is easier)", d.synthetic.separation));
  f.push_back(integer("data.seed", "training-set generator seed", d.synthetic.seed));
  f.push_back(integer("data.test_seed", "test-set generator seed", d.test_seed));
  f.push_back(integer("data.dims", "blobs feature width", d.synthetic.dims));
  f.push_back(integer("data.image_size", "mini_image height and width", d.synthetic.image_size));
  f.push_back(integer("data.channels", "mini_image channels", d.synthetic.channels));
  f.push_back(text("data.cifar_train", "comma-separated CIFAR-10 training batch files", d.cifar_train));
  f.push_back(text("data.cifar_test", "CIFAR-10 test batch file", d.cifar_test));
  f.push_back(text("data.train_file", "NLAB training container written by make-data", d.train_file));
  f.push_back(text("data.test_file", "NLAB test container written by make-data", d.test_file));

  auto& n = c.noise;
  f.push_back(choice("noise.type", "none | symmetric | asymmetric-pair | asymmetric-circular", n.type,
                     {{"none", NoiseType::none},
                      {"symmetric", NoiseType::symmetric},
                      {"asymmetric-pair", NoiseType::asymmetric_pair},
                      {"asymmetric-circular", NoiseType::asymmetric_circular}}));
  f.push_back(real("noise.ratio", "noise rate eta in [0, 1]", n.ratio));
  f.push_back(integer("noise.seed", "noise injection seed", n.seed));
  f.push_back(text("noise.pairs", "asymmetric-pair flips as src:dst,...; empty uses the default map", n.pairs));
  f.push_back(integer("noise.group_size", "asymmetric-circular super-class size", n.group_size));

  auto& p = c.phase;
  f.push_back(integer("seed", "experiment seed (initialisation, shuffling, augmentation)", p.seed));
  f.push_back(boolean("pretrain", "run contrastive pre-training before the classifier", p.pretrain));
  f.push_back(widths("model.encoder_widths", "encoder hidden widths, comma-separated", p.architecture.encoder_widths));
  f.push_back(integer("model.projection_hidden", "projection head hidden width", p.architecture.projection_hidden));
  f.push_back(integer("model.projection_out", "embedding width", p.architecture.projection_out));
  f.push_back(integer("model.classifier_hidden", "classifier head hidden width", p.architecture.classifier_hidden));
  f.push_back(boolean("model.batchnorm", "batch normalisation in the classifier head", p.architecture.classifier_batchnorm));

  auto& ct = p.contrastive;
  f.push_back(integer("contrastive.epochs", "contrastive epochs", ct.epochs));
  f.push_back(integer("contrastive.batch", "contrastive batch size (samples; two views each)", ct.batch));
  f.push_back(real("contrastive.lr", "Adam learning rate", ct.lr));
  f.push_back(real("contrastive.weight_decay", "Adam weight decay", ct.weight_decay));
  f.push_back(real("contrastive.temperature", "softmax temperature", ct.temperature));
  recipe_fields(f, "contrastive", ct.recipe);

  auto& cl = p.classifier;
  f.push_back(integer("classifier.warmup_epochs", "epochs with a frozen encoder (pretrained encoders only)", cl.warmup_epochs));
  f.push_back(integer("classifier.epochs", "classifier epochs including warm-up", cl.epochs));
  f.push_back(integer("classifier.batch", "classifier batch size", cl.batch));
  f.push_back(real("classifier.lr", "SGD learning rate (also used during warm-up)", cl.lr));
  f.push_back(real("classifier.momentum", "SGD momentum", cl.momentum));
  f.push_back(real("classifier.weight_decay", "SGD weight decay", cl.weight_decay));
  f.push_back(choice("classifier.loss", "ce | nfl+rce | elr", cl.loss,
                     {{"ce", LossKind::ce}, {"nfl+rce", LossKind::nfl_rce}, {"elr", LossKind::elr}}));
  f.push_back(real("classifier.gamma", "focal exponent", cl.robust.gamma));
  f.push_back(real("classifier.alpha", "NFL weight", cl.robust.alpha));
  f.push_back(real("classifier.beta", "RCE weight", cl.robust.beta));
  f.push_back(real("classifier.log_clamp", "RCE stand-in for log 0", cl.robust.log_clamp));
  f.push_back(real("classifier.elr_lambda", "ELR regulariser weight", cl.elr_lambda));
  f.push_back(real("classifier.elr_momentum", "ELR target momentum", cl.elr_momentum));
  f.push_back(boolean("classifier.augment", "augment image inputs during classification", cl.augment));
  recipe_fields(f, "classifier", cl.recipe);

  f.push_back(real("selection.threshold", "clean-probability threshold for subset diagnostics", p.selection.threshold));
  f.push_back(integer("selection.max_iter", "EM iteration cap", p.selection.gmm.max_iter));
  f.push_back(real("selection.tol", "EM log-likelihood tolerance", p.selection.gmm.tol));
  f.push_back(real("selection.variance_floor", "EM variance floor on normalised losses", p.selection.gmm.variance_floor));

  f.push_back(text("bootstrap.targets", "labels fitted by the bootstrap stage: pseudo | noisy", c.bootstrap_targets));
  f.push_back(text("out", "output directory", c.out));
  return f;
}

}  // namespace config_detail

inline std::string render(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::string s;
  for (const auto& f : config_detail::fields(copy)) s += "# " + f.doc + "\n" + f.key + " = " + f.get() + "\n";
  return s;
}

/// Applies `key = value` lines on top of `base`. Errors name the line number.
inline RunConfig parse_config(std::string_view text, RunConfig base = {}) {
  auto fields = config_detail::fields(base);
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = config_detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = config_detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = config_detail::trim(std::string_view(body).substr(eq + 1));
    auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.key == key; });
    if (it == fields.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->set(value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

/// Parses "src:dst,..." into a per-class target list (-1 where unmapped).
inline AsymmetricMap noise_map(const NoiseConfig& n, std::size_t class_count) {
  if (n.type == NoiseType::asymmetric_circular) return AsymmetricMap::circular(n.group_size);
  if (n.pairs.empty()) return AsymmetricMap::default_pairs(class_count);
  AsymmetricMap m;
  m.targets.assign(class_count, -1);
  std::stringstream ss(n.pairs);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("noise.pairs: expected src:dst, got '" + item + "'");
    const auto src = config_detail::parse_int<std::size_t>("noise.pairs", config_detail::trim(item.substr(0, colon)));
    const auto dst = config_detail::parse_int<int>("noise.pairs", config_detail::trim(item.substr(colon + 1)));
    if (src >= class_count) throw ConfigError("noise.pairs: source class " + std::to_string(src) + " out of range");
    m.targets[src] = dst;
  }
  return m;
}

inline void validate(const RunConfig& c) {
  try {
    c.phase.validate();
    if (c.data.source != "synthetic" && c.data.source != "cifar10")
      throw ConfigError("data.source: expected synthetic or cifar10, got '" + c.data.source + "'");
    if (c.noise.ratio < 0.0 || c.noise.ratio > 1.0) throw ConfigError("noise.ratio must lie in [0, 1]");
    if (c.phase.selection.threshold <= 0.0 || c.phase.selection.threshold >= 1.0)
      throw ConfigError("selection.threshold must lie in (0, 1)");
    if (c.bootstrap_targets != "pseudo" && c.bootstrap_targets != "noisy")
      throw ConfigError("bootstrap.targets: expected pseudo or noisy, got '" + c.bootstrap_targets + "'");
    if (c.out.empty()) throw ConfigError("out must not be empty");
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace nlab
