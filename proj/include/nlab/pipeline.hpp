// The two-phase training framework.
//
//   phase a:  contrastive pre-training (NT-Xent)  ->  classifier on noisy labels
//             (warm-up with a frozen encoder, then full training)  ->  pseudo-labels
//   phase b:  GMM over per-sample losses vs pseudo-labels  ->  weighted supervised
//             contrastive training  ->  classifier on pseudo-labels
//
// Dynamic bootstrapping with mixup is offered as an alternative to phase b.
//
// Training code only ever sees a TrainingView (features + the targets it is
// allowed to fit). Clean labels reach this file exclusively through
// Diagnostics, which feeds the metric records.
#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlab/contrastive.hpp"
#include "nlab/core.hpp"
#include "nlab/data.hpp"
#include "nlab/losses.hpp"
#include "nlab/nn.hpp"
#include "nlab/optim.hpp"
#include "nlab/selection.hpp"
#include "nlab/tensor.hpp"

namespace nlab {

enum class LossKind { ce, nfl_rce, elr };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::ce: return "ce";
    case LossKind::nfl_rce: return "nfl+rce";
    case LossKind::elr: return "elr";
  }
  return "?";
}

struct ArchitectureConfig {
  std::vector<std::size_t> encoder_widths = {128, 64};
  std::size_t projection_hidden = 64;
  std::size_t projection_out = 32;
  std::size_t classifier_hidden = 64;
  bool classifier_batchnorm = true;

  NetworkSpec spec(std::size_t input_width, std::size_t class_count) const {
    NetworkSpec s;
    s.input_width = input_width;
    for (auto w : encoder_widths) s.encoder_layers.push_back({w, Activation::relu});
    s.projection_hidden = projection_hidden;
    s.projection_out = projection_out;
    s.classifier_hidden = classifier_hidden;
    s.class_count = class_count;
    s.use_batchnorm_in_classifier = classifier_batchnorm;
    return s;
  }

  bool operator==(const ArchitectureConfig&) const = default;
};

struct ContrastiveConfig {
  std::size_t epochs = 100;
  std::size_t batch = 128;
  double lr = 1e-3;
  double weight_decay = 1e-6;
  double temperature = 0.5;
  AugmentRecipe recipe = AugmentRecipe::contrastive();

  bool operator==(const ContrastiveConfig&) const = default;
};

struct ClassifierConfig {
  std::size_t warmup_epochs = 10;
  std::size_t epochs = 60;
  std::size_t batch = 64;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  LossKind loss = LossKind::elr;
  RobustLossConfig robust;
  double elr_lambda = 3.0;
  double elr_momentum = 0.7;
  bool augment = true;
  AugmentRecipe recipe = AugmentRecipe::classification();

  bool operator==(const ClassifierConfig&) const = default;
};

struct SelectionConfig {
  double threshold = 0.5;
  GmmOptions gmm;

  bool operator==(const SelectionConfig&) const = default;
};

struct PhaseConfig {
  ArchitectureConfig architecture;
  ContrastiveConfig contrastive;
  ClassifierConfig classifier;
  SelectionConfig selection;
  bool pretrain = true;  // false: classifier from a fresh encoder (the baseline)
  std::uint64_t seed = 1;

  void validate() const {
    require(contrastive.epochs >= 1 && classifier.epochs >= 1, "epoch budgets must be >= 1");
    require(contrastive.batch >= 2, "contrastive batch must be >= 2");
    require(classifier.batch >= 2, "classifier batch must be >= 2");
    require(classifier.warmup_epochs <= classifier.epochs, "warm-up epochs cannot exceed the classifier budget");
    require(contrastive.temperature > 0.0, "temperature must be positive");
    require(contrastive.lr >= 0.0 && classifier.lr >= 0.0, "learning rates must be nonnegative");
    classifier.robust.validate();
    contrastive.recipe.validate();
    classifier.recipe.validate();
  }

  bool operator==(const PhaseConfig&) const = default;
};

/// Features plus the only labels a training routine may fit.
struct TrainingView {
  const Tensor* features = nullptr;
  ImageShape image;
  std::span<const int> targets;
  std::size_t class_count = 0;

  std::size_t size() const { return features ? features->rows() : 0; }
};

inline TrainingView noisy_view(const LabeledDataset& d) { return {&d.features, d.image, d.noisy_labels, d.class_count}; }

/// Ground truth for metric records. Never consulted by optimisation.
struct Diagnostics {
  const LabeledDataset* train = nullptr;
  const LabeledDataset* test = nullptr;
  double threshold = 0.5;
  GmmOptions gmm;
};

struct EpochRecord {
  std::string phase;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  double train_loss = 0.0;
  std::optional<double> train_top1_vs_noisy;
  std::optional<double> train_top1_vs_clean;
  std::optional<double> train_top1_vs_targets;
  std::optional<double> test_top1;
  std::optional<double> pseudo_label_accuracy;
  std::optional<double> clean_subset_size;
  std::optional<double> clean_subset_accuracy;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j = {{"phase", r.phase}, {"epoch", r.epoch}, {"seed", r.seed}, {"train_loss", r.train_loss}};
  auto opt = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  opt("train_top1_vs_noisy", r.train_top1_vs_noisy);
  opt("train_top1_vs_clean", r.train_top1_vs_clean);
  opt("train_top1_vs_targets", r.train_top1_vs_targets);
  opt("test_top1", r.test_top1);
  opt("pseudo_label_accuracy", r.pseudo_label_accuracy);
  opt("clean_subset_size", r.clean_subset_size);
  opt("clean_subset_accuracy", r.clean_subset_accuracy);
  return j;
}

/// Append-only metric stream. `sink`, when set, sees each record as it lands.
class ExperimentResult {
 public:
  std::function<void(const EpochRecord&)> sink;
  std::vector<std::string> warnings;

  void append(EpochRecord r) {
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->phase != r.phase) continue;
      if (r.epoch <= it->epoch) throw ContractViolation("epoch records must increase within a phase");
      break;
    }
    records_.push_back(std::move(r));
    if (sink) sink(records_.back());
  }
  const std::vector<EpochRecord>& records() const { return records_; }
  const EpochRecord* last(const std::string& phase) const {
    for (auto it = records_.rbegin(); it != records_.rend(); ++it)
      if (it->phase == phase) return &*it;
    return nullptr;
  }

 private:
  std::vector<EpochRecord> records_;
};

/// Fraction of rows whose argmax equals `labels[i]` (ties toward the smallest index).
inline double evaluate_top1(const Network& net, const Tensor& features, std::span<const int> labels) {
  require(features.rows() == labels.size(), "label count does not match feature rows");
  if (labels.empty()) return 0.0;
  const auto pred = argmax_rows(predict_probabilities(net, features));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

inline double label_agreement(std::span<const int> a, std::span<const int> b) {
  require(a.size() == b.size(), "label tracks differ in length");
  if (a.empty()) return 1.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i];
  return static_cast<double>(hit) / static_cast<double>(a.size());
}

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t tag, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = stream(seed, tag, epoch);
  shuffle(order, rng);
  return order;
}

/// Rows `idx` of the view, each augmented from its own (seed, tag, epoch, sample, view) stream.
inline Tensor augmented_rows(const TrainingView& data, std::span<const std::size_t> idx, const AugmentRecipe& recipe,
                             std::uint64_t seed, std::uint64_t tag, std::size_t epoch, std::uint64_t view) {
  const std::size_t w = data.features->cols();
  Tensor out = Tensor::matrix(idx.size(), w);
  parallel::for_each_index(idx.size(), 16, [&](std::size_t r) {
    Rng rng = stream(seed ^ (tag << 32), epoch, idx[r], view);
    const auto v = augment(data.features->row(idx[r]), data.image, recipe, rng);
    std::copy(v.begin(), v.end(), out.row(r).begin());
  });
  return out;
}

inline std::vector<std::size_t> concat(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

constexpr std::uint64_t kContrastiveTag = 0xc0;
constexpr std::uint64_t kClassifierTag = 0xc1;
constexpr std::uint64_t kMixupTag = 0xc2;

}  // namespace detail

enum class ContrastiveMode { unsupervised, supervised, weighted_supervised };

struct ContrastiveTargets {
  ContrastiveMode mode = ContrastiveMode::unsupervised;
  std::span<const int> labels;     // per training sample
  std::span<const double> weights;  // per training sample, weighted mode only
};

/// Optimises the encoder and projection head with Adam over two augmented views per sample.
/// Returns the per-epoch mean loss.
inline std::vector<double> pretrain_contrastive(Network& net, const TrainingView& data, const ContrastiveConfig& cfg,
                                                const ContrastiveTargets& targets, std::uint64_t seed,
                                                ExperimentResult* result = nullptr, const std::string& phase = "contrastive") {
  require(data.size() > 0, "contrastive pre-training needs a nonempty dataset");
  if (targets.mode != ContrastiveMode::unsupervised) require(targets.labels.size() == data.size(), "one label per sample is required");
  if (targets.mode == ContrastiveMode::weighted_supervised) require(targets.weights.size() == data.size(), "one weight per sample is required");
  OptimizerConfig oc;
  oc.kind = OptimizerKind::adam;
  oc.base_lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  oc.epoch_budget = cfg.epochs;
  Optimizer opt(oc);
  const auto active = detail::concat(net.param_indices(Head::encoder), net.param_indices(Head::projection));

  std::vector<double> epoch_losses;
  const std::size_t n = data.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::epoch_order(n, seed, detail::kContrastiveTag, epoch);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 2 <= n; start += cfg.batch) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + cfg.batch)));
      if (idx.size() < 2) break;
      const std::size_t b = idx.size();
      Tensor views = Tensor::matrix(2 * b, data.features->cols());
      const Tensor v0 = detail::augmented_rows(data, idx, cfg.recipe, seed, detail::kContrastiveTag, epoch, 0);
      const Tensor v1 = detail::augmented_rows(data, idx, cfg.recipe, seed, detail::kContrastiveTag, epoch, 1);
      std::copy(v0.data.begin(), v0.data.end(), views.data.begin());
      std::copy(v1.data.begin(), v1.data.end(), views.data.begin() + static_cast<std::ptrdiff_t>(v0.size()));

      auto fwd = net.forward(views, Head::projection, Mode::train);
      const Normalized unit = l2_normalize(fwd.output);
      EmbeddingBatch eb{unit.unit, two_view_pairs(b)};
      std::vector<int> row_labels;
      std::vector<double> row_weights;
      if (targets.mode != ContrastiveMode::unsupervised) {
        for (int v = 0; v < 2; ++v)
          for (auto i : idx) row_labels.push_back(targets.labels[i]);
      }
      if (targets.mode == ContrastiveMode::weighted_supervised) {
        for (int v = 0; v < 2; ++v)
          for (auto i : idx) row_weights.push_back(targets.weights[i]);
      }
      ContrastiveValue loss;
      switch (targets.mode) {
        case ContrastiveMode::unsupervised: loss = nt_xent(eb, cfg.temperature); break;
        case ContrastiveMode::supervised: loss = sup_con(eb, row_labels, cfg.temperature); break;
        case ContrastiveMode::weighted_supervised: loss = weighted_sup_con(eb, row_labels, row_weights, cfg.temperature); break;
      }
      if (!std::isfinite(loss.value)) throw NumericFailure("contrastive loss diverged at epoch " + std::to_string(epoch));
      const auto grads = net.backward(fwd.cache, l2_normalize_backward(unit, loss.grad));
      opt.step(net.params(), grads.params, static_cast<double>(epoch), active);
      total += loss.value;
      ++batches;
    }
    const double mean = batches ? total / static_cast<double>(batches) : 0.0;
    epoch_losses.push_back(mean);
    if (result) {
      EpochRecord r;
      r.phase = phase;
      r.epoch = epoch;
      r.seed = seed;
      r.train_loss = mean;
      result->append(std::move(r));
    }
  }
  return epoch_losses;
}

/// Settings that switch classifier training to dynamic bootstrapping with mixup.
struct BootstrapSettings {
  std::span<const double> weights;  // clean probability per training sample
  bool self_pairing = false;        // pair every sample with itself (degenerate mixup)
};

struct ClassifierRun {
  bool pretrained_encoder = true;
  const BootstrapSettings* bootstrap = nullptr;
  const Diagnostics* diagnostics = nullptr;
  std::string phase = "classifier";
};

namespace detail {

/// Loss of one row against one (label, weight, hard prediction, elr index) tuple.
struct RowTarget {
  int label;
  double weight;
  int hard_pred;
  std::size_t index;
};

inline LossValue bootstrap_row_loss(const Tensor& row_probs, const RowTarget& t, const ClassifierConfig& cfg,
                                    const ElrState* elr) {
  const int label[1] = {t.label};
  const double weight[1] = {t.weight};
  const int hard[1] = {t.hard_pred};
  const std::size_t index[1] = {t.index};
  switch (cfg.loss) {
    case LossKind::ce: return loss_ce_bootstrap(row_probs, label, weight, hard);
    case LossKind::nfl_rce: return loss_nfl_rce_bootstrap(row_probs, label, weight, hard, cfg.robust);
    case LossKind::elr: return loss_elr_bootstrap(row_probs, label, weight, hard, *elr, index);
  }
  return {};
}

}  // namespace detail

/// Supervised classification: `warmup_epochs` updating only the classifier head
/// (pretrained encoders only), then the full model, SGD with momentum on a
/// cosine schedule. ELR targets live for the duration of this call.
inline void train_classifier(Network& net, const TrainingView& data, const ClassifierConfig& cfg, const ClassifierRun& run,
                             std::uint64_t seed, ExperimentResult& result) {
  const std::size_t n = data.size();
  require(n >= 2, "classifier training needs at least two samples");
  require(data.targets.size() == n, "one target per sample is required");
  require(data.class_count == net.spec().class_count, "class count does not match the network");
  if (run.bootstrap) require(run.bootstrap->weights.size() == n, "one bootstrap weight per sample is required");
  OptimizerConfig oc;
  oc.kind = OptimizerKind::sgd_momentum;
  oc.base_lr = cfg.lr;
  oc.momentum = cfg.momentum;
  oc.weight_decay = cfg.weight_decay;
  oc.epoch_budget = cfg.epochs;
  Optimizer opt(oc);
  const auto head_only = net.param_indices(Head::classifier);
  const auto full = detail::concat(net.param_indices(Head::encoder), head_only);
  const std::size_t warmup = run.pretrained_encoder ? cfg.warmup_epochs : 0;
  std::optional<ElrState> elr;
  if (cfg.loss == LossKind::elr) elr.emplace(n, data.class_count, cfg.elr_lambda, cfg.elr_momentum);
  const bool augment_images = cfg.augment && data.image.is_image();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool frozen = epoch < warmup;
    const auto order = detail::epoch_order(n, seed, detail::kClassifierTag, epoch);
    Rng pair_rng = stream(seed, detail::kMixupTag, epoch);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + cfg.batch)));
      if (idx.size() < 2) break;  // batch normalisation needs two rows
      const std::size_t b = idx.size();
      Tensor x = augment_images ? detail::augmented_rows(data, idx, cfg.recipe, seed, detail::kClassifierTag, epoch, 0)
                                : gather_rows(*data.features, idx);
      std::vector<int> labels(b);
      for (std::size_t r = 0; r < b; ++r) labels[r] = data.targets[idx[r]];

      LossValue loss;
      ForwardResult fwd;
      if (!run.bootstrap) {
        fwd = net.forward(x, Head::classifier, Mode::train);
        if (elr) elr->update_targets(idx, fwd.output);
        switch (cfg.loss) {
          case LossKind::ce: loss = loss_ce(fwd.output, labels); break;
          case LossKind::nfl_rce: loss = loss_nfl_rce(fwd.output, labels, cfg.robust); break;
          case LossKind::elr: loss = loss_elr(fwd.output, labels, *elr, idx); break;
        }
      } else {
        // Hard predictions and ELR targets come from the un-mixed views.
        const Tensor plain = net.forward(x, Head::classifier).output;
        const auto hard = argmax_rows(plain);
        if (elr) elr->update_targets(idx, plain);
        std::vector<std::size_t> partner(b);
        for (std::size_t r = 0; r < b; ++r) {
          if (run.bootstrap->self_pairing) {
            partner[r] = r;
          } else {
            std::size_t q = uniform_index(pair_rng, b - 1);
            partner[r] = q >= r ? q + 1 : q;
          }
        }
        Tensor mixed = zeros_like(x);
        std::vector<MixupCoefficients> coef(b);
        for (std::size_t r = 0; r < b; ++r) {
          const double wp = run.bootstrap->weights[idx[r]], wq = run.bootstrap->weights[idx[partner[r]]];
          coef[r] = mixup_coefficients(wp, wq);
          const auto m = mixup_pair(x.row(r), x.row(partner[r]), wp, wq);
          std::copy(m.begin(), m.end(), mixed.row(r).begin());
        }
        fwd = net.forward(mixed, Head::classifier, Mode::train);
        loss = LossValue{0.0, zeros_like(fwd.output)};
        const double inv_b = 1.0 / static_cast<double>(b);
        for (std::size_t r = 0; r < b; ++r) {
          const std::size_t rows[1] = {r};
          const Tensor p = gather_rows(fwd.output, rows);
          const std::size_t q = partner[r];
          const auto lp = detail::bootstrap_row_loss(p, {labels[r], run.bootstrap->weights[idx[r]], hard[r], idx[r]}, cfg, elr ? &*elr : nullptr);
          const auto lq = detail::bootstrap_row_loss(p, {labels[q], run.bootstrap->weights[idx[q]], hard[q], idx[q]}, cfg, elr ? &*elr : nullptr);
          loss.value += (coef[r].first * lp.value + coef[r].second * lq.value) * inv_b;
          for (std::size_t k = 0; k < p.cols(); ++k)
            loss.grad(r, k) = (coef[r].first * lp.grad.data[k] + coef[r].second * lq.grad.data[k]) * inv_b;
        }
      }
      if (!std::isfinite(loss.value)) throw NumericFailure("classifier loss diverged at epoch " + std::to_string(epoch));
      const auto grads = net.backward(fwd.cache, loss.grad, frozen ? BackwardScope::head_only : BackwardScope::full);
      opt.step(net.params(), grads.params, static_cast<double>(epoch), frozen ? head_only : full);
      total += loss.value;
      ++batches;
    }

    EpochRecord rec;
    rec.phase = run.phase;
    rec.epoch = epoch;
    rec.seed = seed;
    rec.train_loss = batches ? total / static_cast<double>(batches) : 0.0;
    const Tensor probs = predict_probabilities(net, *data.features);
    const auto pred = argmax_rows(probs);
    rec.train_top1_vs_targets = label_agreement(pred, data.targets);
    if (const Diagnostics* dg = run.diagnostics) {
      if (dg->train) {
        rec.train_top1_vs_noisy = label_agreement(pred, dg->train->noisy_labels);
        rec.train_top1_vs_clean = label_agreement(pred, dg->train->clean_labels);
        try {
          const auto fit = fit_gmm2(per_sample_ce(probs, data.targets), dg->gmm);
          const auto w = posterior_weights(fit, per_sample_ce(probs, data.targets));
          const auto m = clean_subset_metrics(w, dg->threshold, data.targets, dg->train->clean_labels);
          rec.clean_subset_size = m.size_fraction;
          if (m.accuracy_defined) rec.clean_subset_accuracy = m.accuracy;
        } catch (const DegenerateInput&) {
        }
      }
      if (dg->test && dg->test->size() > 0) rec.test_top1 = evaluate_top1(net, dg->test->features, dg->test->clean_labels);
    }
    result.append(std::move(rec));
  }
}

struct SelectionOutcome {
  std::vector<double> weights;
  std::optional<GmmFit> fit;
  bool degenerate = false;
};

/// Per-sample CE vs `targets` under `net`, fitted with the two-component mixture.
/// A degenerate loss distribution yields all-ones weights.
inline SelectionOutcome select_samples(const Network& net, const Tensor& features, std::span<const int> targets,
                                       const GmmOptions& gmm) {
  SelectionOutcome out;
  const auto losses = sample_losses(net, features, targets);
  try {
    out.fit = fit_gmm2(losses, gmm);
    out.weights = posterior_weights(*out.fit, losses);
  } catch (const DegenerateInput&) {
    out.degenerate = true;
    out.weights.assign(losses.size(), 1.0);
  }
  return out;
}

struct PhaseAOutput {
  Network network;
  PseudoLabels pseudo;
};

/// Phase a1 alone: a fresh network whose encoder and projection head went through
/// unsupervised contrastive training.
inline Network pretrain_encoder(const TrainingView& data, const PhaseConfig& cfg, ExperimentResult* result = nullptr) {
  cfg.validate();
  Network net(cfg.architecture.spec(data.features->cols(), data.class_count), cfg.seed);
  pretrain_contrastive(net, data, cfg.contrastive, {}, cfg.seed, result, "a1-contrastive");
  return net;
}

/// Contrastive pre-training (unless cfg.pretrain is false), classifier on the
/// noisy labels, then train-set pseudo-labels. A `pretrained` network from
/// pretrain_encoder with the same config stands in for phase a1.
inline PhaseAOutput run_pretraining_phase(const TrainingView& data, const PhaseConfig& cfg, ExperimentResult& result,
                                          const Diagnostics* diagnostics = nullptr, const Network* pretrained = nullptr) {
  cfg.validate();
  PhaseAOutput out{Network(cfg.architecture.spec(data.features->cols(), data.class_count), cfg.seed), {}};
  if (cfg.pretrain && pretrained) {
    require(pretrained->spec().class_count == data.class_count, "pretrained network does not match the dataset");
    out.network = *pretrained;
  } else if (cfg.pretrain) {
    out.network = pretrain_encoder(data, cfg, &result);
  }
  ClassifierRun run;
  run.pretrained_encoder = cfg.pretrain;
  run.diagnostics = diagnostics;
  run.phase = "a2-classifier";
  train_classifier(out.network, data, cfg.classifier, run, cfg.seed + 1, result);
  out.pseudo = generate_pseudo_labels(out.network, *data.features, cfg.classifier.epochs);
  if (diagnostics && diagnostics->train) out.pseudo.accuracy = label_agreement(out.pseudo.labels, diagnostics->train->clean_labels);
  return out;
}

struct PhaseBOutput {
  Network network;
  SelectionOutcome selection;
  PseudoLabels final_predictions;
};

/// Fine-tuning on pseudo-labels: mixture weights from the phase-a network's
/// losses, weighted supervised contrastive training from the phase-a encoder with
/// a fresh projection head, then a fresh classifier head trained on the pseudo-labels.
inline PhaseBOutput run_finetuning_phase(const Tensor& features, const ImageShape& image, std::span<const int> pseudo_labels,
                                         const Network& phase_a, const PhaseConfig& cfg, ExperimentResult& result,
                                         const Diagnostics* diagnostics = nullptr) {
  cfg.validate();
  require(pseudo_labels.size() == features.rows(), "pseudo-labels must cover the training set");
  const TrainingView view{&features, image, pseudo_labels, phase_a.spec().class_count};
  PhaseBOutput out{phase_a, select_samples(phase_a, features, pseudo_labels, cfg.selection.gmm), {}};
  if (out.selection.degenerate) result.warnings.push_back("degenerate loss distribution: all sample weights set to 1");
  if (diagnostics && diagnostics->train) {
    const auto m = clean_subset_metrics(out.selection.weights, cfg.selection.threshold, pseudo_labels, diagnostics->train->clean_labels);
    EpochRecord r;
    r.phase = "b1-selection";
    r.seed = cfg.seed;
    r.pseudo_label_accuracy = label_agreement(pseudo_labels, diagnostics->train->clean_labels);
    r.clean_subset_size = m.size_fraction;
    if (m.accuracy_defined) r.clean_subset_accuracy = m.accuracy;
    result.append(std::move(r));
  }
  out.network.reinitialize(Head::projection, cfg.seed + 2);
  ContrastiveTargets targets{ContrastiveMode::weighted_supervised, pseudo_labels, out.selection.weights};
  pretrain_contrastive(out.network, view, cfg.contrastive, targets, cfg.seed + 3, &result, "b2-weighted-supcon");
  out.network.reinitialize(Head::classifier, cfg.seed + 4);
  ClassifierRun run;
  run.pretrained_encoder = true;
  run.diagnostics = diagnostics;
  run.phase = "b3-classifier";
  train_classifier(out.network, view, cfg.classifier, run, cfg.seed + 5, result);
  out.final_predictions = generate_pseudo_labels(out.network, features, cfg.classifier.epochs);
  return out;
}

/// Dynamic bootstrapping with mixup after phase a: the phase-a encoder with a
/// fresh classifier head, trained on `targets` with weight-driven mixup and the
/// bootstrapped version of the configured loss.
inline Network run_bootstrap_variant(const TrainingView& data, std::span<const double> weights, const Network& phase_a,
                                     const PhaseConfig& cfg, ExperimentResult& result,
                                     const Diagnostics* diagnostics = nullptr, bool self_pairing = false) {
  cfg.validate();
  Network net = phase_a;
  net.reinitialize(Head::classifier, cfg.seed + 6);
  BootstrapSettings bs{weights, self_pairing};
  ClassifierRun run;
  run.pretrained_encoder = true;
  run.bootstrap = &bs;
  run.diagnostics = diagnostics;
  run.phase = "bootstrap-classifier";
  train_classifier(net, data, cfg.classifier, run, cfg.seed + 7, result);
  return net;
}

}  // namespace nlab
