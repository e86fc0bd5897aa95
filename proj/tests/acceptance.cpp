// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Trend criteria (5-8) train real models and take tens of minutes on one core.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "nlab/config.hpp"
#include "nlab/contrastive.hpp"
#include "nlab/gradcheck.hpp"
#include "nlab/pipeline.hpp"
#include "support.hpp"

using namespace nlab;
using namespace nlab::testing;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- criterion 1

double logit_grad_error(const std::function<LossValue(const Tensor&)>& loss, Tensor logits) {
  const LossValue at = loss(softmax(logits));
  Tensor* vars[] = {&logits};
  return gradient_check([&] { return loss(softmax(logits)).value; }, vars, std::span<const Tensor>(&at.grad, 1))
      .max_relative_error;
}

double raw_grad_error(const std::function<ContrastiveValue(const EmbeddingBatch&)>& loss, Tensor raw,
                      const std::vector<std::size_t>& pair) {
  const Normalized n = l2_normalize(raw);
  const Tensor analytic = l2_normalize_backward(n, loss({n.unit, pair}).grad);
  Tensor* vars[] = {&raw};
  return gradient_check([&] { return loss({l2_normalize(raw).unit, pair}).value; }, vars,
                        std::span<const Tensor>(&analytic, 1))
      .max_relative_error;
}

std::vector<int> twice(const std::vector<int>& v) {
  auto out = v;
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

std::vector<double> twice(const std::vector<double>& v) {
  auto out = v;
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

Verdict gradients() {
  constexpr int kTrials = 25;
  const char* names[] = {"CE",      "NFL",        "RCE",     "NFL+RCE", "ELR",     "boot-CE",
                         "boot-ELR", "boot-NFL+RCE", "NT-Xent", "SupCon",  "wSupCon"};
  std::vector<double> worst(std::size(names), 0.0);
  RobustLossConfig cfg{.gamma = 0.5, .alpha = 1.0, .beta = 1.0, .log_clamp = -4};
  for (std::uint64_t t = 0; t < kTrials; ++t) {
    Rng rng = stream(0xacc1, t);
    const std::size_t n = 2 + uniform_index(rng, 6), k = 2 + uniform_index(rng, 8);
    const Tensor logits = random_matrix(n, k, rng, 1.5);
    const auto y = random_labels(n, k, rng);
    const auto w = random_weights(n, rng);
    const auto z = argmax_rows(softmax(logits));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = n - 1 - i;
    ElrState s(n, k, uniform(rng, 0.5, 5.0));
    s.update_targets(idx, random_probs(n, k, rng));
    const std::function<LossValue(const Tensor&)> losses[] = {
        [&](const Tensor& p) { return loss_ce(p, y); },
        [&](const Tensor& p) { return loss_nfl(p, y, cfg); },
        [&](const Tensor& p) { return loss_rce(p, y, cfg); },
        [&](const Tensor& p) { return loss_nfl_rce(p, y, cfg); },
        [&](const Tensor& p) { return loss_elr(p, y, s, idx); },
        [&](const Tensor& p) { return loss_ce_bootstrap(p, y, w, z); },
        [&](const Tensor& p) { return loss_elr_bootstrap(p, y, w, z, s, idx); },
        [&](const Tensor& p) { return loss_nfl_rce_bootstrap(p, y, w, z, cfg); },
    };
    for (std::size_t j = 0; j < std::size(losses); ++j) worst[j] = std::max(worst[j], logit_grad_error(losses[j], logits));

    const std::size_t sources = 2 + uniform_index(rng, 5), dim = 2 + uniform_index(rng, 5);
    const double tau = uniform(rng, 0.1, 1.0);
    const Tensor raw = random_matrix(2 * sources, dim, rng);
    const auto pair = two_view_pairs(sources);
    const auto vy = twice(random_labels(sources, 3, rng));
    const auto vw = twice(random_weights(sources, rng));
    const std::size_t base = std::size(losses);
    worst[base] = std::max(worst[base], raw_grad_error([&](const EmbeddingBatch& b) { return nt_xent(b, tau); }, raw, pair));
    worst[base + 1] =
        std::max(worst[base + 1], raw_grad_error([&](const EmbeddingBatch& b) { return sup_con(b, vy, tau); }, raw, pair));
    worst[base + 2] = std::max(
        worst[base + 2], raw_grad_error([&](const EmbeddingBatch& b) { return weighted_sup_con(b, vy, vw, tau); }, raw, pair));
  }
  Verdict v;
  double overall = 0.0;
  for (std::size_t j = 0; j < worst.size(); ++j) {
    overall = std::max(overall, worst[j]);
    v.check(worst[j] < 1e-4, fmt("%s max rel err %.2e", names[j], worst[j]));
  }
  if (v.pass) v.detail = fmt("%d instances x 11 losses, worst rel err %.2e", kTrials, overall);
  return v;
}

// ---------------------------------------------------------------- criterion 2

Verdict nfl_normalisation() {
  Verdict v;
  double worst = 0.0;
  for (std::size_t k : {2u, 5u, 10u}) {
    Rng rng = stream(0xacc2, k);
    for (int trial = 0; trial < 1000; ++trial) {
      RobustLossConfig cfg;
      cfg.gamma = uniform(rng, 0.0, 3.0);
      const Tensor p = random_probs(1, k, rng);
      double total = 0.0;
      for (std::size_t y = 0; y < k; ++y) {
        const int lab[] = {static_cast<int>(y)};
        total += loss_nfl(p, lab, cfg).value;
      }
      worst = std::max(worst, std::abs(total - 1.0));
    }
  }
  v.check(worst <= 1e-9, fmt("max |sum - 1| = %.2e", worst));
  if (v.pass) v.detail = fmt("3000 vectors, max |sum - 1| = %.2e", worst);
  return v;
}

// ---------------------------------------------------------------- criterion 3

Verdict reductions() {
  Verdict v;
  double worst = 0.0;
  auto near = [&](double a, double b, const char* what) {
    worst = std::max(worst, std::abs(a - b));
    v.check(std::abs(a - b) <= 1e-12, fmt("%s differs by %.2e", what, std::abs(a - b)));
  };
  RobustLossConfig cfg{.gamma = 0.7, .alpha = 0.6, .beta = 1.3, .log_clamp = -4};
  for (std::uint64_t t = 0; t < 20; ++t) {
    Rng rng = stream(0xacc3, t);
    const std::size_t n = 2 + uniform_index(rng, 8), k = 2 + uniform_index(rng, 8);
    const Tensor p = random_probs(n, k, rng);
    const auto y = random_labels(n, k, rng);
    const auto z = argmax_rows(p);
    const std::vector<double> ones(n, 1.0);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = n - 1 - i;
    ElrState off(n, k, 0.0), on(n, k, 3.0);
    off.update_targets(idx, random_probs(n, k, rng));
    on.update_targets(idx, random_probs(n, k, rng));
    near(loss_elr(p, y, off, idx).value, loss_ce(p, y).value, "ELR(lambda=0) vs CE");
    near(loss_ce_bootstrap(p, y, ones, z).value, loss_ce(p, y).value, "boot-CE(w=1)");
    near(loss_elr_bootstrap(p, y, ones, z, on, idx).value, loss_elr(p, y, on, idx).value, "boot-ELR(w=1)");
    near(loss_nfl_rce_bootstrap(p, y, ones, z, cfg).value, loss_nfl_rce(p, y, cfg).value, "boot-NFL+RCE(w=1)");

    const std::size_t sources = 2 + uniform_index(rng, 6);
    const EmbeddingBatch b{unit_rows(random_matrix(2 * sources, 2 + uniform_index(rng, 4), rng)), two_view_pairs(sources)};
    const double tau = uniform(rng, 0.1, 1.0);
    const auto vy = twice(random_labels(sources, 3, rng));
    std::vector<int> distinct(sources);
    for (std::size_t i = 0; i < sources; ++i) distinct[i] = static_cast<int>(i);
    distinct = twice(distinct);
    near(weighted_sup_con(b, vy, std::vector<double>(2 * sources, 1.0), tau).value, sup_con(b, vy, tau).value,
         "wSupCon(w=1) vs SupCon");
    near(sup_con(b, distinct, tau).value, nt_xent(b, tau).value, "SupCon(distinct) vs NT-Xent");
    near(weighted_sup_con(b, distinct, twice(random_weights(sources, rng)), tau).value, nt_xent(b, tau).value,
         "wSupCon(singleton) vs NT-Xent");
  }
  if (v.pass) v.detail = fmt("20 instances x 7 identities, max diff %.2e", worst);
  return v;
}

// ---------------------------------------------------------------- criterion 4

// Plain EM from extreme-point initialisation, iterated to a fixed point.
std::pair<double, double> brute_force_em(const std::vector<double>& x) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  double mu[2] = {*lo, *hi}, var[2], pi[2] = {0.5, 0.5};
  var[0] = var[1] = std::pow((*hi - *lo) / 4.0, 2);
  auto pdf = [](double v, double m, double s2) {
    return std::exp(-(v - m) * (v - m) / (2 * s2)) / std::sqrt(2 * std::numbers::pi * s2);
  };
  for (int it = 0; it < 2000; ++it) {
    double n0 = 0, s0 = 0, s1 = 0;
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double a = pi[0] * pdf(x[i], mu[0], var[0]), b = pi[1] * pdf(x[i], mu[1], var[1]);
      r[i] = a / (a + b);
      n0 += r[i], s0 += r[i] * x[i], s1 += (1 - r[i]) * x[i];
    }
    const double n1 = static_cast<double>(x.size()) - n0;
    mu[0] = s0 / n0, mu[1] = s1 / n1;
    double v0 = 0, v1 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      v0 += r[i] * (x[i] - mu[0]) * (x[i] - mu[0]);
      v1 += (1 - r[i]) * (x[i] - mu[1]) * (x[i] - mu[1]);
    }
    var[0] = v0 / n0, var[1] = v1 / n1;
    pi[0] = n0 / static_cast<double>(x.size()), pi[1] = 1 - pi[0];
  }
  return {std::min(mu[0], mu[1]), std::max(mu[0], mu[1])};
}

Verdict em_oracle() {
  Verdict v;
  double worst_mean = 0.0, worst_drop = 0.0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    Rng rng = stream(0xacc4, t);
    const double sd = uniform(rng, 0.05, 1.0), gap = uniform(rng, 5.0, 10.0) * sd, base = uniform(rng, -3.0, 3.0);
    const std::size_t n0 = 50 + uniform_index(rng, 300), n1 = 50 + uniform_index(rng, 300);
    std::vector<double> x;
    for (std::size_t i = 0; i < n0; ++i) x.push_back(normal(rng, base, sd));
    for (std::size_t i = 0; i < n1; ++i) x.push_back(normal(rng, base + gap, sd));
    shuffle(x, rng);
    const auto f = fit_gmm2(x);
    const auto [r0, r1] = brute_force_em(x);
    worst_mean = std::max({worst_mean, std::abs(f.mean[0] - r0), std::abs(f.mean[1] - r1)});
    for (std::size_t i = 1; i < f.trace.size(); ++i) worst_drop = std::max(worst_drop, f.trace[i - 1] - f.trace[i]);
  }
  v.check(worst_mean <= 1e-2, fmt("mean error %.2e", worst_mean));
  v.check(worst_drop <= 0.0, fmt("log-likelihood dropped by %.2e", worst_drop));
  if (v.pass) v.detail = fmt("20 fits, max mean error %.2e, log-likelihood monotone", worst_mean);
  return v;
}

// ------------------------------------------------------------- criteria 5 to 8

struct Split {
  LabeledDataset train, test;
};

Split make_split(std::uint64_t seed, bool asymmetric, double eta) {
  SyntheticSpec s;
  s.kind = SyntheticKind::mini_image;
  s.classes = 4;
  s.samples = 2000;
  s.separation = 1.0;
  s.seed = seed;
  Split d{generate_synthetic(s), {}};
  SyntheticSpec t = s;
  t.samples = 1000;
  t.seed = seed + 1000;
  d.test = generate_synthetic(t);
  d.train = asymmetric ? inject_asymmetric(d.train, eta, AsymmetricMap::default_pairs(4), seed)
                       : inject_symmetric(d.train, eta, seed);
  return d;
}

struct SeedTrends {
  double pseudo = 0.0;
  double base[3] = {}, pre[3] = {};  // CE, NFL+RCE, ELR
  double subset_accuracy = 0.0, subset_size = 0.0, noisy_accuracy = 0.0;
  double ft_before[2] = {}, ft_after[2] = {};  // sym 0.6, asym 0.4
};

constexpr LossKind kTrendLosses[] = {LossKind::ce, LossKind::nfl_rce, LossKind::elr};

double test_top1(const ExperimentResult& r, const char* phase) { return r.last(phase)->test_top1.value(); }

SeedTrends run_seed(std::uint64_t seed) {
  SeedTrends out;
  {
    const Split d = make_split(seed, false, 0.6);
    const Diagnostics dg{&d.train, &d.test, 0.5, {}};
    PhaseConfig cfg;
    cfg.seed = seed;
    // One encoder per seed, shared by every loss so the comparison isolates the classifier loss.
    const Network encoder = pretrain_encoder(noisy_view(d.train), cfg);
    for (std::size_t l = 0; l < 3; ++l) {
      cfg.classifier.loss = kTrendLosses[l];
      cfg.pretrain = false;
      ExperimentResult base;
      run_pretraining_phase(noisy_view(d.train), cfg, base, &dg);
      out.base[l] = test_top1(base, "a2-classifier");
      cfg.pretrain = true;
      ExperimentResult pre;
      const auto a = run_pretraining_phase(noisy_view(d.train), cfg, pre, &dg, &encoder);
      out.pre[l] = test_top1(pre, "a2-classifier");
      if (kTrendLosses[l] != LossKind::elr) continue;
      out.pseudo = a.pseudo.accuracy.value();
      ExperimentResult ft;
      run_finetuning_phase(d.train.features, d.train.image, a.pseudo.labels, a.network, cfg, ft, &dg);
      out.ft_before[0] = out.pre[l];
      out.ft_after[0] = test_top1(ft, "b3-classifier");
    }
  }
  {
    const Split d = make_split(seed, false, 0.4);
    const Diagnostics dg{&d.train, &d.test, 0.5, {}};
    PhaseConfig cfg;
    cfg.seed = seed;
    ExperimentResult r;
    run_pretraining_phase(noisy_view(d.train), cfg, r, &dg);
    const auto* last = r.last("a2-classifier");
    out.subset_size = last->clean_subset_size.value();
    out.subset_accuracy = last->clean_subset_accuracy.value_or(0.0);
    out.noisy_accuracy = noise_accuracy(d.train);
  }
  {
    const Split d = make_split(seed, true, 0.4);
    const Diagnostics dg{&d.train, &d.test, 0.5, {}};
    PhaseConfig cfg;
    cfg.seed = seed;
    ExperimentResult r;
    const auto a = run_pretraining_phase(noisy_view(d.train), cfg, r, &dg);
    out.ft_before[1] = test_top1(r, "a2-classifier");
    run_finetuning_phase(d.train.features, d.train.image, a.pseudo.labels, a.network, cfg, r, &dg);
    out.ft_after[1] = test_top1(r, "b3-classifier");
  }
  return out;
}

Verdict pseudo_label_gain(const std::vector<SeedTrends>& s) {
  double mean = 0.0;
  std::string per;
  for (const auto& t : s) mean += t.pseudo / static_cast<double>(s.size()), per += fmt(" %.3f", t.pseudo);
  Verdict v;
  v.check(mean >= 0.4 + 0.10, "mean below 0.50");
  v.detail = fmt("mean pseudo-label accuracy %.3f (seeds:%s) vs noisy 0.400", mean, per.c_str());
  return v;
}

Verdict pretraining_gain(const std::vector<SeedTrends>& s) {
  Verdict v;
  int big = 0;
  std::string detail;
  for (std::size_t l = 0; l < 3; ++l) {
    double b = 0.0, p = 0.0;
    for (const auto& t : s) b += t.base[l] / static_cast<double>(s.size()), p += t.pre[l] / static_cast<double>(s.size());
    v.check(p >= b, fmt("%s pre-trained below baseline", to_string(kTrendLosses[l])));
    if (p - b >= 0.03) ++big;
    detail += fmt("%s%s %.3f->%.3f", l ? ", " : "", to_string(kTrendLosses[l]), b, p);
  }
  v.check(big >= 2, fmt("only %d losses gain >= 3 points", big));
  v.detail = detail + (v.pass ? "" : " | " + v.detail);
  return v;
}

Verdict clean_subset_trend(const std::vector<SeedTrends>& s) {
  Verdict v;
  std::string per;
  for (const auto& t : s) {
    v.check(t.subset_accuracy >= t.noisy_accuracy + 0.10, fmt("subset accuracy %.3f", t.subset_accuracy));
    per += fmt(" %.3f(size %.2f)", t.subset_accuracy, t.subset_size);
  }
  v.detail = fmt("subset accuracy per seed:%s vs noisy %.3f", per.c_str(), s.front().noisy_accuracy) +
             (v.pass ? "" : " | " + v.detail);
  return v;
}

Verdict finetune_non_regression(const std::vector<SeedTrends>& s) {
  Verdict v;
  int cells = 0, higher = 0;
  std::string per;
  for (const auto& t : s)
    for (int c = 0; c < 2; ++c) {
      ++cells;
      if (t.ft_after[c] > t.ft_before[c]) ++higher;
      v.check(t.ft_after[c] >= t.ft_before[c] - 0.01, fmt("cell %d regressed", cells));
      per += fmt(" %.3f->%.3f", t.ft_before[c], t.ft_after[c]);
    }
  v.check(2 * higher >= cells, fmt("only %d of %d cells improved", higher, cells));
  v.detail = fmt("%d/%d cells improved:%s", higher, cells, per.c_str()) + (v.pass ? "" : " | " + v.detail);
  return v;
}

// ---------------------------------------------------------------- criterion 9

LabeledDataset uneven_classes() {
  const std::size_t sizes[] = {37, 50, 63, 81, 12, 29};
  LabeledDataset d;
  d.class_count = std::size(sizes);
  for (std::size_t c = 0; c < std::size(sizes); ++c)
    for (std::size_t i = 0; i < sizes[c]; ++i) d.clean_labels.push_back(static_cast<int>(c));
  Rng rng = stream(0xacc9);
  shuffle(d.clean_labels, rng);
  d.noisy_labels = d.clean_labels;
  d.feature_width = 3;
  d.features = random_matrix(d.size(), 3, rng);
  return d;
}

Verdict noise_injectors() {
  Verdict v;
  const auto d = uneven_classes();
  std::vector<std::size_t> size(d.class_count, 0);
  for (int y : d.clean_labels) ++size[static_cast<std::size_t>(y)];

  auto check_rates = [&](const LabeledDataset& n, double eta, const std::vector<int>& map, const char* what) {
    std::vector<std::size_t> flipped(d.class_count, 0);
    for (std::size_t i = 0; i < n.size(); ++i) {
      const int c = n.clean_labels[i], y = n.noisy_labels[i];
      if (y == c) continue;
      ++flipped[static_cast<std::size_t>(c)];
      if (!map.empty()) v.check(map[static_cast<std::size_t>(c)] == y, fmt("%s: flip %d->%d outside map", what, c, y));
    }
    for (std::size_t c = 0; c < d.class_count; ++c) {
      const bool mapped = map.empty() || map[c] >= 0;
      const double want = mapped ? std::round(eta * static_cast<double>(size[c])) : 0.0;
      v.check(static_cast<double>(flipped[c]) == want,
              fmt("%s eta=%.2f class %zu: %zu flips, expected %.0f", what, eta, c, flipped[c], want));
    }
  };

  AsymmetricMap pairs;
  pairs.targets = {3, -1, 5, -1, 1, -1};  // 0->3, 2->5, 4->1
  const auto pair_targets = pairs.resolve(d.class_count);
  const auto circular_targets = AsymmetricMap::circular(3).resolve(d.class_count);
  for (double eta : {0.0, 0.1, 0.25, 0.4, 0.5, 0.6, 0.8, 1.0}) {
    for (std::uint64_t seed : {1u, 2u, 77u}) {
      const auto sym = inject_symmetric(d, eta, seed);
      check_rates(sym, eta, {}, "symmetric");
      v.check(sym.noisy_labels == inject_symmetric(d, eta, seed).noisy_labels, "symmetric not deterministic");
      const auto asym = inject_asymmetric(d, eta, pairs, seed);
      check_rates(asym, eta, pair_targets, "pairs");
      v.check(asym.noisy_labels == inject_asymmetric(d, eta, pairs, seed).noisy_labels, "pairs not deterministic");
      const auto circ = inject_asymmetric(d, eta, AsymmetricMap::circular(3), seed);
      check_rates(circ, eta, circular_targets, "circular");
      v.check(sym.features.data == d.features.data && sym.clean_labels == d.clean_labels, "injector touched clean data");
    }
  }
  if (v.pass) v.detail = "8 ratios x 3 seeds x 3 injectors on uneven classes: exact counts, map-confined, reproducible";
  return v;
}

// --------------------------------------------------------------- criterion 10

PhaseConfig tiny_phase_config(std::uint64_t seed) {
  PhaseConfig c;
  c.seed = seed;
  c.architecture.encoder_widths = {16, 8};
  c.architecture.projection_hidden = 8;
  c.architecture.projection_out = 4;
  c.architecture.classifier_hidden = 8;
  c.contrastive.epochs = 2;
  c.contrastive.batch = 32;
  c.classifier.warmup_epochs = 1;
  c.classifier.epochs = 3;
  c.classifier.batch = 16;
  return c;
}

std::string metrics_lines(std::uint64_t seed) {
  SyntheticSpec s;
  s.kind = SyntheticKind::blobs;
  s.classes = 3;
  s.samples = 240;
  s.dims = 6;
  s.seed = 4;
  const auto train = inject_symmetric(generate_synthetic(s), 0.4, 4);
  s.seed = 5;
  s.samples = 90;
  const auto test = generate_synthetic(s);
  const Diagnostics dg{&train, &test, 0.5, {}};
  const auto cfg = tiny_phase_config(seed);
  ExperimentResult r;
  std::string out;
  r.sink = [&](const EpochRecord& rec) { out += to_json(rec).dump() + "\n"; };
  const auto a = run_pretraining_phase(noisy_view(train), cfg, r, &dg);
  run_finetuning_phase(train.features, train.image, a.pseudo.labels, a.network, cfg, r, &dg);
  return out;
}

Verdict round_trips() {
  Verdict v;
  // CIFAR-10 binary fixture with hand-placed bytes.
  std::vector<unsigned char> bytes(2 * kCifarRecord, 0);
  bytes[0] = 6;
  bytes[1] = 255;
  bytes[1 + 1024 + 5] = 17;
  bytes[1 + 2048 + 1023] = 204;
  bytes[kCifarRecord] = 1;
  for (std::size_t j = 0; j < 3072; ++j) bytes[kCifarRecord + 1 + j] = static_cast<unsigned char>((j * 7) % 256);
  const auto c = parse_cifar10_binary(bytes);
  Tensor expected = Tensor::matrix(2, 3072);
  expected(0, 0) = 1.0;
  expected(0, 1024 + 5) = 17.0 / 255.0;
  expected(0, 2048 + 1023) = 204.0 / 255.0;
  for (std::size_t j = 0; j < 3072; ++j) expected(1, j) = static_cast<double>((j * 7) % 256) / 255.0;
  v.check(c.features.data == expected.data, "CIFAR pixels differ");
  v.check(c.clean_labels == std::vector<int>{6, 1}, "CIFAR labels differ");
  v.check(c.image.channels == 3 && c.image.height == 32 && c.image.width == 32, "CIFAR shape differs");

  // NLAB: write, read, write again.
  for (auto kind : {SyntheticKind::mini_image, SyntheticKind::blobs}) {
    SyntheticSpec s;
    s.kind = kind;
    s.samples = 60;
    const auto d = inject_symmetric(generate_synthetic(s), 0.3, 8);
    std::ostringstream first;
    write_nlab(first, d);
    std::istringstream in(first.str());
    std::ostringstream second;
    write_nlab(second, read_nlab(in));
    v.check(first.str() == second.str(), "NLAB bytes changed on round trip");
  }

  // Config: render, parse, render again.
  RunConfig cfg;
  cfg.phase.seed = 987654321;
  cfg.noise.ratio = 0.1 + 0.2;
  cfg.phase.contrastive.lr = 1.0 / 3.0;
  cfg.phase.architecture.encoder_widths = {9, 4};
  const auto text = render(cfg);
  const auto back = parse_config(text);
  v.check(back == cfg && render(back) == text, "config round trip differs");

  const auto a = metrics_lines(3), b = metrics_lines(3);
  v.check(!a.empty() && a == b, "metrics lines differ for identical seeds");
  v.check(a != metrics_lines(4), "metrics lines ignore the seed");
  if (v.pass) v.detail = "CIFAR fixture exact; NLAB and config byte-identical; same-seed metrics identical";
  return v;
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  int failed = 0;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& run) {
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d %s: %s [%.0fs]\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str(), secs);
    std::fflush(stdout);
    if (!v.pass) ++failed;
  };

  report(1, "gradients", gradients);
  report(2, "nfl-normalisation", nfl_normalisation);
  report(3, "reductions", reductions);
  report(4, "em-oracle", em_oracle);

  std::vector<SeedTrends> trends;
  std::string trend_error;
  try {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      trends.push_back(run_seed(seed));
      std::fprintf(stderr, "trend seed %lu done\n", static_cast<unsigned long>(seed));
    }
  } catch (const std::exception& e) {
    trend_error = e.what();
  }
  auto trend = [&](auto fn) {
    return [&, fn] {
      if (!trend_error.empty()) throw std::runtime_error(trend_error);
      return fn(trends);
    };
  };
  report(5, "pseudo-label-gain", trend(pseudo_label_gain));
  report(6, "pretraining-gain", trend(pretraining_gain));
  report(7, "clean-subset", trend(clean_subset_trend));
  report(8, "finetune-non-regression", trend(finetune_non_regression));

  report(9, "noise-injectors", noise_injectors);
  report(10, "round-trips", round_trips);
  return failed == 0 ? 0 : 1;
}
