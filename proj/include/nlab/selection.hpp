// Small-loss sample selection: a two-component 1-D Gaussian mixture over
// per-sample losses, clean-probability weights, pseudo-labels and the
// diagnostics that compare the selected subset against ground truth.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "nlab/core.hpp"
#include "nlab/losses.hpp"
#include "nlab/nn.hpp"
#include "nlab/tensor.hpp"

namespace nlab {

/// Component 0 is the low-mean ("clean") component. Means and variances are in
/// the caller's loss units; EM itself runs on min-max normalised losses and
/// `log_likelihood`/`trace` refer to that normalised scale.
struct GmmFit {
  double mean[2] = {0.0, 0.0};
  double variance[2] = {1.0, 1.0};
  double weight[2] = {0.5, 0.5};
  double log_likelihood = 0.0;
  std::size_t iterations = 0;
  std::vector<double> trace;  // log-likelihood after each E-step
};

struct GmmOptions {
  std::size_t max_iter = 100;
  double tol = 1e-8;
  double variance_floor = 1e-6;  // normalised units

  bool operator==(const GmmOptions&) const = default;
};

namespace detail {

inline double log_normal(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - (x - mean) * (x - mean) / (2.0 * var);
}

inline double log_add(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

/// EM for a two-component mixture. Initialised at the 10th/90th percentiles with
/// equal mixing and the pooled variance; stops when the log-likelihood gains less
/// than `tol` or after `max_iter` M-steps.
inline GmmFit fit_gmm2(std::span<const double> losses, const GmmOptions& opt = {}) {
  require(losses.size() >= 4, "mixture fit needs at least 4 losses");
  for (double l : losses) require(std::isfinite(l), "losses must be finite");
  const auto [mn_it, mx_it] = std::minmax_element(losses.begin(), losses.end());
  const double lo = *mn_it, range = *mx_it - *mn_it;
  if (!(range > 1e-12 * std::max(1.0, std::abs(*mx_it)))) throw DegenerateInput("all losses are identical");

  const std::size_t n = losses.size();
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = (losses[i] - lo) / range;

  double mu[2] = {detail::percentile(x, 0.1), detail::percentile(x, 0.9)};
  double pooled_mean = 0.0, pooled_var = 0.0;
  for (double v : x) pooled_mean += v;
  pooled_mean /= static_cast<double>(n);
  for (double v : x) pooled_var += (v - pooled_mean) * (v - pooled_mean);
  pooled_var = std::max(pooled_var / static_cast<double>(n), opt.variance_floor);
  double var[2] = {pooled_var, pooled_var};
  double pi[2] = {0.5, 0.5};

  std::vector<double> r0(n);
  auto e_step = [&] {
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = std::log(pi[0]) + detail::log_normal(x[i], mu[0], var[0]);
      const double b = std::log(pi[1]) + detail::log_normal(x[i], mu[1], var[1]);
      const double z = detail::log_add(a, b);
      r0[i] = std::exp(a - z);
      ll += z;
    }
    return ll;
  };

  GmmFit fit;
  double ll = e_step();
  fit.trace.push_back(ll);
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    const double keep_mu[2] = {mu[0], mu[1]}, keep_var[2] = {var[0], var[1]}, keep_pi[2] = {pi[0], pi[1]};
    double nk[2] = {0.0, 0.0}, sx[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      nk[0] += r0[i];
      nk[1] += 1.0 - r0[i];
      sx[0] += r0[i] * x[i];
      sx[1] += (1.0 - r0[i]) * x[i];
    }
    for (int c = 0; c < 2; ++c) {
      if (nk[c] <= 1e-300) continue;
      mu[c] = sx[c] / nk[c];
      double sv = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = c == 0 ? r0[i] : 1.0 - r0[i];
        sv += r * (x[i] - mu[c]) * (x[i] - mu[c]);
      }
      var[c] = std::max(sv / nk[c], opt.variance_floor);
    }
    pi[0] = std::clamp(nk[0] / static_cast<double>(n), 1e-300, 1.0);
    pi[1] = std::clamp(1.0 - pi[0], 1e-300, 1.0);
    const double next = e_step();
    if (next < ll) {
      // Only rounding can lower the likelihood near a fixed point: keep the previous step.
      std::copy_n(keep_mu, 2, mu), std::copy_n(keep_var, 2, var), std::copy_n(keep_pi, 2, pi);
      e_step();
      break;
    }
    fit.trace.push_back(next);
    ++fit.iterations;
    const double gain = next - ll;
    ll = next;
    if (gain < opt.tol) break;
  }

  const int c0 = mu[0] <= mu[1] ? 0 : 1, c1 = 1 - c0;
  fit.mean[0] = lo + mu[c0] * range;
  fit.mean[1] = lo + mu[c1] * range;
  fit.variance[0] = var[c0] * range * range;
  fit.variance[1] = var[c1] * range * range;
  fit.weight[0] = pi[c0];
  fit.weight[1] = 1.0 - pi[c0];
  fit.log_likelihood = ll;
  return fit;
}

/// w_i = posterior probability of the clean component given loss l_i.
inline std::vector<double> posterior_weights(const GmmFit& fit, std::span<const double> losses) {
  std::vector<double> w(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const double a = std::log(fit.weight[0]) + detail::log_normal(losses[i], fit.mean[0], fit.variance[0]);
    const double b = std::log(fit.weight[1]) + detail::log_normal(losses[i], fit.mean[1], fit.variance[1]);
    w[i] = 1.0 / (1.0 + std::exp(b - a));  // exactly 1/2 when the components agree
  }
  return w;
}

/// Eval-mode class probabilities over all rows, in chunks.
inline Tensor predict_probabilities(const Network& net, const Tensor& features, std::size_t chunk = 512) {
  const std::size_t n = features.rows();
  Tensor out = Tensor::matrix(std::max<std::size_t>(n, 1), net.spec().class_count);
  if (n == 0) return Tensor();
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(n, start + chunk); ++i) idx.push_back(i);
    const Tensor p = net.forward(gather_rows(features, idx), Head::classifier).output;
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * p.cols()));
  }
  return out;
}

struct PseudoLabels {
  std::vector<int> labels;
  std::size_t source_epoch = 0;
  std::optional<double> accuracy;  // against clean labels, diagnostic only
};

/// argmax_k p(k|x_i) for every row, ties toward the smallest class index.
inline PseudoLabels generate_pseudo_labels(const Network& net, const Tensor& features, std::size_t source_epoch = 0) {
  PseudoLabels pl;
  pl.source_epoch = source_epoch;
  if (features.rows() > 0) pl.labels = argmax_rows(predict_probabilities(net, features));
  return pl;
}

/// Eval-mode per-sample cross entropy against `targets`.
inline std::vector<double> sample_losses(const Network& net, const Tensor& features, std::span<const int> targets) {
  return per_sample_ce(predict_probabilities(net, features), targets);
}

struct CleanSubsetMetrics {
  double size_fraction = 0.0;
  double accuracy = 0.0;
  bool accuracy_defined = false;
};

/// Subset {i : w_i >= threshold}; accuracy is the share of subset targets that equal the clean label.
inline CleanSubsetMetrics clean_subset_metrics(std::span<const double> weights, double threshold,
                                               std::span<const int> targets, std::span<const int> clean) {
  require(threshold > 0.0 && threshold < 1.0, "threshold must lie in (0, 1)");
  require(weights.size() == targets.size() && targets.size() == clean.size(), "weights and label tracks differ in length");
  CleanSubsetMetrics m;
  std::size_t selected = 0, correct = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < threshold) continue;
    ++selected;
    correct += targets[i] == clean[i];
  }
  if (!weights.empty()) m.size_fraction = static_cast<double>(selected) / static_cast<double>(weights.size());
  if (selected > 0) {
    m.accuracy = static_cast<double>(correct) / static_cast<double>(selected);
    m.accuracy_defined = true;
  }
  return m;
}

/// CSV: sample_index,weight,pseudo_label,clean_label,noisy_label. `clean` may be empty.
inline void write_selection_csv(std::ostream& os, std::span<const double> weights, std::span<const int> pseudo,
                                std::span<const int> clean, std::span<const int> noisy) {
  require(weights.size() == pseudo.size() && pseudo.size() == noisy.size(), "selection columns differ in length");
  require(clean.empty() || clean.size() == noisy.size(), "clean column length mismatch");
  os << "sample_index,weight,pseudo_label,clean_label,noisy_label\n";
  char buf[64];
  for (std::size_t i = 0; i < weights.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", weights[i]);
    os << i << ',' << buf << ',' << pseudo[i] << ',';
    if (!clean.empty()) os << clean[i];
    os << ',' << noisy[i] << '\n';
  }
}

}  // namespace nlab
