// Shared helpers for the unit and acceptance suites.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "nlab/core.hpp"
#include "nlab/losses.hpp"
#include "nlab/nn.hpp"
#include "nlab/tensor.hpp"

namespace nlab::testing {

inline Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.data) v = normal(rng, 0.0, scale);
  return t;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(uniform_index(rng, k));
  return y;
}

inline std::vector<double> random_weights(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (auto& v : w) v = uniform(rng);
  return w;
}

/// Row-wise unit vectors.
inline Tensor unit_rows(Tensor t) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 0.0;
    for (double v : t.row(i)) s += v * v;
    s = std::sqrt(s);
    for (double& v : t.row(i)) v /= s;
  }
  return t;
}

/// Probability rows for use as fixed inputs (not as variables).
inline Tensor random_probs(std::size_t n, std::size_t k, Rng& rng) { return softmax(random_matrix(n, k, rng, 1.5)); }

/// Full-batch softmax regression on column-standardised features; returns training accuracy.
inline double linear_probe_accuracy(Tensor x, std::span<const int> y, std::size_t k, int steps = 300, double lr = 0.5) {
  const std::size_t n = x.rows(), w = x.cols();
  for (std::size_t j = 0; j < w; ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) x(i, j) = sd > 1e-12 ? (x(i, j) - mean) / sd : 0.0;
  }
  std::vector<double> weights((w + 1) * k, 0.0), logits(k), grad((w + 1) * k);
  auto score = [&](std::size_t i) {
    for (std::size_t c = 0; c < k; ++c) {
      double z = weights[w * k + c];
      for (std::size_t j = 0; j < w; ++j) z += x(i, j) * weights[j * k + c];
      logits[c] = z;
    }
  };
  for (int step = 0; step < steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      score(i);
      const double m = *std::max_element(logits.begin(), logits.end());
      double s = 0.0;
      for (double& z : logits) s += (z = std::exp(z - m));
      for (std::size_t c = 0; c < k; ++c) {
        const double g = logits[c] / s - (y[i] == static_cast<int>(c) ? 1.0 : 0.0);
        for (std::size_t j = 0; j < w; ++j) grad[j * k + c] += g * x(i, j);
        grad[w * k + c] += g;
      }
    }
    for (std::size_t p = 0; p < weights.size(); ++p) weights[p] -= lr * grad[p] / static_cast<double>(n);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    score(i);
    correct += static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin()) == y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace nlab::testing
