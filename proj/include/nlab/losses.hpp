// Classification losses for training under label noise.
//
// Every loss takes class probabilities p (N x K, rows from softmax) and returns the
// batch-mean value together with its gradient with respect to the logits that
// produced p. Per-sample derivatives are formed w.r.t. p first and then pulled
// back through the softmax Jacobian.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "nlab/core.hpp"
#include "nlab/tensor.hpp"

namespace nlab {

struct LossValue {
  double value = 0.0;
  Tensor grad;  // d(value)/d(logits), N x K
};

struct RobustLossConfig {
  double gamma = 0.5;       // focal exponent
  double alpha = 1.0;       // NFL weight
  double beta = 1.0;        // RCE weight
  double log_clamp = -4.0;  // stands in for log(0) in the reverse cross entropy

  void validate() const {
    require(gamma >= 0.0, "focal gamma must be >= 0");
    require(log_clamp < 0.0, "log_clamp must be negative");
  }

  bool operator==(const RobustLossConfig&) const = default;
};

inline constexpr double kProbFloor = 1e-12;

namespace detail {

inline void check_batch(const Tensor& probs, std::span<const int> labels) {
  require(probs.shape.size() == 2, "losses expect an N x K probability tensor");
  require(probs.rows() == labels.size(), "label count does not match batch size");
  require(probs.rows() >= 1, "empty batch");
  const int k = static_cast<int>(probs.cols());
  for (int y : labels) require(y >= 0 && y < k, "label out of range");
}

inline double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

/// Writes p ⊙ (g - <p, g>) into `out`: the softmax pullback of a per-row gradient.
inline void pull_back_row(std::span<const double> p, std::span<const double> dp, std::span<double> out, double scale) {
  double dot = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) dot += p[k] * dp[k];
  for (std::size_t k = 0; k < p.size(); ++k) out[k] += scale * p[k] * (dp[k] - dot);
}

/// Focal term a_k = -(1-p_k)^gamma log p_k and its derivative in p_k.
struct FocalTerm {
  double value;
  double slope;
};

inline FocalTerm focal_term(double p, double gamma) {
  const double pc = std::max(p, kProbFloor);
  const double lp = std::log(pc);
  const double q = 1.0 - pc;
  const double qg = q > 0.0 ? std::pow(q, gamma) : (gamma == 0.0 ? 1.0 : 0.0);
  double slope = -qg / pc;
  if (gamma != 0.0 && q > 0.0) slope += gamma * std::pow(q, gamma - 1.0) * lp;
  return {-qg * lp, slope};
}

/// Normalized focal loss against a target distribution `r` (one-hot or a blend of
/// one-hots); accumulates d/dp into `dp` scaled by `scale`.
inline double nfl_row(std::span<const double> p, std::span<const double> r, double gamma, std::span<double> dp,
                      double scale) {
  const std::size_t k = p.size();
  std::vector<FocalTerm> a(k);
  double total = 0.0, num = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    a[j] = focal_term(p[j], gamma);
    total += a[j].value;
    num += r[j] * a[j].value;
  }
  const double l = num / total;
  for (std::size_t j = 0; j < k; ++j) dp[j] += scale * a[j].slope * (r[j] - l) / total;
  return l;
}

inline std::vector<double> one_hot(std::size_t k, int label) {
  std::vector<double> r(k, 0.0);
  r[static_cast<std::size_t>(label)] = 1.0;
  return r;
}

inline void check_weights(std::span<const double> w, std::size_t n) {
  require(w.size() == n, "weight count does not match batch size");
  for (double v : w) require(v >= 0.0 && v <= 1.0, "sample weights must lie in [0, 1]");
}

}  // namespace detail

/// Row-wise argmax, ties toward the smallest index.
inline std::vector<int> argmax_rows(const Tensor& probs) {
  std::vector<int> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto r = probs.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

/// Per-sample -log p(label), clamped like loss_ce.
inline std::vector<double> per_sample_ce(const Tensor& probs, std::span<const int> labels) {
  detail::check_batch(probs, labels);
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = -detail::safe_log(probs(i, static_cast<std::size_t>(labels[i])));
  return out;
}

/// Cross entropy against soft target rows (each row sums to 1).
inline LossValue loss_soft_ce(const Tensor& probs, const Tensor& targets) {
  require(probs.shape == targets.shape, "soft targets must match the probability shape");
  const std::size_t n = probs.rows(), k = probs.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  LossValue out{0.0, zeros_like(probs)};
  for (std::size_t i = 0; i < n; ++i) {
    double li = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double t = targets(i, j);
      if (t != 0.0) li -= t * detail::safe_log(probs(i, j));
      out.grad(i, j) = (probs(i, j) - t) * inv_n;
    }
    out.value += li;
  }
  out.value *= inv_n;
  return out;
}

inline LossValue loss_ce(const Tensor& probs, std::span<const int> labels) {
  detail::check_batch(probs, labels);
  const std::size_t n = probs.rows(), k = probs.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  LossValue out{0.0, zeros_like(probs)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    out.value -= detail::safe_log(probs(i, y));
    for (std::size_t j = 0; j < k; ++j) out.grad(i, j) = (probs(i, j) - (j == y ? 1.0 : 0.0)) * inv_n;
  }
  out.value *= inv_n;
  return out;
}

/// Normalized focal loss: focal term at the label over the sum of focal terms for all K labels.
inline LossValue loss_nfl(const Tensor& probs, std::span<const int> labels, const RobustLossConfig& cfg) {
  detail::check_batch(probs, labels);
  cfg.validate();
  const std::size_t n = probs.rows(), k = probs.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  LossValue out{0.0, zeros_like(probs)};
  std::vector<double> dp(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(dp.begin(), dp.end(), 0.0);
    const auto r = detail::one_hot(k, labels[i]);
    out.value += detail::nfl_row(probs.row(i), r, cfg.gamma, dp, 1.0);
    detail::pull_back_row(probs.row(i), dp, out.grad.row(i), inv_n);
  }
  out.value *= inv_n;
  return out;
}

/// Reverse cross entropy with log 0 replaced by cfg.log_clamp: -log_clamp * (1 - p(label)).
inline LossValue loss_rce(const Tensor& probs, std::span<const int> labels, const RobustLossConfig& cfg) {
  detail::check_batch(probs, labels);
  cfg.validate();
  const std::size_t n = probs.rows(), k = probs.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  LossValue out{0.0, zeros_like(probs)};
  std::vector<double> dp(k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    out.value += -cfg.log_clamp * (1.0 - probs(i, y));
    std::fill(dp.begin(), dp.end(), 0.0);
    dp[y] = cfg.log_clamp;
    detail::pull_back_row(probs.row(i), dp, out.grad.row(i), inv_n);
  }
  out.value *= inv_n;
  return out;
}

inline LossValue loss_nfl_rce(const Tensor& probs, std::span<const int> labels, const RobustLossConfig& cfg) {
  LossValue a = loss_nfl(probs, labels, cfg);
  LossValue b = loss_rce(probs, labels, cfg);
  LossValue out{cfg.alpha * a.value + cfg.beta * b.value, zeros_like(probs)};
  for (std::size_t j = 0; j < out.grad.size(); ++j) out.grad.data[j] = cfg.alpha * a.grad.data[j] + cfg.beta * b.grad.data[j];
  return out;
}

/// Temporal-ensemble targets for early-learning regularization, one row per training sample.
class ElrState {
 public:
  ElrState() = default;
  ElrState(std::size_t sample_count, std::size_t class_count, double lambda_elr = 3.0, double momentum = 0.7)
      : targets_(Tensor::matrix(sample_count, class_count)), lambda_(lambda_elr), momentum_(momentum) {
    require(momentum >= 0.0 && momentum <= 1.0, "ELR momentum must lie in [0, 1]");
    require(lambda_elr >= 0.0, "ELR lambda must be >= 0");
  }

  double lambda() const { return lambda_; }
  double momentum() const { return momentum_; }
  const Tensor& targets() const { return targets_; }
  Tensor& targets() { return targets_; }

  /// t_i <- momentum * t_i + (1 - momentum) * p_i for every sample in the batch.
  void update_targets(std::span<const std::size_t> indices, const Tensor& probs) {
    require(indices.size() == probs.rows(), "index count does not match batch size");
    require(probs.cols() == targets_.cols(), "probability width does not match class count");
    for (std::size_t i = 0; i < indices.size(); ++i) {
      require(indices[i] < targets_.rows(), "ELR sample index out of range");
      auto t = targets_.row(indices[i]);
      auto p = probs.row(i);
      for (std::size_t k = 0; k < t.size(); ++k) t[k] = momentum_ * t[k] + (1.0 - momentum_) * p[k];
    }
  }

  /// Gathers the batch's target rows.
  Tensor batch_targets(std::span<const std::size_t> indices) const {
    for (auto i : indices) require(i < targets_.rows(), "ELR sample index out of range");
    return gather_rows(targets_, indices);
  }

 private:
  Tensor targets_;
  double lambda_ = 3.0;
  double momentum_ = 0.7;
};

namespace detail {

/// Adds (lambda/N) * sum_i log(1 - <p_i, t_i>) to `out`. Targets are constants.
inline void add_elr_regularizer(LossValue& out, const Tensor& probs, const ElrState& state,
                                std::span<const std::size_t> indices) {
  if (indices.size() != probs.rows()) throw ContractViolation("ELR needs one training-sample index per batch row");
  const Tensor t = state.batch_targets(indices);
  const std::size_t n = probs.rows(), k = probs.cols();
  const double scale = state.lambda() / static_cast<double>(n);
  std::vector<double> dp(k);
  double reg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double inner = 0.0;
    for (std::size_t j = 0; j < k; ++j) inner += probs(i, j) * t(i, j);
    inner = std::min(inner, 1.0 - 1e-12);
    const double term = std::log(1.0 - inner);
    if (!std::isfinite(term)) throw NumericFailure("ELR inner product left [0, 1)");
    reg += term;
    for (std::size_t j = 0; j < k; ++j) dp[j] = -t(i, j) / (1.0 - inner);
    pull_back_row(probs.row(i), dp, out.grad.row(i), scale);
  }
  out.value += scale * reg;
}

}  // namespace detail

/// Mean CE plus (lambda/N) * sum_i log(1 - <p_i, t_i>). Call update_targets first.
inline LossValue loss_elr(const Tensor& probs, std::span<const int> labels, const ElrState& state,
                          std::span<const std::size_t> indices) {
  LossValue out = loss_ce(probs, labels);
  detail::add_elr_regularizer(out, probs, state, indices);
  return out;
}

struct MixupCoefficients {
  double first = 0.5;
  double second = 0.5;
};

/// w_p/(w_p+w_q) and w_q/(w_p+w_q); both 0.5 when the weights nearly vanish.
inline MixupCoefficients mixup_coefficients(double w_p, double w_q) {
  require(w_p >= 0.0 && w_p <= 1.0 && w_q >= 0.0 && w_q <= 1.0, "mixup weights must lie in [0, 1]");
  const double s = w_p + w_q;
  if (s < 1e-8) return {};
  return {w_p / s, w_q / s};
}

inline std::vector<double> mixup_pair(std::span<const double> x_p, std::span<const double> x_q, double w_p, double w_q) {
  require(x_p.size() == x_q.size(), "mixup inputs differ in shape");
  const auto c = mixup_coefficients(w_p, w_q);
  std::vector<double> x(x_p.size());
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = c.first * x_p[j] + c.second * x_q[j];
  return x;
}

namespace detail {
inline Tensor bootstrap_targets(const Tensor& probs, std::span<const int> labels, std::span<const double> weights,
                                std::span<const int> hard_preds) {
  check_batch(probs, labels);
  check_batch(probs, hard_preds);
  check_weights(weights, labels.size());
  Tensor t = zeros_like(probs);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    t(i, static_cast<std::size_t>(labels[i])) += weights[i];
    t(i, static_cast<std::size_t>(hard_preds[i])) += 1.0 - weights[i];
  }
  return t;
}
}  // namespace detail

/// Per sample -sum_k (w q_k + (1-w) z_k) log p_k, with z the one-hot of the model's own argmax.
inline LossValue loss_ce_bootstrap(const Tensor& probs, std::span<const int> labels, std::span<const double> weights,
                                   std::span<const int> hard_preds) {
  return loss_soft_ce(probs, detail::bootstrap_targets(probs, labels, weights, hard_preds));
}

inline LossValue loss_elr_bootstrap(const Tensor& probs, std::span<const int> labels, std::span<const double> weights,
                                    std::span<const int> hard_preds, const ElrState& state,
                                    std::span<const std::size_t> indices) {
  LossValue out = loss_ce_bootstrap(probs, labels, weights, hard_preds);
  detail::add_elr_regularizer(out, probs, state, indices);
  return out;
}

/// alpha * [w NFL(q) + (1-w) NFL(z)] + beta * RCE against the blended target
/// w q + (1-w) z, where every log of a blend entry below exp(log_clamp) becomes log_clamp.
inline LossValue loss_nfl_rce_bootstrap(const Tensor& probs, std::span<const int> labels, std::span<const double> weights,
                                        std::span<const int> hard_preds, const RobustLossConfig& cfg) {
  cfg.validate();
  const Tensor blend = detail::bootstrap_targets(probs, labels, weights, hard_preds);
  const std::size_t n = probs.rows(), k = probs.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  LossValue out{0.0, zeros_like(probs)};
  std::vector<double> dp(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(dp.begin(), dp.end(), 0.0);
    const double nfl = detail::nfl_row(probs.row(i), blend.row(i), cfg.gamma, dp, cfg.alpha);
    double rce = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double b = blend(i, j);
      const double lq = b > 0.0 ? std::max(std::log(b), cfg.log_clamp) : cfg.log_clamp;
      rce -= probs(i, j) * lq;
      dp[j] -= cfg.beta * lq;
    }
    out.value += cfg.alpha * nfl + cfg.beta * rce;
    detail::pull_back_row(probs.row(i), dp, out.grad.row(i), inv_n);
  }
  out.value *= inv_n;
  return out;
}

}  // namespace nlab
