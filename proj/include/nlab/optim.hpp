// SGD with momentum and Adam, both on a cosine-annealed learning rate.
#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "nlab/core.hpp"
#include "nlab/nn.hpp"
#include "nlab/tensor.hpp"

namespace nlab {

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t epoch_budget = 1;
};

/// lr(e) = base_lr * 0.5 * (1 + cos(pi * e / budget)).
inline double cosine_lr(double base_lr, double epoch, std::size_t epoch_budget) {
  require(epoch_budget >= 1, "epoch budget must be >= 1");
  require(epoch >= 0.0 && epoch <= static_cast<double>(epoch_budget), "epoch outside [0, epoch_budget]");
  if (epoch == static_cast<double>(epoch_budget)) return 0.0;
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / static_cast<double>(epoch_budget)));
}

class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
    require(cfg_.base_lr >= 0.0, "learning rate must be nonnegative");
    require(cfg_.epoch_budget >= 1, "epoch budget must be >= 1");
  }

  const OptimizerConfig& config() const { return cfg_; }
  std::size_t step_count() const { return steps_; }
  double lr(double epoch) const { return cosine_lr(cfg_.base_lr, epoch, cfg_.epoch_budget); }

  /// Updates params.trainable[i] for each i in `active` (all tensors when empty).
  /// Tensors outside `active` are left untouched, including their buffers.
  void step(Params& params, const std::vector<Tensor>& grads, double epoch, std::span<const std::size_t> active = {}) {
    const double rate = lr(epoch);
    require(rate >= 0.0, "negative learning rate");
    require(grads.size() == params.trainable.size(), "gradient count does not match parameter count");
    if (first_.empty()) {
      for (const auto& p : params.trainable) first_.push_back(zeros_like(p.value));
      if (cfg_.kind == OptimizerKind::adam)
        for (const auto& p : params.trainable) second_.push_back(zeros_like(p.value));
    }
    ++steps_;
    auto update = [&](std::size_t i) {
      auto& theta = params.trainable[i].value.data;
      const auto& g = grads[i].data;
      require(g.size() == theta.size(), "gradient shape mismatch for " + params.trainable[i].name);
      auto& v = first_[i].data;
      if (cfg_.kind == OptimizerKind::sgd_momentum) {
        for (std::size_t j = 0; j < theta.size(); ++j) {
          if (!std::isfinite(g[j])) throw NumericFailure("non-finite gradient in " + params.trainable[i].name);
          v[j] = cfg_.momentum * v[j] + g[j] + cfg_.weight_decay * theta[j];
          theta[j] -= rate * v[j];
        }
      } else {
        auto& s = second_[i].data;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
        for (std::size_t j = 0; j < theta.size(); ++j) {
          if (!std::isfinite(g[j])) throw NumericFailure("non-finite gradient in " + params.trainable[i].name);
          const double gj = g[j] + cfg_.weight_decay * theta[j];
          v[j] = cfg_.beta1 * v[j] + (1.0 - cfg_.beta1) * gj;
          s[j] = cfg_.beta2 * s[j] + (1.0 - cfg_.beta2) * gj * gj;
          theta[j] -= rate * (v[j] / c1) / (std::sqrt(s[j] / c2) + cfg_.adam_epsilon);
        }
      }
    };
    if (active.empty()) {
      for (std::size_t i = 0; i < params.trainable.size(); ++i) update(i);
    } else {
      for (std::size_t i : active) update(i);
    }
  }

 private:
  OptimizerConfig cfg_;
  std::size_t steps_ = 0;
  std::vector<Tensor> first_, second_;
};

}  // namespace nlab
