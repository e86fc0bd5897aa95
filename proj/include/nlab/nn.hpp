// A small feed-forward network with three heads sharing one encoder:
//
//   input -> encoder -> projection head   (contrastive embeddings)
//                    -> classifier head   (class probabilities)
//
// Forward passes return an explicit cache; backward consumes it. There is no
// autodiff graph, each layer kind carries its own hand-written derivative.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nlab/core.hpp"
#include "nlab/tensor.hpp"

namespace nlab {

enum class Activation { identity, relu };
enum class Head { encoder, projection, classifier };
enum class Mode { train, eval };
enum class BackwardScope { full, head_only };

inline const char* to_string(Head h) {
  switch (h) {
    case Head::encoder: return "encoder";
    case Head::projection: return "projection";
    case Head::classifier: return "classifier";
  }
  return "?";
}

struct EncoderLayerSpec {
  std::size_t width = 0;
  Activation activation = Activation::relu;
  bool operator==(const EncoderLayerSpec&) const = default;
};

struct NetworkSpec {
  std::size_t input_width = 0;
  std::vector<EncoderLayerSpec> encoder_layers;
  std::size_t projection_hidden = 64;
  std::size_t projection_out = 32;
  std::size_t classifier_hidden = 64;
  std::size_t class_count = 2;
  bool use_batchnorm_in_classifier = true;

  std::size_t feature_width() const {
    return encoder_layers.empty() ? input_width : encoder_layers.back().width;
  }

  void validate() const {
    require(input_width >= 1, "network input width must be >= 1");
    require(class_count >= 2, "class_count must be >= 2");
    require(projection_hidden >= 1 && projection_out >= 1 && classifier_hidden >= 1, "head widths must be >= 1");
    for (const auto& l : encoder_layers) require(l.width >= 1, "encoder widths must be >= 1");
  }

  bool operator==(const NetworkSpec&) const = default;
};

/// Numerically stable row-wise softmax. `class_count`, when nonzero, must match the row width.
inline Tensor softmax(const Tensor& logits, std::size_t class_count = 0) {
  require(logits.shape.size() == 2, "softmax expects an N x K tensor");
  require(class_count == 0 || logits.cols() == class_count, "softmax: logits width does not match class count");
  Tensor out = zeros_like(logits);
  const std::size_t k = logits.cols();
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto o = out.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : in) mx = std::max(mx, v);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < k; ++j) o[j] /= sum;
  }
  return out;
}

struct ParamTensor {
  std::string name;
  Head group = Head::encoder;
  Tensor value;
};

struct Params {
  std::vector<ParamTensor> trainable;
  std::vector<Tensor> running;  // batch-norm running mean/variance pairs

  std::size_t coordinate_count() const {
    std::size_t n = 0;
    for (const auto& p : trainable) n += p.value.size();
    return n;
  }
  bool operator==(const Params& o) const {
    if (trainable.size() != o.trainable.size() || running != o.running) return false;
    for (std::size_t i = 0; i < trainable.size(); ++i)
      if (trainable[i].name != o.trainable[i].name || trainable[i].value != o.trainable[i].value) return false;
    return true;
  }
};

enum class LayerKind { dense, relu, batch_norm };

struct Layer {
  LayerKind kind = LayerKind::dense;
  std::size_t in = 0, out = 0;
  std::size_t param = 0;   // first trainable tensor (dense: weight, bias; norm: scale, shift)
  std::size_t buffer = 0;  // first running-statistics tensor (norm only)
};

struct LayerCache {
  Tensor input;
  Tensor normalized;
  std::vector<double> inv_std;
};

struct ForwardCache {
  Head head = Head::encoder;
  bool from_train_mode = false;
  std::vector<LayerCache> encoder;
  std::vector<LayerCache> head_layers;
};

struct ForwardResult {
  Tensor output;  // features, embeddings, or class probabilities
  Tensor logits;  // classifier head only
  ForwardCache cache;
};

struct Gradients {
  std::vector<Tensor> params;  // aligned with Params::trainable
  Tensor input;                // empty for BackwardScope::head_only
};

class Network {
 public:
  static constexpr double kNormEpsilon = 1e-5;
  static constexpr double kRunningMomentum = 0.9;

  Network() = default;
  Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    build();
    for (Head h : {Head::encoder, Head::projection, Head::classifier}) reinitialize(h, seed);
  }

  const NetworkSpec& spec() const { return spec_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

  /// Indices into params().trainable that belong to `head`.
  std::vector<std::size_t> param_indices(Head head) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < params_.trainable.size(); ++i)
      if (params_.trainable[i].group == head) idx.push_back(i);
    return idx;
  }

  /// He-style uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases, unit norm scales.
  void reinitialize(Head head, std::uint64_t seed) {
    Rng rng = stream(seed, 0x1417, static_cast<std::uint64_t>(head));
    for (const Layer& l : layers(head)) {
      if (l.kind == LayerKind::dense) {
        const double bound = std::sqrt(6.0 / static_cast<double>(l.in));
        for (double& w : params_.trainable[l.param].value.data) w = uniform(rng, -bound, bound);
        std::fill(params_.trainable[l.param + 1].value.data.begin(), params_.trainable[l.param + 1].value.data.end(), 0.0);
      } else if (l.kind == LayerKind::batch_norm) {
        std::fill(params_.trainable[l.param].value.data.begin(), params_.trainable[l.param].value.data.end(), 1.0);
        std::fill(params_.trainable[l.param + 1].value.data.begin(), params_.trainable[l.param + 1].value.data.end(), 0.0);
        std::fill(params_.running[l.buffer].data.begin(), params_.running[l.buffer].data.end(), 0.0);
        std::fill(params_.running[l.buffer + 1].data.begin(), params_.running[l.buffer + 1].data.end(), 1.0);
      }
    }
  }

  /// Train mode updates batch-norm running statistics.
  ForwardResult forward(const Tensor& batch, Head head, Mode mode) {
    return run_forward(params_, mode == Mode::train ? &params_ : nullptr, batch, head);
  }

  /// Eval-mode forward; a pure function of the parameters.
  ForwardResult forward(const Tensor& batch, Head head) const {
    return run_forward(params_, nullptr, batch, head);
  }

  /// `upstream` is d(loss)/d(output) for the encoder and projection heads and
  /// d(loss)/d(logits) for the classifier head.
  Gradients backward(const ForwardCache& cache, const Tensor& upstream, BackwardScope scope = BackwardScope::full) const {
    if (!cache.from_train_mode) throw ContractViolation("backward requires a forward cache produced in train mode");
    const auto& head_layers = layers(cache.head);
    if (cache.head != Head::encoder && cache.head_layers.size() != head_layers.size())
      throw ContractViolation("forward cache does not match the network head");
    if (cache.encoder.size() != encoder_.size()) throw ContractViolation("forward cache is missing encoder activations");

    Gradients g;
    g.params.reserve(params_.trainable.size());
    for (const auto& p : params_.trainable) g.params.push_back(zeros_like(p.value));

    Tensor grad = upstream;
    if (cache.head != Head::encoder) {
      for (std::size_t i = head_layers.size(); i-- > 0;) grad = layer_backward(head_layers[i], cache.head_layers[i], grad, g);
    }
    if (scope == BackwardScope::head_only && cache.head != Head::encoder) return g;
    for (std::size_t i = encoder_.size(); i-- > 0;) grad = layer_backward(encoder_[i], cache.encoder[i], grad, g);
    g.input = std::move(grad);
    return g;
  }

  const std::vector<Layer>& layers(Head head) const {
    switch (head) {
      case Head::encoder: return encoder_;
      case Head::projection: return projection_;
      case Head::classifier: return classifier_;
    }
    return encoder_;
  }

 private:
  void add_dense(std::vector<Layer>& stack, Head group, std::size_t in, std::size_t out) {
    const std::size_t idx = params_.trainable.size();
    const std::string prefix = std::string(to_string(group)) + "." + std::to_string(stack.size());
    params_.trainable.push_back({prefix + ".weight", group, Tensor::matrix(in, out)});
    params_.trainable.push_back({prefix + ".bias", group, Tensor::matrix(1, out)});
    stack.push_back({LayerKind::dense, in, out, idx, 0});
  }
  void add_norm(std::vector<Layer>& stack, Head group, std::size_t width) {
    const std::size_t idx = params_.trainable.size();
    const std::string prefix = std::string(to_string(group)) + "." + std::to_string(stack.size());
    params_.trainable.push_back({prefix + ".scale", group, Tensor::matrix(1, width, 1.0)});
    params_.trainable.push_back({prefix + ".shift", group, Tensor::matrix(1, width)});
    const std::size_t buf = params_.running.size();
    params_.running.push_back(Tensor::matrix(1, width));
    params_.running.push_back(Tensor::matrix(1, width, 1.0));
    stack.push_back({LayerKind::batch_norm, width, width, idx, buf});
  }
  static void add_relu(std::vector<Layer>& stack, std::size_t width) {
    stack.push_back({LayerKind::relu, width, width, 0, 0});
  }

  void build() {
    std::size_t width = spec_.input_width;
    for (const auto& l : spec_.encoder_layers) {
      add_dense(encoder_, Head::encoder, width, l.width);
      if (l.activation == Activation::relu) add_relu(encoder_, l.width);
      width = l.width;
    }
    add_dense(projection_, Head::projection, width, spec_.projection_hidden);
    add_relu(projection_, spec_.projection_hidden);
    add_dense(projection_, Head::projection, spec_.projection_hidden, spec_.projection_out);

    add_dense(classifier_, Head::classifier, width, spec_.classifier_hidden);
    if (spec_.use_batchnorm_in_classifier) add_norm(classifier_, Head::classifier, spec_.classifier_hidden);
    add_relu(classifier_, spec_.classifier_hidden);
    add_dense(classifier_, Head::classifier, spec_.classifier_hidden, spec_.class_count);
  }

  ForwardResult run_forward(const Params& params, Params* stats_sink, const Tensor& batch, Head head) const {
    const bool train = stats_sink != nullptr;
    require(batch.shape.size() >= 2 || batch.shape.size() == 1, "forward expects a batch tensor");
    require(batch.cols() == spec_.input_width, "batch width does not match the network input width");
    ForwardResult r;
    r.cache.head = head;
    r.cache.from_train_mode = train;
    Tensor x = batch.shape.size() == 2 ? batch : Tensor({batch.rows(), batch.cols()}, batch.data);
    auto run_stack = [&](Head stack_head, std::vector<LayerCache>& caches) {
      std::size_t layer_index = 0;
      for (const Layer& l : layers(stack_head)) {
        LayerCache c;
        x = layer_forward(params, stats_sink, l, std::move(x), c);
        if (!x.all_finite())
          throw NumericFailure("non-finite activation at " + std::string(to_string(stack_head)) + " layer " + std::to_string(layer_index));
        if (train) caches.push_back(std::move(c));
        ++layer_index;
      }
    };
    run_stack(Head::encoder, r.cache.encoder);
    if (head != Head::encoder) run_stack(head, r.cache.head_layers);
    if (head == Head::classifier) {
      r.output = softmax(x);
      r.logits = std::move(x);
    } else {
      r.output = std::move(x);
    }
    return r;
  }

  static Tensor layer_forward(const Params& params, Params* stats_sink, const Layer& l, Tensor x, LayerCache& cache) {
    const bool train = stats_sink != nullptr;
    switch (l.kind) {
      case LayerKind::dense: {
        const Tensor& w = params.trainable[l.param].value;
        const Tensor& b = params.trainable[l.param + 1].value;
        Tensor y = kernels::matmul(x, w);
        for (std::size_t i = 0; i < y.rows(); ++i) {
          auto row = y.row(i);
          for (std::size_t j = 0; j < l.out; ++j) row[j] += b.data[j];
        }
        if (train) cache.input = std::move(x);
        return y;
      }
      case LayerKind::relu: {
        Tensor y = x;
        for (double& v : y.data) v = v > 0.0 ? v : 0.0;
        if (train) cache.input = std::move(x);
        return y;
      }
      case LayerKind::batch_norm: {
        const std::size_t n = x.rows(), w = l.out;
        const Tensor& scale = params.trainable[l.param].value;
        const Tensor& shift = params.trainable[l.param + 1].value;
        const Tensor& run_mean = params.running[l.buffer];
        const Tensor& run_var = params.running[l.buffer + 1];
        std::vector<double> mean(w, 0.0), var(w, 0.0);
        if (train) {
          if (n < 2) throw InvalidArgument("batch normalization in train mode needs a batch of at least 2");
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) mean[j] += x(i, j);
          for (auto& m : mean) m /= static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) var[j] += (x(i, j) - mean[j]) * (x(i, j) - mean[j]);
          for (auto& v : var) v /= static_cast<double>(n);
          Tensor& sink_mean = stats_sink->running[l.buffer];
          Tensor& sink_var = stats_sink->running[l.buffer + 1];
          for (std::size_t j = 0; j < w; ++j) {
            sink_mean.data[j] = kRunningMomentum * sink_mean.data[j] + (1.0 - kRunningMomentum) * mean[j];
            sink_var.data[j] = kRunningMomentum * sink_var.data[j] + (1.0 - kRunningMomentum) * var[j];
          }
        } else {
          mean = run_mean.data;
          var = run_var.data;
        }
        std::vector<double> inv_std(w);
        for (std::size_t j = 0; j < w; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + kNormEpsilon);
        Tensor xhat = zeros_like(x);
        Tensor y = zeros_like(x);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            xhat(i, j) = (x(i, j) - mean[j]) * inv_std[j];
            y(i, j) = scale.data[j] * xhat(i, j) + shift.data[j];
          }
        if (train) {
          cache.normalized = std::move(xhat);
          cache.inv_std = std::move(inv_std);
        }
        return y;
      }
    }
    return x;
  }

  Tensor layer_backward(const Layer& l, const LayerCache& c, const Tensor& grad, Gradients& g) const {
    switch (l.kind) {
      case LayerKind::dense: {
        Tensor& gw = g.params[l.param];
        Tensor& gb = g.params[l.param + 1];
        gw = kernels::matmul_tn(c.input, grad);
        for (std::size_t i = 0; i < grad.rows(); ++i)
          for (std::size_t j = 0; j < l.out; ++j) gb.data[j] += grad(i, j);
        return kernels::matmul_nt(grad, params_.trainable[l.param].value);
      }
      case LayerKind::relu: {
        Tensor out = grad;
        for (std::size_t i = 0; i < out.data.size(); ++i)
          if (!(c.input.data[i] > 0.0)) out.data[i] = 0.0;
        return out;
      }
      case LayerKind::batch_norm: {
        const std::size_t n = grad.rows(), w = l.out;
        const Tensor& scale = params_.trainable[l.param].value;
        Tensor& gscale = g.params[l.param];
        Tensor& gshift = g.params[l.param + 1];
        std::vector<double> sum_dxhat(w, 0.0), sum_dxhat_xhat(w, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const double dy = grad(i, j);
            gscale.data[j] += dy * c.normalized(i, j);
            gshift.data[j] += dy;
            const double dxhat = dy * scale.data[j];
            sum_dxhat[j] += dxhat;
            sum_dxhat_xhat[j] += dxhat * c.normalized(i, j);
          }
        Tensor out = zeros_like(grad);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const double dxhat = grad(i, j) * scale.data[j];
            out(i, j) = inv_n * c.inv_std[j] *
                        (static_cast<double>(n) * dxhat - sum_dxhat[j] - c.normalized(i, j) * sum_dxhat_xhat[j]);
          }
        return out;
      }
    }
    return grad;
  }

  NetworkSpec spec_;
  Params params_;
  std::vector<Layer> encoder_, projection_, classifier_;
};

// Binary parameter snapshot: "NLPR", u32 version, then every trainable and
// running tensor as (u32 rank, u64 dims..., f64 data...), little-endian.

inline void write_params(std::ostream& os, const Params& p) {
  os.write("NLPR", 4);
  detail::write_le<std::uint32_t>(os, 1);
  auto put = [&](const Tensor& t) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::write_le<std::uint64_t>(os, d);
    for (double v : t.data) detail::write_le<double>(os, v);
  };
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.trainable.size()));
  for (const auto& t : p.trainable) put(t.value);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.running.size()));
  for (const auto& t : p.running) put(t);
}

/// Loads values into `p`, whose layout (count and shapes) must already match.
inline void read_params(std::istream& is, Params& p) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "NLPR") throw FormatError("not a parameter snapshot", 0);
  if (detail::read_le<std::uint32_t>(is) != 1) throw FormatError("unsupported parameter snapshot version", 4);
  auto get = [&](Tensor& t) {
    const auto rank = detail::read_le<std::uint32_t>(is);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = detail::read_le<std::uint64_t>(is);
    if (shape != t.shape) throw FormatError("parameter shape mismatch", static_cast<std::size_t>(is.tellg()));
    for (double& v : t.data) v = detail::read_le<double>(is);
  };
  if (detail::read_le<std::uint32_t>(is) != p.trainable.size()) throw FormatError("parameter count mismatch", 8);
  for (auto& t : p.trainable) get(t.value);
  if (detail::read_le<std::uint32_t>(is) != p.running.size()) throw FormatError("running statistics count mismatch", static_cast<std::size_t>(is.tellg()));
  for (auto& t : p.running) get(t);
}

}  // namespace nlab
