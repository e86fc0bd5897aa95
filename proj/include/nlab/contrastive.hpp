// Stochastic view augmentation and the contrastive objectives: NT-Xent, the
// supervised contrastive loss (positives share a label), and its sample-weighted
// variant where likely-mislabeled positives contribute only through their weight.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "nlab/core.hpp"
#include "nlab/tensor.hpp"

namespace nlab {

struct AugmentRecipe {
  std::size_t crop_padding = 0;
  double flip_prob = 0.0;
  double jitter = 0.0;  // per-channel scale in [1-j, 1+j] and shift in [-j/2, j/2]
  std::size_t blur_kernel = 0;  // odd width, 0 disables
  double blur_prob = 0.0;
  double grayscale_prob = 0.0;
  double rotation_degrees = 0.0;
  double noise_stddev = 0.0;  // additive Gaussian noise, used for non-image data

  static AugmentRecipe contrastive() {
    AugmentRecipe r;
    r.crop_padding = 1;
    r.flip_prob = 0.5;
    r.jitter = 0.4;
    r.blur_kernel = 3;
    r.blur_prob = 0.5;
    r.grayscale_prob = 0.2;
    r.noise_stddev = 0.1;
    return r;
  }
  static AugmentRecipe classification() {
    AugmentRecipe r;
    r.crop_padding = 1;
    r.flip_prob = 0.5;
    r.rotation_degrees = 20.0;
    return r;
  }

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    require(prob(flip_prob) && prob(blur_prob) && prob(grayscale_prob), "augmentation probabilities must lie in [0, 1]");
    require(jitter >= 0.0 && jitter <= 1.0, "color jitter strength must lie in [0, 1]");
    require(blur_kernel == 0 || blur_kernel % 2 == 1, "blur kernel width must be odd or 0");
    require(rotation_degrees >= 0.0 && rotation_degrees <= 180.0, "rotation must lie in [0, 180] degrees");
    require(noise_stddev >= 0.0, "noise level must be >= 0");
  }

  bool operator==(const AugmentRecipe&) const = default;
};

namespace detail {

/// Mirror index into [0, n) without repeating the edge pixel.
inline std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

inline void crop(std::vector<double>& img, const ImageShape& s, std::size_t pad, Rng& rng) {
  const auto span = static_cast<std::ptrdiff_t>(2 * pad);
  const auto dy = static_cast<std::ptrdiff_t>(uniform_index(rng, static_cast<std::size_t>(span) + 1)) - static_cast<std::ptrdiff_t>(pad);
  const auto dx = static_cast<std::ptrdiff_t>(uniform_index(rng, static_cast<std::size_t>(span) + 1)) - static_cast<std::ptrdiff_t>(pad);
  const auto h = static_cast<std::ptrdiff_t>(s.height), w = static_cast<std::ptrdiff_t>(s.width);
  std::vector<double> out(img.size());
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x)
        out[(c * s.height + static_cast<std::size_t>(y)) * s.width + static_cast<std::size_t>(x)] =
            img[(c * s.height + static_cast<std::size_t>(reflect(y + dy, h))) * s.width + static_cast<std::size_t>(reflect(x + dx, w))];
  img.swap(out);
}

inline void flip(std::vector<double>& img, const ImageShape& s) {
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t y = 0; y < s.height; ++y) {
      auto* row = img.data() + (c * s.height + y) * s.width;
      std::reverse(row, row + s.width);
    }
}

/// Bilinear rotation about the image centre, borders clamped.
inline void rotate(std::vector<double>& img, const ImageShape& s, double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(s.height) - 1.0) / 2.0, cx = (static_cast<double>(s.width) - 1.0) / 2.0;
  const auto h = static_cast<std::ptrdiff_t>(s.height), w = static_cast<std::ptrdiff_t>(s.width);
  auto at = [&](std::size_t c, std::ptrdiff_t y, std::ptrdiff_t x) {
    y = std::clamp<std::ptrdiff_t>(y, 0, h - 1);
    x = std::clamp<std::ptrdiff_t>(x, 0, w - 1);
    return img[(c * s.height + static_cast<std::size_t>(y)) * s.width + static_cast<std::size_t>(x)];
  };
  std::vector<double> out(img.size());
  for (std::size_t y = 0; y < s.height; ++y)
    for (std::size_t x = 0; x < s.width; ++x) {
      const double ry = static_cast<double>(y) - cy, rx = static_cast<double>(x) - cx;
      const double sy = cs * ry - sn * rx + cy, sx = sn * ry + cs * rx + cx;
      const double fy = std::floor(sy), fx = std::floor(sx);
      const double ty = sy - fy, tx = sx - fx;
      const auto y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
      for (std::size_t c = 0; c < s.channels; ++c) {
        const double v = (1 - ty) * ((1 - tx) * at(c, y0, x0) + tx * at(c, y0, x0 + 1)) +
                         ty * ((1 - tx) * at(c, y0 + 1, x0) + tx * at(c, y0 + 1, x0 + 1));
        out[(c * s.height + y) * s.width + x] = v;
      }
    }
  img.swap(out);
}

inline void blur(std::vector<double>& img, const ImageShape& s, std::size_t kernel, double sigma) {
  const auto r = static_cast<std::ptrdiff_t>(kernel / 2);
  std::vector<double> k(kernel);
  double total = 0.0;
  for (std::ptrdiff_t i = -r; i <= r; ++i) total += (k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma)));
  for (double& v : k) v /= total;
  const auto h = static_cast<std::ptrdiff_t>(s.height), w = static_cast<std::ptrdiff_t>(s.width);
  std::vector<double> tmp(img.size());
  for (std::size_t c = 0; c < s.channels; ++c) {
    const std::size_t base = c * s.height * s.width;
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * img[base + static_cast<std::size_t>(y * w + reflect(x + i, w))];
        tmp[base + static_cast<std::size_t>(y * w + x)] = acc;
      }
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * tmp[base + static_cast<std::size_t>(reflect(y + i, h) * w + x)];
        img[base + static_cast<std::size_t>(y * w + x)] = acc;
      }
  }
}

inline void grayscale(std::vector<double>& img, const ImageShape& s) {
  const std::size_t plane = s.height * s.width;
  static constexpr double kLuma[3] = {0.299, 0.587, 0.114};
  for (std::size_t p = 0; p < plane; ++p) {
    double g = 0.0;
    for (std::size_t c = 0; c < s.channels; ++c)
      g += (s.channels == 3 ? kLuma[c] : 1.0 / static_cast<double>(s.channels)) * img[c * plane + p];
    for (std::size_t c = 0; c < s.channels; ++c) img[c * plane + p] = g;
  }
}

}  // namespace detail

/// One augmented view of a flattened sample. Images go through crop (reflective
/// padding), horizontal flip, rotation, per-channel colour scale/shift, Gaussian
/// blur and grayscale, in that order, then get clipped to [0, 1]. Non-image
/// samples only receive additive Gaussian noise.
inline std::vector<double> augment(std::span<const double> sample, const ImageShape& shape, const AugmentRecipe& recipe,
                                   Rng& rng) {
  recipe.validate();
  std::vector<double> img(sample.begin(), sample.end());
  if (!shape.is_image()) {
    if (recipe.noise_stddev > 0.0)
      for (double& v : img) v += normal(rng, 0.0, recipe.noise_stddev);
    return img;
  }
  require(shape.size() == sample.size(), "image shape does not match sample width");
  for (double v : sample) require(v >= 0.0 && v <= 1.0, "image values must lie in [0, 1]");

  if (recipe.crop_padding > 0) detail::crop(img, shape, recipe.crop_padding, rng);
  if (recipe.flip_prob > 0.0 && uniform(rng) < recipe.flip_prob) detail::flip(img, shape);
  if (recipe.rotation_degrees > 0.0) detail::rotate(img, shape, uniform(rng, -recipe.rotation_degrees, recipe.rotation_degrees));
  if (recipe.jitter > 0.0) {
    const std::size_t plane = shape.height * shape.width;
    for (std::size_t c = 0; c < shape.channels; ++c) {
      const double scale = uniform(rng, 1.0 - recipe.jitter, 1.0 + recipe.jitter);
      const double shift = uniform(rng, -0.5 * recipe.jitter, 0.5 * recipe.jitter);
      for (std::size_t p = 0; p < plane; ++p) img[c * plane + p] = scale * img[c * plane + p] + shift;
    }
  }
  if (recipe.blur_kernel > 1 && recipe.blur_prob > 0.0 && uniform(rng) < recipe.blur_prob)
    detail::blur(img, shape, recipe.blur_kernel, uniform(rng, 0.1, 2.0));
  if (recipe.grayscale_prob > 0.0 && uniform(rng) < recipe.grayscale_prob) detail::grayscale(img, shape);
  for (double& v : img) v = std::clamp(v, 0.0, 1.0);
  return img;
}

/// 2B embedding rows where row i and row pair[i] are two views of one source sample.
struct EmbeddingBatch {
  Tensor z;
  std::vector<std::size_t> pair;
};

/// Standard layout: rows [0, B) are first views, rows [B, 2B) the matching second views.
inline std::vector<std::size_t> two_view_pairs(std::size_t sources) {
  std::vector<std::size_t> pair(2 * sources);
  for (std::size_t i = 0; i < sources; ++i) {
    pair[i] = i + sources;
    pair[i + sources] = i;
  }
  return pair;
}

struct Normalized {
  Tensor unit;
  std::vector<double> norms;
};

inline Normalized l2_normalize(const Tensor& z) {
  Normalized out{z, std::vector<double>(z.rows())};
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = out.unit.row(i);
    double s = 0.0;
    for (double v : r) s += v * v;
    const double norm = std::max(std::sqrt(s), 1e-12);
    out.norms[i] = norm;
    for (double& v : r) v /= norm;
  }
  return out;
}

/// Pulls a gradient w.r.t. unit rows back to the raw rows: (g - <g,u> u) / |z|.
inline Tensor l2_normalize_backward(const Normalized& n, const Tensor& grad_unit) {
  Tensor out = grad_unit;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto g = out.row(i);
    auto u = n.unit.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) dot += g[j] * u[j];
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = (g[j] - dot * u[j]) / n.norms[i];
  }
  return out;
}

struct ContrastiveValue {
  double value = 0.0;
  Tensor grad;  // d(value)/d(z)
  std::vector<double> per_anchor;
};

namespace detail {

inline void check_embedding_batch(const EmbeddingBatch& b, double tau) {
  require(tau > 0.0, "temperature must be positive");
  require(b.z.shape.size() == 2, "embeddings must be a 2B x D tensor");
  const std::size_t n = b.z.rows();
  require(n >= 4 && n % 2 == 0, "contrastive batches need 2B >= 4 rows");
  require(b.pair.size() == n, "pair index must cover every row");
  for (std::size_t i = 0; i < n; ++i) {
    require(b.pair[i] < n && b.pair[i] != i && b.pair[b.pair[i]] == i, "pair index must be a fixed-point-free involution");
  }
}

/// Shared engine. For anchor i the positives are its pair plus every other row
/// with the same label (when labels are given); positive p carries weight 1 if it
/// is the pair, otherwise weights[p] (1 when weights are absent).
///   L_i = -log( (1/|P(i)|) sum_{p in P(i)} w~ exp(s_ip) / sum_{a != i} exp(s_ia) ),  s = z_i.z_a / tau
inline ContrastiveValue contrastive_core(const EmbeddingBatch& b, std::span<const int> labels,
                                         std::span<const double> weights, double tau) {
  check_embedding_batch(b, tau);
  const std::size_t n = b.z.rows();
  Tensor sim = kernels::matmul_nt(b.z, b.z);
  for (double& v : sim.data) v /= tau;
  Tensor dsim = Tensor::matrix(n, n);
  ContrastiveValue out{0.0, zeros_like(b.z), std::vector<double>(n)};
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < n; ++a)
      if (a != i) mx = std::max(mx, sim(i, a));
    double denom = 0.0, numer = 0.0;
    std::size_t positives = 0;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == i) continue;
      e[a] = std::exp(sim(i, a) - mx);
      denom += e[a];
    }
    auto positive_weight = [&](std::size_t a) -> double {
      if (a == b.pair[i]) return 1.0;
      if (labels.empty() || labels[a] != labels[i]) return -1.0;
      return weights.empty() ? 1.0 : weights[a];
    };
    for (std::size_t a = 0; a < n; ++a) {
      if (a == i) continue;
      const double w = positive_weight(a);
      if (w < 0.0) continue;
      ++positives;
      numer += w * e[a];
    }
    if (!(numer > 0.0)) throw NumericFailure("contrastive numerator underflowed");
    const double li = std::log(static_cast<double>(positives)) - std::log(numer) + std::log(denom);
    out.per_anchor[i] = li;
    out.value += li;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == i) continue;
      double g = e[a] / denom;
      const double w = positive_weight(a);
      if (w > 0.0) g -= w * e[a] / numer;
      dsim(i, a) = g;
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.value *= inv;
  // d/dz = (G + Gᵀ) z / tau, averaged over anchors.
  Tensor sym = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < n; ++a) sym(i, a) = (dsim(i, a) + dsim(a, i)) * inv / tau;
  out.grad = kernels::matmul(sym, b.z);
  return out;
}

}  // namespace detail

inline ContrastiveValue nt_xent(const EmbeddingBatch& batch, double tau) { return detail::contrastive_core(batch, {}, {}, tau); }

inline ContrastiveValue sup_con(const EmbeddingBatch& batch, std::span<const int> labels, double tau) {
  require(labels.size() == batch.z.rows(), "one label per embedding row is required");
  return detail::contrastive_core(batch, labels, {}, tau);
}

/// `weights` holds one clean-probability per row (both views of a source share it).
inline ContrastiveValue weighted_sup_con(const EmbeddingBatch& batch, std::span<const int> labels,
                                         std::span<const double> weights, double tau) {
  require(labels.size() == batch.z.rows(), "one label per embedding row is required");
  require(weights.size() == batch.z.rows(), "one weight per embedding row is required");
  for (double w : weights) require(w >= 0.0 && w <= 1.0, "contrastive weights must lie in [0, 1]");
  return detail::contrastive_core(batch, labels, weights, tau);
}

}  // namespace nlab
