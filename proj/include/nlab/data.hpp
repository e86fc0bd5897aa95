// Labeled datasets with a clean and a noisy label track: synthetic generators,
// the CIFAR-10 binary reader, the NLAB container, and label-noise injection.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nlab/core.hpp"
#include "nlab/nn.hpp"
#include "nlab/tensor.hpp"

namespace nlab {

enum class NoiseType { none, symmetric, asymmetric_pair, asymmetric_circular };

inline const char* to_string(NoiseType t) {
  switch (t) {
    case NoiseType::none: return "none";
    case NoiseType::symmetric: return "symmetric";
    case NoiseType::asymmetric_pair: return "asymmetric-pair";
    case NoiseType::asymmetric_circular: return "asymmetric-circular";
  }
  return "?";
}

/// Provenance of the noisy label track.
struct NoiseSpec {
  NoiseType type = NoiseType::none;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> mapping;  // per source class: flip target, -1 when unmapped
};

struct LabeledDataset {
  Tensor features;  // n x d; empty when n == 0
  ImageShape image;  // set when rows are flattened C x H x W images
  std::size_t feature_width = 0;
  std::vector<int> clean_labels;
  std::vector<int> noisy_labels;
  std::size_t class_count = 0;
  NoiseSpec noise;

  std::size_t size() const { return clean_labels.size(); }

  void validate() const {
    require(class_count >= 2, "dataset needs at least two classes");
    require(clean_labels.size() == noisy_labels.size(), "label tracks differ in length");
    require(size() == 0 || (features.rows() == size() && features.cols() == feature_width), "feature tensor does not match label count");
    require(!image.is_image() || image.size() == feature_width, "image shape does not match feature width");
    for (auto track : {&clean_labels, &noisy_labels})
      for (int y : *track) require(y >= 0 && static_cast<std::size_t>(y) < class_count, "label out of range");
  }
};

/// Fraction of samples whose noisy label equals the clean label.
inline double noise_accuracy(const LabeledDataset& d) {
  require(d.clean_labels.size() == d.noisy_labels.size(), "label tracks differ in length");
  if (d.size() == 0) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < d.size(); ++i) same += d.clean_labels[i] == d.noisy_labels[i];
  return static_cast<double>(same) / static_cast<double>(d.size());
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class SyntheticKind { blobs, ring, mini_image };

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t samples = 1000;
  SyntheticKind kind = SyntheticKind::mini_image;
  double separation = 1.0;
  std::uint64_t seed = 1;
  std::size_t dims = 16;        // blobs only
  std::size_t image_size = 10;  // mini_image: H = W
  std::size_t channels = 3;     // mini_image

  bool operator==(const SyntheticSpec&) const = default;
};

namespace detail {

/// Class template for mini images: a few strokes on an H x W grid, drawn from a
/// stream keyed only by the class so train and test sets share templates.
inline std::vector<double> stroke_template(std::size_t cls, std::size_t size, std::uint64_t template_seed) {
  std::vector<double> t(size * size, 0.0);
  const auto s = static_cast<double>(size);
  auto plot = [&](double y, double x) {
    const auto iy = static_cast<std::ptrdiff_t>(std::lround(y)), ix = static_cast<std::ptrdiff_t>(std::lround(x));
    if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(size) && ix < static_cast<std::ptrdiff_t>(size))
      t[static_cast<std::size_t>(iy) * size + static_cast<std::size_t>(ix)] = 1.0;
  };
  Rng rng = stream(template_seed, 0x7e3, cls);
  // Canonical first stroke by class so small class counts get visibly distinct shapes.
  const double m = (s - 1.0) / 2.0, lo = 0.2 * (s - 1.0), hi = 0.8 * (s - 1.0);
  auto line = [&](double y0, double x0, double y1, double x1) {
    const int steps = static_cast<int>(2 * size);
    for (int k = 0; k <= steps; ++k) {
      const double a = static_cast<double>(k) / steps;
      plot(y0 + a * (y1 - y0), x0 + a * (x1 - x0));
    }
  };
  switch (cls % 4) {
    case 0: line(m, lo, m, hi); break;                                       // horizontal bar
    case 1: line(lo, m, hi, m); break;                                       // vertical bar
    case 2: line(lo, lo, hi, hi); break;                                     // diagonal
    case 3: line(lo, lo, lo, hi), line(hi, lo, hi, hi), line(lo, lo, hi, lo), line(lo, hi, hi, hi); break;  // box
  }
  for (std::size_t extra = 0; extra < cls / 4; ++extra)
    line(uniform(rng, 0, s - 1), uniform(rng, 0, s - 1), uniform(rng, 0, s - 1), uniform(rng, 0, s - 1));
  return t;
}

}  // namespace detail

/// Balanced synthetic dataset (sample i has class i mod K). Label tracks start identical.
inline LabeledDataset generate_synthetic(const SyntheticSpec& spec) {
  require(spec.classes >= 2, "synthetic data needs K >= 2");
  require(spec.samples >= spec.classes, "synthetic data needs n >= K");
  require(spec.separation > 0.0, "separation must be positive");
  LabeledDataset d;
  d.class_count = spec.classes;
  d.clean_labels.resize(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) d.clean_labels[i] = static_cast<int>(i % spec.classes);
  d.noisy_labels = d.clean_labels;

  switch (spec.kind) {
    case SyntheticKind::blobs: {
      require(spec.dims >= 1, "blobs need dims >= 1");
      d.feature_width = spec.dims;
      // Centres depend only on (K, dims) so sets drawn with different seeds share a layout.
      Rng centres = stream(0x5eed, 0xb10b, spec.classes * 1000 + spec.dims);
      Tensor mu = Tensor::matrix(spec.classes, spec.dims);
      for (std::size_t k = 0; k < spec.classes; ++k) {
        double norm = 0.0;
        for (std::size_t j = 0; j < spec.dims; ++j) norm += std::pow(mu(k, j) = normal(centres), 2);
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < spec.dims; ++j) mu(k, j) *= spec.separation / norm;
      }
      d.features = Tensor::matrix(spec.samples, spec.dims);
      for (std::size_t i = 0; i < spec.samples; ++i) {
        Rng rng = stream(spec.seed, 0xb10b, i + 1);
        for (std::size_t j = 0; j < spec.dims; ++j)
          d.features(i, j) = mu(static_cast<std::size_t>(d.clean_labels[i]), j) + normal(rng);
      }
      break;
    }
    case SyntheticKind::ring: {
      d.feature_width = 2;
      d.features = Tensor::matrix(spec.samples, 2);
      for (std::size_t i = 0; i < spec.samples; ++i) {
        Rng rng = stream(spec.seed, 0x5199, i);
        const double radius = spec.separation * static_cast<double>(d.clean_labels[i] + 1) + normal(rng, 0.0, 0.15);
        const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        d.features(i, 0) = radius * std::cos(angle);
        d.features(i, 1) = radius * std::sin(angle);
      }
      break;
    }
    case SyntheticKind::mini_image: {
      require(spec.image_size >= 4 && spec.channels >= 1, "mini images need size >= 4 and >= 1 channel");
      const std::size_t s = spec.image_size, plane = s * s;
      d.image = {spec.channels, s, s};
      d.feature_width = d.image.size();
      d.features = Tensor::matrix(spec.samples, d.feature_width);
      std::vector<std::vector<double>> templates;
      for (std::size_t k = 0; k < spec.classes; ++k) templates.push_back(detail::stroke_template(k, s, 0x5eed));
      const double pixel_noise = 0.25 / spec.separation;
      for (std::size_t i = 0; i < spec.samples; ++i) {
        Rng rng = stream(spec.seed, 0x1a9e, i);
        const auto& tpl = templates[static_cast<std::size_t>(d.clean_labels[i])];
        const auto shift = static_cast<std::ptrdiff_t>(s / 5);
        const auto dy = static_cast<std::ptrdiff_t>(uniform_index(rng, static_cast<std::size_t>(2 * shift + 1))) - shift;
        const auto dx = static_cast<std::ptrdiff_t>(uniform_index(rng, static_cast<std::size_t>(2 * shift + 1))) - shift;
        auto row = d.features.row(i);
        for (std::size_t c = 0; c < spec.channels; ++c) {
          const double fg = uniform(rng, 0.55, 1.0), bg = uniform(rng, 0.0, 0.35);
          for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
              const auto sy = static_cast<std::ptrdiff_t>(y) - dy, sx = static_cast<std::ptrdiff_t>(x) - dx;
              double on = 0.0;
              if (sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(s) && sx < static_cast<std::ptrdiff_t>(s))
                on = tpl[static_cast<std::size_t>(sy) * s + static_cast<std::size_t>(sx)];
              row[c * plane + y * s + x] = std::clamp(bg + on * (fg - bg) + normal(rng, 0.0, pixel_noise), 0.0, 1.0);
            }
        }
      }
      break;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches: records of 1 label byte + 3072 planar RGB bytes.

inline constexpr std::size_t kCifarRecord = 3073;

inline LabeledDataset parse_cifar10_binary(std::span<const unsigned char> bytes) {
  const std::size_t n = bytes.size() / kCifarRecord;
  if (bytes.size() % kCifarRecord != 0) throw FormatError("truncated CIFAR-10 record", n * kCifarRecord);
  LabeledDataset d;
  d.class_count = 10;
  d.image = {3, 32, 32};
  d.feature_width = 3072;
  if (n > 0) d.features = Tensor::matrix(n, 3072);
  d.clean_labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = i * kCifarRecord;
    if (bytes[off] > 9) throw FormatError("CIFAR-10 label byte " + std::to_string(bytes[off]) + " > 9", off);
    d.clean_labels[i] = bytes[off];
    auto row = d.features.row(i);
    for (std::size_t j = 0; j < 3072; ++j) row[j] = static_cast<double>(bytes[off + 1 + j]) / 255.0;
  }
  d.noisy_labels = d.clean_labels;
  return d;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline LabeledDataset load_cifar10_binary(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_cifar10_binary(bytes);
}

// ---------------------------------------------------------------------------
// NLAB container, little-endian:
//   "NLAB" | u32 version | u64 n | u32 C | u32 H | u32 W | u32 K |
//   f64 features[n*d] | i32 clean[n] | i32 noisy[n]
// Vector data is stored with C = 0, H = 1, W = d.

inline constexpr std::uint32_t kNlabVersion = 1;

inline void write_nlab(std::ostream& os, const LabeledDataset& d) {
  d.validate();
  os.write("NLAB", 4);
  detail::write_le<std::uint32_t>(os, kNlabVersion);
  detail::write_le<std::uint64_t>(os, d.size());
  if (d.image.is_image()) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d.image.channels));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d.image.height));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d.image.width));
  } else {
    detail::write_le<std::uint32_t>(os, 0);
    detail::write_le<std::uint32_t>(os, 1);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d.feature_width));
  }
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d.class_count));
  for (double v : d.features.data) detail::write_le<double>(os, v);
  for (int y : d.clean_labels) detail::write_le<std::int32_t>(os, y);
  for (int y : d.noisy_labels) detail::write_le<std::int32_t>(os, y);
  if (!os) throw IoError("failed writing NLAB container");
}

inline LabeledDataset read_nlab(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "NLAB") throw FormatError("missing NLAB magic", 0);
  if (detail::read_le<std::uint32_t>(is) != kNlabVersion) throw FormatError("unsupported NLAB version", 4);
  LabeledDataset d;
  const auto n = detail::read_le<std::uint64_t>(is);
  const auto c = detail::read_le<std::uint32_t>(is), h = detail::read_le<std::uint32_t>(is), w = detail::read_le<std::uint32_t>(is);
  d.class_count = detail::read_le<std::uint32_t>(is);
  if (c > 0) d.image = {c, h, w};
  d.feature_width = c > 0 ? static_cast<std::size_t>(c) * h * w : w;
  if (d.feature_width == 0 || d.class_count < 2) throw FormatError("invalid NLAB header", 12);
  if (n > 0) d.features = Tensor::matrix(n, d.feature_width);
  for (double& v : d.features.data) v = detail::read_le<double>(is);
  d.clean_labels.resize(n);
  d.noisy_labels.resize(n);
  for (int& y : d.clean_labels) y = detail::read_le<std::int32_t>(is);
  for (int& y : d.noisy_labels) y = detail::read_le<std::int32_t>(is);
  try {
    d.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid NLAB payload: ") + e.what(), static_cast<std::size_t>(is.tellg()));
  }
  return d;
}

inline void save_nlab(const std::filesystem::path& path, const LabeledDataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_nlab(out, d);
}

inline LabeledDataset load_nlab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_nlab(in);
}

// ---------------------------------------------------------------------------
// Label noise. Selection is count-based: exactly round(eta * |class|) members of
// each affected class are corrupted, chosen without replacement.

namespace detail {

inline std::vector<std::vector<std::size_t>> members_by_class(const LabeledDataset& d) {
  std::vector<std::vector<std::size_t>> m(d.class_count);
  for (std::size_t i = 0; i < d.size(); ++i) m[static_cast<std::size_t>(d.clean_labels[i])].push_back(i);
  return m;
}

inline std::size_t corrupt_count(double eta, std::size_t class_size) {
  return static_cast<std::size_t>(std::llround(eta * static_cast<double>(class_size)));
}

}  // namespace detail

[[nodiscard]] inline LabeledDataset inject_symmetric(LabeledDataset d, double eta, std::uint64_t seed) {
  require(eta >= 0.0 && eta <= 1.0, "noise ratio must lie in [0, 1]");
  d.validate();
  d.noisy_labels = d.clean_labels;
  const auto k = static_cast<int>(d.class_count);
  auto members = detail::members_by_class(d);
  for (std::size_t c = 0; c < members.size(); ++c) {
    Rng rng = stream(seed, 0x5e1, c);
    auto& idx = members[c];
    shuffle(idx, rng);
    const std::size_t count = detail::corrupt_count(eta, idx.size());
    for (std::size_t t = 0; t < count; ++t) {
      int other = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(k - 1)));
      if (other >= static_cast<int>(c)) ++other;
      d.noisy_labels[idx[t]] = other;
    }
  }
  d.noise = {NoiseType::symmetric, eta, seed, {}};
  return d;
}

struct AsymmetricMap {
  enum class Mode { pair, circular };
  Mode mode = Mode::pair;
  std::vector<int> targets;     // pair mode: per source class, -1 when unmapped
  std::size_t group_size = 0;   // circular mode: contiguous groups of this size

  /// Pair map used for 10 classes: 2->0, 9->1, 4->7, 3<->5. Other class counts use k -> k+1 mod K.
  static AsymmetricMap default_pairs(std::size_t class_count) {
    AsymmetricMap m;
    m.targets.assign(class_count, -1);
    if (class_count == 10) {
      m.targets[2] = 0, m.targets[9] = 1, m.targets[4] = 7, m.targets[3] = 5, m.targets[5] = 3;
    } else {
      for (std::size_t c = 0; c < class_count; ++c) m.targets[c] = static_cast<int>((c + 1) % class_count);
    }
    return m;
  }
  static AsymmetricMap circular(std::size_t group) {
    AsymmetricMap m;
    m.mode = Mode::circular;
    m.group_size = group;
    return m;
  }

  /// Resolved per-class flip targets (-1 for unmapped classes).
  std::vector<int> resolve(std::size_t class_count) const {
    if (mode == Mode::pair) {
      require(targets.size() == class_count, "asymmetric map must list one entry per class");
      for (std::size_t c = 0; c < class_count; ++c) {
        const int t = targets[c];
        require(t == -1 || (t >= 0 && static_cast<std::size_t>(t) < class_count), "asymmetric target out of range");
        require(t != static_cast<int>(c), "asymmetric target must differ from its source");
      }
      return targets;
    }
    require(group_size >= 2 && class_count % group_size == 0, "super-class groups must have equal size >= 2 and partition the classes");
    std::vector<int> out(class_count);
    for (std::size_t c = 0; c < class_count; ++c) {
      const std::size_t base = c - c % group_size;
      out[c] = static_cast<int>(base + (c % group_size + 1) % group_size);
    }
    return out;
  }
};

[[nodiscard]] inline LabeledDataset inject_asymmetric(LabeledDataset d, double eta, const AsymmetricMap& map, std::uint64_t seed) {
  require(eta >= 0.0 && eta <= 1.0, "noise ratio must lie in [0, 1]");
  d.validate();
  const auto targets = map.resolve(d.class_count);
  d.noisy_labels = d.clean_labels;
  auto members = detail::members_by_class(d);
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (targets[c] < 0) continue;
    Rng rng = stream(seed, 0xa5f, c);
    auto& idx = members[c];
    shuffle(idx, rng);
    const std::size_t count = detail::corrupt_count(eta, idx.size());
    for (std::size_t t = 0; t < count; ++t) d.noisy_labels[idx[t]] = targets[c];
  }
  d.noise = {map.mode == AsymmetricMap::Mode::pair ? NoiseType::asymmetric_pair : NoiseType::asymmetric_circular, eta, seed, targets};
  return d;
}

}  // namespace nlab
