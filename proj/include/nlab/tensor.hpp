// Dense row-major tensors of doubles and the handful of matrix kernels the
// network needs. Every kernel accumulates in a fixed order.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nlab/core.hpp"

namespace nlab {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
    for (auto d : shape) require(d > 0, "tensor dimensions must be positive");
    data.assign(element_count(shape), fill);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    for (auto d : shape) require(d > 0, "tensor dimensions must be positive");
    require(element_count(shape) == data.size(), "tensor data length does not match shape");
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const noexcept { return data.size(); }
  bool empty() const noexcept { return data.empty(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape.front(); }
  /// Elements per leading index (the flattened row width).
  std::size_t cols() const { return shape.empty() ? 0 : data.size() / shape.front(); }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor&) const = default;
};

/// Channel-major image layout (C x H x W) of one flattened sample.
struct ImageShape {
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t size() const { return channels * height * width; }
  bool is_image() const { return channels > 0 && height > 0 && width > 0; }
  bool operator==(const ImageShape&) const = default;
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape, 0.0); }

/// Rows `indices` of `src`, stacked.
inline Tensor gather_rows(const Tensor& src, std::span<const std::size_t> indices) {
  const std::size_t w = src.cols();
  Tensor out({indices.size(), w});
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(src.data.begin() + static_cast<std::ptrdiff_t>(indices[i] * w), w,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * w));
  return out;
}

namespace kernels {

/// C = A·B with A [n×k], B [k×m].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  require(b.rows() == k, "matmul: inner dimensions differ");
  Tensor c = Tensor::matrix(n, m);
  parallel::for_each_index(n, 32, [&](std::size_t i) {
    double* ci = c.data.data() + i * m;
    const double* ai = a.data.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b.data.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  });
  return c;
}

/// C = Aᵀ·B with A [n×k], B [n×m]; result [k×m].
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  require(b.rows() == n, "matmul_tn: row counts differ");
  Tensor c = Tensor::matrix(k, m);
  parallel::for_each_index(k, 8, [&](std::size_t p) {
    double* cp = c.data.data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = a.data[i * k + p];
      if (av == 0.0) continue;
      const double* bi = b.data.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * bi[j];
    }
  });
  return c;
}

/// C = A·Bᵀ with A [n×m], B [k×m]; result [n×k].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), m = a.cols(), k = b.rows();
  require(b.cols() == m, "matmul_nt: column counts differ");
  Tensor c = Tensor::matrix(n, k);
  parallel::for_each_index(n, 32, [&](std::size_t i) {
    const double* ai = a.data.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b.data.data() + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += ai[j] * bp[j];
      c.data[i * k + p] = s;
    }
  });
  return c;
}

}  // namespace kernels
}  // namespace nlab
