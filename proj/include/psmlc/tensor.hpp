#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psmlc/error.hpp"

namespace psmlc {

/// Dense row-major tensor of doubles.
///
/// Most of the library works with rank-2 tensors (samples x features,
/// samples x classes, out x in weight matrices); rank-1 is used for bias
/// vectors. The shape product always equals the element count.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
      throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape product " +
                        std::to_string(element_count(shape_)));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  static Tensor vector(std::vector<double> data) {
    const std::size_t n = data.size();
    return Tensor({n}, std::move(data));
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const { return rank() == 0 ? 0 : shape_[0]; }
  std::size_t cols() const {
    if (rank() == 1) return shape_[0];
    return rank() < 2 ? 0 : shape_[1];
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * shape_[1], shape_[1]}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * shape_[1], shape_[1]};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  /// Rows listed in `indices`, in that order.
  Tensor gather_rows(std::span<const std::size_t> indices) const {
    const std::size_t c = shape_[1];
    Tensor out = matrix(indices.size(), c);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[i] * c), c,
                  out.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    return out;
  }

  /// Contiguous row block [begin, begin + count).
  Tensor slice_rows(std::size_t begin, std::size_t count) const {
    const std::size_t c = shape_[1];
    Tensor out = matrix(count, c);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(begin * c), count * c,
                out.data_.begin());
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  std::vector<std::size_t> shape_{0};
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) throw ConfigError(std::string(what) + ": shape mismatch");
}

}  // namespace psmlc
