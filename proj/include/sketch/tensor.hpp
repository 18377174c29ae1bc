// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sketch {

using Rng = std::mt19937_64;

/// Dense row-major float32 array. The data length always equals the product
/// of the shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, float fill = 0.0f);
  Tensor(std::vector<std::size_t> shape, std::vector<float> data);

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<float> values);
  static Tensor vector(std::initializer_list<float> values);
  static Tensor randn(std::vector<std::size_t> shape, float stddev, Rng& rng);
  static Tensor uniform(std::vector<std::size_t> shape, float bound, Rng& rng);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const {
    if (shape_.size() < 2) return shape_.empty() ? 0 : 1;
    return data_.size() / shape_[0];
  }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void fill(float v);
  bool all_finite() const;
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Throws DimensionError unless `t` is a matrix with the given column count.
void expect_cols(const Tensor& t, std::size_t cols, const char* what);

Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& a, const Tensor& b);
Tensor scaled(const Tensor& a, float s);
float max_abs_diff(const Tensor& a, const Tensor& b);

/// FNV-1a over the raw float bytes; used to check bitwise stability.
std::uint64_t tensor_hash(const Tensor& t, std::uint64_t seed = 1469598103934665603ull);

}  // namespace sketch
