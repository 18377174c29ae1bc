// SPDX-License-Identifier: Apache-2.0
#include "sketch/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "sketch/error.hpp"

namespace sketch {

IngestionError::IngestionError(std::vector<std::string> issues)
    : Error([&] {
        std::string msg = "ingestion failed with " + std::to_string(issues.size()) + " issue(s)";
        for (const auto& i : issues) msg += "\n  " + i;
        return msg;
      }()),
      issues_(std::move(issues)) {}

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto s : shape)
    if (s == 0) throw DimensionError("tensor dimensions must be positive, got " + sketch::shape_string(shape));
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, float fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != product(shape_))
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + sketch::shape_string(shape_));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<float> values) {
  return Tensor({rows, cols}, std::vector<float>(values));
}

Tensor Tensor::vector(std::initializer_list<float> values) {
  return Tensor({values.size()}, std::vector<float>(values));
}

Tensor Tensor::randn(std::vector<std::size_t> shape, float stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

Tensor Tensor::uniform(std::vector<std::size_t> shape, float bound, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

std::span<float> Tensor::row(std::size_t r) {
  const auto c = cols();
  return std::span<float>(data_).subspan(r * c, c);
}

std::span<const float> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return std::span<const float>(data_).subspan(r * c, c);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const { return sketch::shape_string(shape_); }

void expect_cols(const Tensor& t, std::size_t cols, const char* what) {
  if (t.rank() != 2 || t.cols() != cols)
    throw DimensionError(std::string(what) + ": expected [N x " + std::to_string(cols) +
                         "], got " + t.shape_string());
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  add_inplace(out, b);
  return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

Tensor scaled(const Tensor& a, float s) {
  Tensor out = a;
  for (auto& v : out.values()) v *= s;
  return out;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("max_abs_diff: shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::uint64_t tensor_hash(const Tensor& t, std::uint64_t seed) {
  std::uint64_t h = seed;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (auto s : t.shape()) mix(&s, sizeof s);
  mix(t.data(), t.size() * sizeof(float));
  return h;
}

}  // namespace sketch
