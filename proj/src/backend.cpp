// SPDX-License-Identifier: Apache-2.0
#include "sketch/backend.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "sketch/error.hpp"

namespace sketch {

ToyLatentBackend::ToyLatentBackend(ToyBackendConfig config) : config_(config) {
  if (config_.image_size < 2 || config_.image_size % 2 != 0)
    throw ConfigError("toy backend: image_size must be even and at least 2");
  if (config_.conditioning_dim == 0) throw ConfigError("toy backend: conditioning_dim must be positive");
  const auto half = config_.image_size / 2;
  const auto latent = half * half;
  Rng rng(config_.seed);
  block_of_row_.resize(latent);
  std::iota(block_of_row_.begin(), block_of_row_.end(), std::size_t{0});
  std::shuffle(block_of_row_.begin(), block_of_row_.end(), rng);
  std::bernoulli_distribution coin(0.5);
  sign_of_row_.resize(latent);
  for (auto& s : sign_of_row_) s = coin(rng) ? 1.0f : -1.0f;
  c_ = Tensor::randn({latent, config_.conditioning_dim},
                     1.0f / std::sqrt(static_cast<float>(config_.conditioning_dim)), rng);
}

Tensor ToyLatentBackend::encode(const GrayImage& image) const {
  const auto n = config_.image_size;
  if (image.width != n || image.height != n)
    throw DimensionError("toy backend expects " + std::to_string(n) + "x" + std::to_string(n) +
                         " images, got " + std::to_string(image.width) + "x" +
                         std::to_string(image.height));
  const auto half = n / 2;
  Tensor z({latent_dim()});
  for (std::size_t r = 0; r < latent_dim(); ++r) {
    const auto b = block_of_row_[r];
    const auto bx = 2 * (b % half), by = 2 * (b / half);
    float sum = 0.0f;
    for (std::size_t dy = 0; dy < 2; ++dy)
      for (std::size_t dx = 0; dx < 2; ++dx)
        sum += static_cast<float>(image.at(bx + dx, by + dy)) / 255.0f - 0.5f;
    z[r] = sign_of_row_[r] * 0.5f * sum;
  }
  return z;
}

GrayImage ToyLatentBackend::decode(const Tensor& latent) const {
  if (latent.size() != latent_dim())
    throw DimensionError("toy backend latent has " + std::to_string(latent.size()) +
                         " values, expected " + std::to_string(latent_dim()));
  if (!latent.all_finite()) throw ValidationError("toy backend: non-finite latent");
  const auto n = config_.image_size, half = n / 2;
  GrayImage out(n, n);
  for (std::size_t r = 0; r < latent_dim(); ++r) {
    const auto b = block_of_row_[r];
    const auto bx = 2 * (b % half), by = 2 * (b / half);
    const float x = 0.5f * sign_of_row_[r] * latent[r];
    const long v = std::lround((x + 0.5f) * 255.0f);
    const auto px = static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
    for (std::size_t dy = 0; dy < 2; ++dy)
      for (std::size_t dx = 0; dx < 2; ++dx) out.at(bx + dx, by + dy) = px;
  }
  return out;
}

Tensor ToyLatentBackend::blend(const Tensor& latent, const Tensor& conditioning, float strength,
                               float guidance_scale) const {
  if (latent.size() != latent_dim())
    throw DimensionError("toy backend latent has " + std::to_string(latent.size()) +
                         " values, expected " + std::to_string(latent_dim()));
  if (conditioning.size() != conditioning_dim())
    throw DimensionError("conditioning has " + std::to_string(conditioning.size()) +
                         " values, backend expects " + std::to_string(conditioning_dim()));
  if (!conditioning.all_finite()) throw ValidationError("conditioning vector is not finite");
  if (!(strength >= 0.0f && strength <= 1.0f))
    throw ValidationError("strength must be in [0, 1]");
  if (!(guidance_scale >= 0.0f) || !std::isfinite(guidance_scale))
    throw ValidationError("guidance_scale must be finite and non-negative");
  Tensor out({latent_dim()});
  const auto k = conditioning_dim();
  for (std::size_t r = 0; r < latent_dim(); ++r) {
    float dir = 0.0f;
    for (std::size_t j = 0; j < k; ++j) dir += c_(r, j) * conditioning[j];
    out[r] = (1.0f - strength) * latent[r] + strength * std::tanh(guidance_scale * dir);
  }
  return out;
}

GrayImage ToyLatentBackend::generate(const Tensor& latent, const Tensor& conditioning,
                                     float strength, float guidance_scale,
                                     std::uint64_t /*seed*/) const {
  // At s = 0 the blend is exactly z, since tanh is bounded.
  return decode(blend(latent, conditioning, strength, guidance_scale));
}

Tensor ToyLatentBackend::basis_row(std::size_t r) const {
  if (r >= latent_dim()) throw DimensionError("basis row out of range");
  const auto n = config_.image_size, half = n / 2;
  const auto b = block_of_row_[r];
  const auto bx = 2 * (b % half), by = 2 * (b / half);
  Tensor row({n * n});
  for (std::size_t dy = 0; dy < 2; ++dy)
    for (std::size_t dx = 0; dx < 2; ++dx) row[(by + dy) * n + bx + dx] = 0.5f * sign_of_row_[r];
  return row;
}

}  // namespace sketch
