// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>

#include "sketch/image.hpp"
#include "sketch/tensor.hpp"

namespace sketch {

/// Image generator seam. Implementations may live out of process, so every
/// call may throw BackendError.
class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;
  virtual std::size_t conditioning_dim() const = 0;
  virtual std::size_t latent_dim() const = 0;
  virtual Tensor encode(const GrayImage& image) const = 0;
  virtual GrayImage decode(const Tensor& latent) const = 0;
  /// strength = 0 must return decode(latent) exactly; the result must be a
  /// pure function of the arguments.
  virtual GrayImage generate(const Tensor& latent, const Tensor& conditioning, float strength,
                             float guidance_scale, std::uint64_t seed) const = 0;
};

struct ToyBackendConfig {
  std::size_t image_size = 64;
  std::size_t conditioning_dim = 32;
  std::uint64_t seed = 0;
};

/// Linear latent stand-in for a diffusion pipeline.
///
/// Rows of E are the 2x2 block-averaging basis (0.5 on each pixel of a
/// block), permuted and sign-flipped by the seed. They are orthonormal, so
/// decode is E^T and decode(encode(x)) replaces each block by its mean.
/// generate blends z' = (1 - s) z + s tanh(g C c).
class ToyLatentBackend final : public GeneratorBackend {
 public:
  explicit ToyLatentBackend(ToyBackendConfig config = {});

  std::size_t conditioning_dim() const override { return config_.conditioning_dim; }
  std::size_t latent_dim() const override { return block_of_row_.size(); }
  const ToyBackendConfig& config() const { return config_; }

  Tensor encode(const GrayImage& image) const override;
  GrayImage decode(const Tensor& latent) const override;
  /// The toy generator is noise-free, so `seed` does not change the output.
  GrayImage generate(const Tensor& latent, const Tensor& conditioning, float strength,
                     float guidance_scale, std::uint64_t seed) const override;
  /// The blended latent z' before decoding.
  Tensor blend(const Tensor& latent, const Tensor& conditioning, float strength,
               float guidance_scale) const;

  /// Row r of E as a dense [pixels] vector, for tests.
  Tensor basis_row(std::size_t r) const;
  const Tensor& guidance_matrix() const { return c_; }

 private:
  ToyBackendConfig config_;
  std::vector<std::size_t> block_of_row_;  // E row -> block index
  std::vector<float> sign_of_row_;
  Tensor c_;  // [latent x conditioning]
};

}  // namespace sketch
