// Shared fixtures for the unit tests.
#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "sketch/encoder.hpp"
#include "sketch/image.hpp"
#include "sketch/tensor.hpp"

namespace sketch::test {

inline Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, float stddev = 1.0f) {
  Rng rng(seed);
  return Tensor::randn(std::move(shape), stddev, rng);
}

inline GrayImage random_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GrayImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

/// A small encoder that keeps full-model tests fast.
inline EncoderConfig tiny_config(std::uint64_t seed = 1) {
  EncoderConfig c;
  c.model_dim = 16;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.text_blocks = 1;
  c.image_blocks = 1;
  c.fusion_blocks = 1;
  c.image_size = 16;
  c.patch_size = 4;
  c.conditioning_dim = 8;
  c.seed = seed;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("sketch_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace sketch::test
