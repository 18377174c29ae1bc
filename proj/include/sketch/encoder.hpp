// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sketch/image.hpp"
#include "sketch/nn.hpp"
#include "sketch/tokenizer.hpp"

namespace sketch {

struct EncoderConfig {
  std::size_t vocab_size = Tokenizer::kFirstWord;
  std::size_t model_dim = 64;
  std::size_t embed_dim = 32;
  std::size_t text_blocks = 2;
  std::size_t image_blocks = 2;
  std::size_t fusion_blocks = 1;
  std::size_t num_heads = 8;
  std::size_t mlp_ratio = 4;
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t max_tokens = Tokenizer::kMaxLength;
  std::size_t conditioning_dim = 32;
  std::uint64_t seed = 0;

  std::size_t num_patches() const;
  /// Throws ConfigError on inconsistent sizes.
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

enum class Modality { text, image, combined };

struct Embedding {
  Tensor values;  // [embed_dim], unit L2 norm
  Modality modality = Modality::text;
};

struct NormalizeCache {
  Tensor unit;
  float norm = 0.0f;
};

struct ImageFeaturesCache {
  LinearCache patch_embed;
  std::vector<BlockCache> blocks;
};

struct ImageCache {
  ImageFeaturesCache features;
  LayerNormCache final_norm;
  LinearCache projection;
  NormalizeCache normalize;
  std::size_t num_patches = 0;
};

struct TextCache {
  std::vector<TokenId> tokens;
  std::vector<BlockCache> blocks;
  std::vector<BlockCache> fusion;
  LayerNormCache final_norm;
  LinearCache projection;
  NormalizeCache normalize;
};

/// Dual-tower text/image encoder. The fusion blocks let text tokens attend
/// over an image patch sequence; plain text encoding uses the patch sequence
/// of a uniform mid-gray canvas.
class EncoderModel {
 public:
  static constexpr std::uint8_t kCanvasValue = 128;
  static constexpr float kMaxLogitScale = 100.0f;

  EncoderModel() = default;
  explicit EncoderModel(EncoderConfig config);

  const EncoderConfig& config() const { return config_; }

  /// Patch features after the image self-attention blocks, [patches x d].
  Tensor image_features(const GrayImage& image, ImageFeaturesCache* cache = nullptr) const;
  /// Output of every image self-attention block; used by perceptual_distance.
  std::vector<Tensor> image_block_outputs(const GrayImage& image) const;
  Tensor canvas_context(ImageFeaturesCache* cache = nullptr) const;

  /// Unit-norm image embedding, [embed_dim].
  Tensor embed_image(const GrayImage& image, ImageCache* cache = nullptr) const;
  /// Unit-norm text embedding, [embed_dim]. `context` is a patch sequence.
  Tensor embed_text(std::span<const TokenId> tokens, const Tensor& context,
                    TextCache* cache = nullptr) const;

  /// Accumulates gradients; returns dL/dcontext.
  Tensor backward_text(const Tensor& d_embedding, const TextCache& cache);
  void backward_image(const Tensor& d_embedding, const ImageCache& cache);
  void backward_image_features(const Tensor& d_features, const ImageFeaturesCache& cache);

  float logit_scale() const;
  void clamp_logit_scale();

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find_parameter(const std::string& name);

  /// Every attention projection, keyed by its name.
  std::vector<LinearLayer*> attention_projections();
  std::vector<const LinearLayer*> attention_projections() const;

  Parameter token_embedding;
  Parameter text_position;
  std::vector<EncoderBlock> text_blocks;
  std::vector<EncoderBlock> fusion_blocks;
  LayerNorm text_norm;
  LinearLayer text_projection;

  LinearLayer patch_embed;
  Parameter image_position;
  std::vector<EncoderBlock> image_blocks;
  LayerNorm image_norm;
  LinearLayer image_projection;

  LinearLayer conditioning_projection;
  Parameter log_logit_scale;

 private:
  Tensor patches(const GrayImage& image) const;
  void check_tokens(std::span<const TokenId> tokens) const;

  EncoderConfig config_;
};

Embedding encode_text(const EncoderModel& model, std::span<const TokenId> tokens);
Embedding encode_image(const EncoderModel& model, const GrayImage& image);
/// Batch encoding; per-item results are identical to single calls.
std::vector<Embedding> encode_texts(const EncoderModel& model,
                                    const std::vector<std::vector<TokenId>>& batch);
std::vector<Embedding> encode_images(const EncoderModel& model,
                                     const std::vector<GrayImage>& batch);

/// normalize(w * text + (1 - w) * image); w = 0.5 is the plain mean.
Embedding combine(const Embedding& text, const Embedding& image, float text_weight = 0.5f);

/// Linear map from a combined embedding to the generator's conditioning
/// vector. Throws ConfigError when the model's conditioning size differs from
/// `expected_dim`.
Tensor project_conditioning(const EncoderModel& model, const Embedding& combined,
                            std::size_t expected_dim);

/// Cosine of two unit embeddings, in [-1, 1].
float clip_score(const Embedding& a, const Embedding& b);

NormalizeCache normalize(const Tensor& v);
Tensor normalize_backward(const Tensor& d_unit, const NormalizeCache& cache);

}  // namespace sketch
