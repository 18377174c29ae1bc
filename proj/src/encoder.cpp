// SPDX-License-Identifier: Apache-2.0
#include "sketch/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "sketch/error.hpp"

namespace sketch {
namespace {

Tensor as_row(const Tensor& v) { return Tensor({1, v.size()}, {v.values().begin(), v.values().end()}); }
Tensor as_vector(const Tensor& v) { return Tensor({v.size()}, {v.values().begin(), v.values().end()}); }

std::vector<EncoderBlock> make_blocks(const std::string& prefix, std::size_t count,
                                      const EncoderConfig& c, AttentionMode mode, Rng& rng) {
  std::vector<EncoderBlock> blocks;
  for (std::size_t i = 0; i < count; ++i)
    blocks.emplace_back(prefix + "." + std::to_string(i), c.model_dim, c.num_heads,
                        c.model_dim * c.mlp_ratio, mode, rng);
  return blocks;
}

}  // namespace

std::size_t EncoderConfig::num_patches() const {
  const auto side = image_size / patch_size;
  return side * side;
}

void EncoderConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("encoder config: " + msg);
  };
  require(model_dim > 0 && embed_dim > 0 && conditioning_dim > 0, "dimensions must be positive");
  require(num_heads > 0 && model_dim % num_heads == 0, "model_dim must be divisible by num_heads");
  require(patch_size > 0 && image_size % patch_size == 0,
          "image_size must be divisible by patch_size");
  require(max_tokens >= 3 && max_tokens <= Tokenizer::kMaxLength,
          "max_tokens must be in [3, 77]");
  require(vocab_size >= Tokenizer::kFirstWord && vocab_size <= Tokenizer::kMaxVocab,
          "vocab_size out of range");
  require(mlp_ratio > 0, "mlp_ratio must be positive");
}

EncoderModel::EncoderModel(EncoderConfig config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const auto d = config_.model_dim;
  const auto patch_pixels = config_.patch_size * config_.patch_size;

  token_embedding = Parameter("text.token_embedding", Tensor::randn({config_.vocab_size, d}, 1.0f, rng));
  text_position = Parameter("text.position", Tensor::randn({config_.max_tokens, d}, 0.1f, rng));
  text_blocks = make_blocks("text.self", config_.text_blocks, config_, AttentionMode::self, rng);
  fusion_blocks = make_blocks("fusion.cross", config_.fusion_blocks, config_, AttentionMode::cross, rng);
  text_norm = LayerNorm("text.final_norm", d);
  text_projection = LinearLayer("text.projection", d, config_.embed_dim, false, rng);

  patch_embed = LinearLayer("image.patch_embed", patch_pixels, d, true, rng);
  image_position = Parameter("image.position", Tensor::randn({config_.num_patches(), d}, 0.5f, rng));
  image_blocks = make_blocks("image.self", config_.image_blocks, config_, AttentionMode::self, rng);
  image_norm = LayerNorm("image.final_norm", d);
  image_projection = LinearLayer("image.projection", d, config_.embed_dim, false, rng);

  Tensor cond({config_.conditioning_dim, config_.embed_dim});
  for (std::size_t i = 0; i < std::min(config_.conditioning_dim, config_.embed_dim); ++i)
    cond(i, i) = 1.0f;
  conditioning_projection = LinearLayer("conditioning.projection", std::move(cond), std::nullopt);

  log_logit_scale = Parameter("logit_scale", Tensor({1}, std::log(1.0f / 0.07f)));
}

Tensor EncoderModel::patches(const GrayImage& image) const {
  const auto size = config_.image_size, p = config_.patch_size;
  if (image.width != size || image.height != size)
    throw DimensionError("image is " + std::to_string(image.width) + "x" +
                         std::to_string(image.height) + ", encoder expects " +
                         std::to_string(size) + "x" + std::to_string(size));
  const auto side = size / p;
  Tensor out({side * side, p * p});
  for (std::size_t py = 0; py < side; ++py)
    for (std::size_t px = 0; px < side; ++px) {
      const auto row = py * side + px;
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          out(row, y * p + x) = image.at(px * p + x, py * p + y) / 255.0f - 0.5f;
    }
  return out;
}

void EncoderModel::check_tokens(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw ValidationError("token sequence is empty");
  if (tokens.size() > config_.max_tokens)
    throw ValidationError("token sequence has " + std::to_string(tokens.size()) +
                          " ids, limit is " + std::to_string(config_.max_tokens));
  for (auto id : tokens)
    if (id >= config_.vocab_size)
      throw ValidationError("unknown token id " + std::to_string(id) + " (vocabulary size " +
                            std::to_string(config_.vocab_size) + ")");
}

Tensor EncoderModel::image_features(const GrayImage& image, ImageFeaturesCache* cache) const {
  ImageFeaturesCache local;
  auto& c = cache ? *cache : local;
  Tensor x = patch_embed.forward(patches(image), c.patch_embed);
  add_inplace(x, image_position.value);
  c.blocks.resize(image_blocks.size());
  for (std::size_t i = 0; i < image_blocks.size(); ++i)
    x = image_blocks[i].forward(x, nullptr, c.blocks[i]);
  return x;
}

std::vector<Tensor> EncoderModel::image_block_outputs(const GrayImage& image) const {
  std::vector<Tensor> outs;
  Tensor x = patch_embed.forward(patches(image));
  add_inplace(x, image_position.value);
  for (const auto& block : image_blocks) {
    x = block.forward(x);
    outs.push_back(x);
  }
  return outs;
}

Tensor EncoderModel::canvas_context(ImageFeaturesCache* cache) const {
  const GrayImage canvas(config_.image_size, config_.image_size, kCanvasValue);
  return image_features(canvas, cache);
}

Tensor EncoderModel::embed_image(const GrayImage& image, ImageCache* cache) const {
  ImageCache local;
  auto& c = cache ? *cache : local;
  const Tensor features = image_features(image, &c.features);
  const Tensor normed = image_norm.forward(features, c.final_norm);
  const auto rows = normed.rows();
  Tensor pooled({1, config_.model_dim});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < config_.model_dim; ++j) pooled(0, j) += normed(i, j);
  for (auto& v : pooled.values()) v /= static_cast<float>(rows);
  c.num_patches = rows;
  c.normalize = normalize(image_projection.forward(pooled, c.projection));
  return as_vector(c.normalize.unit);
}

Tensor EncoderModel::embed_text(std::span<const TokenId> tokens, const Tensor& context,
                                TextCache* cache) const {
  check_tokens(tokens);
  TextCache local;
  auto& c = cache ? *cache : local;
  const auto len = tokens.size(), d = config_.model_dim;
  Tensor x({len, d});
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < d; ++j)
      x(i, j) = token_embedding.value(tokens[i], j) + text_position.value(i, j);
  c.tokens.assign(tokens.begin(), tokens.end());
  c.blocks.resize(text_blocks.size());
  for (std::size_t i = 0; i < text_blocks.size(); ++i)
    x = text_blocks[i].forward(x, nullptr, c.blocks[i]);
  c.fusion.resize(fusion_blocks.size());
  for (std::size_t i = 0; i < fusion_blocks.size(); ++i)
    x = fusion_blocks[i].forward(x, &context, c.fusion[i]);
  const Tensor normed = text_norm.forward(x, c.final_norm);
  // The sequence always ends with EOS; its state summarizes the prompt.
  Tensor pooled({1, d});
  for (std::size_t j = 0; j < d; ++j) pooled(0, j) = normed(len - 1, j);
  c.normalize = normalize(text_projection.forward(pooled, c.projection));
  return as_vector(c.normalize.unit);
}

Tensor EncoderModel::backward_text(const Tensor& d_embedding, const TextCache& cache) {
  const auto len = cache.tokens.size(), d = config_.model_dim;
  if (len == 0) throw StateError("backward_text called before a forward pass");
  const Tensor dz = normalize_backward(as_row(d_embedding), cache.normalize);
  const Tensor d_pooled = text_projection.backward(dz, cache.projection);
  Tensor d_normed({len, d});
  for (std::size_t j = 0; j < d; ++j) d_normed(len - 1, j) = d_pooled(0, j);
  Tensor dx = text_norm.backward(d_normed, cache.final_norm);
  Tensor d_context;
  for (std::size_t i = fusion_blocks.size(); i-- > 0;)
    dx = fusion_blocks[i].backward(dx, cache.fusion[i], &d_context);
  for (std::size_t i = text_blocks.size(); i-- > 0;)
    dx = text_blocks[i].backward(dx, cache.blocks[i], nullptr);
  if (token_embedding.trainable) {
    Tensor g(token_embedding.value.shape());
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < d; ++j) g(cache.tokens[i], j) += dx(i, j);
    token_embedding.accumulate(g);
  }
  if (text_position.trainable) {
    Tensor g(text_position.value.shape());
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < d; ++j) g(i, j) = dx(i, j);
    text_position.accumulate(g);
  }
  if (d_context.empty()) d_context = Tensor({config_.num_patches(), d});
  return d_context;
}

void EncoderModel::backward_image(const Tensor& d_embedding, const ImageCache& cache) {
  if (cache.num_patches == 0) throw StateError("backward_image called before a forward pass");
  const Tensor dz = normalize_backward(as_row(d_embedding), cache.normalize);
  const Tensor d_pooled = image_projection.backward(dz, cache.projection);
  Tensor d_normed({cache.num_patches, config_.model_dim});
  const float inv = 1.0f / static_cast<float>(cache.num_patches);
  for (std::size_t i = 0; i < cache.num_patches; ++i)
    for (std::size_t j = 0; j < config_.model_dim; ++j) d_normed(i, j) = d_pooled(0, j) * inv;
  backward_image_features(image_norm.backward(d_normed, cache.final_norm), cache.features);
}

void EncoderModel::backward_image_features(const Tensor& d_features,
                                           const ImageFeaturesCache& cache) {
  if (cache.blocks.size() != image_blocks.size())
    throw StateError("backward_image_features called before a forward pass");
  Tensor dx = d_features;
  for (std::size_t i = image_blocks.size(); i-- > 0;)
    dx = image_blocks[i].backward(dx, cache.blocks[i], nullptr);
  image_position.accumulate(dx);
  // Pixel gradients are discarded.
  if (patch_embed.weight.trainable || patch_embed.adapter || (patch_embed.bias && patch_embed.bias->trainable))
    patch_embed.backward(dx, cache.patch_embed);
}

float EncoderModel::logit_scale() const { return std::exp(log_logit_scale.value[0]); }

void EncoderModel::clamp_logit_scale() {
  const float cap = std::log(kMaxLogitScale);
  if (log_logit_scale.value[0] > cap) log_logit_scale.value[0] = cap;
}

std::vector<Parameter*> EncoderModel::parameters() {
  std::vector<Parameter*> out{&token_embedding, &text_position};
  for (auto& b : text_blocks) b.collect_parameters(out);
  for (auto& b : fusion_blocks) b.collect_parameters(out);
  text_norm.collect_parameters(out);
  text_projection.collect_parameters(out);
  patch_embed.collect_parameters(out);
  out.push_back(&image_position);
  for (auto& b : image_blocks) b.collect_parameters(out);
  image_norm.collect_parameters(out);
  image_projection.collect_parameters(out);
  conditioning_projection.collect_parameters(out);
  out.push_back(&log_logit_scale);
  return out;
}

std::vector<const Parameter*> EncoderModel::parameters() const {
  std::vector<const Parameter*> out{&token_embedding, &text_position};
  for (const auto& b : text_blocks) b.collect_parameters(out);
  for (const auto& b : fusion_blocks) b.collect_parameters(out);
  text_norm.collect_parameters(out);
  text_projection.collect_parameters(out);
  patch_embed.collect_parameters(out);
  out.push_back(&image_position);
  for (const auto& b : image_blocks) b.collect_parameters(out);
  image_norm.collect_parameters(out);
  image_projection.collect_parameters(out);
  conditioning_projection.collect_parameters(out);
  out.push_back(&log_logit_scale);
  return out;
}

Parameter* EncoderModel::find_parameter(const std::string& name) {
  for (auto* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

std::vector<LinearLayer*> EncoderModel::attention_projections() {
  std::vector<LinearLayer*> out;
  for (auto* blocks : {&text_blocks, &image_blocks, &fusion_blocks})
    for (auto& b : *blocks)
      for (auto* p : b.attn.projections()) out.push_back(p);
  return out;
}

std::vector<const LinearLayer*> EncoderModel::attention_projections() const {
  std::vector<const LinearLayer*> out;
  for (const auto* blocks : {&text_blocks, &image_blocks, &fusion_blocks})
    for (const auto& b : *blocks)
      for (const auto* p : b.attn.projections()) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------- helpers

NormalizeCache normalize(const Tensor& v) {
  double sq = 0.0;
  for (float x : v.values()) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw NumericError("cannot normalize a vector with norm " + std::to_string(norm));
  NormalizeCache c;
  c.norm = static_cast<float>(norm);
  c.unit = v;
  for (auto& x : c.unit.values()) x = static_cast<float>(x / norm);
  return c;
}

Tensor normalize_backward(const Tensor& d_unit, const NormalizeCache& cache) {
  if (d_unit.size() != cache.unit.size())
    throw DimensionError("normalize_backward: gradient " + d_unit.shape_string() +
                         " does not match " + cache.unit.shape_string());
  double dot = 0.0;
  for (std::size_t i = 0; i < d_unit.size(); ++i) dot += d_unit[i] * cache.unit[i];
  Tensor dv(cache.unit.shape());
  for (std::size_t i = 0; i < dv.size(); ++i)
    dv[i] = static_cast<float>((d_unit[i] - cache.unit[i] * dot) / cache.norm);
  return dv;
}

Embedding encode_text(const EncoderModel& model, std::span<const TokenId> tokens) {
  return {model.embed_text(tokens, model.canvas_context()), Modality::text};
}

Embedding encode_image(const EncoderModel& model, const GrayImage& image) {
  return {model.embed_image(image), Modality::image};
}

std::vector<Embedding> encode_texts(const EncoderModel& model,
                                    const std::vector<std::vector<TokenId>>& batch) {
  const Tensor context = model.canvas_context();
  std::vector<Embedding> out(batch.size());
  const auto n = static_cast<std::ptrdiff_t>(batch.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = {model.embed_text(batch[i], context), Modality::text};
  return out;
}

std::vector<Embedding> encode_images(const EncoderModel& model,
                                     const std::vector<GrayImage>& batch) {
  std::vector<Embedding> out(batch.size());
  const auto n = static_cast<std::ptrdiff_t>(batch.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = {model.embed_image(batch[i]), Modality::image};
  return out;
}

Embedding combine(const Embedding& text, const Embedding& image, float text_weight) {
  if (text.values.size() != image.values.size())
    throw DimensionError("combine: embedding sizes differ (" + text.values.shape_string() +
                         " vs " + image.values.shape_string() + ")");
  if (!(text_weight >= 0.0f && text_weight <= 1.0f))
    throw ConfigError("combine: text weight must lie in [0, 1]");
  Tensor mix(text.values.shape());
  double sq = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    mix[i] = text_weight * text.values[i] + (1.0f - text_weight) * image.values[i];
    sq += static_cast<double>(mix[i]) * mix[i];
  }
  if (std::sqrt(sq) < 1e-6)
    throw DegenerateCombinationError(
        "text and image embeddings cancel out; the combined embedding has no direction");
  return {normalize(mix).unit, Modality::combined};
}

Tensor project_conditioning(const EncoderModel& model, const Embedding& combined,
                            std::size_t expected_dim) {
  const auto& proj = model.conditioning_projection;
  if (proj.out_dim() != expected_dim)
    throw ConfigError("conditioning projection emits " + std::to_string(proj.out_dim()) +
                      " values but the generator expects " + std::to_string(expected_dim));
  if (combined.values.size() != proj.in_dim())
    throw DimensionError("conditioning projection expects a " + std::to_string(proj.in_dim()) +
                         "-dim embedding, got " + combined.values.shape_string());
  return as_vector(proj.forward(as_row(combined.values)));
}

float clip_score(const Embedding& a, const Embedding& b) {
  if (a.values.size() != b.values.size())
    throw DimensionError("clip_score: embedding sizes differ");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    dot += static_cast<double>(a.values[i]) * b.values[i];
  return static_cast<float>(std::clamp(dot, -1.0, 1.0));
}

}  // namespace sketch
