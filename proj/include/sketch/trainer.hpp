// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sketch/dataset.hpp"
#include "sketch/encoder.hpp"
#include "sketch/lora.hpp"
#include "sketch/tokenizer.hpp"

namespace sketch {

struct AdamConfig {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
  /// Updates every trainable parameter from its grad. The parameter list must
  /// be the same, in the same order, on every call.
  void step(std::span<Parameter* const> params);
  std::size_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

enum class TrainMode {
  lora,  ///< adapters + logit scale only
  full,  ///< every parameter; used to pretrain a base encoder
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  AdamConfig adam{};
  std::uint64_t seed = 0;
  double split_ratio = 0.8;
  LoraConfig lora{};
  TrainMode mode = TrainMode::lora;

  void validate() const;
};

inline constexpr std::array<std::size_t, 4> kTopK = {1, 5, 10, 25};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::array<double, 4> accuracy{};  // acc@1, acc@5, acc@10, acc@25 on validation

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;

  friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

/// Tab-separated, one epoch per line after a '#' header:
/// epoch, loss, acc@1, acc@5, acc@10, acc@25.
std::string serialize_train_log(const TrainLog& log);
TrainLog parse_train_log(const std::string& text);

struct ContrastiveResult {
  double loss = 0.0;
  Tensor d_text;       // [N x e]
  Tensor d_image;      // [N x e]
  double d_scale = 0.0;
};

/// Symmetric InfoNCE over S = scale * T I^T with diagonal targets.
ContrastiveResult contrastive_loss(const Tensor& text, const Tensor& image, float scale);

struct TopKResult {
  double accuracy = 0.0;
  std::size_t k_used = 0;
  bool clamped = false;  ///< k exceeded the candidate count
};

/// Fraction of texts whose paired image ranks within the top k by cosine.
/// Ties go to the lower index.
TopKResult topk_accuracy(const Tensor& text, const Tensor& image, std::size_t k);

/// Stacks unit embeddings into an [N x e] matrix.
Tensor stack(const std::vector<Embedding>& embeddings);

struct RetrievalEmbeddings {
  Tensor text;
  Tensor image;
};
RetrievalEmbeddings embed_pairs(const EncoderModel& model, const Tokenizer& tokenizer,
                                const std::vector<SketchPair>& pairs);
std::array<double, 4> evaluate_retrieval(const EncoderModel& model, const Tokenizer& tokenizer,
                                         const std::vector<SketchPair>& pairs);

struct TrainResult {
  EncoderModel model;
  TrainLog log;
};

/// Splits `dataset` by cfg.seed and trains. In lora mode adapters are
/// injected when the model has none; the best-validation-acc@1 epoch wins
/// (ties go to the later epoch).
TrainResult train(EncoderModel model, const std::vector<SketchPair>& dataset,
                  const Tokenizer& tokenizer, const TrainConfig& cfg);
TrainResult train(EncoderModel model, const std::vector<SketchPair>& train_pairs,
                  const std::vector<SketchPair>& validation_pairs, const Tokenizer& tokenizer,
                  const TrainConfig& cfg);

struct AblationRow {
  LoraTargets targets = LoraTargets::both;
  double final_loss = 0.0;
  std::array<double, 4> accuracy{};
  std::size_t parameters = 0;
};

struct AblationResult {
  std::array<TrainLog, 3> logs;  // self, cross, both
  std::vector<AblationRow> rows;

  std::string table() const;
};

/// Trains self-only, cross-only and both from the same base and seed.
AblationResult run_ablation(const EncoderModel& base, const std::vector<SketchPair>& dataset,
                            const Tokenizer& tokenizer, const TrainConfig& base_cfg);
AblationResult run_ablation(const EncoderModel& base, const std::vector<SketchPair>& train_pairs,
                            const std::vector<SketchPair>& validation_pairs,
                            const Tokenizer& tokenizer, const TrainConfig& base_cfg);

}  // namespace sketch
