// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sketch/backend.hpp"
#include "sketch/encoder.hpp"
#include "sketch/metrics.hpp"
#include "sketch/tokenizer.hpp"

namespace sketch {

/// model1: generator only (zero conditioning). model2: frozen encoder.
/// model3: LoRA-adapted encoder.
enum class ModelKind { model1, model2, model3 };
std::string to_string(ModelKind kind);
/// Accepts "model1".."model3" and "1".."3".
ModelKind parse_model_kind(const std::string& s);

struct RefinementConfig {
  float strength = 0.3f;
  float guidance_scale = 7.5f;
  std::size_t iterations = 5;
  ModelKind model_kind = ModelKind::model1;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const RefinementConfig&, const RefinementConfig&) = default;
};

struct IterationRecord {
  std::size_t index = 0;  // 1-based; 0 is the input sketch
  std::string prompt;     // text actually tokenized, after truncation
  std::vector<TokenId> prompt_tokens;
  std::optional<std::string> feedback;
  Tensor latent;  // encode(previous image)
  Tensor conditioning;
  std::uint64_t seed = 0;
  GrayImage image;
};

struct RefinementSession {
  std::string id;
  std::string description;
  GrayImage input;
  RefinementConfig config;
  std::vector<IterationRecord> iterations;

  const GrayImage& current() const { return iterations.empty() ? input : iterations.back().image; }
  /// Image at index n, where 0 is the input sketch.
  const GrayImage& image(std::size_t n) const;
  std::vector<std::string> feedback() const;
};

/// The pieces a refinement step may need. `frozen` serves model2, `adapted`
/// serves model3; either may be null when that model kind is not used.
struct RefinementContext {
  const GeneratorBackend* backend = nullptr;
  const EncoderModel* frozen = nullptr;
  const EncoderModel* adapted = nullptr;
  const Tokenizer* tokenizer = nullptr;

  /// Encoder used for clip_score and perceptual_distance: adapted if present.
  const EncoderModel* metrics_encoder() const { return adapted ? adapted : frozen; }
};

/// Base description followed by every non-empty feedback entry, joined with
/// ". " separators.
std::string compose_prompt(const std::string& description,
                           const std::vector<std::string>& feedback);

RefinementSession start_session(std::string id, std::string description, GrayImage input,
                                RefinementConfig config);

/// Runs one encode, condition, generate cycle and appends its record.
/// DegenerateCombinationError propagates unchanged; backend failures are
/// rethrown as BackendError naming the iteration.
const IterationRecord& refine_step(RefinementSession& session, const RefinementContext& ctx,
                                   std::optional<std::string> feedback = std::nullopt);

struct SessionResult {
  RefinementSession session;
  std::vector<MetricReport> reports;  // ground truth first when given, then previous
};

/// Runs config.iterations steps. feedback[i] (when present and non-empty) is
/// supplied at step i + 1.
SessionResult run_session(const std::string& description, const GrayImage& input,
                          const RefinementConfig& config, const RefinementContext& ctx,
                          const std::vector<std::string>& feedback = {},
                          const std::optional<GrayImage>& reference = std::nullopt);

/// Per-iteration metrics of a session against either `reference` or the
/// previous iteration. clip_score compares each iteration's prompt tokens
/// with its image.
MetricReport report_session(const RefinementSession& session, const EncoderModel& encoder,
                            ReferenceKind kind,
                            const std::optional<GrayImage>& reference = std::nullopt);

/// Appends the metrics of iteration `index` (1-based) to `report`.
void append_iteration_metrics(MetricReport& report, const RefinementSession& session,
                              std::size_t index, const EncoderModel& encoder,
                              const std::optional<GrayImage>& reference = std::nullopt);

}  // namespace sketch
