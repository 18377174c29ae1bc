// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sketch/encoder.hpp"

namespace sketch {

enum class LoraTargets { self_attention, cross_attention, both };

enum Projection : std::uint8_t {
  kProjQ = 1 << 0,
  kProjK = 1 << 1,
  kProjV = 1 << 2,
  kProjO = 1 << 3,
  kProjAll = kProjQ | kProjK | kProjV | kProjO,
};

struct LoraConfig {
  LoraTargets targets = LoraTargets::both;
  std::size_t rank = 4;
  float alpha = 8.0f;
  std::uint8_t projections = kProjAll;
  float init_std = 0.02f;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const LoraConfig&, const LoraConfig&) = default;
};

std::string to_string(LoraTargets t);
LoraTargets parse_lora_targets(const std::string& s);
std::string projections_to_string(std::uint8_t mask);
std::uint8_t parse_projections(const std::string& s);

/// Names of the projections `cfg` selects, in model order.
std::vector<std::string> lora_target_names(const EncoderModel& model, const LoraConfig& cfg);

/// Attaches fresh adapters (A ~ N(0, init_std), B = 0), freezes every base
/// parameter and leaves only adapters trainable. Throws ConflictError if any
/// selected target already carries an adapter.
EncoderModel inject(EncoderModel model, const LoraConfig& cfg);

/// Adapters recorded by merge, in model order.
struct MergeRecord {
  std::vector<LoraAdapter> adapters;
};

/// W <- W + (alpha / r) B A for every adapter; adapters are detached and
/// returned so unmerge can undo the merge.
std::pair<EncoderModel, MergeRecord> merge(EncoderModel model);

/// W <- W - (alpha / r) B A and re-attaches the recorded adapters.
EncoderModel unmerge(EncoderModel model, const MergeRecord& record);

/// Drops every adapter without merging, leaving the frozen base model.
EncoderModel strip_adapters(EncoderModel model);

std::size_t adapter_count(const EncoderModel& model);
/// Sum over adapters of r * (in + out).
std::size_t adapter_parameter_count(const EncoderModel& model);
std::size_t trainable_parameter_count(const EncoderModel& model);
/// Hash of every frozen, non-adapter parameter.
std::uint64_t base_weight_hash(const EncoderModel& model);

/// Freezes or unfreezes every non-adapter parameter except the logit scale.
void set_base_trainable(EncoderModel& model, bool trainable);

}  // namespace sketch
