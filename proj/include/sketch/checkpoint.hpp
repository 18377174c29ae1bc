// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "sketch/encoder.hpp"
#include "sketch/lora.hpp"
#include "sketch/tokenizer.hpp"

namespace sketch {

inline constexpr char kCheckpointMagic[4] = {'S', 'K', 'C', 'H'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: magic, u32 version, u64 header length, JSON header, then every
/// tensor of the header's directory as little-endian float32 in that order.
/// The header carries the encoder config, the LoRA config (if any), the
/// attached adapters, the tokenizer vocabulary and the tensor directory.
struct Checkpoint {
  EncoderModel model;
  Tokenizer tokenizer;
  std::optional<LoraConfig> lora;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on bad magic, unsupported version or inconsistent data.
Checkpoint parse_checkpoint(const std::string& bytes);

/// Encoders for model2 (frozen base) and model3 (adapted). A checkpoint
/// without adapters gets fresh identity adapters; no checkpoint means a
/// seeded default encoder with a byte-level tokenizer.
struct EncoderPair {
  Tokenizer tokenizer;
  EncoderModel frozen;
  EncoderModel adapted;
};
EncoderPair make_encoder_pair(std::optional<Checkpoint> checkpoint, std::uint64_t default_seed = 0);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sketch
