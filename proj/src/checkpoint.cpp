// SPDX-License-Identifier: Apache-2.0
#include "sketch/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "sketch/error.hpp"

namespace sketch {

using nlohmann::json;

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("checkpoint truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return v;
}

json encoder_to_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size},     {"model_dim", c.model_dim},
          {"embed_dim", c.embed_dim},       {"text_blocks", c.text_blocks},
          {"image_blocks", c.image_blocks}, {"fusion_blocks", c.fusion_blocks},
          {"num_heads", c.num_heads},       {"mlp_ratio", c.mlp_ratio},
          {"image_size", c.image_size},     {"patch_size", c.patch_size},
          {"max_tokens", c.max_tokens},     {"conditioning_dim", c.conditioning_dim},
          {"seed", c.seed}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size");
  c.model_dim = j.at("model_dim");
  c.embed_dim = j.at("embed_dim");
  c.text_blocks = j.at("text_blocks");
  c.image_blocks = j.at("image_blocks");
  c.fusion_blocks = j.at("fusion_blocks");
  c.num_heads = j.at("num_heads");
  c.mlp_ratio = j.at("mlp_ratio");
  c.image_size = j.at("image_size");
  c.patch_size = j.at("patch_size");
  c.max_tokens = j.at("max_tokens");
  c.conditioning_dim = j.at("conditioning_dim");
  c.seed = j.at("seed");
  return c;
}

json lora_to_json(const LoraConfig& c) {
  return {{"targets", to_string(c.targets)},
          {"rank", c.rank},
          {"alpha", c.alpha},
          {"projections", projections_to_string(c.projections)},
          {"init_std", c.init_std},
          {"seed", c.seed}};
}

LoraConfig lora_from_json(const json& j) {
  LoraConfig c;
  c.targets = parse_lora_targets(j.at("targets").get<std::string>());
  c.rank = j.at("rank");
  c.alpha = j.at("alpha");
  c.projections = parse_projections(j.at("projections").get<std::string>());
  c.init_std = j.at("init_std");
  c.seed = j.at("seed");
  return c;
}

void append_floats(std::string& out, const Tensor& t) {
  for (float f : t.values()) put_le(out, std::bit_cast<std::uint32_t>(f));
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const EncoderModel& m = ckpt.model;
  json header;
  header["encoder"] = encoder_to_json(m.config());
  header["lora"] = ckpt.lora ? lora_to_json(*ckpt.lora) : json(nullptr);
  header["tokenizer"] = {{"words", ckpt.tokenizer.words()}};
  json adapters = json::array();
  for (const auto* l : m.attention_projections())
    if (l->adapter)
      adapters.push_back({{"target", l->name()}, {"rank", l->adapter->rank}, {"alpha", l->adapter->alpha}});
  header["adapters"] = adapters;
  json tensors = json::array();
  std::string payload;
  for (const auto* p : m.parameters()) {
    tensors.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"trainable", p->trainable}});
    append_floats(payload, p->value);
  }
  header["tensors"] = tensors;

  const std::string text = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out += payload;
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError("not a checkpoint (bad magic)");
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
  const auto header_len = get_le<std::uint64_t>(bytes, pos);
  if (header_len > bytes.size() - pos) throw FormatError("checkpoint header truncated");
  json header;
  try {
    header = json::parse(bytes.substr(pos, header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  pos += header_len;

  try {
    Checkpoint ckpt{EncoderModel(encoder_from_json(header.at("encoder"))),
                    Tokenizer::from_words(header.at("tokenizer").at("words").get<std::vector<std::string>>()),
                    std::nullopt};
    if (!header.at("lora").is_null()) ckpt.lora = lora_from_json(header.at("lora"));

    std::map<std::string, LinearLayer*> by_name;
    for (auto* l : ckpt.model.attention_projections()) by_name[l->name()] = l;
    for (const auto& a : header.at("adapters")) {
      const auto target = a.at("target").get<std::string>();
      auto it = by_name.find(target);
      if (it == by_name.end()) throw FormatError("adapter for unknown projection '" + target + "'");
      LinearLayer& layer = *it->second;
      LoraAdapter ad;
      ad.target_name = target;
      ad.rank = a.at("rank");
      ad.alpha = a.at("alpha");
      ad.a = Parameter(target + ".lora_A", Tensor({ad.rank, layer.in_dim()}));
      ad.b = Parameter(target + ".lora_B", Tensor({layer.out_dim(), ad.rank}));
      layer.adapter = std::move(ad);
    }

    const auto params = ckpt.model.parameters();
    const auto& dir = header.at("tensors");
    if (dir.size() != params.size())
      throw FormatError("checkpoint lists " + std::to_string(dir.size()) + " tensors, model has " +
                        std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      const auto& entry = dir[i];
      if (entry.at("name").get<std::string>() != p.name)
        throw FormatError("tensor " + std::to_string(i) + " is '" + entry.at("name").get<std::string>() +
                          "', expected '" + p.name + "'");
      if (entry.at("shape").get<std::vector<std::size_t>>() != p.value.shape())
        throw FormatError("tensor '" + p.name + "' has shape " +
                          shape_string(entry.at("shape").get<std::vector<std::size_t>>()) +
                          ", model expects " + p.value.shape_string());
      for (auto& v : p.value.values()) v = std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos));
      p.set_trainable(entry.at("trainable").get<bool>());
    }
    if (pos != bytes.size()) throw FormatError("checkpoint has trailing bytes");
    return ckpt;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
}

EncoderPair make_encoder_pair(std::optional<Checkpoint> checkpoint, std::uint64_t default_seed) {
  EncoderPair out;
  if (checkpoint) {
    out.tokenizer = std::move(checkpoint->tokenizer);
    if (adapter_count(checkpoint->model) > 0) {
      out.frozen = strip_adapters(checkpoint->model);
      out.adapted = std::move(checkpoint->model);
    } else {
      out.frozen = checkpoint->model;
      out.adapted = inject(std::move(checkpoint->model), checkpoint->lora.value_or(LoraConfig{}));
    }
  } else {
    EncoderConfig ec;
    ec.seed = default_seed;
    out.frozen = EncoderModel(ec);
    out.adapted = inject(out.frozen, LoraConfig{});
  }
  if (out.tokenizer.size() > out.frozen.config().vocab_size)
    throw ConfigError("tokenizer vocabulary exceeds the encoder's vocab_size");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec))
    throw IoError("cannot read checkpoint " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace sketch
