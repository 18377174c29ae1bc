// SPDX-License-Identifier: Apache-2.0
#include "sketch/lora.hpp"

#include <map>

#include "sketch/error.hpp"
#include "sketch/kernels.hpp"

namespace sketch {
namespace {

std::uint8_t projection_bit(const std::string& layer_name) {
  const auto dot = layer_name.rfind('.');
  const auto leaf = layer_name.substr(dot + 1);
  if (leaf == "q_proj") return kProjQ;
  if (leaf == "k_proj") return kProjK;
  if (leaf == "v_proj") return kProjV;
  if (leaf == "o_proj") return kProjO;
  return 0;
}

template <typename Model, typename Fn>
void for_each_target(Model& model, const LoraConfig& cfg, Fn&& fn) {
  const bool self = cfg.targets != LoraTargets::cross_attention;
  const bool cross = cfg.targets != LoraTargets::self_attention;
  auto visit = [&](auto& blocks, bool enabled) {
    if (!enabled) return;
    for (auto& block : blocks)
      for (auto* proj : block.attn.projections())
        if (cfg.projections & projection_bit(proj->name())) fn(*proj);
  };
  visit(model.text_blocks, self);
  visit(model.image_blocks, self);
  visit(model.fusion_blocks, cross);
}

bool is_adapter_param(const Parameter& p) {
  return p.name.ends_with(".lora_A") || p.name.ends_with(".lora_B");
}

}  // namespace

void LoraConfig::validate() const {
  if (rank == 0) throw ConfigError("lora rank must be positive");
  if (!(alpha > 0.0f)) throw ConfigError("lora alpha must be positive");
  if ((projections & kProjAll) == 0 || (projections & ~kProjAll) != 0)
    throw ConfigError("lora projections must be a non-empty subset of {q,k,v,o}");
  if (!(init_std >= 0.0f)) throw ConfigError("lora init_std must be non-negative");
}

std::string to_string(LoraTargets t) {
  switch (t) {
    case LoraTargets::self_attention: return "self";
    case LoraTargets::cross_attention: return "cross";
    case LoraTargets::both: return "both";
  }
  return "?";
}

LoraTargets parse_lora_targets(const std::string& s) {
  if (s == "self" || s == "self_attention") return LoraTargets::self_attention;
  if (s == "cross" || s == "cross_attention") return LoraTargets::cross_attention;
  if (s == "both") return LoraTargets::both;
  throw ConfigError("unknown lora targets '" + s + "' (expected self, cross or both)");
}

std::string projections_to_string(std::uint8_t mask) {
  std::string s;
  if (mask & kProjQ) s += 'q';
  if (mask & kProjK) s += 'k';
  if (mask & kProjV) s += 'v';
  if (mask & kProjO) s += 'o';
  return s;
}

std::uint8_t parse_projections(const std::string& s) {
  std::uint8_t mask = 0;
  for (char c : s) {
    switch (c) {
      case 'q': mask |= kProjQ; break;
      case 'k': mask |= kProjK; break;
      case 'v': mask |= kProjV; break;
      case 'o': mask |= kProjO; break;
      case ',': break;
      default: throw ConfigError(std::string("unknown projection '") + c + "'");
    }
  }
  if (mask == 0) throw ConfigError("empty projection set");
  return mask;
}

std::vector<std::string> lora_target_names(const EncoderModel& model, const LoraConfig& cfg) {
  std::vector<std::string> names;
  for_each_target(model, cfg, [&](const LinearLayer& l) { names.push_back(l.name()); });
  return names;
}

EncoderModel inject(EncoderModel model, const LoraConfig& cfg) {
  cfg.validate();
  for_each_target(model, cfg, [&](LinearLayer& l) {
    if (l.adapter) throw ConflictError("projection " + l.name() + " already has an adapter");
    const auto in = l.in_dim(), out = l.out_dim();
    if (cfg.rank > std::min(in, out))
      throw ConfigError("lora rank " + std::to_string(cfg.rank) + " exceeds min(in, out) for " +
                        l.name());
  });
  set_base_trainable(model, false);
  Rng rng(cfg.seed);
  for_each_target(model, cfg, [&](LinearLayer& l) {
    LoraAdapter a;
    a.target_name = l.name();
    a.rank = cfg.rank;
    a.alpha = cfg.alpha;
    a.a = Parameter(l.name() + ".lora_A", Tensor::randn({cfg.rank, l.in_dim()}, cfg.init_std, rng));
    a.b = Parameter(l.name() + ".lora_B", Tensor({l.out_dim(), cfg.rank}));
    l.adapter = std::move(a);
  });
  return model;
}

std::pair<EncoderModel, MergeRecord> merge(EncoderModel model) {
  MergeRecord record;
  for (auto* l : model.attention_projections()) {
    if (!l->adapter) continue;
    const Tensor delta = l->adapter->delta();
    add_inplace(l->weight.value, delta);
    record.adapters.push_back(std::move(*l->adapter));
    l->adapter.reset();
  }
  if (record.adapters.empty()) throw StateError("merge: model has no adapters");
  return {std::move(model), std::move(record)};
}

EncoderModel unmerge(EncoderModel model, const MergeRecord& record) {
  std::map<std::string, LinearLayer*> by_name;
  for (auto* l : model.attention_projections()) by_name[l->name()] = l;
  for (const auto& a : record.adapters) {
    auto it = by_name.find(a.target_name);
    if (it == by_name.end()) throw StateError("unmerge: unknown target " + a.target_name);
    const LinearLayer& l = *it->second;
    if (l.adapter)
      throw StateError("unmerge: " + a.target_name + " already has an adapter attached");
    if (a.a.value.shape() != std::vector<std::size_t>{a.rank, l.in_dim()} ||
        a.b.value.shape() != std::vector<std::size_t>{l.out_dim(), a.rank})
      throw DimensionError("unmerge: adapter A " + a.a.value.shape_string() + " / B " +
                           a.b.value.shape_string() + " does not fit " + a.target_name + " " +
                           l.weight.value.shape_string());
  }
  for (const auto& a : record.adapters) {
    LinearLayer& l = *by_name[a.target_name];
    const Tensor delta = a.delta();
    for (std::size_t i = 0; i < delta.size(); ++i) l.weight.value[i] -= delta[i];
    l.adapter = a;
  }
  return model;
}

EncoderModel strip_adapters(EncoderModel model) {
  for (auto* l : model.attention_projections()) l->adapter.reset();
  return model;
}

std::size_t adapter_count(const EncoderModel& model) {
  std::size_t n = 0;
  for (const auto* l : model.attention_projections()) n += l->adapter ? 1 : 0;
  return n;
}

std::size_t adapter_parameter_count(const EncoderModel& model) {
  std::size_t n = 0;
  for (const auto* l : model.attention_projections())
    if (l->adapter) n += l->adapter->rank * (l->in_dim() + l->out_dim());
  return n;
}

std::size_t trainable_parameter_count(const EncoderModel& model) {
  std::size_t n = 0;
  for (const auto* p : model.parameters())
    if (p->trainable) n += p->value.size();
  return n;
}

std::uint64_t base_weight_hash(const EncoderModel& model) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto* p : model.parameters())
    if (!is_adapter_param(*p) && p->name != "logit_scale") h = tensor_hash(p->value, h);
  return h;
}

void set_base_trainable(EncoderModel& model, bool trainable) {
  for (auto* p : model.parameters())
    if (!is_adapter_param(*p) && p->name != "logit_scale") p->set_trainable(trainable);
}

}  // namespace sketch
