// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sketch/tensor.hpp"

namespace sketch {

/// A named weight tensor. Frozen parameters never allocate or receive a
/// gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true);

  void set_trainable(bool on);
  void zero_grad();
  /// grad += g, if trainable.
  void accumulate(const Tensor& g);
};

/// Low-rank delta W_eff = W + (alpha / rank) * B * A on one projection.
struct LoraAdapter {
  std::string target_name;
  Parameter a;  // [rank x in]
  Parameter b;  // [out x rank]
  std::size_t rank = 0;
  float alpha = 0.0f;

  float scaling() const { return alpha / static_cast<float>(rank); }
  /// (alpha / rank) * B * A, shaped like the base weight.
  Tensor delta() const;
};

struct LinearCache {
  Tensor input;
  Tensor lora_hidden;
  bool valid = false;
};

/// y = x W^T + b, plus the LoRA term when an adapter is attached.
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(std::string name, std::size_t in, std::size_t out, bool with_bias, Rng& rng);
  LinearLayer(std::string name, Tensor weight, std::optional<Tensor> bias);

  const std::string& name() const noexcept { return name_; }
  std::size_t in_dim() const { return weight.value.shape()[1]; }
  std::size_t out_dim() const { return weight.value.shape()[0]; }

  Tensor forward(const Tensor& x) const;
  Tensor forward(const Tensor& x, LinearCache& cache) const;
  /// Accumulates parameter gradients and returns dL/dx.
  Tensor backward(const Tensor& dy, const LinearCache& cache);

  void collect_parameters(std::vector<Parameter*>& out);
  void collect_parameters(std::vector<const Parameter*>& out) const;

  Parameter weight;
  std::optional<Parameter> bias;
  std::optional<LoraAdapter> adapter;

 private:
  std::string name_;
};

struct LayerNormCache {
  Tensor normalized;
  std::vector<float> inv_std;
  bool valid = false;
};

class LayerNorm {
 public:
  static constexpr float kEpsilon = 1e-5f;

  LayerNorm() = default;
  LayerNorm(std::string name, std::size_t dim);

  Tensor forward(const Tensor& x) const;
  Tensor forward(const Tensor& x, LayerNormCache& cache) const;
  Tensor backward(const Tensor& dy, const LayerNormCache& cache);

  void collect_parameters(std::vector<Parameter*>& out);
  void collect_parameters(std::vector<const Parameter*>& out) const;

  Parameter gamma;
  Parameter beta;
};

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
float gelu(float x);
float gelu_derivative(float x);
Tensor gelu(const Tensor& x);

/// Row-wise softmax with max subtraction.
void softmax_rows(Tensor& t);

enum class AttentionMode { self, cross };

struct AttentionCache {
  LinearCache q, k, v, o;
  Tensor queries, keys, values;
  Tensor probs;    // [heads * Lq x Lk]
  bool valid = false;
};

struct AttentionGrads {
  Tensor d_query_input;
  Tensor d_kv_input;
};

/// Multi-head scaled dot-product attention with q/k/v/o projections.
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(std::string name, std::size_t model_dim, std::size_t num_heads,
                 AttentionMode mode, Rng& rng);

  std::size_t model_dim() const { return model_dim_; }
  std::size_t num_heads() const { return num_heads_; }
  AttentionMode mode() const { return mode_; }
  const std::string& name() const { return name_; }

  Tensor forward(const Tensor& q_in, const Tensor& kv_in) const;
  Tensor forward(const Tensor& q_in, const Tensor& kv_in, AttentionCache& cache) const;
  /// In self mode the caller feeds one sequence to both inputs and must sum
  /// the two returned gradients.
  AttentionGrads backward(const Tensor& dy, const AttentionCache& cache);

  void collect_parameters(std::vector<Parameter*>& out);
  void collect_parameters(std::vector<const Parameter*>& out) const;
  std::vector<LinearLayer*> projections();
  std::vector<const LinearLayer*> projections() const;

  LinearLayer q_proj, k_proj, v_proj, o_proj;

 private:
  std::string name_;
  std::size_t model_dim_ = 0;
  std::size_t num_heads_ = 0;
  AttentionMode mode_ = AttentionMode::self;
};

struct BlockCache {
  LayerNormCache ln1, ln_kv, ln2;
  AttentionCache attn;
  LinearCache fc1, fc2;
  Tensor pre_activation;
  bool valid = false;
};

/// Pre-norm transformer block. Self mode: x + attn(ln1 x); cross mode:
/// x + attn(ln1 x, ln_kv context). Both follow with x + fc2(gelu(fc1(ln2 x))).
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(std::string name, std::size_t dim, std::size_t heads, std::size_t hidden,
               AttentionMode mode, Rng& rng);

  AttentionMode mode() const { return attn.mode(); }

  Tensor forward(const Tensor& x, const Tensor* context = nullptr) const;
  Tensor forward(const Tensor& x, const Tensor* context, BlockCache& cache) const;
  /// Returns dL/dx. In cross mode dL/dcontext is added to `*d_context`.
  Tensor backward(const Tensor& dy, const BlockCache& cache, Tensor* d_context);

  void collect_parameters(std::vector<Parameter*>& out);
  void collect_parameters(std::vector<const Parameter*>& out) const;

  LayerNorm ln1, ln_kv, ln2;
  AttentionBlock attn;
  LinearLayer fc1, fc2;
};

}  // namespace sketch
