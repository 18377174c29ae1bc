// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sketch/nn.hpp"

namespace sketch {

struct GradCheckOptions {
  double epsilon = 1e-3;
  double tolerance = 1e-3;
  /// Finite differences cost one forward pass per entry; keep fragments small.
  std::size_t max_parameters = 10000;
};

struct GradCheckEntry {
  std::string name;
  std::size_t count = 0;
  /// max |analytic - numeric| / max(max |analytic|, max |numeric|, 0.1 * s), where s is
  /// the largest such magnitude over the whole fragment
  double max_rel_error = 0.0;
  bool skipped_frozen = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  double max_error() const;
  bool passed() const { return max_error() < tolerance; }
  std::string to_string() const;
};

/// Evaluates the loss of the fragment. When `with_backward` is set it must
/// also run backward so that every trainable parameter's grad holds dL/dp.
using LossFunction = std::function<double(bool with_backward)>;

GradCheckReport gradient_check(std::span<Parameter* const> params, const LossFunction& loss,
                               const GradCheckOptions& options = {});

/// Fixed random readout: loss = sum(y * R), accumulated in double.
class ProbeLoss {
 public:
  ProbeLoss(const std::vector<std::size_t>& shape, std::uint64_t seed);
  double value(const Tensor& y) const;
  const Tensor& gradient() const { return weights_; }

 private:
  Tensor weights_;
};

// Ready-made checks for each layer type. The input is checked as an extra
// pseudo-parameter named "input".
GradCheckReport check_linear(LinearLayer& layer, const Tensor& x,
                             const GradCheckOptions& options = {});
GradCheckReport check_layer_norm(LayerNorm& layer, const Tensor& x,
                                 const GradCheckOptions& options = {});
GradCheckReport check_attention(AttentionBlock& block, const Tensor& q_in, const Tensor& kv_in,
                                const GradCheckOptions& options = {});
GradCheckReport check_encoder_block(EncoderBlock& block, const Tensor& x, const Tensor* context,
                                    const GradCheckOptions& options = {});
GradCheckReport check_gelu(const Tensor& x, const GradCheckOptions& options = {});

}  // namespace sketch
