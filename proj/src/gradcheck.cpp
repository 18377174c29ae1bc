// SPDX-License-Identifier: Apache-2.0
#include "sketch/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sketch/error.hpp"

namespace sketch {
namespace {
constexpr double kScaleFloor = 0.1;
}  // namespace

double GradCheckReport::max_error() const {
  double m = 0.0;
  for (const auto& e : entries)
    if (!e.skipped_frozen) m = std::max(m, e.max_rel_error);
  return m;
}

std::string GradCheckReport::to_string() const {
  std::string out;
  char line[256];
  for (const auto& e : entries) {
    if (e.skipped_frozen)
      std::snprintf(line, sizeof line, "%-40s skipped (frozen)\n", e.name.c_str());
    else
      std::snprintf(line, sizeof line, "%-40s n=%-6zu max_rel_err=%.3e\n", e.name.c_str(), e.count,
                    e.max_rel_error);
    out += line;
  }
  return out;
}

GradCheckReport gradient_check(std::span<Parameter* const> params, const LossFunction& loss,
                               const GradCheckOptions& options) {
  std::size_t total = 0;
  for (const auto* p : params) total += p->value.size();
  if (total >= options.max_parameters)
    throw ValidationError("gradient_check: fragment has " + std::to_string(total) +
                          " parameters, limit is " + std::to_string(options.max_parameters));

  for (auto* p : params) p->zero_grad();
  const double base = loss(true);
  if (!std::isfinite(base)) throw NumericError("gradient_check: loss is not finite");

  GradCheckReport report;
  report.tolerance = options.tolerance;
  std::vector<double> scales;
  double fragment_scale = 0.0;
  for (auto* p : params) {
    GradCheckEntry entry;
    entry.name = p->name;
    entry.count = p->value.size();
    if (!p->trainable) {
      entry.skipped_frozen = true;
      report.entries.push_back(entry);
      continue;
    }
    const Tensor analytic = p->grad;
    double max_diff = 0.0, max_mag = 1e-8;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const float orig = p->value[i];
      const float up = orig + static_cast<float>(options.epsilon);
      const float down = orig - static_cast<float>(options.epsilon);
      p->value[i] = up;
      const double lp = loss(false);
      p->value[i] = down;
      const double lm = loss(false);
      p->value[i] = orig;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw NumericError("gradient_check: non-finite loss while perturbing " + p->name + "[" +
                           std::to_string(i) + "]");
      // Divide by the step actually representable in float32.
      const double numeric = (lp - lm) / (static_cast<double>(up) - static_cast<double>(down));
      const double a = analytic[i];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      max_mag = std::max({max_mag, std::abs(a), std::abs(numeric)});
    }
    entry.max_rel_error = max_diff;  // divided below, once the fragment scale is known
    scales.push_back(max_mag);
    fragment_scale = std::max(fragment_scale, max_mag);
    report.entries.push_back(entry);
  }
  // A tensor whose true gradient is zero (a key bias under softmax, say)
  // only shows float32 noise, so its denominator is floored at a fraction of
  // the largest gradient in the fragment.
  for (std::size_t i = 0, k = 0; i < report.entries.size(); ++i) {
    auto& e = report.entries[i];
    if (e.skipped_frozen) continue;
    e.max_rel_error /= std::max(scales[k++], kScaleFloor * fragment_scale);
  }
  return report;
}

ProbeLoss::ProbeLoss(const std::vector<std::size_t>& shape, std::uint64_t seed) {
  Rng rng(seed);
  weights_ = Tensor::randn(shape, 1.0f, rng);
}

double ProbeLoss::value(const Tensor& y) const {
  if (y.shape() != weights_.shape())
    throw DimensionError("probe loss: output " + y.shape_string() + " expected " +
                         weights_.shape_string());
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    s += static_cast<double>(y[i]) * static_cast<double>(weights_[i]);
  return s;
}

namespace {

constexpr std::uint64_t kProbeSeed = 0x5eedu;

GradCheckReport run(std::vector<Parameter*> params, const LossFunction& fn,
                    const GradCheckOptions& options) {
  return gradient_check(params, fn, options);
}

}  // namespace

GradCheckReport check_linear(LinearLayer& layer, const Tensor& x, const GradCheckOptions& options) {
  Parameter input("input", x);
  const ProbeLoss probe({x.rows(), layer.out_dim()}, kProbeSeed);
  std::vector<Parameter*> params;
  layer.collect_parameters(params);
  params.push_back(&input);
  return run(params, [&](bool with_backward) {
    LinearCache cache;
    const Tensor y = layer.forward(input.value, cache);
    if (with_backward) input.accumulate(layer.backward(probe.gradient(), cache));
    return probe.value(y);
  }, options);
}

GradCheckReport check_layer_norm(LayerNorm& layer, const Tensor& x,
                                 const GradCheckOptions& options) {
  Parameter input("input", x);
  const ProbeLoss probe(x.shape(), kProbeSeed);
  std::vector<Parameter*> params;
  layer.collect_parameters(params);
  params.push_back(&input);
  return run(params, [&](bool with_backward) {
    LayerNormCache cache;
    const Tensor y = layer.forward(input.value, cache);
    if (with_backward) input.accumulate(layer.backward(probe.gradient(), cache));
    return probe.value(y);
  }, options);
}

GradCheckReport check_attention(AttentionBlock& block, const Tensor& q_in, const Tensor& kv_in,
                                const GradCheckOptions& options) {
  Parameter query("input.query", q_in);
  Parameter kv("input.kv", kv_in);
  const bool self = block.mode() == AttentionMode::self;
  const ProbeLoss probe({q_in.rows(), block.model_dim()}, kProbeSeed);
  std::vector<Parameter*> params;
  block.collect_parameters(params);
  params.push_back(&query);
  if (!self) params.push_back(&kv);
  return run(params, [&](bool with_backward) {
    AttentionCache cache;
    const Tensor& kv_used = self ? query.value : kv.value;
    const Tensor y = block.forward(query.value, kv_used, cache);
    if (with_backward) {
      AttentionGrads g = block.backward(probe.gradient(), cache);
      if (self) {
        add_inplace(g.d_query_input, g.d_kv_input);
      } else {
        kv.accumulate(g.d_kv_input);
      }
      query.accumulate(g.d_query_input);
    }
    return probe.value(y);
  }, options);
}

GradCheckReport check_encoder_block(EncoderBlock& block, const Tensor& x, const Tensor* context,
                                    const GradCheckOptions& options) {
  Parameter input("input", x);
  std::optional<Parameter> ctx;
  if (context) ctx = Parameter("input.context", *context);
  const ProbeLoss probe(x.shape(), kProbeSeed);
  std::vector<Parameter*> params;
  block.collect_parameters(params);
  params.push_back(&input);
  if (ctx) params.push_back(&*ctx);
  return run(params, [&](bool with_backward) {
    BlockCache cache;
    const Tensor y = block.forward(input.value, ctx ? &ctx->value : nullptr, cache);
    if (with_backward) {
      Tensor dctx;
      input.accumulate(block.backward(probe.gradient(), cache, ctx ? &dctx : nullptr));
      if (ctx) ctx->accumulate(dctx);
    }
    return probe.value(y);
  }, options);
}

GradCheckReport check_gelu(const Tensor& x, const GradCheckOptions& options) {
  Parameter input("input", x);
  const ProbeLoss probe(x.shape(), kProbeSeed);
  std::vector<Parameter*> params{&input};
  return run(params, [&](bool with_backward) {
    const Tensor y = gelu(input.value);
    if (with_backward) {
      Tensor d(x.shape());
      for (std::size_t i = 0; i < d.size(); ++i)
        d[i] = probe.gradient()[i] * gelu_derivative(input.value[i]);
      input.accumulate(d);
    }
    return probe.value(y);
  }, options);
}

}  // namespace sketch
