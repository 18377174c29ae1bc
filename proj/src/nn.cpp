// SPDX-License-Identifier: Apache-2.0
#include "sketch/nn.hpp"

#include <algorithm>
#include <cmath>

#include "sketch/error.hpp"
#include "sketch/kernels.hpp"

namespace sketch {

// ---------------------------------------------------------------- Parameter

Parameter::Parameter(std::string n, Tensor v, bool train)
    : name(std::move(n)), value(std::move(v)) {
  set_trainable(train);
}

void Parameter::set_trainable(bool on) {
  trainable = on;
  if (on) {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  } else {
    grad = Tensor();
  }
}

void Parameter::zero_grad() {
  if (trainable) grad.fill(0.0f);
}

void Parameter::accumulate(const Tensor& g) {
  if (!trainable) return;
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  add_inplace(grad, g);
}

Tensor LoraAdapter::delta() const {
  const auto out = b.value.shape()[0];
  const auto in = a.value.shape()[1];
  Tensor d({out, in});
  kernels::gemm(b.value.values(), a.value.values(), d.values(), out, rank, in);
  const float s = scaling();
  for (auto& v : d.values()) v *= s;
  return d;
}

// ------------------------------------------------------------------ Linear

LinearLayer::LinearLayer(std::string name, std::size_t in, std::size_t out, bool with_bias,
                         Rng& rng)
    : name_(std::move(name)) {
  const float stddev = 1.0f / std::sqrt(static_cast<float>(in));
  weight = Parameter(name_ + ".weight", Tensor::randn({out, in}, stddev, rng));
  if (with_bias) bias = Parameter(name_ + ".bias", Tensor({out}));
}

LinearLayer::LinearLayer(std::string name, Tensor w, std::optional<Tensor> b)
    : name_(std::move(name)) {
  if (w.rank() != 2) throw DimensionError("linear weight must be a matrix, got " + w.shape_string());
  if (b && (b->rank() != 1 || b->size() != w.shape()[0]))
    throw DimensionError("linear bias " + b->shape_string() + " does not match weight " +
                         w.shape_string());
  weight = Parameter(name_ + ".weight", std::move(w));
  if (b) bias = Parameter(name_ + ".bias", std::move(*b));
}

Tensor LinearLayer::forward(const Tensor& x) const {
  LinearCache scratch;
  return forward(x, scratch);
}

Tensor LinearLayer::forward(const Tensor& x, LinearCache& cache) const {
  const auto in = in_dim(), out = out_dim();
  if (x.rank() != 2 || x.cols() != in)
    throw DimensionError(name_ + ": input " + x.shape_string() + " does not match weight " +
                         weight.value.shape_string());
  const auto batch = x.rows();
  Tensor y({batch, out});
  kernels::gemm_nt(x.values(), weight.value.values(), y.values(), batch, in, out);
  if (bias)
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t j = 0; j < out; ++j) y(i, j) += bias->value[j];
  if (adapter) {
    // Added after the base product so a zero B leaves y bitwise unchanged.
    const auto r = adapter->rank;
    Tensor u({batch, r});
    kernels::gemm_nt(x.values(), adapter->a.value.values(), u.values(), batch, in, r);
    Tensor delta({batch, out});
    kernels::gemm_nt(u.values(), adapter->b.value.values(), delta.values(), batch, r, out);
    const float s = adapter->scaling();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * delta[i];
    cache.lora_hidden = std::move(u);
  } else {
    cache.lora_hidden = Tensor();
  }
  cache.input = x;
  cache.valid = true;
  return y;
}

Tensor LinearLayer::backward(const Tensor& dy, const LinearCache& cache) {
  if (!cache.valid) throw StateError(name_ + ": backward called before forward");
  const auto in = in_dim(), out = out_dim();
  const auto batch = cache.input.rows();
  if (dy.rank() != 2 || dy.rows() != batch || dy.cols() != out)
    throw DimensionError(name_ + ": upstream gradient " + dy.shape_string() + " expected [" +
                         std::to_string(batch) + "x" + std::to_string(out) + "]");

  Tensor dx({batch, in});
  kernels::gemm(dy.values(), weight.value.values(), dx.values(), batch, out, in);

  if (weight.trainable) {
    Tensor dw({out, in});
    kernels::gemm_tn(dy.values(), cache.input.values(), dw.values(), batch, out, in);
    weight.accumulate(dw);
  }
  if (bias && bias->trainable) {
    Tensor db({out});
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t j = 0; j < out; ++j) db[j] += dy(i, j);
    bias->accumulate(db);
  }
  if (adapter) {
    if (cache.lora_hidden.empty())
      throw StateError(name_ + ": adapter attached after the cached forward pass");
    const auto r = adapter->rank;
    const float s = adapter->scaling();
    Tensor dy_scaled = scaled(dy, s);
    if (adapter->b.trainable) {
      Tensor db({out, r});
      kernels::gemm_tn(dy_scaled.values(), cache.lora_hidden.values(), db.values(), batch, out, r);
      adapter->b.accumulate(db);
    }
    Tensor du({batch, r});
    kernels::gemm(dy_scaled.values(), adapter->b.value.values(), du.values(), batch, out, r);
    if (adapter->a.trainable) {
      Tensor da({r, in});
      kernels::gemm_tn(du.values(), cache.input.values(), da.values(), batch, r, in);
      adapter->a.accumulate(da);
    }
    kernels::gemm(du.values(), adapter->a.value.values(), dx.values(), batch, r, in, true);
  }
  return dx;
}

void LinearLayer::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (bias) out.push_back(&*bias);
  if (adapter) {
    out.push_back(&adapter->a);
    out.push_back(&adapter->b);
  }
}

void LinearLayer::collect_parameters(std::vector<const Parameter*>& out) const {
  out.push_back(&weight);
  if (bias) out.push_back(&*bias);
  if (adapter) {
    out.push_back(&adapter->a);
    out.push_back(&adapter->b);
  }
}

// --------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(std::string name, std::size_t dim)
    : gamma(name + ".gamma", Tensor({dim}, 1.0f)), beta(name + ".beta", Tensor({dim})) {}

Tensor LayerNorm::forward(const Tensor& x) const {
  LayerNormCache scratch;
  return forward(x, scratch);
}

Tensor LayerNorm::forward(const Tensor& x, LayerNormCache& cache) const {
  const auto d = gamma.value.size();
  expect_cols(x, d, gamma.name.c_str());
  const auto rows = x.rows();
  Tensor y(x.shape());
  cache.normalized = Tensor(x.shape());
  cache.inv_std.assign(rows, 0.0f);
  for (std::size_t i = 0; i < rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kEpsilon);
    cache.inv_std[i] = static_cast<float>(inv);
    for (std::size_t j = 0; j < d; ++j) {
      const double n = (x(i, j) - mean) * inv;
      cache.normalized(i, j) = static_cast<float>(n);
      y(i, j) = static_cast<float>(n * gamma.value[j] + beta.value[j]);
    }
  }
  cache.valid = true;
  return y;
}

Tensor LayerNorm::backward(const Tensor& dy, const LayerNormCache& cache) {
  if (!cache.valid) throw StateError(gamma.name + ": backward called before forward");
  const auto d = gamma.value.size();
  const auto rows = cache.normalized.rows();
  if (dy.shape() != cache.normalized.shape())
    throw DimensionError(gamma.name + ": upstream gradient shape " + dy.shape_string());
  Tensor dx(dy.shape());
  Tensor dgamma({d}), dbeta({d});
  std::vector<float> dn(d);
  for (std::size_t i = 0; i < rows; ++i) {
    double mean_dn = 0.0, mean_dn_n = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const float n = cache.normalized(i, j);
      dgamma[j] += dy(i, j) * n;
      dbeta[j] += dy(i, j);
      dn[j] = dy(i, j) * gamma.value[j];
      mean_dn += dn[j];
      mean_dn_n += dn[j] * n;
    }
    mean_dn /= static_cast<double>(d);
    mean_dn_n /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j)
      dx(i, j) = cache.inv_std[i] *
                 static_cast<float>(dn[j] - mean_dn - cache.normalized(i, j) * mean_dn_n);
  }
  gamma.accumulate(dgamma);
  beta.accumulate(dbeta);
  return dx;
}

void LayerNorm::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

void LayerNorm::collect_parameters(std::vector<const Parameter*>& out) const {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// ------------------------------------------------------------- activations

namespace {
constexpr double kGeluCoeff = 0.044715;
constexpr double kSqrt2OverPi = 0.7978845608028654;
}  // namespace

// Evaluated in double, rounded once.
float gelu(float xf) {
  const double x = xf;
  const double inner = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
  return static_cast<float>(0.5 * x * (1.0 + std::tanh(inner)));
}

float gelu_derivative(float xf) {
  const double x = xf;
  const double inner = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * x * x);
  return static_cast<float>(0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner);
}

Tensor gelu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = gelu(v);
  return y;
}

void softmax_rows(Tensor& t) {
  const auto cols = t.cols();
  std::vector<double> exps;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    auto row = t.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    exps.resize(cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sum += exps[j] = std::exp(row[j] - mx);
    for (std::size_t j = 0; j < cols; ++j) row[j] = static_cast<float>(exps[j] / sum);
  }
}

// --------------------------------------------------------------- Attention

namespace {

Tensor head_slice(const Tensor& x, std::size_t head, std::size_t head_dim) {
  const auto rows = x.rows();
  Tensor out({rows, head_dim});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < head_dim; ++j) out(i, j) = x(i, head * head_dim + j);
  return out;
}

void head_scatter(Tensor& x, const Tensor& part, std::size_t head, std::size_t head_dim) {
  for (std::size_t i = 0; i < part.rows(); ++i)
    for (std::size_t j = 0; j < head_dim; ++j) x(i, head * head_dim + j) = part(i, j);
}

}  // namespace

AttentionBlock::AttentionBlock(std::string name, std::size_t model_dim, std::size_t num_heads,
                               AttentionMode mode, Rng& rng)
    : name_(std::move(name)), model_dim_(model_dim), num_heads_(num_heads), mode_(mode) {
  if (num_heads == 0 || model_dim % num_heads != 0)
    throw ConfigError(name_ + ": model_dim " + std::to_string(model_dim) +
                      " is not divisible by num_heads " + std::to_string(num_heads));
  q_proj = LinearLayer(name_ + ".q_proj", model_dim, model_dim, true, rng);
  k_proj = LinearLayer(name_ + ".k_proj", model_dim, model_dim, true, rng);
  v_proj = LinearLayer(name_ + ".v_proj", model_dim, model_dim, true, rng);
  o_proj = LinearLayer(name_ + ".o_proj", model_dim, model_dim, true, rng);
}

Tensor AttentionBlock::forward(const Tensor& q_in, const Tensor& kv_in) const {
  AttentionCache scratch;
  return forward(q_in, kv_in, scratch);
}

Tensor AttentionBlock::forward(const Tensor& q_in, const Tensor& kv_in,
                               AttentionCache& cache) const {
  if (kv_in.empty() || kv_in.rows() == 0)
    throw ValidationError(name_ + ": key/value sequence is empty");
  expect_cols(q_in, model_dim_, (name_ + " query input").c_str());
  expect_cols(kv_in, model_dim_, (name_ + " key/value input").c_str());

  const auto lq = q_in.rows(), lk = kv_in.rows();
  const auto dh = model_dim_ / num_heads_;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  cache.queries = q_proj.forward(q_in, cache.q);
  cache.keys = k_proj.forward(kv_in, cache.k);
  cache.values = v_proj.forward(kv_in, cache.v);
  cache.probs = Tensor({num_heads_ * lq, lk});

  Tensor context({lq, model_dim_});
  for (std::size_t h = 0; h < num_heads_; ++h) {
    const Tensor qh = head_slice(cache.queries, h, dh);
    const Tensor kh = head_slice(cache.keys, h, dh);
    const Tensor vh = head_slice(cache.values, h, dh);
    Tensor scores({lq, lk});
    kernels::gemm_nt(qh.values(), kh.values(), scores.values(), lq, dh, lk);
    for (auto& s : scores.values()) s *= scale;
    softmax_rows(scores);
    Tensor oh({lq, dh});
    kernels::gemm(scores.values(), vh.values(), oh.values(), lq, lk, dh);
    head_scatter(context, oh, h, dh);
    std::copy(scores.values().begin(), scores.values().end(),
              cache.probs.values().begin() + static_cast<std::ptrdiff_t>(h * lq * lk));
  }
  Tensor out = o_proj.forward(context, cache.o);
  cache.valid = true;
  return out;
}

AttentionGrads AttentionBlock::backward(const Tensor& dy, const AttentionCache& cache) {
  if (!cache.valid) throw StateError(name_ + ": backward called before forward");
  const auto lq = cache.queries.rows(), lk = cache.keys.rows();
  const auto dh = model_dim_ / num_heads_;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  const Tensor d_context = o_proj.backward(dy, cache.o);
  Tensor dq({lq, model_dim_}), dk({lk, model_dim_}), dv({lk, model_dim_});
  for (std::size_t h = 0; h < num_heads_; ++h) {
    const Tensor qh = head_slice(cache.queries, h, dh);
    const Tensor kh = head_slice(cache.keys, h, dh);
    const Tensor vh = head_slice(cache.values, h, dh);
    const Tensor doh = head_slice(d_context, h, dh);
    Tensor p({lq, lk});
    std::copy_n(cache.probs.data() + h * lq * lk, lq * lk, p.data());

    Tensor dp({lq, lk});
    kernels::gemm_nt(doh.values(), vh.values(), dp.values(), lq, dh, lk);
    Tensor dvh({lk, dh});
    kernels::gemm_tn(p.values(), doh.values(), dvh.values(), lq, lk, dh);

    Tensor ds({lq, lk});
    for (std::size_t i = 0; i < lq; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < lk; ++j) dot += double(p(i, j)) * dp(i, j);
      for (std::size_t j = 0; j < lk; ++j)
        ds(i, j) = static_cast<float>(p(i, j) * (dp(i, j) - dot) * scale);
    }
    Tensor dqh({lq, dh});
    kernels::gemm(ds.values(), kh.values(), dqh.values(), lq, lk, dh);
    Tensor dkh({lk, dh});
    kernels::gemm_tn(ds.values(), qh.values(), dkh.values(), lq, lk, dh);

    head_scatter(dq, dqh, h, dh);
    head_scatter(dk, dkh, h, dh);
    head_scatter(dv, dvh, h, dh);
  }
  AttentionGrads grads;
  grads.d_query_input = q_proj.backward(dq, cache.q);
  grads.d_kv_input = k_proj.backward(dk, cache.k);
  add_inplace(grads.d_kv_input, v_proj.backward(dv, cache.v));
  return grads;
}

void AttentionBlock::collect_parameters(std::vector<Parameter*>& out) {
  for (auto* p : projections()) p->collect_parameters(out);
}

void AttentionBlock::collect_parameters(std::vector<const Parameter*>& out) const {
  for (const auto* p : projections()) p->collect_parameters(out);
}

std::vector<LinearLayer*> AttentionBlock::projections() {
  return {&q_proj, &k_proj, &v_proj, &o_proj};
}

std::vector<const LinearLayer*> AttentionBlock::projections() const {
  return {&q_proj, &k_proj, &v_proj, &o_proj};
}

// ------------------------------------------------------------ EncoderBlock

EncoderBlock::EncoderBlock(std::string name, std::size_t dim, std::size_t heads,
                           std::size_t hidden, AttentionMode mode, Rng& rng)
    : ln1(name + ".ln1", dim),
      ln2(name + ".ln2", dim),
      attn(name, dim, heads, mode, rng),
      fc1(name + ".fc1", dim, hidden, true, rng),
      fc2(name + ".fc2", hidden, dim, true, rng) {
  if (mode == AttentionMode::cross) ln_kv = LayerNorm(name + ".ln_kv", dim);
}

Tensor EncoderBlock::forward(const Tensor& x, const Tensor* context) const {
  BlockCache scratch;
  return forward(x, context, scratch);
}

Tensor EncoderBlock::forward(const Tensor& x, const Tensor* context, BlockCache& cache) const {
  const Tensor a = ln1.forward(x, cache.ln1);
  Tensor h;
  if (mode() == AttentionMode::cross) {
    if (context == nullptr) throw StateError(attn.name() + ": cross block needs a context");
    const Tensor c = ln_kv.forward(*context, cache.ln_kv);
    h = attn.forward(a, c, cache.attn);
  } else {
    h = attn.forward(a, a, cache.attn);
  }
  add_inplace(h, x);
  const Tensor b = ln2.forward(h, cache.ln2);
  cache.pre_activation = fc1.forward(b, cache.fc1);
  Tensor y = fc2.forward(gelu(cache.pre_activation), cache.fc2);
  add_inplace(y, h);
  cache.valid = true;
  return y;
}

Tensor EncoderBlock::backward(const Tensor& dy, const BlockCache& cache, Tensor* d_context) {
  if (!cache.valid) throw StateError(attn.name() + ": backward called before forward");
  Tensor dg = fc2.backward(dy, cache.fc2);
  for (std::size_t i = 0; i < dg.size(); ++i) dg[i] *= gelu_derivative(cache.pre_activation[i]);
  Tensor dh = ln2.backward(fc1.backward(dg, cache.fc1), cache.ln2);
  add_inplace(dh, dy);

  AttentionGrads g = attn.backward(dh, cache.attn);
  Tensor da = std::move(g.d_query_input);
  if (mode() == AttentionMode::cross) {
    Tensor dc = ln_kv.backward(g.d_kv_input, cache.ln_kv);
    if (d_context != nullptr) {
      if (d_context->empty()) *d_context = Tensor(dc.shape());
      add_inplace(*d_context, dc);
    }
  } else {
    add_inplace(da, g.d_kv_input);
  }
  Tensor dx = ln1.backward(da, cache.ln1);
  add_inplace(dx, dh);
  return dx;
}

void EncoderBlock::collect_parameters(std::vector<Parameter*>& out) {
  ln1.collect_parameters(out);
  if (mode() == AttentionMode::cross) ln_kv.collect_parameters(out);
  attn.collect_parameters(out);
  ln2.collect_parameters(out);
  fc1.collect_parameters(out);
  fc2.collect_parameters(out);
}

void EncoderBlock::collect_parameters(std::vector<const Parameter*>& out) const {
  ln1.collect_parameters(out);
  if (mode() == AttentionMode::cross) ln_kv.collect_parameters(out);
  attn.collect_parameters(out);
  ln2.collect_parameters(out);
  fc1.collect_parameters(out);
  fc2.collect_parameters(out);
}

}  // namespace sketch
