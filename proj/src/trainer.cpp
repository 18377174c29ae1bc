// SPDX-License-Identifier: Apache-2.0
#include "sketch/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "sketch/error.hpp"

namespace sketch {

// -------------------------------------------------------------------- Adam

void Adam::step(std::span<Parameter* const> params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size()) throw StateError("Adam: parameter list changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.trainable) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const float g = p.grad[j];
      m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value[j] -= static_cast<float>(cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon));
    }
  }
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ValidationError("epochs must be positive");
  if (batch_size < 2) throw ValidationError("batch_size must be at least 2 (contrastive negatives)");
  if (!(split_ratio > 0.0 && split_ratio < 1.0))
    throw ValidationError("split_ratio must lie in (0, 1)");
  if (!(adam.learning_rate > 0.0f)) throw ValidationError("learning rate must be positive");
  lora.validate();
}

// -------------------------------------------------------------------- logs

std::string serialize_train_log(const TrainLog& log) {
  std::string out = "# epoch\tloss\tacc@1\tacc@5\tacc@10\tacc@25\n";
  char line[256];
  for (const auto& e : log.epochs) {
    std::snprintf(line, sizeof line, "%zu\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n", e.epoch, e.loss,
                  e.accuracy[0], e.accuracy[1], e.accuracy[2], e.accuracy[3]);
    out += line;
  }
  return out;
}

TrainLog parse_train_log(const std::string& text) {
  TrainLog log;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  double best = -1.0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    EpochRecord e;
    if (std::sscanf(line.c_str(), "%zu\t%lf\t%lf\t%lf\t%lf\t%lf", &e.epoch, &e.loss, &e.accuracy[0],
                    &e.accuracy[1], &e.accuracy[2], &e.accuracy[3]) != 6)
      throw FormatError("train log line " + std::to_string(line_no) + " is malformed");
    if (e.accuracy[0] >= best) {
      best = e.accuracy[0];
      log.best_epoch = e.epoch;
    }
    log.epochs.push_back(e);
  }
  return log;
}

// ------------------------------------------------------------ contrastive

ContrastiveResult contrastive_loss(const Tensor& text, const Tensor& image, float scale) {
  if (text.rank() != 2 || text.shape() != image.shape())
    throw DimensionError("contrastive_loss: text " + text.shape_string() + " and image " +
                         image.shape_string() + " must be matching [N x e] matrices");
  const auto n = text.rows(), e = text.cols();
  if (n < 2) throw ValidationError("contrastive_loss needs at least 2 pairs");
  for (const Tensor* m : {&text, &image})
    for (std::size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (float v : m->row(i)) sq += static_cast<double>(v) * v;
      if (std::abs(std::sqrt(sq) - 1.0) > 1e-4)
        throw ValidationError("contrastive_loss: row " + std::to_string(i) + " is not unit norm");
    }

  std::vector<double> cos(n * n), s(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < e; ++k) dot += static_cast<double>(text(i, k)) * image(j, k);
      cos[i * n + j] = dot;
      s[i * n + j] = scale * dot;
    }

  std::vector<double> row_soft(n * n), col_soft(n * n);
  double row_loss = 0.0, col_loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, s[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(s[i * n + j] - mx);
    row_loss += mx + std::log(z) - s[i * n + i];
    for (std::size_t j = 0; j < n; ++j) row_soft[i * n + j] = std::exp(s[i * n + j] - mx) / z;
  }
  for (std::size_t j = 0; j < n; ++j) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, s[i * n + j]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(s[i * n + j] - mx);
    col_loss += mx + std::log(z) - s[j * n + j];
    for (std::size_t i = 0; i < n; ++i) col_soft[i * n + j] = std::exp(s[i * n + j] - mx) / z;
  }

  ContrastiveResult r;
  const double nn = static_cast<double>(n);
  r.loss = 0.5 * (row_loss / nn + col_loss / nn);
  if (!std::isfinite(r.loss)) throw NumericError("contrastive loss is not finite");

  std::vector<double> ds(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double target = i == j ? 1.0 : 0.0;
      ds[i * n + j] = 0.5 / nn * ((row_soft[i * n + j] - target) + (col_soft[i * n + j] - target));
      r.d_scale += ds[i * n + j] * cos[i * n + j];
    }
  r.d_text = Tensor({n, e});
  r.d_image = Tensor({n, e});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < e; ++k) {
      double dt = 0.0, di = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        dt += ds[i * n + j] * image(j, k);
        di += ds[j * n + i] * text(j, k);
      }
      r.d_text(i, k) = static_cast<float>(scale * dt);
      r.d_image(i, k) = static_cast<float>(scale * di);
    }
  return r;
}

TopKResult topk_accuracy(const Tensor& text, const Tensor& image, std::size_t k) {
  if (text.rank() != 2 || text.shape() != image.shape())
    throw DimensionError("topk_accuracy: text " + text.shape_string() + " and image " +
                         image.shape_string() + " must be matching [M x e] matrices");
  const auto m = text.rows(), e = text.cols();
  if (k == 0) throw ValidationError("topk_accuracy: k must be at least 1");
  TopKResult r;
  r.clamped = k > m;
  r.k_used = std::min(k, m);
  std::size_t hits = 0;
  std::vector<double> sims(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < e; ++c) dot += static_cast<double>(text(i, c)) * image(j, c);
      sims[j] = dot;
    }
    std::size_t rank = 0;
    for (std::size_t j = 0; j < m; ++j)
      if (sims[j] > sims[i] || (sims[j] == sims[i] && j < i)) ++rank;
    if (rank < r.k_used) ++hits;
  }
  r.accuracy = static_cast<double>(hits) / static_cast<double>(m);
  return r;
}

Tensor stack(const std::vector<Embedding>& embeddings) {
  if (embeddings.empty()) throw ValidationError("cannot stack zero embeddings");
  const auto e = embeddings.front().values.size();
  Tensor out({embeddings.size(), e});
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].values.size() != e) throw DimensionError("stack: embedding sizes differ");
    std::copy(embeddings[i].values.values().begin(), embeddings[i].values.values().end(),
              out.row(i).begin());
  }
  return out;
}

RetrievalEmbeddings embed_pairs(const EncoderModel& model, const Tokenizer& tokenizer,
                                const std::vector<SketchPair>& pairs) {
  std::vector<std::vector<TokenId>> tokens;
  std::vector<GrayImage> images;
  for (const auto& p : pairs) {
    tokens.push_back(tokenizer.encode(p.description));
    images.push_back(p.image);
  }
  return {stack(encode_texts(model, tokens)), stack(encode_images(model, images))};
}

std::array<double, 4> evaluate_retrieval(const EncoderModel& model, const Tokenizer& tokenizer,
                                         const std::vector<SketchPair>& pairs) {
  const auto emb = embed_pairs(model, tokenizer, pairs);
  std::array<double, 4> acc{};
  for (std::size_t i = 0; i < kTopK.size(); ++i)
    acc[i] = topk_accuracy(emb.text, emb.image, kTopK[i]).accuracy;
  return acc;
}

// ------------------------------------------------------------------- train

namespace {

struct ItemForward {
  TextCache text;
  ImageCache image;
  Tensor text_emb, image_emb;
};

double train_batch(EncoderModel& model, std::span<Parameter* const> params, Adam& adam,
                   const std::vector<std::vector<TokenId>>& tokens,
                   const std::vector<SketchPair>& pairs, std::span<const std::size_t> batch) {
  for (auto* p : params) p->zero_grad();
  const auto n = batch.size();
  ImageFeaturesCache canvas_cache;
  const Tensor context = model.canvas_context(&canvas_cache);

  std::vector<ItemForward> items(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t b = 0; b < count; ++b) {
    const auto idx = batch[b];
    items[b].text_emb = model.embed_text(tokens[idx], context, &items[b].text);
    items[b].image_emb = model.embed_image(pairs[idx].image, &items[b].image);
  }
  std::vector<Embedding> te, ie;
  for (const auto& it : items) {
    te.push_back({it.text_emb, Modality::text});
    ie.push_back({it.image_emb, Modality::image});
  }
  const float scale = model.logit_scale();
  const ContrastiveResult loss = contrastive_loss(stack(te), stack(ie), scale);

  Tensor d_context(context.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const Tensor dt({loss.d_text.cols()}, {loss.d_text.row(b).begin(), loss.d_text.row(b).end()});
    const Tensor di({loss.d_image.cols()}, {loss.d_image.row(b).begin(), loss.d_image.row(b).end()});
    add_inplace(d_context, model.backward_text(dt, items[b].text));
    model.backward_image(di, items[b].image);
  }
  model.backward_image_features(d_context, canvas_cache);
  // d/d(log s) = s * d/ds
  model.log_logit_scale.accumulate(Tensor({1}, static_cast<float>(loss.d_scale * scale)));

  for (auto* p : params)
    if (p->trainable && !p->grad.all_finite())
      throw NumericError("non-finite gradient in " + p->name);
  adam.step(params);
  model.clamp_logit_scale();
  return loss.loss;
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order,
                                                   std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const auto end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // A single leftover pair has no negatives; fold it into the previous batch.
  if (batches.size() > 1 && batches.back().size() < 2) {
    const auto last = batches.back();
    batches.pop_back();
    batches.back().insert(batches.back().end(), last.begin(), last.end());
  }
  return batches;
}

std::vector<Tensor> snapshot(std::span<Parameter* const> params) {
  std::vector<Tensor> out;
  for (const auto* p : params) out.push_back(p->trainable ? p->value : Tensor());
  return out;
}

}  // namespace

TrainResult train(EncoderModel model, const std::vector<SketchPair>& dataset,
                  const Tokenizer& tokenizer, const TrainConfig& cfg) {
  if (dataset.empty()) throw ValidationError("cannot train on an empty dataset");
  const Split s = split(dataset, cfg.split_ratio, cfg.seed);
  return train(std::move(model), s.train, s.validation, tokenizer, cfg);
}

TrainResult train(EncoderModel model, const std::vector<SketchPair>& train_pairs,
                  const std::vector<SketchPair>& validation_pairs, const Tokenizer& tokenizer,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_pairs.size() < 2) throw ValidationError("training set needs at least 2 pairs");
  if (validation_pairs.empty()) throw ValidationError("validation set is empty");

  if (cfg.mode == TrainMode::lora) {
    if (adapter_count(model) == 0) model = inject(std::move(model), cfg.lora);
    set_base_trainable(model, false);
  } else {
    if (adapter_count(model) != 0)
      throw StateError("full training expects a model without adapters");
    set_base_trainable(model, true);
    model.conditioning_projection.weight.set_trainable(false);
  }
  model.log_logit_scale.set_trainable(true);

  std::vector<std::vector<TokenId>> tokens;
  for (const auto& p : train_pairs) tokens.push_back(tokenizer.encode(p.description));

  const auto params = model.parameters();
  Adam adam(cfg.adam);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainLog log;
  double best_acc = -1.0;
  std::vector<Tensor> best = snapshot(params);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    const auto batches = make_batches(order, cfg.batch_size);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      double l = 0.0;
      try {
        l = train_batch(model, params, adam, tokens, train_pairs, batches[b]);
      } catch (const NumericError& e) {
        throw NumericError("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + ": " + e.what());
      }
      total += l;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = total / static_cast<double>(batches.size());
    rec.accuracy = evaluate_retrieval(model, tokenizer, validation_pairs);
    log.epochs.push_back(rec);
    if (rec.accuracy[0] >= best_acc) {
      best_acc = rec.accuracy[0];
      log.best_epoch = epoch;
      best = snapshot(params);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i]->trainable) params[i]->value = best[i];
  return {std::move(model), std::move(log)};
}

// ---------------------------------------------------------------- ablation

std::string AblationResult::table() const {
  std::string out = "targets\tloss\tacc@1\tacc@5\tacc@10\tacc@25\tparams\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%s\t%.6f\t%.4f\t%.4f\t%.4f\t%.4f\t%zu\n",
                  to_string(r.targets).c_str(), r.final_loss, r.accuracy[0], r.accuracy[1],
                  r.accuracy[2], r.accuracy[3], r.parameters);
    out += line;
  }
  return out;
}

AblationResult run_ablation(const EncoderModel& base, const std::vector<SketchPair>& dataset,
                            const Tokenizer& tokenizer, const TrainConfig& base_cfg) {
  if (dataset.empty()) throw ValidationError("cannot run an ablation on an empty dataset");
  const Split s = split(dataset, base_cfg.split_ratio, base_cfg.seed);
  return run_ablation(base, s.train, s.validation, tokenizer, base_cfg);
}

AblationResult run_ablation(const EncoderModel& base, const std::vector<SketchPair>& train_pairs,
                            const std::vector<SketchPair>& validation_pairs,
                            const Tokenizer& tokenizer, const TrainConfig& base_cfg) {
  if (adapter_count(base) != 0) throw StateError("ablation expects a base model without adapters");
  AblationResult result;
  constexpr std::array<LoraTargets, 3> kTargets = {
      LoraTargets::self_attention, LoraTargets::cross_attention, LoraTargets::both};
  for (std::size_t i = 0; i < kTargets.size(); ++i) {
    TrainConfig cfg = base_cfg;
    cfg.mode = TrainMode::lora;
    cfg.lora.targets = kTargets[i];
    EncoderModel adapted = inject(base, cfg.lora);
    const auto params = adapter_parameter_count(adapted);
    auto r = train(std::move(adapted), train_pairs, validation_pairs, tokenizer, cfg);
    AblationRow row;
    row.targets = kTargets[i];
    row.final_loss = r.log.epochs.back().loss;
    row.accuracy = r.log.epochs.back().accuracy;
    row.parameters = params;
    result.rows.push_back(row);
    result.logs[i] = std::move(r.log);
  }
  return result;
}

}  // namespace sketch
