// SPDX-License-Identifier: Apache-2.0
#include "sketch/refine.hpp"

#include <cmath>

#include "sketch/error.hpp"

namespace sketch {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::model1: return "model1";
    case ModelKind::model2: return "model2";
    case ModelKind::model3: return "model3";
  }
  return "model1";
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "model1" || s == "1") return ModelKind::model1;
  if (s == "model2" || s == "2") return ModelKind::model2;
  if (s == "model3" || s == "3") return ModelKind::model3;
  throw ValidationError("unknown model kind '" + s + "' (expected model1, model2 or model3)");
}

void RefinementConfig::validate() const {
  if (!(strength >= 0.0f && strength <= 1.0f)) throw ValidationError("strength must be in [0, 1]");
  if (!(guidance_scale >= 0.0f) || !std::isfinite(guidance_scale))
    throw ValidationError("guidance_scale must be finite and non-negative");
  if (iterations == 0) throw ValidationError("iterations must be at least 1");
}

const GrayImage& RefinementSession::image(std::size_t n) const {
  if (n == 0) return input;
  if (n > iterations.size())
    throw ValidationError("iteration " + std::to_string(n) + " does not exist (session has " +
                          std::to_string(iterations.size()) + ")");
  return iterations[n - 1].image;
}

std::vector<std::string> RefinementSession::feedback() const {
  std::vector<std::string> out;
  for (const auto& it : iterations)
    if (it.feedback && !it.feedback->empty()) out.push_back(*it.feedback);
  return out;
}

std::string compose_prompt(const std::string& description,
                           const std::vector<std::string>& feedback) {
  std::string prompt = description;
  for (const auto& f : feedback) {
    if (f.empty()) continue;
    while (!prompt.empty() && (prompt.back() == ' ' || prompt.back() == '.')) prompt.pop_back();
    prompt += ". " + f;
  }
  return prompt;
}

RefinementSession start_session(std::string id, std::string description, GrayImage input,
                                RefinementConfig config) {
  config.validate();
  if (description.find_first_not_of(" \t\r\n") == std::string::npos)
    throw ValidationError("description must not be empty");
  if (input.size() == 0) throw ValidationError("input sketch is empty");
  RefinementSession s;
  s.id = std::move(id);
  s.description = std::move(description);
  s.input = std::move(input);
  s.config = config;
  return s;
}

namespace {

const Tokenizer& tokenizer_of(const RefinementContext& ctx) {
  static const Tokenizer bytes_only;
  return ctx.tokenizer ? *ctx.tokenizer : bytes_only;
}

const EncoderModel& encoder_for(ModelKind kind, const RefinementContext& ctx) {
  const EncoderModel* m = kind == ModelKind::model2 ? ctx.frozen : ctx.adapted;
  if (!m)
    throw StateError(to_string(kind) + " needs " +
                     (kind == ModelKind::model2 ? "a frozen" : "an adapted") + " encoder");
  return *m;
}

}  // namespace

const IterationRecord& refine_step(RefinementSession& session, const RefinementContext& ctx,
                                   std::optional<std::string> feedback) {
  if (!ctx.backend) throw StateError("refinement needs a generator backend");
  const auto& cfg = session.config;
  cfg.validate();
  const auto& backend = *ctx.backend;
  const auto& tok = tokenizer_of(ctx);
  const std::size_t index = session.iterations.size() + 1;

  IterationRecord rec;
  rec.index = index;
  rec.feedback = std::move(feedback);
  auto all_feedback = session.feedback();
  if (rec.feedback && !rec.feedback->empty()) all_feedback.push_back(*rec.feedback);
  const std::string full = compose_prompt(session.description, all_feedback);
  rec.prompt_tokens = tok.encode(full);
  rec.prompt = tok.truncate(full);
  rec.seed = cfg.seed ^ static_cast<std::uint64_t>(index);

  const GrayImage& current = session.current();
  try {
    rec.latent = backend.encode(current);
  } catch (const std::exception& e) {
    throw BackendError("iteration " + std::to_string(index) + ": encode failed: " + e.what());
  }

  if (cfg.model_kind == ModelKind::model1) {
    rec.conditioning = Tensor({backend.conditioning_dim()});
  } else {
    const EncoderModel& enc = encoder_for(cfg.model_kind, ctx);
    const Embedding text = encode_text(enc, rec.prompt_tokens);
    const GrayImage sized = resize_nearest(current, enc.config().image_size, enc.config().image_size);
    const Embedding image = encode_image(enc, sized);
    rec.conditioning = project_conditioning(enc, combine(text, image), backend.conditioning_dim());
  }

  try {
    rec.image = backend.generate(rec.latent, rec.conditioning, cfg.strength, cfg.guidance_scale,
                                 rec.seed);
  } catch (const std::exception& e) {
    throw BackendError("iteration " + std::to_string(index) + ": generate failed: " + e.what());
  }
  session.iterations.push_back(std::move(rec));
  return session.iterations.back();
}

void append_iteration_metrics(MetricReport& r, const RefinementSession& session,
                              std::size_t index, const EncoderModel& encoder,
                              const std::optional<GrayImage>& reference) {
  if (index == 0 || index > session.iterations.size())
    throw ValidationError("iteration " + std::to_string(index) + " does not exist");
  if (r.reference == ReferenceKind::ground_truth && !reference)
    throw ValidationError("ground-truth report needs a reference image");
  const auto size = encoder.config().image_size;
  auto fit = [&](const GrayImage& img) { return resize_nearest(img, size, size); };
  const auto& it = session.iterations[index - 1];
  const GrayImage ref = resize_nearest(
      r.reference == ReferenceKind::ground_truth ? *reference : session.image(index - 1),
      it.image.width, it.image.height);
  r.ssim.push_back(ssim(it.image, ref));
  r.psnr.push_back(psnr(it.image, ref));
  const Embedding text = encode_text(encoder, it.prompt_tokens);
  r.clip_score.push_back(clip_score(text, encode_image(encoder, fit(it.image))));
  r.perceptual_distance.push_back(perceptual_distance(fit(it.image), fit(ref), encoder));
}

MetricReport report_session(const RefinementSession& session, const EncoderModel& encoder,
                            ReferenceKind kind, const std::optional<GrayImage>& reference) {
  if (session.iterations.empty()) throw ValidationError("session has no iterations to report");
  MetricReport r;
  r.reference = kind;
  for (std::size_t i = 1; i <= session.iterations.size(); ++i)
    append_iteration_metrics(r, session, i, encoder, reference);
  return r;
}

SessionResult run_session(const std::string& description, const GrayImage& input,
                          const RefinementConfig& config, const RefinementContext& ctx,
                          const std::vector<std::string>& feedback,
                          const std::optional<GrayImage>& reference) {
  SessionResult out{start_session("session", description, input, config), {}};
  for (std::size_t i = 0; i < config.iterations; ++i) {
    std::optional<std::string> f;
    if (i < feedback.size() && !feedback[i].empty()) f = feedback[i];
    refine_step(out.session, ctx, f);
  }
  if (const EncoderModel* enc = ctx.metrics_encoder()) {
    if (reference)
      out.reports.push_back(
          report_session(out.session, *enc, ReferenceKind::ground_truth, reference));
    out.reports.push_back(report_session(out.session, *enc, ReferenceKind::previous_iteration));
  }
  return out;
}

}  // namespace sketch
