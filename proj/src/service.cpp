// SPDX-License-Identifier: Apache-2.0
#include "sketch/service.hpp"

#include <cmath>
#include <cstdio>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "sketch/error.hpp"

namespace sketch {

using nlohmann::json;

namespace {

HttpResponse json_response(int status, const json& body) {
  return {status, "application/json", body.dump()};
}

HttpResponse error_response(int status, const std::string& message, json fields = nullptr) {
  json body = {{"error", message}};
  if (!fields.is_null()) body["fields"] = std::move(fields);
  return json_response(status, body);
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json series(const std::vector<double>& v) {
  json out = json::array();
  for (double x : v) out.push_back(number_or_null(x));
  return out;
}

json report_json(const MetricReport& r) {
  return {{"reference", to_string(r.reference)},
          {"ssim", series(r.ssim)},
          {"psnr", series(r.psnr)},
          {"clip_score", series(r.clip_score)},
          {"perceptual_distance", series(r.perceptual_distance)}};
}

json last_metrics(const MetricReport& r) {
  const auto i = r.size() - 1;
  return {{"ssim", number_or_null(r.ssim[i])},
          {"psnr", number_or_null(r.psnr[i])},
          {"clip_score", number_or_null(r.clip_score[i])},
          {"perceptual_distance", number_or_null(r.perceptual_distance[i])}};
}

std::string iso_time(std::chrono::system_clock::time_point t) {
  const auto secs = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Decodes a base64 PGM field, recording a field error on failure.
std::optional<GrayImage> image_field(const json& body, const char* name, json& errors,
                                     bool required) {
  if (!body.contains(name)) {
    if (required) errors[name] = "required";
    return std::nullopt;
  }
  if (!body[name].is_string()) {
    errors[name] = "must be a base64 string";
    return std::nullopt;
  }
  try {
    return decode_pgm(base64_decode(body[name].get<std::string>()));
  } catch (const Error& e) {
    errors[name] = std::string("not a base64-encoded binary PGM: ") + e.what();
    return std::nullopt;
  }
}

template <typename T>
std::optional<T> number_field(const json& body, const char* name, json& errors) {
  if (!body.contains(name) || body[name].is_null()) return std::nullopt;
  const auto& v = body[name];
  if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) {
      errors[name] = "must be a number";
      return std::nullopt;
    }
  } else {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      errors[name] = "must be a non-negative integer";
      return std::nullopt;
    }
  }
  return v.get<T>();
}

std::optional<json> parse_body(const std::string& body, HttpResponse& error) {
  try {
    json j = body.empty() ? json::object() : json::parse(body);
    if (!j.is_object()) {
      error = error_response(400, "request body must be a JSON object");
      return std::nullopt;
    }
    return j;
  } catch (const json::parse_error& e) {
    error = error_response(400, std::string("malformed JSON: ") + e.what());
    return std::nullopt;
  }
}

}  // namespace

SessionService::SessionService(std::optional<Checkpoint> checkpoint, ServiceConfig config)
    : config_(config) {
  if (config_.max_sessions == 0) throw ConfigError("max_sessions must be positive");
  auto pair = make_encoder_pair(std::move(checkpoint), config_.default_encoder_seed);
  tokenizer_ = std::move(pair.tokenizer);
  frozen_ = std::move(pair.frozen);
  adapted_ = std::move(pair.adapted);
  backend_ = ToyLatentBackend({frozen_.config().image_size, frozen_.config().conditioning_dim,
                               config_.backend_seed});
}

RefinementContext SessionService::context() const {
  return {&backend_, &frozen_, &adapted_, &tokenizer_};
}

std::size_t SessionService::session_count() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

std::shared_ptr<SessionService::Entry> SessionService::find(const std::string& id) {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return nullptr;
  lru_.splice(lru_.begin(), lru_, it->second.second);
  return it->second.first;
}

HttpResponse SessionService::health() const { return json_response(200, {{"status", "ok"}}); }

HttpResponse SessionService::create_session(const std::string& raw) {
  HttpResponse err;
  const auto body = parse_body(raw, err);
  if (!body) return err;
  json errors = json::object();

  std::string description;
  if (!body->contains("description"))
    errors["description"] = "required";
  else if (!(*body)["description"].is_string())
    errors["description"] = "must be a string";
  else {
    description = (*body)["description"].get<std::string>();
    if (description.find_first_not_of(" \t\r\n") == std::string::npos)
      errors["description"] = "must not be empty";
  }
  auto image = image_field(*body, "image_base64", errors, true);
  auto reference = image_field(*body, "reference_base64", errors, false);

  RefinementConfig cfg;
  if (body->contains("model_kind")) {
    const auto& mk = (*body)["model_kind"];
    try {
      if (mk.is_string())
        cfg.model_kind = parse_model_kind(mk.get<std::string>());
      else if (mk.is_number_integer())
        cfg.model_kind = parse_model_kind(std::to_string(mk.get<long long>()));
      else
        errors["model_kind"] = "must be model1, model2 or model3";
    } catch (const ValidationError&) {
      errors["model_kind"] = "must be model1, model2 or model3";
    }
  }
  if (auto v = number_field<double>(*body, "strength", errors)) {
    if (*v < 0.0 || *v > 1.0) errors["strength"] = "must be in [0, 1]";
    cfg.strength = static_cast<float>(*v);
  }
  if (auto v = number_field<double>(*body, "guidance_scale", errors)) {
    if (!(*v >= 0.0)) errors["guidance_scale"] = "must be non-negative";
    cfg.guidance_scale = static_cast<float>(*v);
  }
  if (auto v = number_field<std::uint64_t>(*body, "seed", errors)) cfg.seed = *v;
  if (auto v = number_field<std::uint64_t>(*body, "iterations", errors)) {
    if (*v == 0) errors["iterations"] = "must be at least 1";
    cfg.iterations = *v;
  }
  if (!errors.empty()) return error_response(400, "invalid request", errors);

  const auto size = backend_.config().image_size;
  auto entry = std::make_shared<Entry>();
  std::string id;
  {
    std::lock_guard lock(mutex_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(next_id_++));
    id = buf;
  }
  entry->session = start_session(id, description, resize_nearest(*image, size, size), cfg);
  if (reference) {
    entry->reference = resize_nearest(*reference, size, size);
    entry->ground_truth = MetricReport{ReferenceKind::ground_truth, {}, {}, {}, {}};
  }
  entry->created = entry->updated = std::chrono::system_clock::now();

  {
    std::lock_guard lock(mutex_);
    lru_.push_front(id);
    sessions_[id] = {entry, lru_.begin()};
    while (sessions_.size() > config_.max_sessions) {
      const auto victim = lru_.back();
      lru_.pop_back();
      auto it = sessions_.find(victim);
      {
        std::lock_guard victim_lock(it->second.first->mutex);
        it->second.first->deleted = true;
      }
      sessions_.erase(it);
    }
  }
  return json_response(201, {{"session_id", id}});
}

HttpResponse SessionService::add_iteration(const std::string& id, const std::string& raw) {
  auto entry = find(id);
  if (!entry) return error_response(404, "session '" + id + "' not found");
  HttpResponse err;
  const auto body = parse_body(raw, err);
  if (!body) return err;
  std::optional<std::string> feedback;
  if (body->contains("feedback_text") && !(*body)["feedback_text"].is_null()) {
    if (!(*body)["feedback_text"].is_string())
      return error_response(400, "invalid request", {{"feedback_text", "must be a string"}});
    feedback = (*body)["feedback_text"].get<std::string>();
  }

  std::lock_guard lock(entry->mutex);
  if (entry->deleted) return error_response(404, "session '" + id + "' not found");
  auto& s = entry->session;
  try {
    const auto& rec = refine_step(s, context(), feedback);
    const EncoderModel& enc = *context().metrics_encoder();
    append_iteration_metrics(entry->previous, s, rec.index, enc);
    if (entry->ground_truth)
      append_iteration_metrics(*entry->ground_truth, s, rec.index, enc, entry->reference);
  } catch (const DegenerateCombinationError& e) {
    if (s.iterations.size() > entry->previous.size()) s.iterations.pop_back();
    return error_response(422, std::string("degenerate combination: ") + e.what());
  } catch (const BackendError& e) {
    if (s.iterations.size() > entry->previous.size()) s.iterations.pop_back();
    return error_response(502, e.what());
  }
  entry->updated = std::chrono::system_clock::now();
  const auto& rec = s.iterations.back();
  json out = {{"iteration_index", rec.index},
              {"prompt", rec.prompt},
              {"metrics", last_metrics(entry->previous)},
              {"image_base64", base64_encode(encode_pgm(rec.image))}};
  if (entry->ground_truth) out["metrics_ground_truth"] = last_metrics(*entry->ground_truth);
  return json_response(200, out);
}

HttpResponse SessionService::get_session(const std::string& id) {
  auto entry = find(id);
  if (!entry) return error_response(404, "session '" + id + "' not found");
  std::lock_guard lock(entry->mutex);
  if (entry->deleted) return error_response(404, "session '" + id + "' not found");
  const auto& s = entry->session;
  json iterations = json::array();
  for (const auto& it : s.iterations)
    iterations.push_back({{"index", it.index},
                          {"prompt", it.prompt},
                          {"feedback", it.feedback ? json(*it.feedback) : json(nullptr)},
                          {"seed", it.seed}});
  json out = {{"session_id", s.id},
              {"description", s.description},
              {"model_kind", to_string(s.config.model_kind)},
              {"strength", s.config.strength},
              {"guidance_scale", s.config.guidance_scale},
              {"seed", s.config.seed},
              {"created_at", iso_time(entry->created)},
              {"updated_at", iso_time(entry->updated)},
              {"iteration_count", s.iterations.size()},
              {"iterations", iterations},
              {"metrics", report_json(entry->previous)}};
  if (entry->ground_truth) out["metrics_ground_truth"] = report_json(*entry->ground_truth);
  return json_response(200, out);
}

HttpResponse SessionService::get_image(const std::string& id, const std::string& index) {
  auto entry = find(id);
  if (!entry) return error_response(404, "session '" + id + "' not found");
  std::size_t n = 0;
  try {
    if (index.empty() || index.find_first_not_of("0123456789") != std::string::npos)
      throw std::invalid_argument(index);
    const auto v = std::stoull(index);
    n = static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    return error_response(400, "invalid request", {{"n", "must be a non-negative integer"}});
  }
  std::lock_guard lock(entry->mutex);
  if (entry->deleted) return error_response(404, "session '" + id + "' not found");
  if (n > entry->session.iterations.size())
    return error_response(404, "iteration " + index + " not found");
  return {200, "image/x-portable-graymap", encode_pgm(entry->session.image(n))};
}

HttpResponse SessionService::delete_session(const std::string& id) {
  std::shared_ptr<Entry> entry;
  {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return error_response(404, "session '" + id + "' not found");
    entry = it->second.first;
    lru_.erase(it->second.second);
    sessions_.erase(it);
  }
  std::lock_guard lock(entry->mutex);
  entry->deleted = true;
  return {204, "application/json", ""};
}

// ------------------------------------------------------------------ HTTP

struct HttpServer::Impl {
  SessionService& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(SessionService& s) : service(s) {
    auto send = [](httplib::Response& res, const HttpResponse& r) {
      res.status = r.status;
      if (r.status != 204) res.set_content(r.body, r.content_type);
    };
    server.Get("/v1/healthz", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, service.health());
    });
    server.Post("/v1/sessions", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service.create_session(req.body));
    });
    server.Post(R"(/v1/sessions/([^/]+)/iterations)",
                [this, send](const httplib::Request& req, httplib::Response& res) {
                  send(res, service.add_iteration(req.matches[1], req.body));
                });
    server.Get(R"(/v1/sessions/([^/]+))",
               [this, send](const httplib::Request& req, httplib::Response& res) {
                 send(res, service.get_session(req.matches[1]));
               });
    server.Get(R"(/v1/sessions/([^/]+)/iterations/([^/]+)/image)",
               [this, send](const httplib::Request& req, httplib::Response& res) {
                 send(res, service.get_image(req.matches[1], req.matches[2]));
               });
    server.Delete(R"(/v1/sessions/([^/]+))",
                  [this, send](const httplib::Request& req, httplib::Response& res) {
                    send(res, service.delete_session(req.matches[1]));
                  });
    server.set_exception_handler(
        [send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
          int status = 500;
          std::string message = "internal error";
          try {
            std::rethrow_exception(ep);
          } catch (const ValidationError& e) {
            status = 400;
            message = e.what();
          } catch (const std::exception& e) {
            message = e.what();
          }
          send(res, error_response(status, message));
        });
    server.set_payload_max_length(16 * 1024 * 1024);
  }
};

HttpServer::HttpServer(SessionService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port))
    throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace sketch
