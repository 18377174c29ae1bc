// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "sketch/backend.hpp"
#include "sketch/checkpoint.hpp"
#include "sketch/refine.hpp"

namespace sketch {

struct ServiceConfig {
  std::size_t max_sessions = 64;
  /// Seed of the encoder used when no checkpoint is loaded.
  std::uint64_t default_encoder_seed = 0;
  std::uint64_t backend_seed = 0;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Transport-independent handlers for the session API. Sessions live in
/// memory only and the least recently used one is evicted past
/// max_sessions. Requests on one session are serialized; requests on
/// different sessions run concurrently.
///
/// Without a checkpoint the service uses a seeded default encoder and a
/// byte-level tokenizer, with fresh (identity) adapters for model3.
class SessionService {
 public:
  explicit SessionService(std::optional<Checkpoint> checkpoint = std::nullopt,
                          ServiceConfig config = {});

  HttpResponse health() const;
  HttpResponse create_session(const std::string& body);
  HttpResponse add_iteration(const std::string& id, const std::string& body);
  HttpResponse get_session(const std::string& id);
  HttpResponse get_image(const std::string& id, const std::string& index);
  HttpResponse delete_session(const std::string& id);

  std::size_t session_count() const;
  const ToyLatentBackend& backend() const { return backend_; }

 private:
  struct Entry {
    std::mutex mutex;
    RefinementSession session;
    std::optional<GrayImage> reference;
    MetricReport previous;
    std::optional<MetricReport> ground_truth;
    std::chrono::system_clock::time_point created, updated;
    bool deleted = false;
  };

  std::shared_ptr<Entry> find(const std::string& id);
  RefinementContext context() const;

  ServiceConfig config_;
  Tokenizer tokenizer_;
  EncoderModel frozen_;
  EncoderModel adapted_;
  ToyLatentBackend backend_;

  mutable std::mutex mutex_;
  std::uint64_t next_id_ = 1;
  std::list<std::string> lru_;  // most recent at front
  std::map<std::string, std::pair<std::shared_ptr<Entry>, std::list<std::string>::iterator>> sessions_;
};

/// HTTP binding of SessionService.
class HttpServer {
 public:
  explicit HttpServer(SessionService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sketch
