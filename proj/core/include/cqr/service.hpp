#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cqr/bm25.hpp"
#include "cqr/conversation.hpp"
#include "cqr/corpus.hpp"
#include "cqr/noise_gate.hpp"
#include "cqr/trainer.hpp"

namespace cqr {

struct ServiceConfig {
  std::size_t max_rounds = 5;
  std::size_t top_n = 10;
  std::size_t candidate_k = 20;
  std::chrono::seconds idle_expiry{30 * 60};
  SessionOptions session;
  // Injected for tests; defaults to steady_clock::now.
  std::function<std::chrono::steady_clock::time_point()> clock;
};

struct HttpResponse {
  int status = 200;
  std::string body;  // JSON
};

// Surface text of a clarifying question about `tag`.
std::string clarifying_question_text(const std::string& tag);

/// In-memory store of live retrieval sessions behind a JSON API:
///   POST   /sessions              {"query_text"} or {"query_id"}, optional "max_rounds"
///   POST   /sessions/{id}/answers {"answer": "yes" | "no"}
///   GET    /sessions/{id}
///   DELETE /sessions/{id}
/// Model, gate and corpus are shared read-only; each session is mutated
/// under its own lock.
class SessionService {
 public:
  SessionService(const TrainedModel& model, const NoiseGateModel* gate, const Corpus& corpus,
                 std::vector<QueryRecord> queries, ServiceConfig config = {});

  HttpResponse create_session(std::string_view body);
  HttpResponse answer(const std::string& session_id, std::string_view body);
  HttpResponse get(const std::string& session_id);
  HttpResponse remove(const std::string& session_id);

  // Dispatches on method and path; unknown routes are 404, wrong methods 405.
  HttpResponse handle(std::string_view method, std::string_view path, std::string_view body);

  std::size_t expire_idle();
  std::size_t session_count() const;

 private:
  struct Session;
  std::shared_ptr<Session> lookup(const std::string& id);
  std::string new_session_id();
  std::chrono::steady_clock::time_point now() const;

  const Corpus& corpus_;
  const TrainedModel& model_;
  ServiceConfig config_;
  ConversationEngine engine_;
  Bm25Index index_;
  std::unordered_map<QueryId, QueryRecord> queries_;

  mutable std::mutex store_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t id_counter_ = 0;
  std::uint64_t id_salt_ = 0;
};

/// cpp-httplib front end for a SessionService.
class HttpServer {
 public:
  explicit HttpServer(SessionService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds to host:port (port 0 picks a free port) and returns the port.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void start();   // listen() on a background thread
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cqr
