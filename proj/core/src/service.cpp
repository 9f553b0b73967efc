#include "cqr/service.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "cqr/embedding.hpp"
#include "cqr/error.hpp"

namespace cqr {

using nlohmann::json;

std::string clarifying_question_text(const std::string& tag) {
  return "Is your question related to " + tag + "?";
}

struct SessionService::Session {
  std::mutex mutex;
  SessionState state;
  std::vector<QuestionId> positives;
  std::vector<TranscriptEntry> history;
  std::size_t max_rounds = 5;
  bool done = false;
  std::chrono::steady_clock::time_point created;
  std::chrono::steady_clock::time_point last_used;
};

namespace {

HttpResponse error_response(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump()};
}

std::optional<json> parse_body(std::string_view body) {
  try {
    json j = json::parse(body.begin(), body.end());
    if (!j.is_object()) return std::nullopt;
    return j;
  } catch (const json::parse_error&) {
    return std::nullopt;
  }
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

SessionService::SessionService(const TrainedModel& model, const NoiseGateModel* gate,
                               const Corpus& corpus, std::vector<QueryRecord> queries,
                               ServiceConfig config)
    : corpus_(corpus),
      model_(model),
      config_(std::move(config)),
      engine_(model, corpus, gate, config_.session),
      index_(Bm25Index::build(corpus)) {
  for (auto& q : queries) {
    const QueryId id = q.id;
    queries_.emplace(id, std::move(q));
  }
  id_salt_ = std::random_device{}();
  id_salt_ = (id_salt_ << 32) ^ std::random_device{}();
}

std::chrono::steady_clock::time_point SessionService::now() const {
  return config_.clock ? config_.clock() : std::chrono::steady_clock::now();
}

std::string SessionService::new_session_id() {
  std::mt19937_64 rng(id_salt_ ^ (++id_counter_ * 0x9e3779b97f4a7c15ULL));
  char buf[40];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng()),
                static_cast<unsigned long long>(rng()));
  return buf;
}

std::size_t SessionService::expire_idle() {
  const auto t = now();
  std::lock_guard lock(store_mutex_);
  std::size_t removed = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (t - it->second->last_used >= config_.idle_expiry) {
      it = sessions_.erase(it);
      ++removed;
    } else {
      ++it;
    }
  }
  return removed;
}

std::size_t SessionService::session_count() const {
  std::lock_guard lock(store_mutex_);
  return sessions_.size();
}

std::shared_ptr<SessionService::Session> SessionService::lookup(const std::string& id) {
  expire_idle();
  std::lock_guard lock(store_mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

namespace {

json ranking_json(const Ranking& ranking, const Corpus& corpus, std::size_t top_n) {
  json out = json::array();
  for (std::size_t i = 0; i < std::min(top_n, ranking.entries.size()); ++i) {
    const auto& e = ranking.entries[i];
    const auto* q = corpus.find(e.id);
    out.push_back({{"rank", i + 1},
                   {"id", e.id},
                   {"title", q ? q->title : std::string()},
                   {"score", e.score},
                   {"probability", e.probability}});
  }
  return out;
}

json question_json(const std::optional<TagId>& tag) {
  if (!tag) return nullptr;
  return {{"tag", *tag}, {"text", clarifying_question_text(*tag)}};
}

json history_json(const std::vector<TranscriptEntry>& history) {
  json out = json::array();
  for (const auto& e : history) out.push_back(json::parse(transcript_entry_to_json(e)));
  return out;
}

}  // namespace

HttpResponse SessionService::create_session(std::string_view body) {
  expire_idle();
  const auto req = parse_body(body);
  if (!req) return error_response(400, "request body must be a JSON object");

  std::size_t max_rounds = config_.max_rounds;
  if (auto it = req->find("max_rounds"); it != req->end()) {
    if (!it->is_number_unsigned()) return error_response(400, "max_rounds must be a non-negative integer");
    max_rounds = it->get<std::size_t>();
  }

  auto session = std::make_shared<Session>();
  session->max_rounds = max_rounds;
  try {
    if (auto it = req->find("query_id"); it != req->end()) {
      if (!it->is_string()) return error_response(400, "query_id must be a string");
      auto q = queries_.find(it->get<std::string>());
      if (q == queries_.end()) return error_response(404, "unknown query id '" + it->get<std::string>() + "'");
      session->state = engine_.start_session(q->second);
      session->positives = q->second.positives;
    } else if (auto t = req->find("query_text"); t != req->end()) {
      if (!t->is_string() || blank(t->get<std::string>()))
        return error_response(400, "query_text must be a non-empty string");
      if (!model_.embedder)
        return error_response(400, "this model cannot embed free text; use query_id");
      const auto text = t->get<std::string>();
      const Vec q = hash_embed(text, *model_.embedder);
      const auto candidates = index_.retrieve(text, config_.candidate_k);
      session->state = engine_.start_session("text", q, candidates);
    } else {
      return error_response(400, "expected query_text or query_id");
    }
  } catch (const Error& e) {
    return error_response(422, e.what());
  }

  std::optional<TagId> next;
  if (max_rounds > 0) next = engine_.ask_next(session->state, TagPolicy::gbs);
  session->done = !next.has_value();
  session->created = session->last_used = now();

  std::string id;
  {
    std::lock_guard lock(store_mutex_);
    do {
      id = new_session_id();
    } while (sessions_.count(id));
    sessions_.emplace(id, session);
  }
  json out = {{"session_id", id},
              {"round", 0},
              {"ranking", ranking_json(session->state.ranking, corpus_, config_.top_n)},
              {"next_question", question_json(next)},
              {"done", session->done}};
  return {201, out.dump()};
}

HttpResponse SessionService::answer(const std::string& session_id, std::string_view body) {
  auto session = lookup(session_id);
  if (!session) return error_response(404, "unknown session '" + session_id + "'");
  const auto req = parse_body(body);
  if (!req) return error_response(400, "request body must be a JSON object");
  auto a = req->find("answer");
  if (a == req->end() || !a->is_string() ||
      (a->get<std::string>() != "yes" && a->get<std::string>() != "no"))
    return error_response(400, "answer must be \"yes\" or \"no\"");
  const Feedback feedback = a->get<std::string>() == "yes" ? Feedback::positive : Feedback::negative;

  std::lock_guard lock(session->mutex);
  session->last_used = now();
  auto& state = session->state;
  if (session->done || !state.pending) {
    session->done = true;
    json out = {{"round", state.round()},
                {"ranking", ranking_json(state.ranking, corpus_, config_.top_n)},
                {"next_question", nullptr},
                {"done", true}};
    return {200, out.dump()};
  }

  const TagId tag = *state.pending;
  const FeedbackTurn& turn = engine_.apply_feedback(state, tag, feedback);
  TranscriptEntry entry{state.round(), turn.tag, turn.feedback, turn.verdict, turn.gate_score, {}};
  for (const auto& p : session->positives) entry.positive_ranks.push_back(state.ranking.rank_of(p));
  session->history.push_back(entry);

  std::optional<TagId> next;
  if (state.round() < session->max_rounds) next = engine_.ask_next(state, TagPolicy::gbs);
  session->done = !next.has_value();

  json out = {{"round", state.round()},
              {"tag", tag},
              {"gate_verdict", to_string(turn.verdict)},
              {"gate_score", turn.gate_score},
              {"ranking", ranking_json(state.ranking, corpus_, config_.top_n)},
              {"next_question", question_json(next)},
              {"done", session->done}};
  if (!session->positives.empty()) out["positive_ranks"] = entry.positive_ranks;
  return {200, out.dump()};
}

HttpResponse SessionService::get(const std::string& session_id) {
  auto session = lookup(session_id);
  if (!session) return error_response(404, "unknown session '" + session_id + "'");
  std::lock_guard lock(session->mutex);
  session->last_used = now();
  const auto& state = session->state;
  json out = {{"session_id", session_id},
              {"query_id", state.query_id},
              {"round", state.round()},
              {"max_rounds", session->max_rounds},
              {"done", session->done},
              {"ranking", ranking_json(state.ranking, corpus_, state.ranking.entries.size())},
              {"history", history_json(session->history)},
              {"next_question", question_json(state.pending)}};
  return {200, out.dump()};
}

HttpResponse SessionService::remove(const std::string& session_id) {
  std::lock_guard lock(store_mutex_);
  if (sessions_.erase(session_id) == 0)
    return error_response(404, "unknown session '" + session_id + "'");
  return {204, ""};
}

HttpResponse SessionService::handle(std::string_view method, std::string_view path,
                                    std::string_view body) {
  constexpr std::string_view prefix = "/sessions";
  if (path.substr(0, prefix.size()) != prefix) return error_response(404, "not found");
  std::string_view rest = path.substr(prefix.size());
  if (rest.empty() || rest == "/") {
    if (method == "POST") return create_session(body);
    return error_response(405, "method not allowed");
  }
  if (rest.front() != '/') return error_response(404, "not found");
  rest.remove_prefix(1);
  const auto slash = rest.find('/');
  const std::string id(rest.substr(0, slash));
  if (slash == std::string_view::npos) {
    if (method == "GET") return get(id);
    if (method == "DELETE") return remove(id);
    return error_response(405, "method not allowed");
  }
  if (rest.substr(slash) == "/answers") {
    if (method == "POST") return answer(id, body);
    return error_response(405, "method not allowed");
  }
  return error_response(404, "not found");
}

struct HttpServer::Impl {
  SessionService& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(SessionService& s) : service(s) {
    auto forward = [this](const char* method) {
      return [this, method](const httplib::Request& req, httplib::Response& res) {
        const HttpResponse r = service.handle(method, req.path, req.body);
        res.status = r.status;
        if (!r.body.empty()) res.set_content(r.body, "application/json");
      };
    };
    server.Post(R"(/sessions/?)", forward("POST"));
    server.Post(R"(/sessions/([^/]+)/answers)", forward("POST"));
    server.Get(R"(/sessions/([^/]+))", forward("GET"));
    server.Delete(R"(/sessions/([^/]+))", forward("DELETE"));
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
  }
};

HttpServer::HttpServer(SessionService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind to " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port))
    throw Error("cannot bind to " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::start() {
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace cqr
