#include <doctest.h>

#include <json.hpp>

#include "cqr/service.hpp"
#include "cqr/simulation.hpp"
#include "fixtures.hpp"

using namespace cqr;
using nlohmann::json;

namespace {

struct Harness {
  std::chrono::steady_clock::time_point t = std::chrono::steady_clock::time_point{} + std::chrono::hours(1);
  ServiceConfig config;
  SessionService service;

  explicit Harness(ServiceConfig c = {}, const TrainedModel* model = nullptr)
      : config(with_clock(c)),
        service(model ? *model : fixtures::toy_pipeline().model, &fixtures::toy_pipeline().gate,
                fixtures::toy_pipeline().data.corpus, fixtures::toy_pipeline().data.queries, config) {}

  ServiceConfig with_clock(ServiceConfig c) {
    c.clock = [this] { return t; };
    return c;
  }

  std::pair<int, json> call(std::string_view method, const std::string& path, const std::string& body = {}) {
    const auto r = service.handle(method, path, body);
    return {r.status, r.body.empty() ? json() : json::parse(r.body)};
  }
  json create(const json& body) {
    auto [status, j] = call("POST", "/sessions", body.dump());
    REQUIRE(status == 201);
    return j;
  }
  std::pair<int, json> answer(const std::string& id, const std::string& a) {
    return call("POST", "/sessions/" + id + "/answers", json{{"answer", a}}.dump());
  }
};

const QueryRecord& first_test_query() { return fixtures::toy_pipeline().split.test.front(); }

}  // namespace

TEST_CASE("question template") {
  CHECK(clarifying_question_text("python") == "Is your question related to python?");
}

TEST_CASE("creating a session from text returns a ranking and a question") {
  Harness h;
  const auto j = h.create({{"query_text", "how to sort items list"}});
  CHECK(j.at("session_id").get<std::string>().size() == 32);
  CHECK(j.at("round") == 0);
  CHECK(j.at("done") == false);
  const auto& ranking = j.at("ranking");
  CHECK(ranking.size() == 10);
  CHECK(ranking[0].at("rank") == 1);
  CHECK(ranking[0].at("probability").get<double>() >= ranking[1].at("probability").get<double>());
  const auto tag = j.at("next_question").at("tag").get<std::string>();
  CHECK(j.at("next_question").at("text") == clarifying_question_text(tag));
}

TEST_CASE("creating a session from a known query id") {
  Harness h;
  const auto j = h.create({{"query_id", first_test_query().id}});
  CHECK(j.at("ranking").size() == 10);
  auto [status, bad] = h.call("POST", "/sessions", json{{"query_id", "no-such-query"}}.dump());
  CHECK(status == 404);
  CHECK(bad.contains("error"));
}

TEST_CASE("invalid creation requests are 400") {
  Harness h;
  for (const std::string body : {"", "{}", "[1,2]", "{not json", R"({"query_text":""})",
                                 R"({"query_text":"   "})", R"({"query_text":5})",
                                 R"({"query_text":"sort","max_rounds":-1})"}) {
    CAPTURE(body);
    CHECK(h.call("POST", "/sessions", body).first == 400);
  }
  CHECK(h.service.session_count() == 0);
}

TEST_CASE("free text needs a model with an embedder") {
  auto model = fixtures::toy_pipeline().model;
  model.embedder.reset();
  Harness h({}, &model);
  CHECK(h.call("POST", "/sessions", R"({"query_text":"sort"})").first == 400);
  CHECK(h.call("POST", "/sessions", json{{"query_id", first_test_query().id}}.dump()).first == 201);
}

TEST_CASE("session ids are distinct") {
  Harness h;
  std::set<std::string> ids;
  for (int i = 0; i < 20; ++i) ids.insert(h.create({{"query_text", "parse json"}}).at("session_id"));
  CHECK(ids.size() == 20);
  CHECK(h.service.session_count() == 20);
}

TEST_CASE("answers advance the session until done") {
  Harness h;
  const auto created = h.create({{"query_id", first_test_query().id}, {"max_rounds", 2}});
  const std::string id = created.at("session_id");
  const std::string first_tag = created.at("next_question").at("tag");

  auto [s1, r1] = h.answer(id, "yes");
  CHECK(s1 == 200);
  CHECK(r1.at("round") == 1);
  CHECK(r1.at("tag") == first_tag);
  CHECK((r1.at("gate_verdict") == "accept" || r1.at("gate_verdict") == "ask_another"));
  CHECK(r1.at("positive_ranks").size() == first_test_query().positives.size());
  CHECK(r1.at("done") == false);
  CHECK(r1.at("next_question").at("tag") != first_tag);

  auto [s2, r2] = h.answer(id, "no");
  CHECK(s2 == 200);
  CHECK(r2.at("done") == true);
  CHECK(r2.at("next_question").is_null());

  auto [s3, r3] = h.answer(id, "yes");
  CHECK(s3 == 200);
  CHECK(r3.at("done") == true);
  CHECK(r3.at("round") == 2);
  CHECK(r3.at("ranking") == r2.at("ranking"));
}

TEST_CASE("zero max rounds is done immediately") {
  Harness h;
  const auto j = h.create({{"query_text", "sort"}, {"max_rounds", 0}});
  CHECK(j.at("done") == true);
  CHECK(j.at("next_question").is_null());
}

TEST_CASE("invalid answers") {
  Harness h;
  const std::string id = h.create({{"query_text", "sort"}}).at("session_id");
  CHECK(h.answer("missing", "yes").first == 404);
  CHECK(h.answer(id, "maybe").first == 400);
  CHECK(h.call("POST", "/sessions/" + id + "/answers", "{").first == 400);
  CHECK(h.call("POST", "/sessions/" + id + "/answers", R"({"answer":true})").first == 400);
  CHECK(h.call("POST", "/sessions/" + id + "/answers", "").first == 400);
}

TEST_CASE("get returns the full ranking and history; delete removes") {
  Harness h;
  const std::string id = h.create({{"query_id", first_test_query().id}}).at("session_id");
  h.answer(id, "no");
  auto [status, j] = h.call("GET", "/sessions/" + id);
  CHECK(status == 200);
  CHECK(j.at("query_id") == first_test_query().id);
  CHECK(j.at("round") == 1);
  CHECK(j.at("max_rounds") == 5);
  CHECK(j.at("ranking").size() == first_test_query().candidates.size());
  REQUIRE(j.at("history").size() == 1);
  CHECK(j.at("history")[0].at("feedback") == "no");
  CHECK(j.at("history")[0].at("round") == 1);

  CHECK(h.call("DELETE", "/sessions/" + id).first == 204);
  CHECK(h.call("DELETE", "/sessions/" + id).first == 404);
  CHECK(h.call("GET", "/sessions/" + id).first == 404);
}

TEST_CASE("routing") {
  Harness h;
  CHECK(h.call("GET", "/sessions").first == 405);
  CHECK(h.call("PUT", "/sessions/abc").first == 405);
  CHECK(h.call("GET", "/sessions/abc/answers").first == 405);
  CHECK(h.call("GET", "/elsewhere").first == 404);
  CHECK(h.call("GET", "/sessions/abc/other").first == 404);
  CHECK(h.call("GET", "/sessionsX").first == 404);
}

TEST_CASE("idle sessions expire") {
  ServiceConfig c;
  c.idle_expiry = std::chrono::minutes(30);
  Harness h(c);
  const std::string old_id = h.create({{"query_text", "sort"}}).at("session_id");
  h.t += std::chrono::minutes(20);
  const std::string new_id = h.create({{"query_text", "sort"}}).at("session_id");
  h.t += std::chrono::minutes(15);
  CHECK(h.call("GET", "/sessions/" + old_id).first == 404);
  CHECK(h.call("GET", "/sessions/" + new_id).first == 200);
  h.t += std::chrono::minutes(29);
  CHECK(h.service.expire_idle() == 0);
  h.t += std::chrono::minutes(2);
  CHECK(h.service.expire_idle() == 1);
  CHECK(h.service.session_count() == 0);
}

TEST_CASE("interleaved sessions do not affect each other") {
  const auto& queries = fixtures::toy_pipeline().split.test;
  const std::vector<std::string> answers_a = {"yes", "no", "no", "yes", "no"};
  const std::vector<std::string> answers_b = {"no", "no", "yes", "yes", "yes"};
  auto solo = [&](const QueryRecord& q, const std::vector<std::string>& answers) {
    Harness h;
    const std::string id = h.create({{"query_id", q.id}}).at("session_id");
    for (const auto& a : answers) h.answer(id, a);
    return h.call("GET", "/sessions/" + id).second;
  };
  const auto expect_a = solo(queries[0], answers_a);
  const auto expect_b = solo(queries[1], answers_b);

  Harness h;
  const std::string a = h.create({{"query_id", queries[0].id}}).at("session_id");
  const std::string b = h.create({{"query_id", queries[1].id}}).at("session_id");
  for (std::size_t i = 0; i < answers_a.size(); ++i) {
    h.answer(b, answers_b[i]);
    h.answer(a, answers_a[i]);
  }
  auto strip = [](json j) {
    j.erase("session_id");
    return j;
  };
  CHECK(strip(h.call("GET", "/sessions/" + a).second) == strip(expect_a));
  CHECK(strip(h.call("GET", "/sessions/" + b).second) == strip(expect_b));
}

TEST_CASE("confirming a relevant tag tends to lift the positive") {
  const auto& p = fixtures::toy_pipeline();
  Harness h;
  std::size_t better = 0, worse = 0;
  double before_sum = 0.0, after_sum = 0.0;
  for (const auto& q : p.split.test) {
    const auto& target = p.data.corpus.question(q.positives[0]);
    auto created = h.create({{"query_id", q.id}});
    const std::string id = created.at("session_id");
    std::size_t rank = 0;
    const json state = h.call("GET", "/sessions/" + id).second;
    for (const auto& e : state.at("ranking"))
      if (e.at("id") == target.id) rank = e.at("rank");
    REQUIRE(rank > 0);
    json next = created.at("next_question");
    while (!next.is_null()) {
      const std::string tag = next.at("tag");
      const bool relevant = target.has_tag(tag);
      auto [status, r] = h.answer(id, relevant ? "yes" : "no");
      REQUIRE(status == 200);
      const std::size_t after = r.at("positive_ranks")[0];
      if (relevant && r.at("gate_verdict") == "accept") {
        better += after < rank;
        worse += after > rank;
        before_sum += static_cast<double>(rank);
        after_sum += static_cast<double>(after);
      }
      rank = after;
      next = r.at("next_question");
    }
  }
  CHECK(better > worse);
  CHECK(after_sum < before_sum);
}
