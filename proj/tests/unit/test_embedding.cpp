#include <doctest.h>

#include <cmath>

#include "cqr/embedding.hpp"
#include "cqr/error.hpp"
#include "fixtures.hpp"

using namespace cqr;
using doctest::Approx;

namespace {

std::string record(const std::string& space, const std::string& id, std::size_t dim, double value) {
  std::string line = R"({"space":")" + space + R"(","id":")" + id + R"(","vector":[)";
  for (std::size_t i = 0; i < dim; ++i) line += (i ? "," : "") + std::to_string(value + static_cast<double>(i));
  return line + "]}\n";
}

}  // namespace

TEST_CASE("loads vectors of the expected dimension") {
  const auto dir = fixtures::temp_dir("embedding_load");
  fixtures::write_file(dir / "e.jsonl", record("question", "q1", 384, 1.0) + record("tag", "python", 384, -2.0));
  const auto table = load_embeddings(dir / "e.jsonl", 384);
  CHECK(table.dim() == 384);
  CHECK(table.size() == 2);
  CHECK(l2_norm(table.at(Space::question, "q1")) == Approx(1.0));

  const auto raw = load_embeddings(dir / "e.jsonl", 384, false);
  CHECK(raw.at(Space::tag, "python")[0] == -2.0);

  const auto inferred = load_embeddings(dir / "e.jsonl", 0);
  CHECK(inferred.dim() == 384);
}

TEST_CASE("dimension mismatch and duplicates are errors") {
  const auto dir = fixtures::temp_dir("embedding_errors");
  fixtures::write_file(dir / "short.jsonl", record("question", "q1", 383, 1.0));
  CHECK_THROWS_AS(load_embeddings(dir / "short.jsonl", 384), Error);
  fixtures::write_file(dir / "dup.jsonl", record("tag", "a", 4, 1.0) + record("tag", "a", 4, 2.0));
  CHECK_THROWS_AS(load_embeddings(dir / "dup.jsonl", 4), Error);
  fixtures::write_file(dir / "space.jsonl", record("answer", "a", 4, 1.0));
  CHECK_THROWS_AS(load_embeddings(dir / "space.jsonl", 4), Error);
}

TEST_CASE("empty embedding file gives an empty table") {
  const auto dir = fixtures::temp_dir("embedding_empty");
  fixtures::write_file(dir / "e.jsonl", "");
  const auto table = load_embeddings(dir / "e.jsonl", 384);
  CHECK(table.size() == 0);
}

TEST_CASE("save and load round-trip without renormalizing") {
  const auto dir = fixtures::temp_dir("embedding_roundtrip");
  EmbeddingTable table(3);
  table.insert(Space::query, "q", {3.0, 0.0, 4.0});
  table.insert(Space::tag, "t", {0.1, 0.2, 0.3});
  save_embeddings(table, dir / "e.jsonl");
  CHECK(load_embeddings(dir / "e.jsonl", 3, false) == table);
}

TEST_CASE("unknown ids throw UnknownIdError") {
  EmbeddingTable table(2);
  CHECK(table.find(Space::tag, "x") == nullptr);
  CHECK_THROWS_AS(table.at(Space::tag, "x"), UnknownIdError);
  CHECK_THROWS_AS(table.insert(Space::tag, "x", {1.0}), DimensionError);
}

TEST_CASE("hash embedding is deterministic and unit length") {
  HashEmbedderConfig cfg;
  cfg.dim = 64;
  cfg.seed = 3;
  const auto a = hash_embed("how to sort a dict by value", cfg);
  const auto b = hash_embed("how to sort a dict by value", cfg);
  CHECK(a == b);
  CHECK(a.size() == 64);
  CHECK(l2_norm(a) == Approx(1.0).epsilon(1e-6));

  cfg.seed = 4;
  CHECK(hash_embed("how to sort a dict by value", cfg) != a);

  cfg.ngram = 2;
  CHECK(l2_norm(hash_embed("how to sort", cfg)) == Approx(1.0).epsilon(1e-6));
}

TEST_CASE("hash embedding of empty text is the zero vector") {
  HashEmbedderConfig cfg;
  const auto v = hash_embed("", cfg);
  CHECK(v.size() == cfg.dim);
  CHECK(l2_norm(v) == 0.0);
  CHECK(l2_norm(hash_embed("?!", cfg)) == 0.0);
}

TEST_CASE("tag negation") {
  CHECK(negate_tag(Vec{1.0, -2.0, 3.0}) == Vec{-1.0, 2.0, -3.0});
  CHECK(negate_tag(Vec{0.0, 0.0}) == Vec{0.0, 0.0});
  const Vec v = {0.25, -7.5, 1e-300};
  CHECK(negate_tag(negate_tag(v)) == v);
}

TEST_CASE("encode_corpus covers queries, questions and every tag") {
  Corpus corpus;
  corpus.add(fixtures::question("1", "sort a list", {"python", "list"}));
  corpus.add(fixtures::question("2", "read a file", {"python"}));
  corpus.add(fixtures::question("3", "merge lists", {"list"}));
  const std::vector<QueryRecord> queries = {{"q", "sorting", {"1"}, {"1", "2"}}};
  const auto table = encode_corpus(corpus, queries, HashEmbedderConfig{});
  CHECK(table.size() == 6);
  for (const auto& t : corpus.tags().tags()) CHECK(table.contains(Space::tag, t));
  CHECK(table.at(Space::tag, "python") == hash_embed("python", HashEmbedderConfig{}));
}

TEST_CASE("identical tag texts embed identically") {
  HashEmbedderConfig cfg;
  CHECK(hash_embed("python", cfg) == hash_embed("python", cfg));
  CHECK(hash_embed("Python", cfg) == hash_embed("python", cfg));
}

TEST_CASE("encode_corpus from a precomputed table checks coverage and normalizes") {
  Corpus corpus;
  corpus.add(fixtures::question("1", "x", {"a"}));
  EmbeddingTable pre(2);
  pre.insert(Space::question, "1", {3.0, 4.0});
  pre.insert(Space::question, "unused", {1.0, 0.0});
  CHECK_THROWS_AS(encode_corpus(corpus, {}, pre), UnknownIdError);
  pre.insert(Space::tag, "a", {0.0, 2.0});
  const auto table = encode_corpus(corpus, {}, pre);
  CHECK(table.size() == 2);
  CHECK(table.at(Space::question, "1")[0] == Approx(0.6));
  CHECK(table.at(Space::tag, "a") == Vec{0.0, 1.0});
}
