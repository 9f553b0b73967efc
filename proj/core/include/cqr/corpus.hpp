#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace cqr {

using QuestionId = std::string;
using QueryId = std::string;
using TagId = std::string;

struct QuestionRecord {
  QuestionId id;
  std::string title;
  std::string body;
  std::vector<TagId> tags;  // sorted, unique, non-empty once in a Corpus

  // Title, followed by the body (if any) after a single space.
  std::string text(bool include_body = true) const;
  bool has_tag(const TagId& tag) const;
};

struct QueryRecord {
  QueryId id;
  std::string text;
  std::vector<QuestionId> positives;
  std::vector<QuestionId> candidates;
};

/// Tag id -> text, and tag id -> questions bearing it. Tag text is the tag id
/// itself for Stack Overflow style data.
class TagVocabulary {
 public:
  void add_question(const std::string& question_id, const std::vector<TagId>& tags);

  bool contains(const TagId& tag) const { return postings_.count(tag) != 0; }
  const std::string& text(const TagId& tag) const;
  const std::vector<QuestionId>& questions_with(const TagId& tag) const;
  // All tag ids, ascending.
  std::vector<TagId> tags() const;
  std::size_t size() const { return postings_.size(); }
  bool empty() const { return postings_.empty(); }

 private:
  std::map<TagId, std::vector<QuestionId>> postings_;  // each list sorted
};

class Corpus {
 public:
  Corpus() = default;

  // Throws cqr::Error on an empty tag set or a duplicate id.
  void add(QuestionRecord question);

  const std::vector<QuestionRecord>& questions() const { return questions_; }
  const QuestionRecord& question(const QuestionId& id) const;  // UnknownIdError
  const QuestionRecord* find(const QuestionId& id) const;
  bool contains(const QuestionId& id) const { return index_.count(id) != 0; }
  const TagVocabulary& tags() const { return tags_; }
  std::size_t size() const { return questions_.size(); }
  bool empty() const { return questions_.empty(); }

 private:
  std::vector<QuestionRecord> questions_;
  std::unordered_map<QuestionId, std::size_t> index_;
  TagVocabulary tags_;
};

struct QuestionIngest {
  Corpus corpus;
  std::size_t count = 0;
  std::size_t skipped_tagless = 0;
};

// questions.jsonl: {"id", "title", "body"?, "tags": [...]} per line. Blank
// lines are ignored. Tagless records are skipped and counted.
QuestionIngest ingest_questions(const std::filesystem::path& path);
QuestionIngest parse_questions(std::istream& in, const std::string& source = "<stream>");

class Bm25Index;

// queries.jsonl: {"id", "text", "positives": [...], "candidates": [...]?}.
// Queries without candidates are filled from `index` (top `k`); if no index
// is supplied such a record is an error.
std::vector<QueryRecord> ingest_queries(const std::filesystem::path& path, const Corpus& corpus,
                                        const Bm25Index* index = nullptr, std::size_t k = 20);
std::vector<QueryRecord> parse_queries(std::istream& in, const Corpus& corpus,
                                       const Bm25Index* index = nullptr, std::size_t k = 20,
                                       const std::string& source = "<stream>");

void write_questions(const Corpus& corpus, const std::filesystem::path& path);
void write_queries(const std::vector<QueryRecord>& queries, const std::filesystem::path& path);

struct DatasetSplit {
  std::vector<QueryRecord> train;
  std::vector<QueryRecord> test;
};

// Deterministic shuffle under `seed`, then the first round(fraction * n)
// queries become the training set.
DatasetSplit split_dataset(std::vector<QueryRecord> queries, double train_fraction,
                           std::uint64_t seed);

}  // namespace cqr
