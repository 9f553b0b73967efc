#include "cqr/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_set>

#include <json.hpp>

#include "cqr/bm25.hpp"
#include "cqr/error.hpp"

namespace cqr {

using nlohmann::json;

std::string QuestionRecord::text(bool include_body) const {
  if (!include_body || body.empty()) return title;
  return title + " " + body;
}

bool QuestionRecord::has_tag(const TagId& tag) const {
  return std::binary_search(tags.begin(), tags.end(), tag);
}

void TagVocabulary::add_question(const std::string& question_id, const std::vector<TagId>& tags) {
  for (const auto& tag : tags) {
    auto& list = postings_[tag];
    list.insert(std::upper_bound(list.begin(), list.end(), question_id), question_id);
  }
}

const std::string& TagVocabulary::text(const TagId& tag) const {
  auto it = postings_.find(tag);
  if (it == postings_.end()) throw UnknownIdError("tag", tag);
  return it->first;
}

const std::vector<QuestionId>& TagVocabulary::questions_with(const TagId& tag) const {
  auto it = postings_.find(tag);
  if (it == postings_.end()) throw UnknownIdError("tag", tag);
  return it->second;
}

std::vector<TagId> TagVocabulary::tags() const {
  std::vector<TagId> out;
  out.reserve(postings_.size());
  for (const auto& [tag, _] : postings_) out.push_back(tag);
  return out;
}

void Corpus::add(QuestionRecord question) {
  std::sort(question.tags.begin(), question.tags.end());
  question.tags.erase(std::unique(question.tags.begin(), question.tags.end()), question.tags.end());
  if (question.tags.empty()) throw Error("question '" + question.id + "' has no tags");
  if (index_.count(question.id)) throw Error("duplicate question id '" + question.id + "'");
  index_.emplace(question.id, questions_.size());
  tags_.add_question(question.id, question.tags);
  questions_.push_back(std::move(question));
}

const QuestionRecord& Corpus::question(const QuestionId& id) const {
  if (const auto* q = find(id)) return *q;
  throw UnknownIdError("question", id);
}

const QuestionRecord* Corpus::find(const QuestionId& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &questions_[it->second];
}

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

template <typename T>
T required(const json& obj, const char* key, const std::string& source, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(source, line, std::string("missing field \"") + key + "\"");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ParseError(source, line, std::string("bad field \"") + key + "\": " + e.what());
  }
}

json parse_line(const std::string& line, const std::string& source, std::size_t line_no) {
  try {
    json obj = json::parse(line);
    if (!obj.is_object()) throw ParseError(source, line_no, "expected a JSON object");
    return obj;
  } catch (const json::parse_error& e) {
    throw ParseError(source, line_no, e.what());
  }
}

}  // namespace

QuestionIngest parse_questions(std::istream& in, const std::string& source) {
  QuestionIngest result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const json obj = parse_line(line, source, line_no);
    QuestionRecord q;
    q.id = required<std::string>(obj, "id", source, line_no);
    q.title = required<std::string>(obj, "title", source, line_no);
    q.tags = required<std::vector<std::string>>(obj, "tags", source, line_no);
    if (auto it = obj.find("body"); it != obj.end() && !it->is_null()) {
      if (!it->is_string()) throw ParseError(source, line_no, "bad field \"body\"");
      q.body = it->get<std::string>();
    }
    if (q.tags.empty()) {
      ++result.skipped_tagless;
      continue;
    }
    if (result.corpus.contains(q.id))
      throw ParseError(source, line_no, "duplicate question id '" + q.id + "'");
    result.corpus.add(std::move(q));
    ++result.count;
  }
  return result;
}

QuestionIngest ingest_questions(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_questions(in, path.string());
}

std::vector<QueryRecord> parse_queries(std::istream& in, const Corpus& corpus,
                                       const Bm25Index* index, std::size_t k,
                                       const std::string& source) {
  std::vector<QueryRecord> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const json obj = parse_line(line, source, line_no);
    QueryRecord q;
    q.id = required<std::string>(obj, "id", source, line_no);
    q.text = required<std::string>(obj, "text", source, line_no);
    q.positives = required<std::vector<std::string>>(obj, "positives", source, line_no);
    if (!seen.insert(q.id).second)
      throw ParseError(source, line_no, "duplicate query id '" + q.id + "'");
    if (q.positives.empty()) throw ParseError(source, line_no, "query has no positives");
    for (const auto& p : q.positives)
      if (!corpus.contains(p))
        throw ParseError(source, line_no, "positive '" + p + "' is not in the corpus");

    if (auto it = obj.find("candidates"); it != obj.end() && !it->is_null()) {
      q.candidates = required<std::vector<std::string>>(obj, "candidates", source, line_no);
      std::unordered_set<std::string> unique;
      for (const auto& c : q.candidates) {
        if (!unique.insert(c).second)
          throw ParseError(source, line_no, "duplicate candidate '" + c + "'");
        if (!corpus.contains(c))
          throw ParseError(source, line_no, "candidate '" + c + "' is not in the corpus");
      }
    } else if (index != nullptr) {
      q.candidates = index->retrieve(q.text, k);
    } else {
      throw ParseError(source, line_no, "query has no candidates and no index to retrieve them");
    }
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<QueryRecord> ingest_queries(const std::filesystem::path& path, const Corpus& corpus,
                                        const Bm25Index* index, std::size_t k) {
  auto in = open_input(path);
  return parse_queries(in, corpus, index, k, path.string());
}

void write_questions(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& q : corpus.questions()) {
    json obj = {{"id", q.id}, {"title", q.title}};
    if (!q.body.empty()) obj["body"] = q.body;
    obj["tags"] = q.tags;
    out << obj.dump() << '\n';
  }
}

void write_queries(const std::vector<QueryRecord>& queries, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& q : queries) {
    json obj = {{"id", q.id}, {"text", q.text}, {"positives", q.positives},
                {"candidates", q.candidates}};
    out << obj.dump() << '\n';
  }
}

DatasetSplit split_dataset(std::vector<QueryRecord> queries, double train_fraction,
                           std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("train fraction must lie in (0, 1)");
  if (queries.empty()) throw std::invalid_argument("cannot split an empty query set");
  std::mt19937_64 rng(seed);
  std::shuffle(queries.begin(), queries.end(), rng);
  const auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(queries.size())));
  DatasetSplit split;
  split.train.assign(std::make_move_iterator(queries.begin()),
                     std::make_move_iterator(queries.begin() + static_cast<std::ptrdiff_t>(n_train)));
  split.test.assign(std::make_move_iterator(queries.begin() + static_cast<std::ptrdiff_t>(n_train)),
                    std::make_move_iterator(queries.end()));
  return split;
}

}  // namespace cqr
