#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cqr/corpus.hpp"

namespace cqr {

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
  bool include_body = true;
  // Optional post-tokenization hook (stemming, stopwords). Applied to both
  // documents and queries.
  std::function<std::vector<std::string>(std::vector<std::string>)> term_filter;
};

struct Posting {
  std::uint32_t doc;  // index into doc_ids(), which is sorted by question id
  std::uint32_t tf;
};

/// Okapi BM25 over question texts, with IDF ln(1 + (N - df + 0.5)/(df + 0.5)).
class Bm25Index {
 public:
  // Throws cqr::Error for an empty corpus.
  static Bm25Index build(const Corpus& corpus, Bm25Params params = {});

  std::vector<std::string> analyze(std::string_view text) const;

  // Every occurrence of a term in `query_terms` contributes.
  double score(std::span<const std::string> query_terms, const QuestionId& id) const;

  // Top-k by score, descending; ties by ascending id. Throws on k == 0.
  std::vector<QuestionId> retrieve(std::string_view query_text, std::size_t k) const;
  std::vector<std::pair<QuestionId, double>> retrieve_scored(std::string_view query_text,
                                                             std::size_t k) const;

  double idf(const std::string& term) const;
  const std::vector<Posting>* postings(const std::string& term) const;

  std::size_t num_docs() const { return doc_ids_.size(); }
  double average_length() const { return avg_length_; }
  std::size_t doc_length(const QuestionId& id) const;
  const std::vector<QuestionId>& doc_ids() const { return doc_ids_; }
  const Bm25Params& params() const { return params_; }

 private:
  double term_weight(std::uint32_t tf, std::uint32_t doc_len, std::size_t df) const;
  std::uint32_t doc_index(const QuestionId& id) const;

  Bm25Params params_;
  std::vector<QuestionId> doc_ids_;
  std::unordered_map<QuestionId, std::uint32_t> doc_lookup_;
  std::vector<std::uint32_t> doc_lengths_;
  double avg_length_ = 0.0;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

}  // namespace cqr
