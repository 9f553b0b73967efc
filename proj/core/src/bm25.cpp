#include "cqr/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cqr/error.hpp"
#include "cqr/text.hpp"

namespace cqr {

Bm25Index Bm25Index::build(const Corpus& corpus, Bm25Params params) {
  if (corpus.empty()) throw Error("cannot index an empty corpus");
  Bm25Index index;
  index.params_ = std::move(params);

  index.doc_ids_.reserve(corpus.size());
  for (const auto& q : corpus.questions()) index.doc_ids_.push_back(q.id);
  std::sort(index.doc_ids_.begin(), index.doc_ids_.end());

  index.doc_lengths_.resize(index.doc_ids_.size());
  std::uint64_t total = 0;
  for (std::uint32_t doc = 0; doc < index.doc_ids_.size(); ++doc) {
    const auto& id = index.doc_ids_[doc];
    index.doc_lookup_.emplace(id, doc);
    const auto terms = index.analyze(corpus.question(id).text(index.params_.include_body));
    std::map<std::string, std::uint32_t> tf;
    for (const auto& t : terms) ++tf[t];
    for (const auto& [term, count] : tf) index.postings_[term].push_back({doc, count});
    index.doc_lengths_[doc] = static_cast<std::uint32_t>(terms.size());
    total += terms.size();
  }
  index.avg_length_ = static_cast<double>(total) / static_cast<double>(index.doc_ids_.size());
  return index;
}

std::vector<std::string> Bm25Index::analyze(std::string_view text) const {
  auto terms = tokenize(text);
  if (params_.term_filter) terms = params_.term_filter(std::move(terms));
  return terms;
}

double Bm25Index::idf(const std::string& term) const {
  auto it = postings_.find(term);
  const double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
  const double n = static_cast<double>(doc_ids_.size());
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

const std::vector<Posting>* Bm25Index::postings(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? nullptr : &it->second;
}

std::uint32_t Bm25Index::doc_index(const QuestionId& id) const {
  auto it = doc_lookup_.find(id);
  if (it == doc_lookup_.end()) throw UnknownIdError("question", id);
  return it->second;
}

std::size_t Bm25Index::doc_length(const QuestionId& id) const {
  return doc_lengths_[doc_index(id)];
}

double Bm25Index::term_weight(std::uint32_t tf, std::uint32_t doc_len, std::size_t df) const {
  const double n = static_cast<double>(doc_ids_.size());
  const double d = static_cast<double>(df);
  const double idf = std::log(1.0 + (n - d + 0.5) / (d + 0.5));
  const double f = static_cast<double>(tf);
  const double norm =
      params_.k1 * (1.0 - params_.b + params_.b * static_cast<double>(doc_len) / avg_length_);
  return idf * f * (params_.k1 + 1.0) / (f + norm);
}

double Bm25Index::score(std::span<const std::string> query_terms, const QuestionId& id) const {
  const std::uint32_t doc = doc_index(id);
  double total = 0.0;
  for (const auto& term : query_terms) {
    const auto* list = postings(term);
    if (list == nullptr) continue;
    auto it = std::lower_bound(list->begin(), list->end(), doc,
                               [](const Posting& p, std::uint32_t d) { return p.doc < d; });
    if (it != list->end() && it->doc == doc)
      total += term_weight(it->tf, doc_lengths_[doc], list->size());
  }
  return total;
}

std::vector<std::pair<QuestionId, double>> Bm25Index::retrieve_scored(std::string_view query_text,
                                                                      std::size_t k) const {
  if (k == 0) throw std::invalid_argument("k must be positive");
  std::vector<double> scores(doc_ids_.size(), 0.0);
  for (const auto& term : analyze(query_text)) {
    const auto* list = postings(term);
    if (list == nullptr) continue;
    for (const auto& p : *list) scores[p.doc] += term_weight(p.tf, doc_lengths_[p.doc], list->size());
  }
  std::vector<std::uint32_t> order(doc_ids_.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t take = std::min(k, order.size());
  // doc index order equals id order, so the index is the tie-breaker.
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  std::vector<std::pair<QuestionId, double>> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.emplace_back(doc_ids_[order[i]], scores[order[i]]);
  return out;
}

std::vector<QuestionId> Bm25Index::retrieve(std::string_view query_text, std::size_t k) const {
  std::vector<QuestionId> out;
  for (auto& [id, _] : retrieve_scored(query_text, k)) out.push_back(std::move(id));
  return out;
}

}  // namespace cqr
