#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cqr/corpus.hpp"

namespace cqr {

/// Generated Stack Overflow style data: clusters of questions that share an
/// action/object/topic phrase and differ in their language tag, plus short
/// queries that name the phrase but not the language. Candidates come from
/// BM25 (top `candidates`), with the target forced into the pool.
struct ToyCorpusConfig {
  std::size_t clusters = 40;
  std::size_t questions_per_cluster = 5;  // at most the number of languages (5)
  std::size_t queries = 100;
  std::size_t candidates = 20;
  std::uint64_t seed = 2024;
};

struct ToyDataset {
  Corpus corpus;
  std::vector<QueryRecord> queries;
};

ToyDataset generate_toy_corpus(const ToyCorpusConfig& config = {});

}  // namespace cqr
