#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cqr/corpus.hpp"
#include "cqr/vec.hpp"

namespace cqr {

enum class Space { query = 0, question = 1, tag = 2 };

std::string_view to_string(Space space);
Space parse_space(std::string_view name);  // throws cqr::Error

/// Dense vectors for queries, questions and tags sharing one dimension.
/// Only positive tag vectors are stored; the negative form is always
/// derived with negate_tag().
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const { return dim_; }

  // Throws DimensionError on a wrong length and cqr::Error on a duplicate id.
  void insert(Space space, std::string id, Vec vector);

  const Vec& at(Space space, const std::string& id) const;  // UnknownIdError
  Vec& at(Space space, const std::string& id);
  const Vec* find(Space space, const std::string& id) const;
  bool contains(Space space, const std::string& id) const { return find(space, id) != nullptr; }

  // Ids in insertion order.
  const std::vector<std::string>& ids(Space space) const { return block(space).ids; }
  std::size_t size(Space space) const { return block(space).ids.size(); }
  std::size_t size() const;

  // Scales every non-zero vector to unit L2 norm.
  void normalize();

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b);

 private:
  struct Block {
    std::vector<std::string> ids;
    std::vector<Vec> vectors;
    std::unordered_map<std::string, std::size_t> index;
  };
  const Block& block(Space s) const { return blocks_[static_cast<std::size_t>(s)]; }
  Block& block(Space s) { return blocks_[static_cast<std::size_t>(s)]; }

  std::size_t dim_;
  std::array<Block, 3> blocks_;
};

struct HashEmbedderConfig {
  std::size_t dim = 64;
  std::uint64_t seed = 0;
  int ngram = 1;  // token n-grams up to this order are hashed
};

// Signed feature hashing of tokenize(text) into `dim` buckets, L2-normalized.
// Text without tokens maps to the zero vector.
Vec hash_embed(std::string_view text, const HashEmbedderConfig& config);

// t^- = -t^+
Vec negate_tag(std::span<const double> tag);

// embeddings.jsonl: {"space", "id", "vector"} per line. Vectors are
// L2-normalized on load unless `normalize` is false. An `expected_dim` of 0
// takes the dimension of the first record.
EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t expected_dim,
                               bool normalize = true);
void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);

// Encodes every query, question and tag with the hashing embedder.
EmbeddingTable encode_corpus(const Corpus& corpus, std::span<const QueryRecord> queries,
                             const HashEmbedderConfig& config);

// Selects the vectors this corpus needs from a precomputed table and
// normalizes them. Throws UnknownIdError naming the first missing id.
EmbeddingTable encode_corpus(const Corpus& corpus, std::span<const QueryRecord> queries,
                             const EmbeddingTable& precomputed);

}  // namespace cqr
