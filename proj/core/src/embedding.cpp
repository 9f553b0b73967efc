#include "cqr/embedding.hpp"

#include <fstream>
#include <set>

#include "cqr/error.hpp"
#include "cqr/text.hpp"
#include "json_io.hpp"

namespace cqr {

using nlohmann::json;

std::string_view to_string(Space space) {
  switch (space) {
    case Space::query: return "query";
    case Space::question: return "question";
    case Space::tag: return "tag";
  }
  return "?";
}

Space parse_space(std::string_view name) {
  if (name == "query") return Space::query;
  if (name == "question") return Space::question;
  if (name == "tag") return Space::tag;
  throw Error("unknown embedding space '" + std::string(name) + "'");
}

void EmbeddingTable::insert(Space space, std::string id, Vec vector) {
  if (vector.size() != dim_) throw DimensionError(dim_, vector.size(), std::string(to_string(space)) + " " + id);
  auto& b = block(space);
  if (b.index.count(id))
    throw Error("duplicate " + std::string(to_string(space)) + " embedding id '" + id + "'");
  b.index.emplace(id, b.ids.size());
  b.ids.push_back(std::move(id));
  b.vectors.push_back(std::move(vector));
}

const Vec* EmbeddingTable::find(Space space, const std::string& id) const {
  const auto& b = block(space);
  auto it = b.index.find(id);
  return it == b.index.end() ? nullptr : &b.vectors[it->second];
}

const Vec& EmbeddingTable::at(Space space, const std::string& id) const {
  if (const auto* v = find(space, id)) return *v;
  throw UnknownIdError(std::string(to_string(space)) + " embedding", id);
}

Vec& EmbeddingTable::at(Space space, const std::string& id) {
  return const_cast<Vec&>(std::as_const(*this).at(space, id));
}

std::size_t EmbeddingTable::size() const {
  return blocks_[0].ids.size() + blocks_[1].ids.size() + blocks_[2].ids.size();
}

void EmbeddingTable::normalize() {
  for (auto& b : blocks_)
    for (auto& v : b.vectors) {
      const double n = l2_norm(v);
      if (n > 0.0)
        for (double& x : v) x /= n;
    }
}

bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
  if (a.dim_ != b.dim_) return false;
  for (std::size_t s = 0; s < 3; ++s)
    if (a.blocks_[s].ids != b.blocks_[s].ids || a.blocks_[s].vectors != b.blocks_[s].vectors)
      return false;
  return true;
}

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Vec hash_embed(std::string_view text, const HashEmbedderConfig& config) {
  if (config.dim < 2) throw std::invalid_argument("hash embedder dimension must be >= 2");
  if (config.ngram < 1) throw std::invalid_argument("hash embedder n-gram order must be >= 1");
  Vec out(config.dim, 0.0);
  const auto tokens = tokenize(text);
  const std::uint64_t base = mix64(config.seed ^ kFnvOffset);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::string gram;
    for (int n = 0; n < config.ngram && i + static_cast<std::size_t>(n) < tokens.size(); ++n) {
      if (n > 0) gram.push_back(' ');
      gram += tokens[i + static_cast<std::size_t>(n)];
      const std::uint64_t h = mix64(fnv1a(gram, base));
      const double sign = (mix64(h) >> 63) != 0 ? -1.0 : 1.0;
      out[h % config.dim] += sign;
    }
  }
  const double norm = l2_norm(out);
  if (norm > 0.0)
    for (double& x : out) x /= norm;
  return out;
}

Vec negate_tag(std::span<const double> tag) { return scaled(tag, -1.0); }

namespace detail {

json embeddings_to_json(const EmbeddingTable& table) {
  json records = json::array();
  for (Space s : {Space::query, Space::question, Space::tag})
    for (const auto& id : table.ids(s))
      records.push_back({{"space", to_string(s)}, {"id", id}, {"vector", table.at(s, id)}});
  return records;
}

EmbeddingTable embeddings_from_records(const json& records, std::size_t expected_dim,
                                       bool normalize, const std::string& source) {
  if (!records.is_array()) throw ParseError(source, 0, "embeddings must be an array of records");
  std::size_t dim = expected_dim;
  if (dim == 0 && !records.empty()) dim = records.front().at("vector").size();
  EmbeddingTable table(dim);
  std::size_t line = 0;
  for (const auto& r : records) {
    ++line;
    try {
      table.insert(parse_space(r.at("space").get<std::string>()), r.at("id").get<std::string>(),
                   r.at("vector").get<Vec>());
    } catch (const json::exception& e) {
      throw ParseError(source, line, e.what());
    }
  }
  if (normalize) table.normalize();
  return table;
}

}  // namespace detail

EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t expected_dim,
                               bool normalize) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  EmbeddingTable table(expected_dim);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json r = json::parse(line);
      auto vector = r.at("vector").get<Vec>();
      if (table.dim() == 0 && table.size() == 0) table = EmbeddingTable(vector.size());
      table.insert(parse_space(r.at("space").get<std::string>()), r.at("id").get<std::string>(),
                   std::move(vector));
    } catch (const json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    } catch (const DimensionError& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  if (normalize) table.normalize();
  return table;
}

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  for (const auto& r : detail::embeddings_to_json(table)) out << r.dump() << '\n';
}

namespace {

std::set<TagId> all_tags(const Corpus& corpus) {
  const auto tags = corpus.tags().tags();
  return {tags.begin(), tags.end()};
}

}  // namespace

EmbeddingTable encode_corpus(const Corpus& corpus, std::span<const QueryRecord> queries,
                             const HashEmbedderConfig& config) {
  EmbeddingTable table(config.dim);
  for (const auto& q : queries) table.insert(Space::query, q.id, hash_embed(q.text, config));
  for (const auto& q : corpus.questions()) table.insert(Space::question, q.id, hash_embed(q.text(), config));
  for (const auto& t : all_tags(corpus))
    table.insert(Space::tag, t, hash_embed(corpus.tags().text(t), config));
  return table;
}

EmbeddingTable encode_corpus(const Corpus& corpus, std::span<const QueryRecord> queries,
                             const EmbeddingTable& precomputed) {
  EmbeddingTable table(precomputed.dim());
  for (const auto& q : queries) table.insert(Space::query, q.id, precomputed.at(Space::query, q.id));
  for (const auto& q : corpus.questions())
    table.insert(Space::question, q.id, precomputed.at(Space::question, q.id));
  for (const auto& t : all_tags(corpus)) table.insert(Space::tag, t, precomputed.at(Space::tag, t));
  table.normalize();
  return table;
}

}  // namespace cqr
