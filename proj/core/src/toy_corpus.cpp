#include "cqr/toy_corpus.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "cqr/bm25.hpp"
#include "cqr/error.hpp"

namespace cqr {

namespace {

constexpr std::array<const char*, 5> kLanguages = {"python", "java", "javascript", "rust", "golang"};
constexpr std::array<const char*, 15> kTopics = {"list",   "dict", "string", "json",   "file",
                                                 "regex",  "date", "http",   "thread", "sql",
                                                 "csv",    "xml",  "socket", "math",   "class"};
constexpr std::array<const char*, 20> kActions = {
    "sort",   "parse",  "convert", "merge",  "split",   "read",  "write",
    "delete", "iterate", "format", "compare", "reverse", "filter", "append",
    "remove", "find",   "replace", "count",  "encode",  "copy"};
constexpr std::array<const char*, 8> kObjects = {"items", "values", "entries", "records",
                                                 "lines", "keys",   "fields",  "elements"};
constexpr std::array<const char*, 24> kFiller = {
    "error",   "fast",    "large",   "nested",  "empty",  "unicode", "memory", "loop",
    "default", "custom",  "order",   "missing", "object", "array",   "type",   "index",
    "null",    "pointer", "variable", "buffer", "stream", "value",   "result", "output"};
constexpr std::array<const char*, 6> kQueryOpeners = {"how to", "best way to", "cannot",
                                                      "trying to", "simple way to", "help"};

template <typename Arr>
const char* pick(const Arr& arr, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, arr.size() - 1);
  return arr[d(rng)];
}

}  // namespace

ToyDataset generate_toy_corpus(const ToyCorpusConfig& config) {
  if (config.questions_per_cluster == 0 || config.questions_per_cluster > kLanguages.size())
    throw std::invalid_argument("questions_per_cluster must be in [1, 5]");
  if (config.clusters == 0) throw std::invalid_argument("need at least one cluster");
  if (config.candidates == 0) throw std::invalid_argument("need at least one candidate per query");
  std::mt19937_64 rng(config.seed);
  ToyDataset data;

  struct Cluster {
    std::string action, object, topic;
  };
  std::vector<Cluster> clusters;
  for (std::size_t k = 0; k < config.clusters; ++k)
    clusters.push_back({kActions[k % kActions.size()],
                        kObjects[(k * 3 + k / kActions.size()) % kObjects.size()],
                        kTopics[k % kTopics.size()]});

  std::size_t next_id = 0;
  for (std::size_t k = 0; k < clusters.size(); ++k) {
    const auto& c = clusters[k];
    std::array<std::size_t, kLanguages.size()> langs{};
    std::iota(langs.begin(), langs.end(), 0);
    std::shuffle(langs.begin(), langs.end(), rng);
    for (std::size_t m = 0; m < config.questions_per_cluster; ++m) {
      QuestionRecord q;
      char id[32];
      std::snprintf(id, sizeof id, "Q%04zu", next_id++);
      q.id = id;
      const std::string lang = kLanguages[langs[m]];
      q.title = "how to " + c.action + " " + c.object + " " + c.topic + " in " + lang;
      q.tags = {lang, c.topic};
      std::ostringstream body;
      body << pick(kFiller, rng) << ' ' << pick(kFiller, rng);
      std::bernoulli_distribution extra_topic(0.5);
      if (extra_topic(rng)) {
        std::string second = pick(kTopics, rng);
        if (second != c.topic) {
          q.tags.push_back(second);
          body << ' ' << second;
        }
      }
      q.body = body.str();
      data.corpus.add(std::move(q));
    }
  }

  const Bm25Index index = Bm25Index::build(data.corpus);
  std::vector<std::size_t> targets(data.corpus.size());
  std::iota(targets.begin(), targets.end(), 0);
  std::shuffle(targets.begin(), targets.end(), rng);
  const std::size_t n_queries = std::min(config.queries, targets.size());
  for (std::size_t i = 0; i < n_queries; ++i) {
    const auto& target = data.corpus.questions()[targets[i]];
    const auto& c = clusters[targets[i] / config.questions_per_cluster];
    QueryRecord q;
    char id[32];
    std::snprintf(id, sizeof id, "q%03zu", i);
    q.id = id;
    q.text = std::string(pick(kQueryOpeners, rng)) + " " + c.action + " " + c.object + " " +
             c.topic + " " + pick(kFiller, rng);
    q.positives = {target.id};
    q.candidates = index.retrieve(q.text, config.candidates);
    if (std::find(q.candidates.begin(), q.candidates.end(), target.id) == q.candidates.end())
      q.candidates.back() = target.id;
    data.queries.push_back(std::move(q));
  }
  return data;
}

}  // namespace cqr
