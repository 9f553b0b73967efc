#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cqr/corpus.hpp"
#include "cqr/embedding.hpp"
#include "cqr/noise_gate.hpp"
#include "cqr/toy_corpus.hpp"
#include "cqr/trainer.hpp"

namespace fixtures {

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::path(CQR_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline cqr::QuestionRecord question(std::string id, std::string title,
                                    std::vector<std::string> tags, std::string body = {}) {
  cqr::QuestionRecord q;
  q.id = std::move(id);
  q.title = std::move(title);
  q.body = std::move(body);
  std::sort(tags.begin(), tags.end());
  q.tags = std::move(tags);
  return q;
}

// Sixteen candidates c00..c15 and four tags bit0..bit3, where candidate i
// carries bit j iff bit j of i is set. Every candidate also carries "common"
// so none is tagless. Candidate vectors are ±1/2 along the bit axes, so a
// query built from the four signed bit tags scores the matching candidate
// highest. W_Q = 0, W_t = 1.
struct BitInstance {
  cqr::Corpus corpus;
  cqr::TrainedModel model;
  std::vector<cqr::QueryRecord> queries;  // one per target
};

inline BitInstance make_bit_instance() {
  constexpr std::size_t dim = 6;
  BitInstance inst;
  inst.model.embeddings = cqr::EmbeddingTable(dim);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < 16; ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "c%02zu", i);
    ids.emplace_back(id);
    std::vector<std::string> tags = {"common"};
    cqr::Vec v(dim, 0.0);
    for (std::size_t j = 0; j < 4; ++j) {
      const bool on = (i >> j) & 1U;
      if (on) tags.push_back("bit" + std::to_string(j));
      v[j] = on ? 0.5 : -0.5;
    }
    inst.corpus.add(question(id, "candidate " + std::to_string(i), tags));
    inst.model.embeddings.insert(cqr::Space::question, id, v);
  }
  for (std::size_t j = 0; j < 4; ++j) {
    cqr::Vec t(dim, 0.0);
    t[j] = 1.0;
    inst.model.embeddings.insert(cqr::Space::tag, "bit" + std::to_string(j), t);
  }
  cqr::Vec common(dim, 0.0);
  common[4] = 1.0;
  inst.model.embeddings.insert(cqr::Space::tag, "common", common);
  inst.model.weights.query = cqr::FusionWeight(0.0);
  inst.model.weights.tag = cqr::FusionWeight(1.0);
  for (std::size_t i = 0; i < 16; ++i) {
    cqr::QueryRecord q;
    q.id = "target" + std::to_string(i);
    q.text = "find candidate " + std::to_string(i);
    q.positives = {ids[i]};
    q.candidates = ids;
    cqr::Vec qv(dim, 0.0);
    qv[5] = 1.0;
    inst.model.embeddings.insert(cqr::Space::query, q.id, qv);
    inst.queries.push_back(std::move(q));
  }
  return inst;
}

// The toy pipeline shared by the service, integration and acceptance
// checks: generated corpus, 70/30 split, hashing embedder, default offline
// and gate training.
struct ToyPipeline {
  cqr::ToyDataset data;
  cqr::DatasetSplit split;
  cqr::TrainedModel model;
  cqr::NoiseGateModel gate;
};

inline constexpr std::uint64_t kSplitSeed = 7;
inline constexpr std::uint64_t kHashSeed = 1;
inline constexpr std::uint64_t kSimulatorSeed = 11;

inline ToyPipeline build_toy_pipeline() {
  ToyPipeline p;
  p.data = cqr::generate_toy_corpus();
  p.split = cqr::split_dataset(p.data.queries, 0.7, kSplitSeed);
  cqr::HashEmbedderConfig hash;
  hash.dim = 64;
  hash.seed = kHashSeed;
  auto embeddings = cqr::encode_corpus(p.data.corpus, p.data.queries, hash);
  p.model = cqr::train_offline(p.data.corpus, p.split.train, std::move(embeddings), cqr::TrainConfig{});
  p.model.embedder = hash;
  p.gate = cqr::train_noise_gate(p.model, p.data.corpus, cqr::GateTrainConfig{}, p.split.train);
  return p;
}

inline const ToyPipeline& toy_pipeline() {
  static const ToyPipeline p = build_toy_pipeline();
  return p;
}

}  // namespace fixtures
