#include <benchmark/benchmark.h>

#include <random>

#include "cqr/bm25.hpp"
#include "cqr/conversation.hpp"
#include "cqr/embedding.hpp"
#include "cqr/toy_corpus.hpp"
#include "cqr/trainer.hpp"

namespace {

const cqr::ToyDataset& toy() {
  static const auto d = cqr::generate_toy_corpus();
  return d;
}

struct Engine {
  cqr::TrainedModel model;
  cqr::SessionOptions options;
  Engine() {
    cqr::HashEmbedderConfig hash;
    hash.dim = 64;
    model.embeddings = cqr::encode_corpus(toy().corpus, toy().queries, hash);
    options.gate_enabled = false;
  }
};

const Engine& engine_state() {
  static const Engine e;
  return e;
}

void BM_Bm25Retrieve(benchmark::State& state) {
  const auto index = cqr::Bm25Index::build(toy().corpus);
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& q = toy().queries[i++ % toy().queries.size()];
    benchmark::DoNotOptimize(index.retrieve(q.text, 20));
  }
}
BENCHMARK(BM_Bm25Retrieve);

void BM_LossQQ(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  auto vec = [&] {
    cqr::Vec v(dim);
    for (auto& x : v) x = n(rng);
    return v;
  };
  std::vector<cqr::QqSample> batch;
  for (int s = 0; s < 16; ++s) {
    cqr::QqSample q{vec(), vec(), cqr::Feedback::positive, vec(), {}};
    for (int j = 0; j < 5; ++j) q.negatives.push_back(vec());
    batch.push_back(std::move(q));
  }
  const cqr::FusionWeight w(1.0);
  for (auto _ : state) benchmark::DoNotOptimize(cqr::loss_qq(batch, w, w));
}
BENCHMARK(BM_LossQQ)->Arg(64)->Arg(384);

void BM_SelectTagGbs(benchmark::State& state) {
  const auto& e = engine_state();
  const cqr::ConversationEngine engine(e.model, toy().corpus, nullptr, e.options);
  const auto session = engine.start_session(toy().queries.front());
  for (auto _ : state) benchmark::DoNotOptimize(cqr::select_tag_gbs(session));
}
BENCHMARK(BM_SelectTagGbs);

void BM_RankCandidates(benchmark::State& state) {
  const auto& e = engine_state();
  const cqr::ConversationEngine engine(e.model, toy().corpus, nullptr, e.options);
  auto session = engine.start_session(toy().queries.front());
  const auto tag = engine.ask_next(session, cqr::TagPolicy::gbs);
  engine.apply_feedback(session, *tag, cqr::Feedback::positive);
  for (auto _ : state) benchmark::DoNotOptimize(engine.rank_candidates(session));
}
BENCHMARK(BM_RankCandidates);

}  // namespace

BENCHMARK_MAIN();
