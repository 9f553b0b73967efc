#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cqr/conversation.hpp"
#include "cqr/corpus.hpp"
#include "cqr/noise_gate.hpp"
#include "cqr/trainer.hpp"

namespace cqr {

struct SimulatorConfig {
  double noise_rate = 0.0;  // probability of flipping the truthful answer
  std::uint64_t seed = 0;
};

// Truthful answer is "yes" iff `asked` is among `target_tags` (sorted);
// flipped with probability `noise_rate`.
Feedback simulate_answer(std::span<const TagId> target_tags, const TagId& asked, double noise_rate,
                         std::mt19937_64& rng);

/// Simulated user answering on behalf of one target question.
class SimulatedUser : public AnswerSource {
 public:
  SimulatedUser(std::vector<TagId> target_tags, double noise_rate, std::uint64_t seed);
  Feedback answer(const TagId& tag) override;

 private:
  std::vector<TagId> target_tags_;
  double noise_rate_;
  std::mt19937_64 rng_;
};

// Independent per-query generator seed derived from (seed, query id, stream).
std::uint64_t substream_seed(std::uint64_t seed, const std::string& query_id, std::uint64_t stream);

// Rankings are given as ordered id lists; positives must be non-empty.
double recall_at_k(std::span<const QuestionId> ranked, std::span<const QuestionId> positives,
                   std::size_t k);
double ndcg_at_k(std::span<const QuestionId> ranked, std::span<const QuestionId> positives,
                 std::size_t k);
double reciprocal_rank(std::span<const QuestionId> ranked, std::span<const QuestionId> positives);
double average_precision(std::span<const QuestionId> ranked, std::span<const QuestionId> positives);

struct RoundMetrics {
  std::size_t round = 0;
  double recall1 = 0, recall3 = 0, recall5 = 0;
  double ndcg3 = 0, ndcg5 = 0, ndcg10 = 0;
  double map = 0, mrr = 0;

  friend bool operator==(const RoundMetrics&, const RoundMetrics&) = default;
};

RoundMetrics evaluate_ranking(std::span<const QuestionId> ranked,
                              std::span<const QuestionId> positives);

struct ExperimentOptions {
  std::size_t rounds = 5;
  SimulatorConfig simulator;
  TagPolicy policy = TagPolicy::gbs;
  SessionOptions session;
  std::size_t threads = 1;
};

struct MetricReport {
  std::vector<RoundMetrics> rounds;  // l = 0..L, macro-averaged over queries
  std::size_t n_queries = 0;
  ExperimentOptions options;
  std::string label;

  const RoundMetrics& at(std::size_t l) const { return rounds.at(l); }
};

// Runs a simulated conversation for every query and averages per-round
// metrics. The simulator answers for the first listed positive. Throws on
// an empty query set.
MetricReport run_experiment(const TrainedModel& model, const NoiseGateModel* gate,
                            const Corpus& corpus, std::span<const QueryRecord> queries,
                            const ExperimentOptions& options);

// One simulated conversation, as run_experiment runs it.
ConversationResult simulate_conversation(const ConversationEngine& engine, const QueryRecord& query,
                                         const ExperimentOptions& options);

std::string report_to_json(const MetricReport& report);
std::string report_to_csv(const MetricReport& report);
void save_report(const MetricReport& report, const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_path = {});

}  // namespace cqr
