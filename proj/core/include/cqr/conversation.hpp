#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cqr/corpus.hpp"
#include "cqr/noise_gate.hpp"
#include "cqr/trainer.hpp"
#include "cqr/vec.hpp"

namespace cqr {

struct RankedCandidate {
  QuestionId id;
  double score = 0.0;
  double probability = 0.0;
  friend bool operator==(const RankedCandidate&, const RankedCandidate&) = default;
};

/// Candidates ordered by score (descending, ties by ascending id) with
/// softmax probabilities.
struct Ranking {
  std::vector<RankedCandidate> entries;

  std::vector<QuestionId> ids() const;
  // 1-based rank, 0 if absent.
  std::size_t rank_of(const QuestionId& id) const;
  friend bool operator==(const Ranking&, const Ranking&) = default;
};

// Builds a Ranking from parallel id/score arrays.
Ranking make_ranking(std::span<const QuestionId> ids, std::span<const double> scores);

struct FeedbackTurn {
  TagId tag;
  Feedback feedback = Feedback::positive;
  Verdict verdict = Verdict::ask_another;
  double gate_score = 0.0;
  std::optional<Vec> accepted;  // e_(q^t, f); absent means zero contribution
};

struct SessionState {
  QueryId query_id;
  Vec query;
  std::vector<QuestionId> candidates;
  std::vector<Vec> candidate_vectors;
  std::vector<std::vector<TagId>> candidate_tags;  // sorted per candidate
  std::vector<FeedbackTurn> turns;
  std::set<TagId> asked;
  std::optional<TagId> pending;  // tag asked this round, awaiting feedback
  Ranking ranking;

  std::size_t round() const { return turns.size(); }
};

struct SessionOptions {
  double alpha = 0.5;
  bool gate_enabled = true;
  bool use_positive = true;  // false: "w/o -p", positive feedback is dropped
  bool use_negative = true;  // false: "w/o -n", negative feedback is dropped
  NegativeFeedbackRule negative_rule = NegativeFeedbackRule::signed_tag;
};

enum class TagPolicy { gbs, random };
std::string_view to_string(TagPolicy policy);
TagPolicy parse_policy(std::string_view name);

// π = 1 / (index + 1), index 0-based.
double contribution_score(std::size_t rank_index);

// Tags carried by at least one candidate and not yet asked, ascending.
std::vector<TagId> candidate_tag_pool(const SessionState& session);

// |Σ_c (2·1{t ∈ tags(c)} − 1) · π(c)| under the current ranking.
double gbs_objective(const SessionState& session, const TagId& tag);

// Argmin of gbs_objective over candidate_tag_pool, ties by ascending id.
std::optional<TagId> select_tag_gbs(const SessionState& session);
std::optional<TagId> select_tag_random(const SessionState& session, std::mt19937_64& rng);

/// Where clarifying-question answers come from (a simulator or a person).
class AnswerSource {
 public:
  virtual ~AnswerSource() = default;
  virtual Feedback answer(const TagId& tag) = 0;
};

struct TranscriptEntry {
  std::size_t round = 0;  // 1-based
  TagId tag;
  Feedback feedback = Feedback::positive;
  Verdict verdict = Verdict::ask_another;
  double gate_score = 0.0;
  std::vector<std::size_t> positive_ranks;  // 1-based, after this round
};

std::string transcript_entry_to_json(const TranscriptEntry& entry);

struct ConversationResult {
  std::vector<Ranking> rankings;  // index l = ranking after l rounds
  std::vector<TranscriptEntry> transcript;

  const Ranking& final_ranking() const { return rankings.back(); }
};

// The query's trained vector, or its text encoded with the model's embedder
// when the query was not part of training. Throws UnknownIdError if neither
// is available.
Vec query_vector(const TrainedModel& model, const QueryRecord& query);

/// Runs retrieval sessions over a trained model. The model, gate and corpus
/// are borrowed and must outlive the engine; sessions are independent values.
class ConversationEngine {
 public:
  // `gate` may be null, in which case every answer is accepted.
  ConversationEngine(const TrainedModel& model, const Corpus& corpus, const NoiseGateModel* gate,
                     SessionOptions options = {});

  // Round-0 session. Throws on an empty candidate list and UnknownIdError
  // for a candidate without a vector.
  SessionState start_session(const QueryId& query_id, std::span<const double> query,
                             std::span<const QuestionId> candidates) const;
  SessionState start_session(const QueryRecord& query) const;

  // Effective query v = W_Q ⊙ Q + Σ W_t ⊙ e over accepted feedback, or Q
  // itself while nothing has been accepted; score(c) = c · v.
  Ranking rank_candidates(const SessionState& session) const;

  // Selects the next tag with `policy` and marks it pending. `rng` is needed
  // for the random policy only.
  std::optional<TagId> ask_next(SessionState& session, TagPolicy policy,
                                std::mt19937_64* rng = nullptr) const;

  // Gates and records the answer to the pending tag, then re-ranks.
  // Throws if `tag` is not the pending tag.
  const FeedbackTurn& apply_feedback(SessionState& session, const TagId& tag,
                                     Feedback feedback) const;

  ConversationResult run_conversation(SessionState& session, AnswerSource& user,
                                      std::size_t max_rounds, TagPolicy policy = TagPolicy::gbs,
                                      std::mt19937_64* rng = nullptr,
                                      std::span<const QuestionId> positives = {}) const;

  const SessionOptions& options() const { return options_; }
  const TrainedModel& model() const { return model_; }
  const Corpus& corpus() const { return corpus_; }

 private:
  const TrainedModel& model_;
  const Corpus& corpus_;
  const NoiseGateModel* gate_;
  SessionOptions options_;
};

}  // namespace cqr
