#include "cqr/conversation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "cqr/embedding.hpp"
#include "cqr/error.hpp"

namespace cqr {

std::vector<QuestionId> Ranking::ids() const {
  std::vector<QuestionId> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.id);
  return out;
}

std::size_t Ranking::rank_of(const QuestionId& id) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].id == id) return i + 1;
  return 0;
}

Ranking make_ranking(std::span<const QuestionId> ids, std::span<const double> scores) {
  if (ids.size() != scores.size()) throw DimensionError(ids.size(), scores.size(), "ranking");
  Ranking r;
  if (ids.empty()) return r;
  const double max_score = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - max_score);
  r.entries.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    r.entries.push_back({ids[i], scores[i], std::exp(scores[i] - max_score) / z});
  std::sort(r.entries.begin(), r.entries.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return r;
}

std::string_view to_string(TagPolicy policy) { return policy == TagPolicy::gbs ? "gbs" : "random"; }

TagPolicy parse_policy(std::string_view name) {
  if (name == "gbs") return TagPolicy::gbs;
  if (name == "random") return TagPolicy::random;
  throw std::invalid_argument("unknown tag policy '" + std::string(name) + "'");
}

double contribution_score(std::size_t rank_index) {
  return 1.0 / (static_cast<double>(rank_index) + 1.0);
}

std::vector<TagId> candidate_tag_pool(const SessionState& session) {
  std::set<TagId> pool;
  for (const auto& tags : session.candidate_tags)
    for (const auto& t : tags)
      if (!session.asked.count(t)) pool.insert(t);
  return {pool.begin(), pool.end()};
}

namespace {

const std::vector<TagId>& tags_of(const SessionState& s, const QuestionId& id) {
  for (std::size_t i = 0; i < s.candidates.size(); ++i)
    if (s.candidates[i] == id) return s.candidate_tags[i];
  throw UnknownIdError("candidate", id);
}

}  // namespace

double gbs_objective(const SessionState& session, const TagId& tag) {
  double sum = 0.0;
  for (std::size_t i = 0; i < session.ranking.entries.size(); ++i) {
    const auto& tags = tags_of(session, session.ranking.entries[i].id);
    const bool has = std::binary_search(tags.begin(), tags.end(), tag);
    sum += (has ? 1.0 : -1.0) * contribution_score(i);
  }
  return std::abs(sum);
}

std::optional<TagId> select_tag_gbs(const SessionState& session) {
  std::optional<TagId> best;
  double best_value = 0.0;
  for (const auto& tag : candidate_tag_pool(session)) {
    const double v = gbs_objective(session, tag);
    if (!best || v < best_value) {
      best = tag;
      best_value = v;
    }
  }
  return best;
}

std::optional<TagId> select_tag_random(const SessionState& session, std::mt19937_64& rng) {
  const auto pool = candidate_tag_pool(session);
  if (pool.empty()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return pool[pick(rng)];
}

std::string transcript_entry_to_json(const TranscriptEntry& e) {
  nlohmann::json j = {{"round", e.round},
                      {"tag", e.tag},
                      {"feedback", e.feedback == Feedback::positive ? "yes" : "no"},
                      {"gate", to_string(e.verdict)},
                      {"gate_score", e.gate_score},
                      {"positive_ranks", e.positive_ranks}};
  return j.dump();
}

ConversationEngine::ConversationEngine(const TrainedModel& model, const Corpus& corpus,
                                       const NoiseGateModel* gate, SessionOptions options)
    : model_(model), corpus_(corpus), gate_(gate), options_(options) {
  if (gate_ != nullptr && gate_->dim != model_.embeddings.dim())
    throw DimensionError(model_.embeddings.dim(), gate_->dim, "noise gate");
}

SessionState ConversationEngine::start_session(const QueryId& query_id,
                                               std::span<const double> query,
                                               std::span<const QuestionId> candidates) const {
  if (candidates.empty()) throw Error("session for query '" + query_id + "' has no candidates");
  if (query.size() != model_.embeddings.dim())
    throw DimensionError(model_.embeddings.dim(), query.size(), "query vector");
  SessionState s;
  s.query_id = query_id;
  s.query.assign(query.begin(), query.end());
  for (const auto& id : candidates) {
    s.candidates.push_back(id);
    s.candidate_vectors.push_back(model_.embeddings.at(Space::question, id));
    s.candidate_tags.push_back(corpus_.question(id).tags);
  }
  s.ranking = rank_candidates(s);
  return s;
}

Vec query_vector(const TrainedModel& model, const QueryRecord& query) {
  if (const Vec* v = model.embeddings.find(Space::query, query.id)) return *v;
  if (!model.embedder) throw UnknownIdError("query embedding", query.id);
  return hash_embed(query.text, *model.embedder);
}

SessionState ConversationEngine::start_session(const QueryRecord& query) const {
  return start_session(query.id, query_vector(model_, query), query.candidates);
}

Ranking ConversationEngine::rank_candidates(const SessionState& session) const {
  const bool any_accepted = std::any_of(session.turns.begin(), session.turns.end(),
                                        [](const FeedbackTurn& t) { return t.accepted.has_value(); });
  Vec effective;
  if (!any_accepted) {
    effective = session.query;
  } else {
    effective = model_.weights.query.apply(session.query);
    for (const auto& t : session.turns)
      if (t.accepted) model_.weights.tag.apply_add(*t.accepted, 1.0, effective);
  }
  std::vector<double> scores;
  scores.reserve(session.candidates.size());
  for (const auto& c : session.candidate_vectors) scores.push_back(dot(c, effective));
  return make_ranking(session.candidates, scores);
}

std::optional<TagId> ConversationEngine::ask_next(SessionState& session, TagPolicy policy,
                                                  std::mt19937_64* rng) const {
  std::optional<TagId> tag;
  if (policy == TagPolicy::gbs) {
    tag = select_tag_gbs(session);
  } else {
    if (rng == nullptr) throw std::invalid_argument("random tag policy needs a generator");
    tag = select_tag_random(session, *rng);
  }
  session.pending = tag;
  if (tag) session.asked.insert(*tag);
  return tag;
}

const FeedbackTurn& ConversationEngine::apply_feedback(SessionState& session, const TagId& tag,
                                                       Feedback feedback) const {
  if (!session.pending || *session.pending != tag)
    throw Error("feedback for tag '" + tag + "' which was not asked this round");
  const Vec& tag_vector = model_.embeddings.at(Space::tag, tag);

  FeedbackTurn turn;
  turn.tag = tag;
  turn.feedback = feedback;
  if (options_.gate_enabled && gate_ != nullptr) {
    GateDecision d = gate_feedback(*gate_, session.query, tag_vector, feedback, options_.alpha,
                                   options_.negative_rule);
    turn.verdict = d.verdict;
    turn.gate_score = d.score;
    turn.accepted = std::move(d.accepted);
  } else {
    turn.verdict = Verdict::accept;
    turn.gate_score = 1.0;
    turn.accepted = feedback == Feedback::positive ? tag_vector : negate_tag(tag_vector);
  }
  const bool dropped = (feedback == Feedback::positive && !options_.use_positive) ||
                       (feedback == Feedback::negative && !options_.use_negative);
  if (dropped) turn.accepted.reset();

  session.turns.push_back(std::move(turn));
  session.asked.insert(tag);
  session.pending.reset();
  session.ranking = rank_candidates(session);
  return session.turns.back();
}

ConversationResult ConversationEngine::run_conversation(SessionState& session, AnswerSource& user,
                                                        std::size_t max_rounds, TagPolicy policy,
                                                        std::mt19937_64* rng,
                                                        std::span<const QuestionId> positives) const {
  ConversationResult result;
  result.rankings.push_back(session.ranking);
  while (session.round() < max_rounds) {
    const auto tag = ask_next(session, policy, rng);
    if (!tag) break;
    const Feedback answer = user.answer(*tag);
    const FeedbackTurn& turn = apply_feedback(session, *tag, answer);
    TranscriptEntry entry{session.round(), turn.tag, turn.feedback, turn.verdict, turn.gate_score, {}};
    for (const auto& p : positives) entry.positive_ranks.push_back(session.ranking.rank_of(p));
    result.transcript.push_back(std::move(entry));
    result.rankings.push_back(session.ranking);
  }
  return result;
}

}  // namespace cqr
