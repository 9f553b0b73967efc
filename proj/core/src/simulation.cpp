#include "cqr/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "cqr/error.hpp"

namespace cqr {

Feedback simulate_answer(std::span<const TagId> target_tags, const TagId& asked, double noise_rate,
                         std::mt19937_64& rng) {
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0))
    throw std::invalid_argument("noise rate must lie in [0, 1]");
  const bool truthful = std::find(target_tags.begin(), target_tags.end(), asked) != target_tags.end();
  // Always draw so the stream position does not depend on the answer.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool flip = u(rng) < noise_rate;
  return (truthful != flip) ? Feedback::positive : Feedback::negative;
}

SimulatedUser::SimulatedUser(std::vector<TagId> target_tags, double noise_rate, std::uint64_t seed)
    : target_tags_(std::move(target_tags)), noise_rate_(noise_rate), rng_(seed) {}

Feedback SimulatedUser::answer(const TagId& tag) {
  return simulate_answer(target_tags_, tag, noise_rate_, rng_);
}

std::uint64_t substream_seed(std::uint64_t seed, const std::string& query_id, std::uint64_t stream) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  std::uint64_t h = 14695981039346656037ULL;
  for (const char c : query_id) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return mix(seed ^ mix(h ^ mix(stream)));
}

namespace {

void require_positives(std::span<const QuestionId> positives) {
  if (positives.empty()) throw std::invalid_argument("metric needs at least one positive");
}

std::unordered_set<QuestionId> to_set(std::span<const QuestionId> ids) {
  return {ids.begin(), ids.end()};
}

}  // namespace

double recall_at_k(std::span<const QuestionId> ranked, std::span<const QuestionId> positives,
                   std::size_t k) {
  require_positives(positives);
  if (k == 0) throw std::invalid_argument("k must be >= 1");
  const auto pos = to_set(positives);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) hits += pos.count(ranked[i]);
  return static_cast<double>(hits) / static_cast<double>(pos.size());
}

double ndcg_at_k(std::span<const QuestionId> ranked, std::span<const QuestionId> positives,
                 std::size_t k) {
  require_positives(positives);
  if (k == 0) throw std::invalid_argument("k must be >= 1");
  const auto pos = to_set(positives);
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i)
    if (pos.count(ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  double ideal = 0.0;
  for (std::size_t i = 0; i < std::min(k, pos.size()); ++i)
    ideal += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / ideal;
}

double reciprocal_rank(std::span<const QuestionId> ranked, std::span<const QuestionId> positives) {
  require_positives(positives);
  const auto pos = to_set(positives);
  for (std::size_t i = 0; i < ranked.size(); ++i)
    if (pos.count(ranked[i])) return 1.0 / static_cast<double>(i + 1);
  return 0.0;
}

double average_precision(std::span<const QuestionId> ranked, std::span<const QuestionId> positives) {
  require_positives(positives);
  const auto pos = to_set(positives);
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (!pos.count(ranked[i])) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(pos.size());
}

RoundMetrics evaluate_ranking(std::span<const QuestionId> ranked,
                              std::span<const QuestionId> positives) {
  RoundMetrics m;
  m.recall1 = recall_at_k(ranked, positives, 1);
  m.recall3 = recall_at_k(ranked, positives, 3);
  m.recall5 = recall_at_k(ranked, positives, 5);
  m.ndcg3 = ndcg_at_k(ranked, positives, 3);
  m.ndcg5 = ndcg_at_k(ranked, positives, 5);
  m.ndcg10 = ndcg_at_k(ranked, positives, 10);
  m.map = average_precision(ranked, positives);
  m.mrr = reciprocal_rank(ranked, positives);
  return m;
}

ConversationResult simulate_conversation(const ConversationEngine& engine, const QueryRecord& query,
                                         const ExperimentOptions& options) {
  if (query.positives.empty()) throw Error("query '" + query.id + "' has no positives");
  const auto& target = engine.corpus().question(query.positives.front());
  SimulatedUser user(target.tags, options.simulator.noise_rate,
                     substream_seed(options.simulator.seed, query.id, 0));
  std::mt19937_64 policy_rng(substream_seed(options.simulator.seed, query.id, 1));
  SessionState session = engine.start_session(query);
  return engine.run_conversation(session, user, options.rounds, options.policy, &policy_rng,
                                 query.positives);
}

MetricReport run_experiment(const TrainedModel& model, const NoiseGateModel* gate,
                            const Corpus& corpus, std::span<const QueryRecord> queries,
                            const ExperimentOptions& options) {
  if (queries.empty()) throw Error("run_experiment: empty test set");
  const ConversationEngine engine(model, corpus, gate, options.session);
  const std::size_t rounds = options.rounds;

  // Per-query metric rows; rounds after an early stop repeat the final ranking.
  auto evaluate_query = [&](const QueryRecord& q) {
    const ConversationResult r = simulate_conversation(engine, q, options);
    std::vector<RoundMetrics> rows;
    for (std::size_t l = 0; l <= rounds; ++l) {
      const Ranking& ranking = r.rankings[std::min(l, r.rankings.size() - 1)];
      rows.push_back(evaluate_ranking(ranking.ids(), q.positives));
    }
    return rows;
  };

  std::vector<std::vector<RoundMetrics>> per_query(queries.size());
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, queries.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < queries.size(); ++i) per_query[i] = evaluate_query(queries[i]);
  } else {
    std::vector<std::future<void>> jobs;
    for (std::size_t t = 0; t < threads; ++t)
      jobs.push_back(std::async(std::launch::async, [&, t] {
        for (std::size_t i = t; i < queries.size(); i += threads) per_query[i] = evaluate_query(queries[i]);
      }));
    for (auto& j : jobs) j.get();
  }

  MetricReport report;
  report.options = options;
  report.n_queries = queries.size();
  const double n = static_cast<double>(queries.size());
  for (std::size_t l = 0; l <= rounds; ++l) {
    RoundMetrics avg;
    avg.round = l;
    for (const auto& rows : per_query) {  // fixed order keeps sums bit-reproducible
      const auto& m = rows[l];
      avg.recall1 += m.recall1;
      avg.recall3 += m.recall3;
      avg.recall5 += m.recall5;
      avg.ndcg3 += m.ndcg3;
      avg.ndcg5 += m.ndcg5;
      avg.ndcg10 += m.ndcg10;
      avg.map += m.map;
      avg.mrr += m.mrr;
    }
    for (double* v : {&avg.recall1, &avg.recall3, &avg.recall5, &avg.ndcg3, &avg.ndcg5,
                      &avg.ndcg10, &avg.map, &avg.mrr})
      *v /= n;
    report.rounds.push_back(avg);
  }
  return report;
}

namespace {

nlohmann::json options_to_json(const ExperimentOptions& o) {
  return {{"rounds", o.rounds},
          {"noise", o.simulator.noise_rate},
          {"seed", o.simulator.seed},
          {"policy", to_string(o.policy)},
          {"alpha", o.session.alpha},
          {"gate_enabled", o.session.gate_enabled},
          {"use_positive", o.session.use_positive},
          {"use_negative", o.session.use_negative},
          {"negative_rule",
           o.session.negative_rule == NegativeFeedbackRule::signed_tag ? "signed_tag" : "complement"}};
}

}  // namespace

std::string report_to_json(const MetricReport& report) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& m : report.rounds)
    rounds.push_back({{"l", m.round},
                      {"R@1", m.recall1},
                      {"R@3", m.recall3},
                      {"R@5", m.recall5},
                      {"NDCG@3", m.ndcg3},
                      {"NDCG@5", m.ndcg5},
                      {"NDCG@10", m.ndcg10},
                      {"MAP", m.map},
                      {"MRR", m.mrr}});
  nlohmann::json config = options_to_json(report.options);
  if (!report.label.empty()) config["label"] = report.label;
  return nlohmann::json{{"config", config}, {"rounds", rounds}, {"n_queries", report.n_queries}}
      .dump(2);
}

std::string report_to_csv(const MetricReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "l,R@1,R@3,R@5,NDCG@3,NDCG@5,NDCG@10,MAP,MRR\n";
  for (const auto& m : report.rounds)
    out << m.round << ',' << m.recall1 << ',' << m.recall3 << ',' << m.recall5 << ',' << m.ndcg3
        << ',' << m.ndcg5 << ',' << m.ndcg10 << ',' << m.map << ',' << m.mrr << '\n';
  return out.str();
}

void save_report(const MetricReport& report, const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_path) {
  std::ofstream out(json_path);
  if (!out) throw Error("cannot write '" + json_path.string() + "'");
  out << report_to_json(report) << '\n';
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    if (!csv) throw Error("cannot write '" + csv_path.string() + "'");
    csv << report_to_csv(report);
  }
}

}  // namespace cqr
