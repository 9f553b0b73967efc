#include "cqr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "cqr/error.hpp"

namespace cqr {

std::string_view to_string(Feedback feedback) {
  return feedback == Feedback::positive ? "positive" : "negative";
}

std::string_view to_string(TrainStage stage) {
  switch (stage) {
    case TrainStage::query_question: return "query_question";
    case TrainStage::tag_question: return "tag_question";
    case TrainStage::joint: return "joint";
  }
  return "?";
}

FusionWeight FusionWeight::diagonal(std::size_t dim, double value) {
  if (dim < 2) throw std::invalid_argument("diagonal weights need dim >= 2");
  FusionWeight w;
  w.values_.assign(dim, value);
  return w;
}

Vec FusionWeight::apply(std::span<const double> x) const {
  Vec out(x.size(), 0.0);
  apply_add(x, 1.0, out);
  return out;
}

void FusionWeight::apply_add(std::span<const double> x, double alpha, std::span<double> out) const {
  require_same_dim(x, out, "fusion weight");
  if (is_diagonal() && values_.size() != x.size())
    throw DimensionError(values_.size(), x.size(), "diagonal weight");
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += alpha * (*this)[i] * x[i];
}

namespace {

// Accumulates ∂L/∂w for out = w ⊙ (alpha·x), given upstream gradient g.
void accumulate_weight_grad(const FusionWeight& w, std::span<const double> g,
                            std::span<const double> x, double alpha, Vec& grad) {
  if (grad.empty()) grad.assign(w.size(), 0.0);
  if (w.is_diagonal()) {
    for (std::size_t i = 0; i < x.size(); ++i) grad[i] += alpha * g[i] * x[i];
  } else {
    grad[0] += alpha * dot(g, x);
  }
}

Vec weighted(const FusionWeight& w, std::span<const double> g, double alpha) {
  Vec out(g.size(), 0.0);
  w.apply_add(g, alpha, out);
  return out;
}

double sign_of(Feedback f) { return f == Feedback::positive ? 1.0 : -1.0; }

}  // namespace

Vec mixture_query(std::span<const double> query, std::span<const double> tag, Feedback feedback,
                  const FusionWeight& query_weight, const FusionWeight& tag_weight) {
  require_same_dim(query, tag, "mixture query");
  Vec m = query_weight.apply(query);
  tag_weight.apply_add(tag, sign_of(feedback), m);
  return m;
}

Vec adjusted_question(std::span<const double> question, const FusionWeight& question_weight) {
  return question_weight.apply(question);
}

QqResult loss_qq(std::span<const QqSample> batch, const FusionWeight& query_weight,
                 const FusionWeight& tag_weight) {
  if (batch.empty()) throw std::invalid_argument("loss_qq: empty batch");
  QqResult r;
  r.d_query_weight.assign(query_weight.size(), 0.0);
  r.d_tag_weight.assign(tag_weight.size(), 0.0);
  const double inv_m = 1.0 / static_cast<double>(batch.size());

  for (const auto& s : batch) {
    const double sign = sign_of(s.feedback);
    const Vec m = mixture_query(s.query, s.tag, s.feedback, query_weight, tag_weight);

    const double sp = dot(m, s.positive);
    double loss = -log_sigmoid(sp);
    Vec g_m = scaled(s.positive, sigmoid(sp) - 1.0);
    r.d_positive.push_back(scaled(m, (sigmoid(sp) - 1.0) * inv_m));

    std::vector<Vec> d_neg;
    if (!s.negatives.empty()) {
      const double inv_n = 1.0 / static_cast<double>(s.negatives.size());
      for (const auto& n : s.negatives) {
        const double sn = dot(m, n);
        loss -= inv_n * log_one_minus_sigmoid(sn);
        axpy(inv_n * sigmoid(sn), n, g_m);
        d_neg.push_back(scaled(m, inv_n * sigmoid(sn) * inv_m));
      }
    }
    r.d_negatives.push_back(std::move(d_neg));
    for (double& g : g_m) g *= inv_m;
    r.loss += loss * inv_m;

    accumulate_weight_grad(query_weight, g_m, s.query, 1.0, r.d_query_weight);
    accumulate_weight_grad(tag_weight, g_m, s.tag, sign, r.d_tag_weight);
    r.d_query.push_back(weighted(query_weight, g_m, 1.0));
    r.d_tag.push_back(weighted(tag_weight, g_m, sign));
  }
  return r;
}

TqResult loss_tq(std::span<const TqSample> batch, const FusionWeight& question_weight) {
  if (batch.empty()) throw std::invalid_argument("loss_tq: empty batch");
  TqResult r;
  r.d_question_weight.assign(question_weight.size(), 0.0);
  for (const auto& s : batch)
    if (s.positive_tag.empty()) ++r.skipped;
  const std::size_t used = batch.size() - r.skipped;
  const double inv_p = used == 0 ? 0.0 : 1.0 / static_cast<double>(used);

  for (const auto& s : batch) {
    if (s.positive_tag.empty()) {
      r.d_question.emplace_back();
      r.d_positive_tag.emplace_back();
      r.d_negative_tags.emplace_back();
      continue;
    }
    const Vec p = adjusted_question(s.question, question_weight);
    const double sp = dot(p, s.positive_tag);
    double loss = -log_sigmoid(sp);
    Vec g_p = scaled(s.positive_tag, sigmoid(sp) - 1.0);
    r.d_positive_tag.push_back(scaled(p, (sigmoid(sp) - 1.0) * inv_p));

    std::vector<Vec> d_neg;
    if (!s.negative_tags.empty()) {
      const double inv_n = 1.0 / static_cast<double>(s.negative_tags.size());
      for (const auto& t : s.negative_tags) {
        const double sn = dot(p, t);
        loss -= inv_n * log_one_minus_sigmoid(sn);
        axpy(inv_n * sigmoid(sn), t, g_p);
        d_neg.push_back(scaled(p, inv_n * sigmoid(sn) * inv_p));
      }
    }
    r.d_negative_tags.push_back(std::move(d_neg));
    for (double& g : g_p) g *= inv_p;
    r.loss += loss * inv_p;

    accumulate_weight_grad(question_weight, g_p, s.question, 1.0, r.d_question_weight);
    r.d_question.push_back(weighted(question_weight, g_p, 1.0));
  }
  return r;
}

double lr_schedule(std::size_t epoch, std::size_t total_epochs, double initial_rate) {
  if (total_epochs == 0) throw std::invalid_argument("lr_schedule: total_epochs must be positive");
  if (epoch >= total_epochs) throw std::out_of_range("lr_schedule: epoch out of range");
  return initial_rate *
         (1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs));
}

void ParameterGradients::add_vector(Space space, const std::string& id,
                                    std::span<const double> grad) {
  auto [it, inserted] = vectors.try_emplace(VectorKey{space, id});
  if (inserted) {
    it->second.assign(grad.begin(), grad.end());
  } else {
    axpy(1.0, grad, it->second);
  }
}

double ParameterGradients::l2_norm() const {
  double sq = 0.0;
  for (const Vec* v : {&query_weight, &tag_weight, &question_weight})
    for (double x : *v) sq += x * x;
  for (const auto& [_, v] : vectors)
    for (double x : v) sq += x * x;
  return std::sqrt(sq);
}

void ParameterGradients::scale(double factor) {
  for (Vec* v : {&query_weight, &tag_weight, &question_weight})
    for (double& x : *v) x *= factor;
  for (auto& [_, v] : vectors)
    for (double& x : v) x *= factor;
}

void ParameterGradients::clip(double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = l2_norm();
  if (norm > max_norm) scale(max_norm / norm);
}

void sgd_step(EmbeddingTable& embeddings, TrainableWeights& weights,
              const ParameterGradients& gradients, double lr) {
  auto check = [](std::span<const double> g, const std::string& what) {
    if (!all_finite(g)) throw Error("non-finite gradient for " + what);
  };
  check(gradients.query_weight, "W_Q");
  check(gradients.tag_weight, "W_t");
  check(gradients.question_weight, "W_p");
  for (const auto& [key, g] : gradients.vectors) {
    check(g, std::string(to_string(key.space)) + " '" + key.id + "'");
    const Vec& target = embeddings.at(key.space, key.id);
    if (target.size() != g.size()) throw DimensionError(target.size(), g.size(), key.id);
  }

  auto apply_weight = [lr](FusionWeight& w, const Vec& g, const char* name) {
    if (g.empty()) return;
    if (g.size() != w.size()) throw DimensionError(w.size(), g.size(), name);
    axpy(-lr, g, w.values());
  };
  apply_weight(weights.query, gradients.query_weight, "W_Q");
  apply_weight(weights.tag, gradients.tag_weight, "W_t");
  apply_weight(weights.question, gradients.question_weight, "W_p");
  for (const auto& [key, g] : gradients.vectors) axpy(-lr, g, embeddings.at(key.space, key.id));
}

std::pair<TagId, Feedback> simulate_training_round(const QuestionRecord& positive,
                                                   const TagVocabulary& vocabulary,
                                                   std::mt19937_64& rng) {
  if (vocabulary.empty()) throw Error("simulate_training_round: empty tag vocabulary");
  if (positive.tags.empty())
    throw Error("simulate_training_round: question '" + positive.id + "' has no tags");
  const auto all = vocabulary.tags();
  const bool has_outside = all.size() > positive.tags.size() ||
                           std::any_of(all.begin(), all.end(),
                                       [&](const TagId& t) { return !positive.has_tag(t); });

  std::bernoulli_distribution coin(0.5);
  const bool positive_branch = coin(rng);
  if (positive_branch || !has_outside) {
    std::uniform_int_distribution<std::size_t> pick(0, positive.tags.size() - 1);
    return {positive.tags[pick(rng)], Feedback::positive};
  }
  std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
  for (;;) {
    const TagId& t = all[pick(rng)];
    if (!positive.has_tag(t)) return {t, Feedback::negative};
  }
}

TrainStage stage_for_epoch(const TrainConfig& config, std::size_t epoch) {
  if (config.disable_als && !config.disable_qq && !config.disable_tq) return TrainStage::joint;
  std::vector<TrainStage> stages;
  if (!config.disable_qq) stages.push_back(TrainStage::query_question);
  if (!config.disable_tq) stages.push_back(TrainStage::tag_question);
  if (stages.empty()) return TrainStage::joint;
  return stages[epoch % stages.size()];
}

namespace {

// Uniform sample of up to `k` distinct indices in [0, n) rejecting `excluded`.
template <typename Excluded>
std::vector<std::size_t> sample_excluding(std::size_t n, std::size_t k, std::size_t n_excluded,
                                          Excluded&& excluded, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  const std::size_t eligible = n > n_excluded ? n - n_excluded : 0;
  if (eligible == 0) return out;
  if (eligible <= k) {
    for (std::size_t i = 0; i < n; ++i)
      if (!excluded(i)) out.push_back(i);
    return out;
  }
  std::unordered_set<std::size_t> chosen;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  while (out.size() < k) {
    const std::size_t i = pick(rng);
    if (excluded(i) || !chosen.insert(i).second) continue;
    out.push_back(i);
  }
  return out;
}

struct QqExample {
  QueryId query;
  TagId tag;
  Feedback feedback;
  QuestionId positive;
  std::vector<QuestionId> negatives;
};

struct TqExample {
  QuestionId question;
  TagId positive;  // empty when the question has no tags
  std::vector<TagId> negatives;
};

class OfflineTrainer {
 public:
  OfflineTrainer(const Corpus& corpus, std::span<const QueryRecord> queries,
                 const TrainConfig& config, TrainedModel& model)
      : corpus_(corpus), queries_(queries), config_(config), model_(model), rng_(config.seed) {
    for (const auto& q : corpus.questions()) question_ids_.push_back(q.id);
    tag_ids_ = corpus.tags().tags();
    for (std::size_t i = 0; i < question_ids_.size(); ++i) question_pos_[question_ids_[i]] = i;
  }

  void validate() const {
    const auto& e = model_.embeddings;
    for (const auto& q : queries_) {
      e.at(Space::query, q.id);
      for (const auto& p : q.positives) corpus_.question(p);
    }
    for (const auto& id : question_ids_) e.at(Space::question, id);
    for (const auto& t : tag_ids_) e.at(Space::tag, t);
  }

  EpochStats run_epoch(std::size_t epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    stats.stage = stage_for_epoch(config_, epoch);
    stats.learning_rate = lr_schedule(epoch, config_.epochs, config_.learning_rate);

    const bool do_qq = !config_.disable_qq && stats.stage != TrainStage::tag_question;
    const bool do_tq = !config_.disable_tq && stats.stage != TrainStage::query_question;
    auto qq = do_qq ? make_qq_examples() : std::vector<QqExample>{};
    auto tq = do_tq ? make_tq_examples() : std::vector<TqExample>{};

    const std::size_t bs = config_.batch_size;
    const std::size_t nb_qq = (qq.size() + bs - 1) / bs;
    const std::size_t nb_tq = (tq.size() + bs - 1) / bs;
    double sum_qq = 0.0;
    double sum_tq = 0.0;
    std::size_t cnt_qq = 0;
    std::size_t cnt_tq = 0;

    auto step = [&](std::span<const QqExample> qq_batch, std::span<const TqExample> tq_batch) {
      ParameterGradients grads;
      if (!qq_batch.empty()) {
        sum_qq += qq_gradients(qq_batch, stats.stage, grads);
        ++cnt_qq;
      }
      if (!tq_batch.empty()) {
        sum_tq += tq_gradients(tq_batch, grads, stats.skipped_questions);
        ++cnt_tq;
      }
      grads.clip(config_.clip_norm);
      sgd_step(model_.embeddings, model_.weights, grads, stats.learning_rate);
    };

    auto batch_of = [bs](const auto& all, std::size_t b) {
      using T = typename std::decay_t<decltype(all)>::value_type;
      if (b * bs >= all.size()) return std::span<const T>{};
      return std::span<const T>(all).subspan(b * bs, std::min(bs, all.size() - b * bs));
    };

    if (stats.stage == TrainStage::joint) {
      for (std::size_t b = 0; b < std::max(nb_qq, nb_tq); ++b) step(batch_of(qq, b), batch_of(tq, b));
    } else {
      for (std::size_t b = 0; b < nb_qq; ++b) step(batch_of(qq, b), {});
      for (std::size_t b = 0; b < nb_tq; ++b) step({}, batch_of(tq, b));
    }
    if (cnt_qq) stats.mean_qq = sum_qq / static_cast<double>(cnt_qq);
    if (cnt_tq) stats.mean_tq = sum_tq / static_cast<double>(cnt_tq);
    return stats;
  }

 private:
  std::vector<QqExample> make_qq_examples() {
    std::vector<std::size_t> order(queries_.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    std::vector<QqExample> out;
    for (const std::size_t qi : order) {
      const auto& q = queries_[qi];
      std::unordered_set<std::size_t> excluded;
      for (const auto& p : q.positives) excluded.insert(question_pos_.at(p));
      for (std::size_t r = 0; r < config_.rounds_per_example; ++r) {
        std::uniform_int_distribution<std::size_t> pick(0, q.positives.size() - 1);
        const auto& positive = corpus_.question(q.positives[pick(rng_)]);
        auto [tag, feedback] = simulate_training_round(positive, corpus_.tags(), rng_);
        QqExample ex{q.id, std::move(tag), feedback, positive.id, {}};
        for (const std::size_t n :
             sample_excluding(question_ids_.size(), config_.question_negatives, excluded.size(),
                              [&](std::size_t i) { return excluded.count(i) != 0; }, rng_))
          ex.negatives.push_back(question_ids_[n]);
        out.push_back(std::move(ex));
      }
    }
    return out;
  }

  std::vector<TqExample> make_tq_examples() {
    std::vector<std::size_t> order(question_ids_.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    std::vector<TqExample> out;
    for (const std::size_t qi : order) {
      const auto& question = corpus_.question(question_ids_[qi]);
      TqExample ex{question.id, {}, {}};
      if (!question.tags.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, question.tags.size() - 1);
        ex.positive = question.tags[pick(rng_)];
        for (const std::size_t t :
             sample_excluding(tag_ids_.size(), config_.tag_negatives, question.tags.size(),
                              [&](std::size_t i) { return question.has_tag(tag_ids_[i]); }, rng_))
          ex.negatives.push_back(tag_ids_[t]);
      }
      out.push_back(std::move(ex));
    }
    return out;
  }

  double qq_gradients(std::span<const QqExample> batch, TrainStage stage, ParameterGradients& grads) {
    const auto& e = model_.embeddings;
    std::vector<QqSample> samples;
    samples.reserve(batch.size());
    for (const auto& ex : batch) {
      QqSample s{e.at(Space::query, ex.query), e.at(Space::tag, ex.tag), ex.feedback,
                 e.at(Space::question, ex.positive), {}};
      for (const auto& n : ex.negatives) s.negatives.push_back(e.at(Space::question, n));
      samples.push_back(std::move(s));
    }
    const QqResult r = loss_qq(samples, model_.weights.query, model_.weights.tag);
    accumulate(grads.query_weight, r.d_query_weight);
    accumulate(grads.tag_weight, r.d_tag_weight);
    if (!config_.freeze_embeddings) {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        grads.add_vector(Space::query, batch[i].query, r.d_query[i]);
        if (stage == TrainStage::joint) {
          grads.add_vector(Space::tag, batch[i].tag, r.d_tag[i]);
          grads.add_vector(Space::question, batch[i].positive, r.d_positive[i]);
          for (std::size_t j = 0; j < batch[i].negatives.size(); ++j)
            grads.add_vector(Space::question, batch[i].negatives[j], r.d_negatives[i][j]);
        }
      }
    }
    return r.loss;
  }

  double tq_gradients(std::span<const TqExample> batch, ParameterGradients& grads,
                      std::size_t& skipped) {
    const auto& e = model_.embeddings;
    std::vector<TqSample> samples;
    samples.reserve(batch.size());
    for (const auto& ex : batch) {
      TqSample s{e.at(Space::question, ex.question), {}, {}};
      if (!ex.positive.empty()) s.positive_tag = e.at(Space::tag, ex.positive);
      for (const auto& t : ex.negatives) s.negative_tags.push_back(e.at(Space::tag, t));
      samples.push_back(std::move(s));
    }
    const TqResult r = loss_tq(samples, model_.weights.question);
    skipped += r.skipped;
    accumulate(grads.question_weight, r.d_question_weight);
    if (!config_.freeze_embeddings) {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i].positive.empty()) continue;
        grads.add_vector(Space::question, batch[i].question, r.d_question[i]);
        grads.add_vector(Space::tag, batch[i].positive, r.d_positive_tag[i]);
        for (std::size_t j = 0; j < batch[i].negatives.size(); ++j)
          grads.add_vector(Space::tag, batch[i].negatives[j], r.d_negative_tags[i][j]);
      }
    }
    return r.loss;
  }

  static void accumulate(Vec& into, const Vec& g) {
    if (into.empty()) {
      into = g;
    } else {
      axpy(1.0, g, into);
    }
  }

  const Corpus& corpus_;
  std::span<const QueryRecord> queries_;
  const TrainConfig& config_;
  TrainedModel& model_;
  std::mt19937_64 rng_;
  std::vector<QuestionId> question_ids_;
  std::vector<TagId> tag_ids_;
  std::unordered_map<QuestionId, std::size_t> question_pos_;
};

}  // namespace

TrainedModel train_offline(const Corpus& corpus, std::span<const QueryRecord> train_queries,
                           EmbeddingTable embeddings, const TrainConfig& config,
                           const EpochObserver& observer) {
  if (config.question_negatives < 1 || config.tag_negatives < 1)
    throw std::invalid_argument("negative sample counts must be >= 1");
  if (config.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (config.rounds_per_example < 1) throw std::invalid_argument("rounds per example must be >= 1");

  TrainedModel model;
  model.embeddings = std::move(embeddings);
  model.config = config;
  if (config.diagonal_weights) {
    const std::size_t d = model.embeddings.dim();
    model.weights = {FusionWeight::diagonal(d), FusionWeight::diagonal(d), FusionWeight::diagonal(d)};
  }
  if (config.epochs == 0) return model;

  OfflineTrainer trainer(corpus, train_queries, model.config, model);
  trainer.validate();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    model.history.push_back(trainer.run_epoch(epoch));
    if (observer) observer(model.history.back(), model);
  }
  return model;
}

}  // namespace cqr
