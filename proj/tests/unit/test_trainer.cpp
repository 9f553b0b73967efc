#include <doctest.h>

#include <cmath>
#include <map>

#include "cqr/error.hpp"
#include "cqr/trainer.hpp"
#include "fixtures.hpp"
#include "gradient_checks.hpp"

using namespace cqr;
using doctest::Approx;

namespace {

const double kTwoLn2 = 2.0 * std::log(2.0);

struct ToyInputs {
  const Corpus& corpus;
  const std::vector<QueryRecord>& train;
  EmbeddingTable initial;
};

ToyInputs toy_inputs() {
  const auto& p = fixtures::toy_pipeline();
  HashEmbedderConfig hash;
  hash.seed = fixtures::kHashSeed;
  return {p.data.corpus, p.split.train, encode_corpus(p.data.corpus, p.data.queries, hash)};
}

TrainConfig short_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  return c;
}

bool block_equal(const EmbeddingTable& a, const EmbeddingTable& b, Space s) {
  if (a.ids(s) != b.ids(s)) return false;
  for (const auto& id : a.ids(s))
    if (a.at(s, id) != b.at(s, id)) return false;
  return true;
}

}  // namespace

TEST_CASE("mixture query") {
  const Vec q = {1.0, 0.0}, t = {0.0, 1.0};
  CHECK(mixture_query(q, t, Feedback::positive, 1.0, 1.0) == Vec{1.0, 1.0});
  CHECK(mixture_query(q, t, Feedback::negative, 1.0, 1.0) == Vec{1.0, -1.0});
  CHECK(mixture_query(Vec{2.0, -1.0}, t, Feedback::positive, 0.5, 0.0) == Vec{1.0, -0.5});

  auto diag = FusionWeight::diagonal(2, 1.0);
  diag.values() = {2.0, 3.0};
  CHECK(mixture_query(q, t, Feedback::positive, diag, diag) == Vec{2.0, 3.0});
  CHECK_THROWS_AS(mixture_query(Vec{1.0}, t, Feedback::positive, 1.0, 1.0), DimensionError);
}

TEST_CASE("adjusted question") {
  const Vec p = {1.0, -1.0};
  CHECK(adjusted_question(p, 1.0) == p);
  CHECK(adjusted_question(p, 0.0) == Vec{0.0, 0.0});
  CHECK(adjusted_question(p, 2.0) == Vec{2.0, -2.0});
}

TEST_CASE("simulated training rounds follow the positive question's tags") {
  Corpus corpus;
  corpus.add(fixtures::question("p", "x", {"python"}));
  corpus.add(fixtures::question("o", "y", {"java", "rust", "sql"}));
  const auto& positive = corpus.question("p");
  std::mt19937_64 rng(5);
  std::size_t n_positive = 0;
  const std::size_t draws = 10000;
  for (std::size_t i = 0; i < draws; ++i) {
    const auto [tag, feedback] = simulate_training_round(positive, corpus.tags(), rng);
    if (feedback == Feedback::positive) {
      ++n_positive;
      CHECK(tag == "python");
    } else {
      CHECK_FALSE(positive.has_tag(tag));
    }
  }
  CHECK(static_cast<double>(n_positive) / draws == Approx(0.5).epsilon(0.04));
}

TEST_CASE("query-question loss at zero scores is 2 ln 2") {
  const Vec q = {1.0, 0.0}, t = {0.0, 0.0}, p = {0.0, 1.0}, n = {0.0, -1.0};
  const std::vector<QqSample> batch = {{q, t, Feedback::positive, p, {n}}};
  CHECK(loss_qq(batch, 1.0, 1.0).loss == Approx(kTwoLn2).epsilon(1e-12));
  CHECK(kTwoLn2 == Approx(1.3863).epsilon(1e-4));
}

TEST_CASE("query-question loss saturates to zero") {
  const Vec q = {40.0, 0.0}, t = {0.0, 0.0}, p = {40.0, 0.0}, n = {-40.0, 0.0};
  const std::vector<QqSample> batch = {{q, t, Feedback::positive, p, {n, n}}};
  const auto r = loss_qq(batch, 1.0, 1.0);
  CHECK(r.loss < 1e-12);
  CHECK(std::isfinite(r.loss));
  CHECK(all_finite(r.d_query[0]));
}

TEST_CASE("query-question loss of an empty batch throws") {
  CHECK_THROWS(loss_qq(std::span<const QqSample>{}, 1.0, 1.0));
}

TEST_CASE("tag-question loss at zero scores is 2 ln 2") {
  const Vec p = {1.0, 0.0}, tp = {0.0, 1.0}, tn = {0.0, 2.0};
  const std::vector<TqSample> batch = {{p, tp, {tn}}};
  CHECK(loss_tq(batch, 1.0).loss == Approx(kTwoLn2).epsilon(1e-12));
}

TEST_CASE("tag-question loss of separated scores vanishes") {
  const Vec p = {30.0, 0.0}, tp = {30.0, 0.0}, tn = {-30.0, 0.0};
  const std::vector<TqSample> batch = {{p, tp, {tn}}};
  CHECK(loss_tq(batch, 1.0).loss < 1e-12);
}

TEST_CASE("tag-question loss skips questions without tags") {
  const Vec p = {1.0, 0.0}, tp = {0.0, 1.0}, tn = {0.0, 2.0};
  const std::vector<TqSample> batch = {{p, tp, {tn}}, {p, {}, {}}};
  const auto r = loss_tq(batch, 1.0);
  CHECK(r.skipped == 1);
  CHECK(r.loss == Approx(kTwoLn2).epsilon(1e-12));
  CHECK(r.d_question[1].empty());
}

TEST_CASE("analytic gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CAPTURE(seed);
    CHECK(gradcheck::qq_error(seed, false) < 1e-4);
    CHECK(gradcheck::qq_error(seed, true) < 1e-4);
    CHECK(gradcheck::tq_error(seed, false) < 1e-4);
    CHECK(gradcheck::tq_error(seed, true) < 1e-4);
  }
}

TEST_CASE("linear learning-rate decay") {
  CHECK(lr_schedule(0, 10, 0.1) == Approx(0.1));
  CHECK(lr_schedule(9, 10, 0.1) == Approx(0.01));
  CHECK(lr_schedule(5, 10, 0.1) == Approx(0.05));
  CHECK_THROWS(lr_schedule(10, 10, 0.1));
  CHECK_THROWS(lr_schedule(0, 0, 0.1));
}

TEST_CASE("sgd step") {
  EmbeddingTable table(2);
  table.insert(Space::query, "q", {1.0, 1.0});
  TrainableWeights weights;
  ParameterGradients g;
  g.query_weight = {2.0};
  g.add_vector(Space::query, "q", Vec{1.0, -1.0});

  SUBCASE("lr = 0 leaves everything unchanged") {
    const auto before = table;
    sgd_step(table, weights, g, 0.0);
    CHECK(table == before);
    CHECK(weights.query[0] == 1.0);
  }
  SUBCASE("one and two steps") {
    sgd_step(table, weights, g, 0.1);
    CHECK(weights.query[0] == Approx(0.8));
    CHECK(table.at(Space::query, "q")[0] == Approx(0.9).epsilon(1e-12));
    CHECK(table.at(Space::query, "q")[1] == Approx(1.1).epsilon(1e-12));
    sgd_step(table, weights, g, 0.1);
    CHECK(weights.query[0] == Approx(0.6));
    CHECK(weights.tag[0] == 1.0);
  }
  SUBCASE("non-finite gradients are rejected before any update") {
    g.tag_weight = {std::nan("")};
    const auto before = table;
    CHECK_THROWS_AS(sgd_step(table, weights, g, 0.1), Error);
    CHECK(table == before);
    CHECK(weights.query[0] == 1.0);
  }
}

TEST_CASE("gradient clipping rescales to the norm bound") {
  ParameterGradients g;
  g.query_weight = {3.0};
  g.add_vector(Space::tag, "t", Vec{4.0, 0.0});
  CHECK(g.l2_norm() == Approx(5.0));
  g.clip(10.0);
  CHECK(g.l2_norm() == Approx(5.0));
  g.clip(2.5);
  CHECK(g.l2_norm() == Approx(2.5));
  CHECK(g.query_weight[0] == Approx(1.5));
}

TEST_CASE("zero epochs returns the initialization") {
  auto in = toy_inputs();
  const auto model = train_offline(in.corpus, in.train, in.initial, short_config(0));
  CHECK(model.embeddings == in.initial);
  CHECK(model.weights == TrainableWeights{});
  CHECK(model.history.empty());
}

TEST_CASE("alternating stages leave the inactive parameters bit-identical") {
  auto in = toy_inputs();
  TrainedModel previous;
  previous.embeddings = in.initial;
  std::size_t checked = 0;
  train_offline(in.corpus, in.train, in.initial, short_config(6),
                [&](const EpochStats& stats, const TrainedModel& m) {
                  if (stats.stage == TrainStage::query_question) {
                    CHECK(block_equal(m.embeddings, previous.embeddings, Space::question));
                    CHECK(block_equal(m.embeddings, previous.embeddings, Space::tag));
                    CHECK(m.weights.question == previous.weights.question);
                    CHECK_FALSE(block_equal(m.embeddings, previous.embeddings, Space::query));
                  } else {
                    REQUIRE(stats.stage == TrainStage::tag_question);
                    CHECK(block_equal(m.embeddings, previous.embeddings, Space::query));
                    CHECK(m.weights.query == previous.weights.query);
                    CHECK(m.weights.tag == previous.weights.tag);
                    CHECK_FALSE(block_equal(m.embeddings, previous.embeddings, Space::question));
                  }
                  previous = m;
                  ++checked;
                });
  CHECK(checked == 6);
}

TEST_CASE("stage schedule") {
  TrainConfig c;
  CHECK(stage_for_epoch(c, 0) == TrainStage::query_question);
  CHECK(stage_for_epoch(c, 1) == TrainStage::tag_question);
  CHECK(stage_for_epoch(c, 2) == TrainStage::query_question);
  c.disable_als = true;
  CHECK(stage_for_epoch(c, 1) == TrainStage::joint);
  c.disable_als = false;
  c.disable_qq = true;
  CHECK(stage_for_epoch(c, 0) == TrainStage::tag_question);
  CHECK(stage_for_epoch(c, 1) == TrainStage::tag_question);
}

TEST_CASE("frozen embeddings train only the fusion weights") {
  auto in = toy_inputs();
  auto config = short_config(4);
  config.freeze_embeddings = true;
  const auto model = train_offline(in.corpus, in.train, in.initial, config);
  CHECK(model.embeddings == in.initial);
  CHECK(model.weights.query[0] != 1.0);
  CHECK(model.weights.question[0] != 1.0);
}

TEST_CASE("disabling the query-question loss keeps W_Q and W_t at 1") {
  auto in = toy_inputs();
  auto config = short_config(4);
  config.disable_qq = true;
  const auto model = train_offline(in.corpus, in.train, in.initial, config);
  CHECK(model.weights.query[0] == 1.0);
  CHECK(model.weights.tag[0] == 1.0);
  CHECK(block_equal(model.embeddings, in.initial, Space::query));
}

TEST_CASE("joint schedule updates everything every epoch") {
  auto in = toy_inputs();
  auto config = short_config(1);
  config.disable_als = true;
  const auto model = train_offline(in.corpus, in.train, in.initial, config);
  CHECK(model.history.at(0).stage == TrainStage::joint);
  CHECK(model.history[0].mean_qq > 0.0);
  CHECK(model.history[0].mean_tq > 0.0);
  CHECK_FALSE(block_equal(model.embeddings, in.initial, Space::query));
  CHECK_FALSE(block_equal(model.embeddings, in.initial, Space::question));
}

TEST_CASE("diagonal fusion weights") {
  auto in = toy_inputs();
  auto config = short_config(2);
  config.diagonal_weights = true;
  const auto model = train_offline(in.corpus, in.train, in.initial, config);
  CHECK(model.weights.query.size() == in.initial.dim());
  CHECK(model.weights.question.size() == in.initial.dim());
}

TEST_CASE("training is deterministic under the seed") {
  auto in = toy_inputs();
  const auto a = train_offline(in.corpus, in.train, in.initial, short_config(4));
  const auto b = train_offline(in.corpus, in.train, in.initial, short_config(4));
  CHECK(a.embeddings == b.embeddings);
  CHECK(a.weights == b.weights);
  auto other = short_config(4);
  other.seed = 43;
  CHECK_FALSE(train_offline(in.corpus, in.train, in.initial, other).embeddings == a.embeddings);
}

TEST_CASE("each loss decreases over its first three optimized epochs") {
  auto in = toy_inputs();
  const auto model = train_offline(in.corpus, in.train, in.initial, TrainConfig{});
  std::vector<double> qq, tq;
  for (const auto& e : model.history) {
    if (e.stage == TrainStage::query_question) qq.push_back(e.mean_qq);
    if (e.stage == TrainStage::tag_question) tq.push_back(e.mean_tq);
  }
  REQUIRE(qq.size() >= 3);
  REQUIRE(tq.size() >= 3);
  CHECK(qq[0] > qq[1]);
  CHECK(qq[1] > qq[2]);
  CHECK(tq[0] > tq[1]);
  CHECK(tq[1] > tq[2]);
}

TEST_CASE("invalid training configuration") {
  auto in = toy_inputs();
  auto config = short_config(1);
  config.batch_size = 0;
  CHECK_THROWS(train_offline(in.corpus, in.train, in.initial, config));
  config = short_config(1);
  config.question_negatives = 0;
  CHECK_THROWS(train_offline(in.corpus, in.train, in.initial, config));
  EmbeddingTable missing(in.initial.dim());
  CHECK_THROWS_AS(train_offline(in.corpus, in.train, missing, short_config(1)), UnknownIdError);
}
