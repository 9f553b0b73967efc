#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cqr/corpus.hpp"
#include "cqr/embedding.hpp"
#include "cqr/vec.hpp"

namespace cqr {

enum class Feedback { positive, negative };

/// A learnable fusion weight: either one scalar or one value per dimension.
/// Applied elementwise; a scalar broadcasts.
class FusionWeight {
 public:
  FusionWeight(double value = 1.0) : values_{value} {}  // NOLINT: implicit from scalar
  static FusionWeight diagonal(std::size_t dim, double value = 1.0);

  bool is_diagonal() const { return values_.size() > 1; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t dim_index) const {
    return values_.size() == 1 ? values_[0] : values_[dim_index];
  }
  const Vec& values() const { return values_; }
  Vec& values() { return values_; }

  Vec apply(std::span<const double> x) const;
  // Adds w ⊙ x * alpha into out.
  void apply_add(std::span<const double> x, double alpha, std::span<double> out) const;

  friend bool operator==(const FusionWeight&, const FusionWeight&) = default;

 private:
  Vec values_;
};

struct TrainableWeights {
  FusionWeight query{1.0};     // W_Q
  FusionWeight tag{1.0};       // W_t
  FusionWeight question{1.0};  // W_p

  friend bool operator==(const TrainableWeights&, const TrainableWeights&) = default;
};

struct TrainConfig {
  std::size_t epochs = 40;
  double learning_rate = 0.1;
  std::size_t question_negatives = 5;  // |N|
  std::size_t tag_negatives = 5;       // |T^n|
  std::size_t batch_size = 4;
  std::size_t rounds_per_example = 1;
  std::uint64_t seed = 42;
  double clip_norm = 5.0;  // <= 0 disables clipping
  bool freeze_embeddings = false;
  bool disable_qq = false;
  bool disable_tq = false;
  bool disable_als = false;
  bool diagonal_weights = false;
};

// m = W_Q ⊙ Q + W_t ⊙ t^±, t^- = -t.
Vec mixture_query(std::span<const double> query, std::span<const double> tag, Feedback feedback,
                  const FusionWeight& query_weight, const FusionWeight& tag_weight);

// p' = W_p ⊙ p
Vec adjusted_question(std::span<const double> question, const FusionWeight& question_weight);

struct QqSample {
  std::span<const double> query;
  std::span<const double> tag;  // stored positive form t^+
  Feedback feedback;
  std::span<const double> positive;
  std::vector<std::span<const double>> negatives;
};

struct QqResult {
  double loss = 0.0;
  Vec d_query_weight;
  Vec d_tag_weight;
  std::vector<Vec> d_query;
  std::vector<Vec> d_tag;  // gradient w.r.t. the stored t^+
  std::vector<Vec> d_positive;
  std::vector<std::vector<Vec>> d_negatives;
};

// Query-question NCE loss over a batch of mixtures, with gradients for every
// input. Throws on an empty batch.
QqResult loss_qq(std::span<const QqSample> batch, const FusionWeight& query_weight,
                 const FusionWeight& tag_weight);

struct TqSample {
  std::span<const double> question;
  std::span<const double> positive_tag;  // empty span: question without tags
  std::vector<std::span<const double>> negative_tags;
};

struct TqResult {
  double loss = 0.0;
  std::size_t skipped = 0;  // samples without a positive tag
  Vec d_question_weight;
  std::vector<Vec> d_question;
  std::vector<Vec> d_positive_tag;
  std::vector<std::vector<Vec>> d_negative_tags;
};

// Tag-question NCE loss. Samples without a positive tag are skipped and
// counted; they receive empty gradients.
TqResult loss_tq(std::span<const TqSample> batch, const FusionWeight& question_weight);

// lr0 * (1 - epoch / total_epochs)
double lr_schedule(std::size_t epoch, std::size_t total_epochs, double initial_rate);

struct VectorKey {
  Space space;
  std::string id;
  friend auto operator<=>(const VectorKey&, const VectorKey&) = default;
};

/// Sparse gradient over model parameters. Empty weight gradients mean "not
/// touched".
struct ParameterGradients {
  Vec query_weight;
  Vec tag_weight;
  Vec question_weight;
  std::map<VectorKey, Vec> vectors;

  void add_vector(Space space, const std::string& id, std::span<const double> grad);
  double l2_norm() const;
  void scale(double factor);
  // Rescales to `max_norm` when the global L2 norm exceeds it.
  void clip(double max_norm);
};

// θ ← θ − lr·∇θ. Throws cqr::Error if any gradient is non-finite, leaving
// the parameters untouched.
void sgd_step(EmbeddingTable& embeddings, TrainableWeights& weights,
              const ParameterGradients& gradients, double lr);

enum class TrainStage { query_question, tag_question, joint };

struct EpochStats {
  std::size_t epoch = 0;
  TrainStage stage = TrainStage::query_question;
  double learning_rate = 0.0;
  double mean_qq = 0.0;  // mean batch L_QQ, 0 when not evaluated
  double mean_tq = 0.0;
  std::size_t skipped_questions = 0;
};

struct TrainedModel {
  EmbeddingTable embeddings;
  TrainableWeights weights;
  TrainConfig config;
  std::vector<EpochStats> history;
  // Set when the embeddings came from the built-in hashing embedder, so
  // free-text queries can be encoded later.
  std::optional<HashEmbedderConfig> embedder;
  std::string questions_path;  // corpus the model was trained on, if known
};

// Picks the clarifying tag for one simulated round: with probability 1/2 a
// tag of `positive` (positive feedback), otherwise a uniformly drawn tag that
// `positive` does not carry (negative feedback).
std::pair<TagId, Feedback> simulate_training_round(const QuestionRecord& positive,
                                                   const TagVocabulary& vocabulary,
                                                   std::mt19937_64& rng);

// Which stage a given epoch runs under `config`.
TrainStage stage_for_epoch(const TrainConfig& config, std::size_t epoch);

// Two-stage offline training with per-epoch alternation. Query-question
// epochs update query vectors, W_Q and W_t; tag-question epochs update
// question and tag vectors and W_p. Deterministic under config.seed.
// `observer`, if set, sees the model after every epoch.
using EpochObserver = std::function<void(const EpochStats&, const TrainedModel&)>;
TrainedModel train_offline(const Corpus& corpus, std::span<const QueryRecord> train_queries,
                           EmbeddingTable embeddings, const TrainConfig& config,
                           const EpochObserver& observer = {});

// model.json checkpoint.
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);
std::string model_to_json(const TrainedModel& model);
TrainedModel model_from_json(const std::string& text, const std::filesystem::path& base_dir = {});

std::string_view to_string(Feedback feedback);
std::string_view to_string(TrainStage stage);

}  // namespace cqr
