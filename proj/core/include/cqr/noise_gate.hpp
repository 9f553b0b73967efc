#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cqr/corpus.hpp"
#include "cqr/trainer.hpp"
#include "cqr/vec.hpp"

namespace cqr {

/// Two linear layers with a rectifier in between, scoring a concatenated
/// [left; tag] pair: σ(w2ᵀ relu(W1 [left; tag] + b1) + b2).
struct NoiseGateModel {
  std::size_t dim = 0;
  std::size_t hidden = 0;
  Vec w1;  // hidden x 2*dim, row-major
  Vec b1;  // hidden
  Vec w2;  // hidden
  double b2 = 0.0;
  double alpha = 0.5;

  static NoiseGateModel zeros(std::size_t dim, std::size_t hidden);
  // Uniform Glorot-style initialisation.
  static NoiseGateModel random(std::size_t dim, std::size_t hidden, std::uint64_t seed);

  std::size_t input_width() const { return 2 * dim; }
  friend bool operator==(const NoiseGateModel&, const NoiseGateModel&) = default;
};

double gate_logit(const NoiseGateModel& model, std::span<const double> left,
                  std::span<const double> tag);
double gate_score(const NoiseGateModel& model, std::span<const double> left,
                  std::span<const double> tag);

enum class Verdict { accept, ask_another };
std::string_view to_string(Verdict verdict);

struct GateDecision {
  Verdict verdict = Verdict::ask_another;
  double score = 0.0;
  std::optional<Vec> accepted;  // t^f, present iff verdict == accept
};

// How negative feedback is scored. `signed_tag` feeds [Q; -t] to the gate
// and accepts when r > α. `complement` scores r = 1 - Θ([Q; t]) instead,
// which is the same as requiring Θ([Q; t]) < 1 - α.
enum class NegativeFeedbackRule { signed_tag, complement };

GateDecision gate_feedback(const NoiseGateModel& model, std::span<const double> query,
                           std::span<const double> tag, Feedback feedback, double alpha,
                           NegativeFeedbackRule rule = NegativeFeedbackRule::signed_tag);

/// One (left, positive tag, negative tags) group of the BCE objective.
struct GateGroup {
  std::span<const double> left;
  std::span<const double> positive;
  std::vector<std::span<const double>> negatives;
};

struct GateLoss {
  double loss = 0.0;
  NoiseGateModel gradient;  // same shape as the model
};

// L_NR = -(1/|P|) Σ [log Θ(p,t^p) + (1/|T^n|) Σ log(1 - Θ(p,t^n))]
GateLoss loss_nr(const NoiseGateModel& model, std::span<const GateGroup> batch);

struct GateTrainConfig {
  std::size_t epochs = 100;
  double learning_rate = 0.1;
  std::size_t tag_negatives = 5;
  std::size_t batch_size = 16;
  std::size_t hidden = 0;  // 0: same as the embedding dimension
  std::uint64_t seed = 7;
  double alpha = 0.5;
  double clip_norm = 5.0;
  // Additionally train on (query, tag of a positive question) pairs.
  bool include_queries = false;
};

// Trains the gate on fixed representations from `model`. Throws cqr::Error
// on an empty corpus.
NoiseGateModel train_noise_gate(const TrainedModel& model, const Corpus& corpus,
                                const GateTrainConfig& config,
                                std::span<const QueryRecord> queries = {});

void save_gate(const NoiseGateModel& gate, const std::filesystem::path& path);
NoiseGateModel load_gate(const std::filesystem::path& path);
std::string gate_to_json(const NoiseGateModel& gate);
NoiseGateModel gate_from_json(const std::string& text);

}  // namespace cqr
