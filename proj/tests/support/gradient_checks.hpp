#pragma once

// Finite-difference checks of the three training objectives on random small
// instances (d = 4, 3 samples). Each returns the largest per-block relative
// error between the analytic gradient and central differences.

#include <algorithm>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "cqr/noise_gate.hpp"
#include "cqr/trainer.hpp"
#include "oracles.hpp"

namespace gradcheck {

inline constexpr std::size_t kDim = 4;
inline constexpr std::size_t kSamples = 3;
inline constexpr std::size_t kNegatives = 2;
inline constexpr double kStep = 1e-5;

using Block = std::vector<double>;

struct Rng {
  std::mt19937_64 engine;
  explicit Rng(std::uint64_t seed) : engine(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine); }
  Block vec(std::size_t n, double lo = -1.0, double hi = 1.0) {
    Block v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }
};

// Checks `grads[b]` against differences of `loss` in block b, with the other
// blocks held at their values.
inline double worst_block_error(std::vector<Block> blocks, const std::vector<Block>& grads,
                                const std::function<double(const std::vector<Block>&)>& loss) {
  double worst = 0.0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto f = [&](const std::vector<double>& x) {
      auto copy = blocks;
      copy[b] = x;
      return loss(copy);
    };
    const auto numeric = oracle::central_difference(f, blocks[b], kStep);
    worst = std::max(worst, oracle::relative_error(grads[b], numeric));
  }
  return worst;
}

inline cqr::FusionWeight weight_from(const Block& b) {
  if (b.size() == 1) return cqr::FusionWeight(b[0]);
  auto w = cqr::FusionWeight::diagonal(b.size());
  w.values() = b;
  return w;
}

// Blocks per sample: query, tag, positive, negatives...; then W_Q, W_t.
inline double qq_error(std::uint64_t seed, bool diagonal) {
  Rng rng(seed);
  const std::size_t per = 3 + kNegatives;
  std::vector<Block> blocks;
  std::vector<cqr::Feedback> feedback;
  for (std::size_t s = 0; s < kSamples; ++s) {
    for (std::size_t j = 0; j < per; ++j) blocks.push_back(rng.vec(kDim));
    feedback.push_back(rng.uniform(0, 1) < 0.5 ? cqr::Feedback::positive : cqr::Feedback::negative);
  }
  const std::size_t wn = diagonal ? kDim : 1;
  blocks.push_back(rng.vec(wn, 0.5, 1.5));
  blocks.push_back(rng.vec(wn, 0.5, 1.5));

  auto evaluate = [&](const std::vector<Block>& x) {
    std::vector<cqr::QqSample> batch;
    for (std::size_t s = 0; s < kSamples; ++s) {
      const std::size_t o = s * per;
      cqr::QqSample q{x[o], x[o + 1], feedback[s], x[o + 2], {}};
      for (std::size_t j = 0; j < kNegatives; ++j) q.negatives.push_back(x[o + 3 + j]);
      batch.push_back(std::move(q));
    }
    return cqr::loss_qq(batch, weight_from(x[x.size() - 2]), weight_from(x[x.size() - 1]));
  };
  const auto r = evaluate(blocks);
  std::vector<Block> grads;
  for (std::size_t s = 0; s < kSamples; ++s) {
    grads.push_back(r.d_query[s]);
    grads.push_back(r.d_tag[s]);
    grads.push_back(r.d_positive[s]);
    for (std::size_t j = 0; j < kNegatives; ++j) grads.push_back(r.d_negatives[s][j]);
  }
  grads.push_back(r.d_query_weight);
  grads.push_back(r.d_tag_weight);
  return worst_block_error(blocks, grads, [&](const std::vector<Block>& x) { return evaluate(x).loss; });
}

// Blocks per sample: question, positive tag, negative tags...; then W_p. A
// tagless sample rides along to check it contributes nothing.
inline double tq_error(std::uint64_t seed, bool diagonal) {
  Rng rng(seed);
  const std::size_t per = 2 + kNegatives;
  std::vector<Block> blocks;
  for (std::size_t s = 0; s < kSamples; ++s)
    for (std::size_t j = 0; j < per; ++j) blocks.push_back(rng.vec(kDim));
  blocks.push_back(rng.vec(diagonal ? kDim : 1, 0.5, 1.5));
  const Block tagless = rng.vec(kDim);

  auto evaluate = [&](const std::vector<Block>& x) {
    std::vector<cqr::TqSample> batch;
    for (std::size_t s = 0; s < kSamples; ++s) {
      const std::size_t o = s * per;
      cqr::TqSample t{x[o], x[o + 1], {}};
      for (std::size_t j = 0; j < kNegatives; ++j) t.negative_tags.push_back(x[o + 2 + j]);
      batch.push_back(std::move(t));
    }
    batch.push_back(cqr::TqSample{tagless, {}, {}});
    return cqr::loss_tq(batch, weight_from(x.back()));
  };
  const auto r = evaluate(blocks);
  std::vector<Block> grads;
  for (std::size_t s = 0; s < kSamples; ++s) {
    grads.push_back(r.d_question[s]);
    grads.push_back(r.d_positive_tag[s]);
    for (std::size_t j = 0; j < kNegatives; ++j) grads.push_back(r.d_negative_tags[s][j]);
  }
  grads.push_back(r.d_question_weight);
  return worst_block_error(blocks, grads, [&](const std::vector<Block>& x) { return evaluate(x).loss; });
}

// Blocks: W1, b1, w2, b2 of a random gate with hidden = d.
inline double nr_error(std::uint64_t seed) {
  Rng rng(seed);
  const auto base = cqr::NoiseGateModel::random(kDim, kDim, seed);
  std::vector<Block> inputs;
  for (std::size_t s = 0; s < kSamples; ++s)
    for (std::size_t j = 0; j < 2 + kNegatives; ++j) inputs.push_back(rng.vec(kDim));

  auto model_from = [&](const std::vector<Block>& x) {
    auto m = base;
    m.w1 = x[0];
    m.b1 = x[1];
    m.w2 = x[2];
    m.b2 = x[3][0];
    return m;
  };
  auto evaluate = [&](const std::vector<Block>& x) {
    std::vector<cqr::GateGroup> batch;
    for (std::size_t s = 0; s < kSamples; ++s) {
      const std::size_t o = s * (2 + kNegatives);
      cqr::GateGroup g{inputs[o], inputs[o + 1], {}};
      for (std::size_t j = 0; j < kNegatives; ++j) g.negatives.push_back(inputs[o + 2 + j]);
      batch.push_back(std::move(g));
    }
    return cqr::loss_nr(model_from(x), batch);
  };
  std::vector<Block> blocks = {base.w1, rng.vec(kDim, -0.5, 0.5), base.w2, {rng.uniform(-0.5, 0.5)}};
  const auto r = evaluate(blocks);
  const std::vector<Block> grads = {r.gradient.w1, r.gradient.b1, r.gradient.w2, {r.gradient.b2}};
  return worst_block_error(blocks, grads, [&](const std::vector<Block>& x) { return evaluate(x).loss; });
}

}  // namespace gradcheck
