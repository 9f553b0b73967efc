#include "cqr/noise_gate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "cqr/error.hpp"

namespace cqr {

using nlohmann::json;

std::string_view to_string(Verdict verdict) {
  return verdict == Verdict::accept ? "accept" : "ask_another";
}

NoiseGateModel NoiseGateModel::zeros(std::size_t dim, std::size_t hidden) {
  if (dim == 0 || hidden == 0) throw std::invalid_argument("gate dimensions must be positive");
  NoiseGateModel m;
  m.dim = dim;
  m.hidden = hidden;
  m.w1.assign(hidden * 2 * dim, 0.0);
  m.b1.assign(hidden, 0.0);
  m.w2.assign(hidden, 0.0);
  return m;
}

NoiseGateModel NoiseGateModel::random(std::size_t dim, std::size_t hidden, std::uint64_t seed) {
  NoiseGateModel m = zeros(dim, hidden);
  std::mt19937_64 rng(seed);
  const double a1 = std::sqrt(6.0 / static_cast<double>(2 * dim + hidden));
  const double a2 = std::sqrt(6.0 / static_cast<double>(hidden + 1));
  std::uniform_real_distribution<double> u1(-a1, a1);
  std::uniform_real_distribution<double> u2(-a2, a2);
  for (double& w : m.w1) w = u1(rng);
  for (double& w : m.w2) w = u2(rng);
  return m;
}

namespace {

void check_inputs(const NoiseGateModel& m, std::span<const double> left,
                  std::span<const double> tag) {
  if (left.size() != m.dim) throw DimensionError(m.dim, left.size(), "gate left input");
  if (tag.size() != m.dim) throw DimensionError(m.dim, tag.size(), "gate tag input");
}

// Pre-activations of the hidden layer.
Vec hidden_pre(const NoiseGateModel& m, std::span<const double> left,
               std::span<const double> tag) {
  Vec a(m.b1);
  const std::size_t width = m.input_width();
  for (std::size_t h = 0; h < m.hidden; ++h) {
    const double* row = m.w1.data() + h * width;
    double s = 0.0;
    for (std::size_t i = 0; i < m.dim; ++i) s += row[i] * left[i];
    for (std::size_t i = 0; i < m.dim; ++i) s += row[m.dim + i] * tag[i];
    a[h] += s;
  }
  return a;
}

double output_logit(const NoiseGateModel& m, const Vec& pre) {
  double z = m.b2;
  for (std::size_t h = 0; h < m.hidden; ++h) z += m.w2[h] * std::max(pre[h], 0.0);
  return z;
}

// Adds dz * ∂z/∂θ for one input into `grad`.
void backprop(const NoiseGateModel& m, std::span<const double> left, std::span<const double> tag,
              const Vec& pre, double dz, NoiseGateModel& grad) {
  grad.b2 += dz;
  const std::size_t width = m.input_width();
  for (std::size_t h = 0; h < m.hidden; ++h) {
    if (pre[h] <= 0.0) continue;
    grad.w2[h] += dz * pre[h];
    const double da = dz * m.w2[h];
    grad.b1[h] += da;
    double* row = grad.w1.data() + h * width;
    for (std::size_t i = 0; i < m.dim; ++i) row[i] += da * left[i];
    for (std::size_t i = 0; i < m.dim; ++i) row[m.dim + i] += da * tag[i];
  }
}

}  // namespace

double gate_logit(const NoiseGateModel& model, std::span<const double> left,
                  std::span<const double> tag) {
  check_inputs(model, left, tag);
  return output_logit(model, hidden_pre(model, left, tag));
}

double gate_score(const NoiseGateModel& model, std::span<const double> left,
                  std::span<const double> tag) {
  return sigmoid(gate_logit(model, left, tag));
}

GateDecision gate_feedback(const NoiseGateModel& model, std::span<const double> query,
                           std::span<const double> tag, Feedback feedback, double alpha,
                           NegativeFeedbackRule rule) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  Vec signed_tag = feedback == Feedback::positive ? Vec(tag.begin(), tag.end()) : negate_tag(tag);
  GateDecision d;
  if (feedback == Feedback::negative && rule == NegativeFeedbackRule::complement) {
    d.score = 1.0 - gate_score(model, query, tag);
  } else {
    d.score = gate_score(model, query, signed_tag);
  }
  if (d.score > alpha) {
    d.verdict = Verdict::accept;
    d.accepted = std::move(signed_tag);
  }
  return d;
}

GateLoss loss_nr(const NoiseGateModel& model, std::span<const GateGroup> batch) {
  if (batch.empty()) throw std::invalid_argument("loss_nr: empty batch");
  GateLoss r;
  r.gradient = NoiseGateModel::zeros(model.dim, model.hidden);
  const double inv_p = 1.0 / static_cast<double>(batch.size());
  for (const auto& g : batch) {
    check_inputs(model, g.left, g.positive);
    const Vec pre_pos = hidden_pre(model, g.left, g.positive);
    const double z_pos = output_logit(model, pre_pos);
    r.loss -= inv_p * log_sigmoid(z_pos);
    backprop(model, g.left, g.positive, pre_pos, inv_p * (sigmoid(z_pos) - 1.0), r.gradient);
    if (g.negatives.empty()) continue;
    const double inv_n = 1.0 / static_cast<double>(g.negatives.size());
    for (const auto& t : g.negatives) {
      check_inputs(model, g.left, t);
      const Vec pre = hidden_pre(model, g.left, t);
      const double z = output_logit(model, pre);
      r.loss -= inv_p * inv_n * log_one_minus_sigmoid(z);
      backprop(model, g.left, t, pre, inv_p * inv_n * sigmoid(z), r.gradient);
    }
  }
  r.gradient.alpha = 0.0;
  return r;
}

namespace {

double gradient_norm(const NoiseGateModel& g) {
  double sq = g.b2 * g.b2;
  for (const Vec* v : {&g.w1, &g.b1, &g.w2})
    for (double x : *v) sq += x * x;
  return std::sqrt(sq);
}

void apply_update(NoiseGateModel& m, const NoiseGateModel& g, double step) {
  for (const Vec* v : {&g.w1, &g.b1, &g.w2})
    if (!all_finite(*v)) throw Error("non-finite gradient in noise gate training");
  if (!std::isfinite(g.b2)) throw Error("non-finite gradient in noise gate training");
  axpy(-step, g.w1, m.w1);
  axpy(-step, g.b1, m.b1);
  axpy(-step, g.w2, m.w2);
  m.b2 -= step * g.b2;
}

struct GateExample {
  Space left_space;
  std::string left_id;
  TagId positive;
  std::vector<TagId> negatives;
};

}  // namespace

NoiseGateModel train_noise_gate(const TrainedModel& model, const Corpus& corpus,
                                const GateTrainConfig& config,
                                std::span<const QueryRecord> queries) {
  if (corpus.empty()) throw Error("cannot train the noise gate on an empty corpus");
  if (config.tag_negatives < 1) throw std::invalid_argument("tag negatives must be >= 1");
  if (config.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  const auto& emb = model.embeddings;
  const std::size_t hidden = config.hidden == 0 ? emb.dim() : config.hidden;
  NoiseGateModel gate = NoiseGateModel::random(emb.dim(), hidden, config.seed);
  gate.alpha = config.alpha;
  if (config.epochs == 0) return gate;

  const auto tags = corpus.tags().tags();
  std::mt19937_64 rng(config.seed ^ 0x5bd1e995ULL);

  auto negatives_for = [&](const std::vector<TagId>& own) {
    std::vector<TagId> out;
    const std::size_t eligible = tags.size() - own.size();
    if (eligible == 0) return out;
    const std::size_t k = std::min(config.tag_negatives, eligible);
    std::unordered_set<std::size_t> chosen;
    std::uniform_int_distribution<std::size_t> pick(0, tags.size() - 1);
    while (out.size() < k) {
      const std::size_t i = pick(rng);
      if (std::binary_search(own.begin(), own.end(), tags[i]) || !chosen.insert(i).second) continue;
      out.push_back(tags[i]);
    }
    return out;
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config.epochs, config.learning_rate);
    std::vector<GateExample> examples;
    for (const auto& q : corpus.questions()) {
      std::uniform_int_distribution<std::size_t> pick(0, q.tags.size() - 1);
      examples.push_back({Space::question, q.id, q.tags[pick(rng)], negatives_for(q.tags)});
    }
    if (config.include_queries) {
      for (const auto& q : queries) {
        std::vector<TagId> own;
        for (const auto& p : q.positives)
          for (const auto& t : corpus.question(p).tags) own.push_back(t);
        std::sort(own.begin(), own.end());
        own.erase(std::unique(own.begin(), own.end()), own.end());
        std::uniform_int_distribution<std::size_t> pick(0, own.size() - 1);
        examples.push_back({Space::query, q.id, own[pick(rng)], negatives_for(own)});
      }
    }
    std::shuffle(examples.begin(), examples.end(), rng);

    for (std::size_t start = 0; start < examples.size(); start += config.batch_size) {
      const std::size_t end = std::min(examples.size(), start + config.batch_size);
      std::vector<GateGroup> batch;
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = examples[i];
        GateGroup g{emb.at(ex.left_space, ex.left_id), emb.at(Space::tag, ex.positive), {}};
        for (const auto& t : ex.negatives) g.negatives.push_back(emb.at(Space::tag, t));
        batch.push_back(std::move(g));
      }
      GateLoss l = loss_nr(gate, batch);
      double step = lr;
      if (config.clip_norm > 0.0) {
        const double n = gradient_norm(l.gradient);
        if (n > config.clip_norm) step *= config.clip_norm / n;
      }
      apply_update(gate, l.gradient, step);
    }
  }
  return gate;
}

std::string gate_to_json(const NoiseGateModel& gate) {
  json rows = json::array();
  const std::size_t width = gate.input_width();
  for (std::size_t h = 0; h < gate.hidden; ++h)
    rows.push_back(Vec(gate.w1.begin() + static_cast<std::ptrdiff_t>(h * width),
                       gate.w1.begin() + static_cast<std::ptrdiff_t>((h + 1) * width)));
  json j = {{"dim", gate.dim}, {"hidden", gate.hidden}, {"W1", rows}, {"b1", gate.b1},
            {"w2", gate.w2},   {"b2", gate.b2},         {"alpha", gate.alpha}};
  return j.dump();
}

NoiseGateModel gate_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    NoiseGateModel g = NoiseGateModel::zeros(j.at("dim").get<std::size_t>(),
                                             j.at("hidden").get<std::size_t>());
    const auto& rows = j.at("W1");
    if (rows.size() != g.hidden) throw DimensionError(g.hidden, rows.size(), "W1 rows");
    g.w1.clear();
    for (const auto& row : rows) {
      const auto r = row.get<Vec>();
      if (r.size() != g.input_width()) throw DimensionError(g.input_width(), r.size(), "W1 row");
      g.w1.insert(g.w1.end(), r.begin(), r.end());
    }
    g.b1 = j.at("b1").get<Vec>();
    g.w2 = j.at("w2").get<Vec>();
    if (g.b1.size() != g.hidden) throw DimensionError(g.hidden, g.b1.size(), "b1");
    if (g.w2.size() != g.hidden) throw DimensionError(g.hidden, g.w2.size(), "w2");
    g.b2 = j.at("b2").get<double>();
    g.alpha = j.value("alpha", 0.5);
    return g;
  } catch (const json::exception& e) {
    throw ParseError("gate.json", 0, e.what());
  }
}

void save_gate(const NoiseGateModel& gate, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << gate_to_json(gate) << '\n';
}

NoiseGateModel load_gate(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return gate_from_json(ss.str());
}

}  // namespace cqr
