#include <fstream>
#include <sstream>

#include "cqr/error.hpp"
#include "cqr/trainer.hpp"
#include "json_io.hpp"

namespace cqr {

using nlohmann::json;

namespace {

json weight_to_json(const FusionWeight& w) {
  if (w.is_diagonal()) return w.values();
  return w.values().front();
}

FusionWeight weight_from_json(const json& j) {
  if (j.is_number()) return FusionWeight(j.get<double>());
  FusionWeight w = FusionWeight::diagonal(j.size());
  w.values() = j.get<Vec>();
  return w;
}

json config_to_json(const TrainedModel& model) {
  const auto& c = model.config;
  json j = {{"epochs", c.epochs},
            {"learning_rate", c.learning_rate},
            {"question_negatives", c.question_negatives},
            {"tag_negatives", c.tag_negatives},
            {"batch_size", c.batch_size},
            {"rounds_per_example", c.rounds_per_example},
            {"seed", c.seed},
            {"clip_norm", c.clip_norm},
            {"freeze_embeddings", c.freeze_embeddings},
            {"disable_qq", c.disable_qq},
            {"disable_tq", c.disable_tq},
            {"disable_als", c.disable_als},
            {"diagonal_weights", c.diagonal_weights},
            {"questions", model.questions_path}};
  if (model.embedder) {
    j["embedder"] = {{"dim", model.embedder->dim},
                     {"seed", model.embedder->seed},
                     {"ngram", model.embedder->ngram}};
  } else {
    j["embedder"] = nullptr;
  }
  return j;
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

TrainStage parse_stage(const std::string& s) {
  if (s == "query_question") return TrainStage::query_question;
  if (s == "tag_question") return TrainStage::tag_question;
  return TrainStage::joint;
}

}  // namespace

std::string model_to_json(const TrainedModel& model) {
  json history = json::array();
  for (const auto& h : model.history)
    history.push_back({{"epoch", h.epoch},
                       {"stage", to_string(h.stage)},
                       {"learning_rate", h.learning_rate},
                       {"mean_qq", h.mean_qq},
                       {"mean_tq", h.mean_tq},
                       {"skipped_questions", h.skipped_questions}});
  json j = {{"dim", model.embeddings.dim()},
            {"W_Q", weight_to_json(model.weights.query)},
            {"W_t", weight_to_json(model.weights.tag)},
            {"W_p", weight_to_json(model.weights.question)},
            {"config", config_to_json(model)},
            {"history", history},
            {"embeddings", detail::embeddings_to_json(model.embeddings)}};
  return j.dump();
}

TrainedModel model_from_json(const std::string& text, const std::filesystem::path& base_dir) {
  TrainedModel model;
  try {
    const json j = json::parse(text);
    const auto dim = j.at("dim").get<std::size_t>();
    model.weights.query = weight_from_json(j.at("W_Q"));
    model.weights.tag = weight_from_json(j.at("W_t"));
    model.weights.question = weight_from_json(j.at("W_p"));

    // Trained vectors are never re-normalized on load.
    const json& emb = j.at("embeddings");
    if (emb.is_string()) {
      std::filesystem::path p = emb.get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      model.embeddings = load_embeddings(p, dim, /*normalize=*/false);
    } else {
      model.embeddings = detail::embeddings_from_records(emb, dim, false, "model.json");
    }

    if (auto it = j.find("config"); it != j.end()) {
      const json& c = *it;
      auto& cfg = model.config;
      read_opt(c, "epochs", cfg.epochs);
      read_opt(c, "learning_rate", cfg.learning_rate);
      read_opt(c, "question_negatives", cfg.question_negatives);
      read_opt(c, "tag_negatives", cfg.tag_negatives);
      read_opt(c, "batch_size", cfg.batch_size);
      read_opt(c, "rounds_per_example", cfg.rounds_per_example);
      read_opt(c, "seed", cfg.seed);
      read_opt(c, "clip_norm", cfg.clip_norm);
      read_opt(c, "freeze_embeddings", cfg.freeze_embeddings);
      read_opt(c, "disable_qq", cfg.disable_qq);
      read_opt(c, "disable_tq", cfg.disable_tq);
      read_opt(c, "disable_als", cfg.disable_als);
      read_opt(c, "diagonal_weights", cfg.diagonal_weights);
      read_opt(c, "questions", model.questions_path);
      if (auto e = c.find("embedder"); e != c.end() && e->is_object()) {
        HashEmbedderConfig h;
        read_opt(*e, "dim", h.dim);
        read_opt(*e, "seed", h.seed);
        read_opt(*e, "ngram", h.ngram);
        model.embedder = h;
      }
    }
    if (auto it = j.find("history"); it != j.end()) {
      for (const auto& h : *it) {
        EpochStats s;
        read_opt(h, "epoch", s.epoch);
        s.stage = parse_stage(h.value("stage", std::string("joint")));
        read_opt(h, "learning_rate", s.learning_rate);
        read_opt(h, "mean_qq", s.mean_qq);
        read_opt(h, "mean_tq", s.mean_tq);
        read_opt(h, "skipped_questions", s.skipped_questions);
        model.history.push_back(s);
      }
    }
  } catch (const json::exception& e) {
    throw ParseError("model.json", 0, e.what());
  }
  return model;
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << model_to_json(model) << '\n';
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str(), path.parent_path());
}

}  // namespace cqr
