#include "cqr/cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "cqr/bm25.hpp"
#include "cqr/conversation.hpp"
#include "cqr/corpus.hpp"
#include "cqr/embedding.hpp"
#include "cqr/error.hpp"
#include "cqr/noise_gate.hpp"
#include "cqr/service.hpp"
#include "cqr/simulation.hpp"
#include "cqr/toy_corpus.hpp"
#include "cqr/trainer.hpp"

namespace fs = std::filesystem;

namespace cqr {
namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw Error("input file not found: " + path);
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::string env_name(const std::string& flag) {
  std::string name = "CQR_";
  for (char c : flag) name += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return name;
}

// Every long flag also reads CQR_<FLAG>, e.g. --max-rounds from CQR_MAX_ROUNDS.
void mirror_env(CLI::App& app) {
  for (CLI::Option* opt : app.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help") continue;
    opt->envname(env_name(names.front()));
  }
  for (CLI::App* sub : app.get_subcommands({})) mirror_env(*sub);
}

Corpus load_corpus(const std::string& path) {
  require_file(path);
  return ingest_questions(path).corpus;
}

std::vector<QueryRecord> load_queries(const std::string& path, const Corpus& corpus,
                                      std::size_t k = 20) {
  require_file(path);
  const auto index = Bm25Index::build(corpus);
  return ingest_queries(path, corpus, &index, k);
}

TrainedModel load_model_file(const std::string& path) {
  require_file(path);
  return load_model(path);
}

std::optional<NoiseGateModel> load_gate_file(const std::string& path) {
  if (path.empty()) return std::nullopt;
  require_file(path);
  return load_gate(path);
}

std::string corpus_path_for(const std::string& given, const TrainedModel& model) {
  if (!given.empty()) return given;
  if (model.questions_path.empty())
    throw Error("no question file given and the model does not record one; pass --questions");
  return model.questions_path;
}

NegativeFeedbackRule parse_rule(const std::string& name) {
  if (name == "signed") return NegativeFeedbackRule::signed_tag;
  if (name == "complement") return NegativeFeedbackRule::complement;
  throw Error("unknown negative feedback rule '" + name + "'");
}

struct Cli {
  Cli(std::ostream& o, std::ostream& e) : out(o), err(e) {}

  std::ostream& out;
  std::ostream& err;
  std::function<int()> action;

  // generate-toy
  std::string toy_dir;
  ToyCorpusConfig toy;

  // shared inputs
  std::string questions;
  std::string queries;
  std::string model_path;
  std::string gate_path;
  std::string out_path;

  // ingest
  std::size_t k = 20;
  double train_fraction = 0.7;
  std::uint64_t split_seed = 7;
  std::string out_dir;

  // embedding
  HashEmbedderConfig hash;
  std::string vectors;
  std::vector<std::string> encode_queries;

  // train / train-gate
  TrainConfig train;
  GateTrainConfig gate_train;

  // evaluate / simulate / serve
  ExperimentOptions experiment;
  std::string policy = "gbs";
  std::string rule = "signed";
  bool no_gate = false;
  std::string csv_path;
  std::string query_id;
  std::string host = "127.0.0.1";
  int port = 8080;
  ServiceConfig service;

  int generate_toy() {
    const auto data = generate_toy_corpus(toy);
    fs::create_directories(toy_dir);
    write_questions(data.corpus, fs::path(toy_dir) / "questions.jsonl");
    write_queries(data.queries, fs::path(toy_dir) / "queries.jsonl");
    out << "wrote " << data.corpus.size() << " questions, " << data.corpus.tags().size()
        << " tags, " << data.queries.size() << " queries to " << toy_dir << '\n';
    return 0;
  }

  int ingest() {
    require_file(questions);
    const auto ingested = ingest_questions(questions);
    const auto all = load_queries(queries, ingested.corpus, k);
    const auto split = split_dataset(all, train_fraction, split_seed);
    fs::create_directories(out_dir);
    write_questions(ingested.corpus, fs::path(out_dir) / "questions.jsonl");
    write_queries(split.train, fs::path(out_dir) / "train.jsonl");
    write_queries(split.test, fs::path(out_dir) / "test.jsonl");
    out << "ingested " << ingested.count << " questions (" << ingested.skipped_tagless
        << " skipped without tags), " << ingested.corpus.tags().size() << " tags, " << all.size()
        << " queries: " << split.train.size() << " train, " << split.test.size() << " test\n";
    return 0;
  }

  std::vector<QueryRecord> queries_for_encoding(const Corpus& corpus) {
    std::vector<QueryRecord> all;
    if (!queries.empty()) all = load_queries(queries, corpus);
    for (const auto& path : encode_queries) {
      auto more = load_queries(path, corpus);
      all.insert(all.end(), more.begin(), more.end());
    }
    return all;
  }

  EmbeddingTable initial_embeddings(const Corpus& corpus, std::span<const QueryRecord> qs) {
    if (vectors.empty()) return encode_corpus(corpus, qs, hash);
    require_file(vectors);
    return encode_corpus(corpus, qs, load_embeddings(vectors, 0, false));
  }

  int embed() {
    const auto corpus = load_corpus(questions);
    const auto qs = queries_for_encoding(corpus);
    const auto table = initial_embeddings(corpus, qs);
    ensure_parent(out_path);
    save_embeddings(table, out_path);
    out << "wrote " << table.size() << " vectors of dimension " << table.dim() << " to "
        << out_path << '\n';
    return 0;
  }

  int run_train() {
    const auto corpus = load_corpus(questions);
    const auto train_queries = load_queries(queries, corpus);
    auto qs = train_queries;
    for (const auto& path : encode_queries) {
      auto more = load_queries(path, corpus);
      qs.insert(qs.end(), more.begin(), more.end());
    }
    auto model = train_offline(corpus, train_queries, initial_embeddings(corpus, qs), train);
    if (vectors.empty()) model.embedder = hash;
    model.questions_path = fs::absolute(questions).string();
    ensure_parent(out_path);
    save_model(model, out_path);
    for (const auto& e : model.history) {
      out << "epoch " << e.epoch << ' ' << to_string(e.stage) << " lr " << e.learning_rate;
      if (e.stage != TrainStage::tag_question) out << " L_QQ " << e.mean_qq;
      if (e.stage != TrainStage::query_question) out << " L_TQ " << e.mean_tq;
      out << '\n';
    }
    out << "wrote " << out_path << '\n';
    return 0;
  }

  int run_train_gate() {
    const auto model = load_model_file(model_path);
    const auto corpus = load_corpus(corpus_path_for(questions, model));
    std::vector<QueryRecord> qs;
    if (!queries.empty()) qs = load_queries(queries, corpus);
    const auto gate = train_noise_gate(model, corpus, gate_train, qs);
    ensure_parent(out_path);
    save_gate(gate, out_path);
    out << "wrote " << out_path << " (dim " << gate.dim << ", hidden " << gate.hidden
        << ", alpha " << gate.alpha << ")\n";
    return 0;
  }

  void finish_experiment_options() {
    experiment.policy = parse_policy(policy);
    experiment.session.negative_rule = parse_rule(rule);
    if (no_gate) experiment.session.gate_enabled = false;
  }

  int evaluate() {
    const auto model = load_model_file(model_path);
    const auto gate = load_gate_file(gate_path);
    const auto corpus = load_corpus(corpus_path_for(questions, model));
    const auto qs = load_queries(queries, corpus);
    finish_experiment_options();
    if (!gate) experiment.session.gate_enabled = false;
    const auto report = run_experiment(model, gate ? &*gate : nullptr, corpus, qs, experiment);
    ensure_parent(out_path);
    if (csv_path.empty()) csv_path = fs::path(out_path).replace_extension(".csv").string();
    save_report(report, out_path, csv_path);
    out << report_to_csv(report);
    return 0;
  }

  int simulate() {
    const auto model = load_model_file(model_path);
    const auto gate = load_gate_file(gate_path);
    const auto corpus = load_corpus(corpus_path_for(questions, model));
    const auto qs = load_queries(queries, corpus);
    finish_experiment_options();
    if (!gate) experiment.session.gate_enabled = false;
    const QueryRecord* query = qs.empty() ? nullptr : &qs.front();
    if (!query_id.empty()) {
      query = nullptr;
      for (const auto& q : qs)
        if (q.id == query_id) query = &q;
      if (!query) throw UnknownIdError("query", query_id);
    }
    if (!query) throw Error("no queries in " + queries);
    const ConversationEngine engine(model, corpus, gate ? &*gate : nullptr, experiment.session);
    const auto result = simulate_conversation(engine, *query, experiment);
    std::ofstream file;
    if (!out_path.empty()) {
      ensure_parent(out_path);
      file.open(out_path);
      if (!file) throw Error("cannot write '" + out_path + "'");
    }
    std::ostream& sink = out_path.empty() ? out : file;
    for (const auto& entry : result.transcript) sink << transcript_entry_to_json(entry) << '\n';
    return 0;
  }

  int serve() {
    const auto model = load_model_file(model_path);
    const auto gate = load_gate_file(gate_path);
    const auto corpus = load_corpus(corpus_path_for(questions, model));
    std::vector<QueryRecord> qs;
    if (!queries.empty()) qs = load_queries(queries, corpus, service.candidate_k);
    service.session.negative_rule = parse_rule(rule);
    if (no_gate || !gate) service.session.gate_enabled = false;
    SessionService sessions(model, gate ? &*gate : nullptr, corpus, std::move(qs), service);
    HttpServer server(sessions);
    const int bound = server.bind(host, port);
    out << "listening on http://" << host << ':' << bound << std::endl;
    g_stop = false;
    auto previous_int = std::signal(SIGINT, on_signal);
    auto previous_term = std::signal(SIGTERM, on_signal);
    server.start();
    auto last_sweep = std::chrono::steady_clock::now();
    while (!g_stop) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
      if (std::chrono::steady_clock::now() - last_sweep > std::chrono::seconds(60)) {
        sessions.expire_idle();
        last_sweep = std::chrono::steady_clock::now();
      }
    }
    server.stop();
    std::signal(SIGINT, previous_int);
    std::signal(SIGTERM, previous_term);
    out << "stopped\n";
    return 0;
  }
};

void add_experiment_flags(CLI::App& sub, Cli& c) {
  sub.add_option("--model", c.model_path, "Trained model checkpoint (model.json)")->required();
  sub.add_option("--gate", c.gate_path, "Noise gate checkpoint (gate.json); omit to disable the gate");
  sub.add_option("--queries", c.queries, "Query file (queries.jsonl)")->required();
  sub.add_option("--questions", c.questions, "Question file; defaults to the one recorded in the model");
  sub.add_option("--rounds", c.experiment.rounds, "Clarifying questions per query")->capture_default_str();
  sub.add_option("--noise", c.experiment.simulator.noise_rate, "Probability of a flipped answer")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sub.add_option("--seed", c.experiment.simulator.seed, "Simulator seed")->capture_default_str();
  sub.add_option("--policy", c.policy, "Tag selection policy")
      ->check(CLI::IsMember({"gbs", "random"}))
      ->capture_default_str();
  sub.add_option("--alpha", c.experiment.session.alpha, "Gate acceptance threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sub.add_option("--negative-rule", c.rule, "How the gate scores a 'no' answer")
      ->check(CLI::IsMember({"signed", "complement"}))
      ->capture_default_str();
  sub.add_flag("--no-gate", c.no_gate, "Accept every answer");
  sub.add_flag("!--no-positive", c.experiment.session.use_positive, "Drop positive feedback");
  sub.add_flag("!--no-negative", c.experiment.session.use_negative, "Drop negative feedback");
}

void add_hash_flags(CLI::App& sub, Cli& c) {
  sub.add_option("--dim", c.hash.dim, "Hashing embedder dimension")->check(CLI::PositiveNumber)->capture_default_str();
  sub.add_option("--hash-seed", c.hash.seed, "Hashing embedder seed")->capture_default_str();
  sub.add_option("--ngram", c.hash.ngram, "Highest token n-gram order hashed")
      ->check(CLI::Range(1, 8))
      ->capture_default_str();
  sub.add_option("--vectors", c.vectors, "Precomputed embeddings (embeddings.jsonl) instead of hashing");
  sub.add_option("--encode-queries", c.encode_queries,
                 "Further query files whose vectors are stored alongside");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Cli c(out, err);
  CLI::App app{"Conversational question retrieval with clarifying questions", "cqr"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  auto* toy = app.add_subcommand("generate-toy", "Write the synthetic toy corpus");
  toy->add_option("--out-dir", c.toy_dir, "Output directory")->required();
  toy->add_option("--clusters", c.toy.clusters, "Question clusters")->capture_default_str();
  toy->add_option("--per-cluster", c.toy.questions_per_cluster, "Questions per cluster")->capture_default_str();
  toy->add_option("--num-queries", c.toy.queries, "Queries")->capture_default_str();
  toy->add_option("--candidates", c.toy.candidates, "Candidates per query")->capture_default_str();
  toy->add_option("--seed", c.toy.seed, "Generator seed")->capture_default_str();
  toy->callback([&] { c.action = [&] { return c.generate_toy(); }; });

  auto* ingest = app.add_subcommand("ingest", "Validate questions and queries and split queries");
  ingest->add_option("--questions", c.questions, "questions.jsonl")->required();
  ingest->add_option("--queries", c.queries, "queries.jsonl")->required();
  ingest->add_option("--k", c.k, "BM25 candidates for queries without a candidate list")->capture_default_str();
  ingest->add_option("--train-fraction", c.train_fraction, "Share of queries used for training")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  ingest->add_option("--split-seed", c.split_seed, "Shuffle seed")->capture_default_str();
  ingest->add_option("--out-dir", c.out_dir, "Writes questions.jsonl, train.jsonl, test.jsonl")->required();
  ingest->callback([&] { c.action = [&] { return c.ingest(); }; });

  auto* embed = app.add_subcommand("embed", "Encode queries, questions and tags");
  embed->add_option("--questions", c.questions, "questions.jsonl")->required();
  embed->add_option("--queries", c.queries, "queries.jsonl");
  add_hash_flags(*embed, c);
  embed->add_option("--out", c.out_path, "embeddings.jsonl")->required();
  embed->callback([&] { c.action = [&] { return c.embed(); }; });

  auto* train = app.add_subcommand("train", "Offline training of embeddings and fusion weights");
  train->add_option("--questions", c.questions, "questions.jsonl")->required();
  train->add_option("--queries", c.queries, "Training queries")->required();
  add_hash_flags(*train, c);
  train->add_option("--epochs", c.train.epochs, "Epochs")->capture_default_str();
  train->add_option("--lr", c.train.learning_rate, "Initial learning rate")->capture_default_str();
  train->add_option("--batch-size", c.train.batch_size, "Examples per step")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--question-negatives", c.train.question_negatives, "Negative questions per example")->capture_default_str();
  train->add_option("--tag-negatives", c.train.tag_negatives, "Negative tags per question")->capture_default_str();
  train->add_option("--rounds-per-example", c.train.rounds_per_example, "Simulated feedback rounds per query")->capture_default_str();
  train->add_option("--seed", c.train.seed, "Training seed")->capture_default_str();
  train->add_option("--clip-norm", c.train.clip_norm, "Gradient norm clip, 0 disables")->capture_default_str();
  train->add_flag("--diagonal", c.train.diagonal_weights, "Per-dimension fusion weights");
  train->add_flag("--freeze-embeddings", c.train.freeze_embeddings, "Train the fusion weights only");
  train->add_flag("--disable-qq", c.train.disable_qq, "Skip the query-question loss");
  train->add_flag("--disable-tq", c.train.disable_tq, "Skip the tag-question loss");
  train->add_flag("--disable-als", c.train.disable_als, "Optimize both losses jointly");
  train->add_option("--out", c.out_path, "model.json")->required();
  train->callback([&] { c.action = [&] { return c.run_train(); }; });

  auto* gate = app.add_subcommand("train-gate", "Train the noise tolerance gate");
  gate->add_option("--model", c.model_path, "model.json")->required();
  gate->add_option("--questions", c.questions, "Question file; defaults to the one recorded in the model");
  gate->add_option("--queries", c.queries, "Also train on (query, positive tag) pairs from this file");
  gate->add_option("--epochs", c.gate_train.epochs, "Epochs")->capture_default_str();
  gate->add_option("--lr", c.gate_train.learning_rate, "Initial learning rate")->capture_default_str();
  gate->add_option("--batch-size", c.gate_train.batch_size, "Questions per step")->check(CLI::PositiveNumber)->capture_default_str();
  gate->add_option("--tag-negatives", c.gate_train.tag_negatives, "Negative tags per question")->capture_default_str();
  gate->add_option("--hidden", c.gate_train.hidden, "Hidden units, 0 uses the embedding dimension")->capture_default_str();
  gate->add_option("--seed", c.gate_train.seed, "Initialization and sampling seed")->capture_default_str();
  gate->add_option("--alpha", c.gate_train.alpha, "Threshold stored in the checkpoint")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  gate->add_option("--out", c.out_path, "gate.json")->required();
  gate->callback([&] {
    c.gate_train.include_queries = !c.queries.empty();
    c.action = [&] { return c.run_train_gate(); };
  });

  auto* evaluate = app.add_subcommand("evaluate", "Simulated conversations over a query set");
  add_experiment_flags(*evaluate, c);
  evaluate->add_option("--threads", c.experiment.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  evaluate->add_option("--out", c.out_path, "report.json")->required();
  evaluate->add_option("--csv", c.csv_path, "CSV report; defaults to the report path with .csv");
  evaluate->callback([&] { c.action = [&] { return c.evaluate(); }; });

  auto* simulate = app.add_subcommand("simulate", "Print the transcript of one simulated conversation");
  add_experiment_flags(*simulate, c);
  simulate->add_option("--query-id", c.query_id, "Query to simulate; defaults to the first");
  simulate->add_option("--out", c.out_path, "Write JSON lines here instead of stdout");
  simulate->callback([&] { c.action = [&] { return c.simulate(); }; });

  auto* serve = app.add_subcommand("serve", "HTTP session service");
  serve->add_option("--model", c.model_path, "model.json")->required();
  serve->add_option("--gate", c.gate_path, "gate.json; omit to accept every answer");
  serve->add_option("--corpus", c.questions, "Question file; defaults to the one recorded in the model");
  serve->add_option("--queries", c.queries, "Queries addressable by query_id");
  serve->add_option("--host", c.host, "Bind address")->capture_default_str();
  serve->add_option("--port", c.port, "Port, 0 picks a free one")->check(CLI::Range(0, 65535))->capture_default_str();
  serve->add_option("--alpha", c.service.session.alpha, "Gate acceptance threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  serve->add_option("--max-rounds", c.service.max_rounds, "Default clarifying questions per session")->capture_default_str();
  serve->add_option("--top-n", c.service.top_n, "Ranked candidates returned")->capture_default_str();
  serve->add_option("--k", c.service.candidate_k, "BM25 candidates for free-text queries")->capture_default_str();
  serve->add_option("--negative-rule", c.rule, "How the gate scores a 'no' answer")
      ->check(CLI::IsMember({"signed", "complement"}))
      ->capture_default_str();
  serve->add_flag("--no-gate", c.no_gate, "Accept every answer");
  serve->callback([&] { c.action = [&] { return c.serve(); }; });

  mirror_env(app);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    return c.action();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace cqr
