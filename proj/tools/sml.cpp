// Command-line front end: preprocess, stats, train, evaluate, recommend.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <limits>
#include <optional>
#include <unordered_set>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "sml/baselines.hpp"
#include "sml/data.hpp"
#include "sml/error.hpp"
#include "sml/eval.hpp"
#include "sml/index.hpp"
#include "sml/trainer.hpp"

namespace fs = std::filesystem;
using namespace sml;

namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("SML_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("SML_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  return 42;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

// ------------------------------------------------------------- preprocess

struct PreprocessArgs {
  std::string input, out_dir, format = "auto";
  PreprocessConfig config;
  double test_fraction = 0.1;
};

nlohmann::ordered_json counts(std::size_t events, std::size_t sessions, std::size_t items) {
  return {{"events", events}, {"sessions", sessions}, {"items", items}};
}

void run_preprocess(const PreprocessArgs& a) {
  InputFormat fmt = a.format == "auto" ? format_from_path(a.input) : a.format == "csv" ? InputFormat::Csv
                                                                                       : InputFormat::Jsonl;
  auto raw = ingest(a.input, fmt);
  for (const auto& w : raw.warnings) std::cerr << "warning: " << w << "\n";
  std::unordered_set<std::string> raw_sessions, raw_items;
  for (const auto& e : raw.events) {
    raw_sessions.insert(e.session_id);
    raw_items.insert(e.item_id);
  }
  auto dataset = preprocess(raw.events, a.config);
  auto split = split_train_test(dataset, a.test_fraction);

  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  save_dataset(split.train, dir / "train.jsonl");
  save_dataset(split.test, dir / "test.jsonl");
  save_vocab(dataset.vocab, dir / "vocab.tsv");

  nlohmann::ordered_json summary;
  summary["rows_read"] = raw.rows_read;
  summary["rows_skipped"] = raw.rows_skipped;
  summary["before"] = counts(raw.events.size(), raw_sessions.size(), raw_items.size());
  summary["after"] = counts(dataset.event_count(), dataset.sessions.size(), dataset.vocab.size());
  summary["train"] = counts(split.train.event_count(), split.train.sessions.size(), dataset.vocab.size());
  summary["test"] = counts(split.test.event_count(), split.test.sessions.size(), dataset.vocab.size());
  summary["config"] = {{"min_item_count", a.config.min_item_count},
                       {"min_session_length", a.config.min_session_length},
                       {"max_session_length", a.config.max_session_length},
                       {"test_fraction", a.test_fraction}};
  open_out(dir / "summary.json") << summary.dump(2) << "\n";
  std::cout << summary.dump(2) << "\n";
}

// ------------------------------------------------------------------ stats

struct StatsArgs {
  std::string sessions, vocab, out_prefix;
  std::size_t max_session_length = 15;
};

void run_stats(const StatsArgs& a) {
  auto vocab = load_vocab(a.vocab);
  auto ds = load_dataset(a.sessions, vocab, a.max_session_length);
  auto s = stats(ds);
  if (a.out_prefix.empty()) {
    write_length_histogram_tsv(s, std::cout);
  } else {
    auto h = open_out(a.out_prefix + "lengths.tsv");
    write_length_histogram_tsv(s, h);
    auto r = open_out(a.out_prefix + "repeats.tsv");
    write_repeat_fraction_tsv(s, r);
  }
  double repeat = 0;
  for (const auto& [id, f] : s.repeat_fraction) repeat += f;
  std::cerr << ds.sessions.size() << " sessions, " << ds.event_count() << " events, " << vocab.size()
            << " items, mean repeat fraction "
            << (s.repeat_fraction.empty() ? 0.0 : repeat / static_cast<double>(s.repeat_fraction.size())) << "\n";
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string train, vocab, out, history;
  std::string encoder = "maxpool", loss = "triplet", sampler = "posneg", kld = "target-model";
  ModelConfig model;
  LossConfig loss_cfg;
  SamplerConfig sampler_cfg;
  TrainConfig train_cfg;
  std::uint64_t seed = 0;
  bool quiet = false;
};

std::string model_name(const ModelConfig& m, const LossConfig& l) {
  return "SML-" + std::string(to_string(m.encoder)) + "-" + std::string(to_string(l.kind));
}

void run_train(TrainArgs a) {
  a.model.encoder = parse_encoder_kind(a.encoder);
  a.loss_cfg.kind = parse_loss_kind(a.loss);
  if (a.sampler == "posneg")
    a.sampler_cfg.kind = SamplerKind::PosNeg;
  else if (a.sampler == "sw")
    a.sampler_cfg.kind = SamplerKind::SlidingWindow;
  else
    throw UsageError("unknown sampler '" + a.sampler + "' (expected posneg or sw)");
  if (a.kld == "target-model")
    a.loss_cfg.kld_direction = KldDirection::TargetToModel;
  else if (a.kld == "model-target")
    a.loss_cfg.kld_direction = KldDirection::ModelToTarget;
  else
    throw UsageError("unknown KL direction '" + a.kld + "'");
  a.sampler_cfg.rng_seed = a.seed;

  auto vocab = load_vocab(a.vocab);
  a.model.vocab_size = vocab.size();
  a.model.validate();
  a.loss_cfg.validate();
  a.sampler_cfg.validate();
  a.train_cfg.validate();
  auto ds = load_dataset(a.train, vocab, a.model.max_session_length);

  const auto name = model_name(a.model, a.loss_cfg);
  auto initial = Model::create(a.model, a.seed);
  auto result = train(ds.sessions, initial, a.loss_cfg, a.sampler_cfg, a.train_cfg, [&](const EpochRecord& r) {
    if (!a.quiet)
      std::cerr << "epoch " << r.epoch << "  loss " << r.train_loss << "  val REC@" << a.train_cfg.validation_cutoff
                << " " << r.val_rec << "  lr " << r.lr << "\n";
  });
  save_model(a.out, result.model, vocab, name);
  if (!a.history.empty()) {
    auto h = open_out(a.history);
    write_history_csv(result.history, h);
  }
  std::cerr << name << ": best epoch " << result.best_epoch << ", saved " << a.out << "\n";
}

// --------------------------------------------------------------- evaluate

struct EvalArgs {
  std::string method, test, train, vocab, json;
  EvalConfig config;
  KnnConfig knn;
};

void run_evaluate(const EvalArgs& a) {
  std::unique_ptr<Recommender> rec;
  std::optional<ModelArtifact> artifact;
  ItemVocab vocab;
  if (a.method.rfind("SML:", 0) == 0) {
    artifact.emplace(load_model(a.method.substr(4)));
    vocab = artifact->vocab;
    rec = std::make_unique<SmlRecommender>(artifact->model, artifact->name);
  } else {
    if (a.vocab.empty() || a.train.empty()) throw UsageError("baseline methods need --train and --vocab");
    vocab = load_vocab(a.vocab);
    auto train = load_dataset(a.train, vocab);
    const auto v = vocab.size();
    if (a.method == "POP")
      rec = std::make_unique<PopRecommender>(train.sessions, v);
    else if (a.method == "SPOP")
      rec = std::make_unique<SpopRecommender>(train.sessions, v);
    else if (a.method == "MARKOV1" || a.method == "MARKOV-1")
      rec = std::make_unique<Markov1Recommender>(train.sessions, v);
    else if (a.method == "SKNN")
      rec = std::make_unique<KnnRecommender>(make_sknn(train.sessions, v, a.knn));
    else if (a.method == "VSKNN")
      rec = std::make_unique<KnnRecommender>(make_vsknn(train.sessions, v, a.knn));
    else
      throw UsageError("unknown method '" + a.method + "' (expected SML:<file>, POP, SPOP, MARKOV1, SKNN, VSKNN)");
  }
  auto test = load_dataset(a.test, vocab, std::numeric_limits<std::size_t>::max());
  auto report = evaluate(*rec, test.sessions, vocab.size(), a.config);
  write_table(std::span<const EvalReport>(&report, 1), std::cout);
  if (a.json == "-")
    std::cout << to_json(report) << "\n";
  else if (!a.json.empty())
    open_out(a.json) << to_json(report) << "\n";
}

// -------------------------------------------------------------- recommend

struct RecommendArgs {
  std::string model;
  std::vector<std::string> items;
  std::size_t n = 20;
};

void run_recommend(const RecommendArgs& a) {
  auto artifact = load_model(a.model);
  std::vector<ItemIndex> prefix;
  for (const auto& id : a.items) {
    if (auto i = artifact.vocab.find(id))
      prefix.push_back(*i);
    else
      std::cerr << "warning: unknown item id '" << id << "' skipped\n";
  }
  if (prefix.empty()) throw DataError("none of the given item ids is in the model vocabulary");
  SmlRecommender rec(artifact.model, artifact.name);
  std::size_t rank = 0;
  for (const auto& s : rec.recommend_scored(prefix, a.n))
    std::cout << ++rank << "\t" << artifact.vocab.id(s.item) << "\t" << s.score << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Session-based recommendation with a shared metric space for sessions and items"};
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Ingest raw events, filter, split chronologically");
  p->add_option("-i,--input", pre.input, "Raw events (CSV with session_id,timestamp,item_id or JSONL)")
      ->required()
      ->check(CLI::ExistingFile);
  p->add_option("-o,--out", pre.out_dir, "Output directory")->required();
  p->add_option("--format", pre.format, "auto, csv or jsonl")
      ->capture_default_str()
      ->check(CLI::IsMember({"auto", "csv", "jsonl"}));
  p->add_option("--min-item-count", pre.config.min_item_count, "Drop items seen fewer times")->capture_default_str();
  p->add_option("--min-session-length", pre.config.min_session_length, "Drop shorter sessions")
      ->capture_default_str();
  p->add_option("--max-session-length", pre.config.max_session_length, "Keep the first N events of a session")
      ->capture_default_str();
  p->add_option("--test-fraction", pre.test_fraction, "Most recent share of sessions used for testing")
      ->capture_default_str();

  StatsArgs st;
  auto* s = app.add_subcommand("stats", "Session length histogram and in-session repeat fractions");
  s->add_option("--sessions", st.sessions, "Session JSONL file")->required()->check(CLI::ExistingFile);
  s->add_option("--vocab", st.vocab, "Vocabulary TSV")->required()->check(CLI::ExistingFile);
  s->add_option("--out-prefix", st.out_prefix, "Write <prefix>lengths.tsv and <prefix>repeats.tsv");
  s->add_option("--max-session-length", st.max_session_length, "Truncate sessions on load")->capture_default_str();

  TrainArgs tr;
  tr.seed = 0;
  auto* t = app.add_subcommand("train", "Train an SML model");
  t->add_option("--train", tr.train, "Training sessions (JSONL)")->required()->check(CLI::ExistingFile);
  t->add_option("--vocab", tr.vocab, "Vocabulary TSV")->required()->check(CLI::ExistingFile);
  t->add_option("-o,--out", tr.out, "Model file to write")->required();
  t->add_option("--history", tr.history, "Per-epoch history CSV");
  t->add_option("--encoder", tr.encoder, "maxpool, avgpool, rnn or textcnn")->capture_default_str();
  t->add_option("--loss", tr.loss, "triplet, ncas, contrastive, bpr or top1")->capture_default_str();
  t->add_option("--dim", tr.model.embedding_dim, "Embedding dimension")->capture_default_str();
  t->add_flag("--common-embedding,!--separate-embeddings", tr.model.common_embedding,
              "Share the embedding table between session and item encoders")
      ->capture_default_str();
  t->add_flag("--normalize,!--no-normalize", tr.model.normalize_outputs, "L2-normalize encoder outputs")
      ->capture_default_str();
  t->add_option("--max-session-length", tr.model.max_session_length, "Events the session encoder sees")
      ->capture_default_str();
  t->add_option("--conv-filters", tr.model.conv_filter_sizes, "TextCNN filter sizes")->capture_default_str();
  t->add_option("--ff-layers", tr.model.session_ff_layers, "Dense layers after the session encoder")
      ->capture_default_str();
  t->add_option("--margin", tr.loss_cfg.margin, "Margin m")->capture_default_str();
  t->add_flag("--use-margin,!--no-margin", tr.loss_cfg.use_margin, "Apply the triplet margin")->capture_default_str();
  t->add_flag("--swap,!--no-swap", tr.loss_cfg.use_swap, "Triplet distance swapping")->capture_default_str();
  t->add_flag("--position-weighting,!--no-position-weighting", tr.loss_cfg.position_weighting,
              "Down-weight later positives by sqrt(1/(1+j))")
      ->capture_default_str();
  t->add_option("--smoothing", tr.loss_cfg.smoothing, "NCAS label smoothing")->capture_default_str();
  t->add_option("--kld-direction", tr.kld, "NCAS KL argument order: target-model or model-target")
      ->capture_default_str();
  t->add_option("--sampler", tr.sampler, "posneg or sw (sliding window)")->capture_default_str();
  t->add_option("--samples", tr.sampler_cfg.samples_per_session, "Positive/negative pairs per session")
      ->capture_default_str();
  t->add_option("--window", tr.sampler_cfg.window_size, "Sliding window length")->capture_default_str();
  t->add_flag("--knn-augment", tr.sampler_cfg.knn_augment, "Top up positives with nearest items");
  t->add_option("--knn-k", tr.sampler_cfg.knn_k, "Neighbours per positive for augmentation")->capture_default_str();
  t->add_flag("--exclude-prefix-negatives", tr.sampler_cfg.exclude_prefix_from_negatives,
              "Never sample prefix items as negatives");
  t->add_option("--batch-size", tr.train_cfg.batch_size, "Sessions per mini-batch")->capture_default_str();
  t->add_option("--epochs", tr.train_cfg.max_epochs, "Maximum epochs")->capture_default_str();
  t->add_option("--lr", tr.train_cfg.lr, "Adam learning rate")->capture_default_str();
  t->add_option("--lr-decay", tr.train_cfg.lr_decay_factor, "Learning-rate reduction factor")->capture_default_str();
  t->add_option("--val-fraction", tr.train_cfg.validation_fraction, "Most recent share held out for validation")
      ->capture_default_str();
  t->add_option("--seed", tr.seed, "Random seed (default: $SML_SEED or 42)");
  t->add_flag("-q,--quiet", tr.quiet, "No per-epoch log");

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "Next-item evaluation of a model or baseline");
  e->add_option("-m,--method", ev.method, "SML:<model file>, POP, SPOP, MARKOV1, SKNN or VSKNN")->required();
  e->add_option("--test", ev.test, "Test sessions (JSONL)")->required()->check(CLI::ExistingFile);
  e->add_option("--train", ev.train, "Training sessions for baselines")->check(CLI::ExistingFile);
  e->add_option("--vocab", ev.vocab, "Vocabulary TSV for baselines")->check(CLI::ExistingFile);
  e->add_option("--cutoff", ev.config.cutoff, "List length k")->capture_default_str();
  e->add_flag("--next-item-only", ev.config.next_item_only, "PREC/REC/MAP against the next item only");
  e->add_option("--knn-k", ev.knn.k, "Neighbour sessions for SKNN/VSKNN")->capture_default_str();
  e->add_flag("--include-prefix-items,!--exclude-prefix-items", ev.knn.include_prefix_items,
              "Let SKNN/VSKNN recommend items already in the session")
      ->capture_default_str();
  e->add_option("--json", ev.json, "Write the JSON report here ('-' for stdout)");

  RecommendArgs rc;
  auto* r = app.add_subcommand("recommend", "Top-n items for a session prefix");
  r->add_option("--model", rc.model, "Model file")->required()->check(CLI::ExistingFile);
  r->add_option("-n", rc.n, "List length")->capture_default_str()->check(CLI::PositiveNumber);
  r->add_option("items", rc.items, "Item ids of the prefix, oldest first")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*p) run_preprocess(pre);
    if (*s) run_stats(st);
    if (*t) {
      if (t->count("--seed") == 0) tr.seed = default_seed();
      run_train(tr);
    }
    if (*e) run_evaluate(ev);
    if (*r) run_recommend(rc);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return 1;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return 2;
  } catch (const DivergenceError& err) {
    std::cerr << "training diverged: " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 0;
}
