#include "eduseg/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "eduseg/corpus.hpp"
#include "eduseg/error.hpp"
#include "eduseg/evaluator.hpp"
#include "eduseg/persistence.hpp"
#include "eduseg/synthetic.hpp"
#include "eduseg/trainer.hpp"

namespace eduseg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Kind { kNumber, kInteger, kBool, kString, kWindow, kList };

struct FlagSpec {
  const char* key;
  Kind kind;
  const char* help;
};

const std::vector<FlagSpec>& flag_specs() {
  static const std::vector<FlagSpec> specs = {
      {"learning_rate", Kind::kNumber, "Adam learning rate"},
      {"batch_size", Kind::kInteger, "sentences per mini-batch"},
      {"dropout", Kind::kNumber, "dropout rate"},
      {"l2_weight", Kind::kNumber, "L2 regularization weight"},
      {"clip_norm", Kind::kNumber, "global gradient norm limit"},
      {"ema_decay", Kind::kNumber, "parameter moving-average decay"},
      {"ema_warmup", Kind::kBool, "ramp the moving-average decay up over the first steps"},
      {"window", Kind::kWindow, "attention window K (integer or inf)"},
      {"hidden", Kind::kInteger, "LSTM hidden size per direction"},
      {"max_epochs", Kind::kInteger, "maximum training epochs"},
      {"patience", Kind::kInteger, "epochs without validation gain before stopping"},
      {"seed", Kind::kInteger, "random seed"},
      {"use_elmo", Kind::kBool, "mix in contextual representations"},
      {"use_attention", Kind::kBool, "use restricted self-attention"},
      {"workers", Kind::kInteger, "worker threads"},
      {"train_embeddings", Kind::kBool, "fine-tune word embeddings"},
      {"train", Kind::kString, "training corpus"},
      {"val", Kind::kString, "validation corpus"},
      {"corpus", Kind::kString, "gold corpus"},
      {"input", Kind::kString, "tokenized input (labels optional)"},
      {"output", Kind::kString, "output path (- for stdout)"},
      {"embeddings", Kind::kString, "word vectors, one 'token v1 .. vD' per line"},
      {"reps", Kind::kString, "contextual representations (REP1 or JSON lines)"},
      {"val_reps", Kind::kString, "contextual representations for the validation corpus"},
      {"checkpoint", Kind::kString, "checkpoint file"},
      {"metrics", Kind::kString, "per-epoch metrics log (JSON lines)"},
      {"batch_sizes", Kind::kList, "batch sizes to time, comma separated"},
      {"repetitions", Kind::kInteger, "timed repetitions per batch size"},
      {"warmup", Kind::kInteger, "untimed passes per batch size"},
      {"bench_json", Kind::kString, "JSON sidecar with every timing sample"},
  };
  return specs;
}

const FlagSpec& spec_for(const std::string& key) {
  for (const auto& s : flag_specs()) {
    if (key == s.key) return s;
  }
  throw std::logic_error("no flag spec for " + key);
}

std::string kebab(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

// Flags registered on one subcommand, collected as text and converted to JSON
// so flags and config files share one validation path.
class FlagBinding {
 public:
  void add(CLI::App* app, const std::vector<std::string>& keys) {
    for (const auto& key : keys) {
      const FlagSpec& spec = spec_for(key);
      auto& slot = slots_[key];
      slot.kind = spec.kind;
      const std::string name = "--" + kebab(key);
      if (spec.kind == Kind::kBool) {
        slot.option = app->add_flag(name + ",!--no-" + kebab(key), slot.flag, spec.help);
      } else if (spec.kind == Kind::kList) {
        slot.option = app->add_option(name, slot.list, spec.help)->delimiter(',');
      } else {
        slot.option = app->add_option(name, slot.text, spec.help);
      }
    }
  }

  json to_json() const {
    json j = json::object();
    for (const auto& [key, slot] : slots_) {
      if (slot.option->count() == 0) continue;
      const std::string flag = "--" + kebab(key);
      switch (slot.kind) {
        case Kind::kBool: j[key] = slot.flag; break;
        case Kind::kString: j[key] = slot.text; break;
        case Kind::kWindow: j[key] = slot.text; break;
        case Kind::kNumber: j[key] = parse_number(flag, slot.text); break;
        case Kind::kInteger: j[key] = parse_integer(flag, slot.text); break;
        case Kind::kList: {
          json arr = json::array();
          for (const auto& v : slot.list) arr.push_back(parse_integer(flag, v));
          j[key] = arr;
          break;
        }
      }
    }
    return j;
  }

 private:
  static double parse_number(const std::string& flag, const std::string& text) {
    double v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size()) {
      throw ConfigError(flag + " expects a number, got '" + text + "'");
    }
    return v;
  }
  static std::uint64_t parse_integer(const std::string& flag, const std::string& text) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size()) {
      throw ConfigError(flag + " expects a non-negative integer, got '" + text + "'");
    }
    return v;
  }

  struct Slot {
    Kind kind = Kind::kString;
    CLI::Option* option = nullptr;
    std::string text;
    bool flag = false;
    std::vector<std::string> list;
  };
  std::map<std::string, Slot> slots_;
};

struct Command {
  CLI::App* app = nullptr;
  FlagBinding flags;
  std::string config_path;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliConfig resolve(const Command& cmd) {
  CliConfig config;
  if (!cmd.config_path.empty()) {
    if (!fs::exists(cmd.config_path)) throw ConfigError("config file not found: " + cmd.config_path);
    apply_json(config, read_file(cmd.config_path));
  }
  apply_json(config, cmd.flags.to_json().dump());
  return config;
}

void require(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError("missing required --" + kebab(key));
}

void require_file(const std::string& path) {
  if (!path.empty() && !fs::is_regular_file(path)) throw ConfigError("no such file: " + path);
}

std::optional<ContextualReps> load_reps(const std::string& path, std::span<const Sentence> sentences) {
  if (path.empty()) return std::nullopt;
  return load_contextual_reps(path, sentences);
}

// Contextual reps for a checkpoint's model: required when the model mixes them in.
std::optional<ContextualReps> reps_for_model(const Checkpoint& ckpt, const CliConfig& config,
                                             std::span<const Sentence> sentences) {
  if (!ckpt.params.config().use_elmo) return std::nullopt;
  if (config.reps.empty()) throw ConfigError("this model uses contextual representations; pass --reps");
  auto reps = load_contextual_reps(config.reps, sentences);
  if (reps.dim != ckpt.params.config().context_dim) {
    throw FormatError(config.reps + ": representation size " + std::to_string(reps.dim) + " but the model expects " +
                      std::to_string(ckpt.params.config().context_dim));
  }
  return reps;
}

int cmd_train(const CliConfig& config, std::ostream& out, std::ostream& err) {
  require(config.train_path, "train");
  require(config.embeddings, "embeddings");
  require(config.checkpoint, "checkpoint");
  for (const auto* p : {&config.train_path, &config.val_path, &config.embeddings, &config.reps, &config.val_reps}) {
    require_file(*p);
  }
  if (config.train.use_elmo) {
    if (config.reps.empty()) throw ConfigError("--use-elmo requires --reps");
    if (!config.val_path.empty() && config.val_reps.empty()) throw ConfigError("--use-elmo requires --val-reps");
  }
  config.train.validate();

  Dataset train_set{load_corpus(config.train_path), std::nullopt};
  Dataset val_set;
  if (!config.val_path.empty()) val_set.sentences = load_corpus(config.val_path);
  if (config.train.use_elmo) {
    train_set.reps = load_reps(config.reps, train_set.sentences);
    val_set.reps = load_reps(config.val_reps, val_set.sentences);
  }
  const Vocab vocab = Vocab::build(train_set.sentences);
  EmbeddingTable table = load_word_embeddings(config.embeddings, vocab);
  table.trainable = config.train_embeddings;

  const std::string metrics_path = config.metrics.empty() ? config.checkpoint + ".metrics.jsonl" : config.metrics;
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw IoError("cannot write metrics log " + metrics_path);

  err << "training on " << train_set.sentences.size() << " sentences, " << val_set.sentences.size()
      << " validation, vocab " << vocab.size() << "\n";
  const TrainResult result = train(config.train, vocab, table, train_set, val_set, [&](const EpochMetrics& m) {
    metrics << m.to_json() << '\n';
    metrics.flush();
    err << "epoch " << m.epoch << "  nll " << std::fixed << std::setprecision(4) << m.train_nll;
    if (m.val) err << "  val " << m.val->summary();
    err << "  " << std::setprecision(1) << m.seconds << "s\n";
    err.unsetf(std::ios::floatfield);
  });

  save_checkpoint(Checkpoint::from_state(config.train, vocab, result.best), config.checkpoint);
  json summary = {{"best_epoch", result.best_epoch},
                  {"epochs", result.history.size()},
                  {"checkpoint", config.checkpoint}};
  if (result.best_val) summary["val"] = json::parse(result.best_val->to_json());
  out << summary.dump() << '\n';
  return kExitOk;
}

int cmd_segment(const CliConfig& config, std::ostream& out, std::ostream&) {
  require(config.checkpoint, "checkpoint");
  require(config.input, "input");
  require_file(config.checkpoint);
  require_file(config.input);
  require_file(config.reps);
  const Checkpoint ckpt = load_checkpoint(config.checkpoint);
  CorpusOptions opts;
  opts.allow_unlabeled = true;
  std::vector<Sentence> sentences = load_corpus(config.input, opts);
  const auto reps = reps_for_model(ckpt, config, sentences);
  const auto predicted = decode_corpus(ckpt.inference_params(), ckpt.vocab, sentences, reps ? &*reps : nullptr,
                                       config.train.batch_size, config.train.workers);
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    sentences[i].labels = predicted[i];
    if (!sentences[i].labels.empty()) sentences[i].labels[0] = 0;
  }
  if (config.output.empty() || config.output == "-") {
    write_corpus(out, sentences);
  } else {
    write_corpus(fs::path(config.output), sentences);
  }
  return kExitOk;
}

int cmd_eval(const CliConfig& config, std::ostream& out, std::ostream& err) {
  require(config.checkpoint, "checkpoint");
  require(config.corpus, "corpus");
  require_file(config.checkpoint);
  require_file(config.corpus);
  require_file(config.reps);
  const Checkpoint ckpt = load_checkpoint(config.checkpoint);
  const auto sentences = load_corpus(config.corpus);
  const auto reps = reps_for_model(ckpt, config, sentences);
  const SegMetrics m = evaluate_corpus(ckpt.inference_params(), ckpt.vocab, sentences, reps ? &*reps : nullptr,
                                       config.train.batch_size, config.train.workers);
  out << m.to_json() << '\n';
  err << m.summary() << '\n';
  return kExitOk;
}

int cmd_bench(const CliConfig& config, std::ostream& out, std::ostream& err) {
  const auto rows = run_bench(config, err);
  out << std::left << std::setw(12) << "Batch size" << std::setw(18) << "Speed (Sents/s)"
      << "Speedup\n";
  for (const auto& r : rows) {
    std::ostringstream speed, ratio;
    speed << std::fixed << std::setprecision(2) << r.median;
    ratio << std::fixed << std::setprecision(1) << r.speedup << "x";
    out << std::left << std::setw(12) << r.batch_size << std::setw(18) << speed.str() << ratio.str() << '\n';
  }
  if (!config.bench_json.empty()) {
    json j = {{"checkpoint", config.checkpoint},
              {"corpus", config.corpus},
              {"repetitions", config.repetitions},
              {"warmup", config.warmup},
              {"workers", config.train.workers},
              {"rows", json::array()}};
    for (const auto& r : rows) {
      j["rows"].push_back({{"batch_size", r.batch_size},
                           {"median_sents_per_s", r.median},
                           {"speedup", r.speedup},
                           {"samples", r.samples}});
    }
    std::ofstream f(config.bench_json, std::ios::trunc);
    if (!f) throw IoError("cannot write " + config.bench_json);
    f << j.dump(2) << '\n';
  }
  return kExitOk;
}

struct SynthOptions {
  std::string out_dir;
  std::string kind = "connective";
  std::uint64_t seed = 7;
  std::size_t dim = 300;
  std::size_t reps_dim = 0;
};

int cmd_synth(const SynthOptions& o, std::ostream& out) {
  if (o.out_dir.empty()) throw ConfigError("missing required --out-dir");
  synthetic::Splits splits;
  if (o.kind == "connective") {
    splits = synthetic::connective_splits(o.seed);
  } else if (o.kind == "trigger") {
    splits = synthetic::trigger_splits(o.seed);
  } else {
    throw ConfigError("--kind must be connective or trigger");
  }
  fs::create_directories(o.out_dir);
  const fs::path dir(o.out_dir);
  write_corpus(dir / "train.txt", splits.train);
  write_corpus(dir / "val.txt", splits.val);
  write_corpus(dir / "test.txt", splits.test);
  std::vector<Sentence> all = splits.train;
  all.insert(all.end(), splits.val.begin(), splits.val.end());
  all.insert(all.end(), splits.test.begin(), splits.test.end());
  const Vocab vocab = Vocab::build(all);
  synthetic::write_embeddings(dir / "embeddings.txt", vocab, synthetic::random_embeddings(vocab, o.dim, o.seed + 1));
  if (o.reps_dim > 0) {
    std::uint64_t s = o.seed + 2;
    for (const auto& [name, split] : {std::pair{"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}}) {
      write_rep1(dir / (std::string(name) + ".rep1"), synthetic::random_reps(*split, o.reps_dim, s++));
    }
  }
  out << "wrote " << splits.train.size() << "/" << splits.val.size() << "/" << splits.test.size()
      << " sentences to " << o.out_dir << '\n';
  return kExitOk;
}

}  // namespace

std::vector<BenchRow> run_bench(const CliConfig& config, std::ostream& log) {
  require(config.checkpoint, "checkpoint");
  require(config.corpus, "corpus");
  require_file(config.checkpoint);
  require_file(config.corpus);
  require_file(config.reps);
  if (config.repetitions == 0) throw ConfigError("--repetitions must be positive");
  std::vector<std::size_t> sizes = config.batch_sizes;
  if (std::find(sizes.begin(), sizes.end(), 0) != sizes.end()) throw ConfigError("batch sizes must be positive");

  const Checkpoint ckpt = load_checkpoint(config.checkpoint);
  CorpusOptions opts;
  opts.allow_unlabeled = true;
  const auto sentences = load_corpus(config.corpus, opts);
  if (sentences.empty()) throw ValidationError(config.corpus + ": no sentences to time");
  const auto reps = reps_for_model(ckpt, config, sentences);
  const ContextualReps* rp = reps ? &*reps : nullptr;
  const auto params = ckpt.inference_params();
  const std::size_t workers = config.train.workers;

  return time_decoder(
      sizes, sentences.size(), config.repetitions, config.warmup,
      [&](std::size_t bs) { return decode_corpus(params, ckpt.vocab, sentences, rp, bs, workers); }, log);
}

std::vector<BenchRow> time_decoder(std::vector<std::size_t> sizes, std::size_t sentence_count,
                                   std::size_t repetitions, std::size_t warmup, const Decoder& decode,
                                   std::ostream& log) {
  sizes.erase(std::remove(sizes.begin(), sizes.end(), 1), sizes.end());
  sizes.insert(sizes.begin(), 1);
  const auto reference = decode(1);
  for (std::size_t bs : sizes) {
    if (decode(bs) != reference) {
      throw Error("batch size " + std::to_string(bs) +
                  " decodes differ from batch size 1; refusing to report timings");
    }
  }

  std::vector<BenchRow> rows;
  for (std::size_t bs : sizes) {
    BenchRow row;
    row.batch_size = bs;
    for (std::size_t w = 0; w < warmup; ++w) decode(bs);
    for (std::size_t r = 0; r < repetitions; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      decode(bs);
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      row.samples.push_back(static_cast<double>(sentence_count) / s);
    }
    std::vector<double> sorted = row.samples;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    row.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    log << "batch " << bs << ": median " << row.median << " sents/s\n";
    rows.push_back(std::move(row));
  }
  for (auto& r : rows) r.speedup = r.median / rows.front().median;
  return rows;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural discourse segmenter: BiLSTM-CRF with restricted self-attention", "eduseg"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "eduseg 0.1.0");

  const std::vector<std::string> train_keys = {
      "learning_rate", "batch_size", "dropout",  "l2_weight",  "clip_norm", "ema_decay",     "ema_warmup",
      "window",        "hidden",     "max_epochs", "patience", "seed",      "use_elmo",      "use_attention",
      "workers",       "train_embeddings", "train", "val",     "embeddings", "reps",         "val_reps",
      "checkpoint",    "metrics"};
  const std::vector<std::string> segment_keys = {"checkpoint", "input", "output", "reps", "batch_size", "workers",
                                                 "seed"};
  const std::vector<std::string> eval_keys = {"checkpoint", "corpus", "reps", "batch_size", "workers", "seed"};
  const std::vector<std::string> bench_keys = {"checkpoint", "corpus",  "reps",       "batch_sizes",
                                               "repetitions", "warmup", "bench_json", "workers", "seed"};

  std::map<std::string, std::unique_ptr<Command>> commands;
  auto add = [&](const std::string& name, const std::string& help, const std::vector<std::string>& keys) {
    auto cmd = std::make_unique<Command>();
    cmd->app = app.add_subcommand(name, help);
    cmd->app->add_option("--config", cmd->config_path, "JSON config file; flags override its values");
    cmd->flags.add(cmd->app, keys);
    commands[name] = std::move(cmd);
  };
  add("train", "train a segmenter and write the best checkpoint", train_keys);
  add("segment", "label tokenized text with a trained checkpoint", segment_keys);
  add("eval", "score a checkpoint against a gold corpus (metrics JSON on stdout)", eval_keys);
  add("bench", "decode throughput across batch sizes", bench_keys);

  SynthOptions synth;
  CLI::App* synth_app = app.add_subcommand("synth", "write a synthetic corpus, embeddings and optional reps");
  synth_app->add_option("--out-dir", synth.out_dir, "output directory")->required();
  synth_app->add_option("--kind", synth.kind, "connective or trigger");
  synth_app->add_option("--seed", synth.seed, "random seed");
  synth_app->add_option("--dim", synth.dim, "word vector size");
  synth_app->add_option("--reps-dim", synth.reps_dim, "contextual representation size (0: none)");

  std::vector<const char*> argv;
  argv.push_back("eduseg");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth_app->parsed()) return cmd_synth(synth, out);
    for (const auto& [name, cmd] : commands) {
      if (!cmd->app->parsed()) continue;
      const CliConfig config = resolve(*cmd);
      if (name == "train") return cmd_train(config, out, err);
      if (name == "segment") return cmd_segment(config, out, err);
      if (name == "eval") return cmd_eval(config, out, err);
      if (name == "bench") return cmd_bench(config, out, err);
    }
  } catch (const ConfigError& e) {
    err << "eduseg: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "eduseg: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, out, err);
}

}  // namespace eduseg::cli
