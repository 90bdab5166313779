// Acceptance suite: one PASS/FAIL line per criterion. Pass check names as
// arguments to run a subset.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "eduseg/cli.hpp"
#include "eduseg/crf.hpp"
#include "eduseg/encoder.hpp"
#include "eduseg/evaluator.hpp"
#include "eduseg/model.hpp"
#include "eduseg/persistence.hpp"
#include "eduseg/synthetic.hpp"
#include "eduseg/trainer.hpp"
#include "fixtures.hpp"
#include "model_gradcheck.hpp"

namespace {

using namespace eduseg;
using Clock = std::chrono::steady_clock;
using nlohmann::json;

// Tolerances and budgets.
constexpr double kCrfLogZTol = 1e-10;
constexpr double kCrfProbTol = 1e-8;
constexpr double kCrfSeconds = 60;
constexpr double kGradStep = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 300;
constexpr double kAttnRowTol = 1e-6;
constexpr double kAttnUnboundedTol = 1e-6;
constexpr double kPaddingHiddenTol = 1e-5;
constexpr double kE2eMinF1 = 0.99;
constexpr std::size_t kE2eMaxEpochs = 50;
constexpr double kE2eSeconds = 600;
constexpr double kClipTol = 1e-9;
constexpr double kAdamTol = 1e-12;
constexpr double kEmaTol = 1e-12;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---- CRF oracle ------------------------------------------------------------

double enumerate_score(const Tensor<double>& e, const CrfParams<double>& p, const std::vector<int>& y) {
  double s = p.start[y[0]] + p.end[y.back()];
  for (std::size_t t = 0; t < y.size(); ++t) {
    s += e.at(t, y[t]);
    if (t) s += p.trans.at(y[t - 1], y[t]);
  }
  return s;
}

Outcome crf_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-3, 3);
  std::uniform_int_distribution<int> small(-1, 1);
  double worst_z = 0, worst_p = 0;
  std::size_t viterbi_mismatch = 0, cases = 0;
  for (int draw = 0; draw < 200; ++draw) {
    const bool ties = draw % 4 == 3;  // integer scores make equal-scoring paths common
    auto value = [&] { return ties ? static_cast<double>(small(rng)) : u(rng); };
    CrfParams<double> p;
    p.proj = Tensor<double>(Shape{1, kNumLabels});
    for (Tensor<double>* t : {&p.trans, &p.start, &p.end})
      for (auto& v : t->values()) v = value();
    for (std::size_t T_ = 1; T_ <= 12; ++T_, ++cases) {
      Tensor<double> e(Shape{T_, kNumLabels});
      for (auto& v : e.values()) v = value();
      LatticeScores<double> s{e};
      std::vector<int> gold(T_);
      for (auto& g : gold) g = static_cast<int>(rng() & 1);

      double best = -INFINITY, z = 0, max_score = -INFINITY;
      std::vector<double> scores(std::size_t{1} << T_);
      std::vector<int> best_y, y(T_);
      for (std::size_t m = 0; m < scores.size(); ++m) {
        for (std::size_t t = 0; t < T_; ++t) y[t] = static_cast<int>((m >> (T_ - 1 - t)) & 1);
        scores[m] = enumerate_score(e, p, y);
        max_score = std::max(max_score, scores[m]);
        // Sequences are visited in lexicographic order, so the first maximum
        // is the one preferring 0 at the earliest differing position.
        if (scores[m] > best) best = scores[m], best_y = y;
      }
      for (double sc : scores) z += std::exp(sc - max_score);
      const double log_z = max_score + std::log(z);
      const double p_gold = std::exp(enumerate_score(e, p, gold) - log_z);

      worst_z = std::max(worst_z, std::abs(log_partition(s, p) - log_z) / std::max(std::abs(log_z), 1e-300));
      worst_p = std::max(worst_p, std::abs(std::exp(-nll(s, p, gold)) - p_gold) / p_gold);
      if (viterbi(s, p).labels != best_y) ++viterbi_mismatch;
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_z < kCrfLogZTol && worst_p < kCrfProbTol && viterbi_mismatch == 0 && secs < kCrfSeconds;
  std::ostringstream d;
  d << cases << " lattices, max logZ rel err " << fmt("%.2e", worst_z) << ", max p(gold) rel err "
    << fmt("%.2e", worst_p) << ", viterbi mismatches " << viterbi_mismatch << ", " << fmt("%.1f", secs) << " s";
  o.detail = d.str();
  return o;
}

// ---- Gradient suite ----------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  auto sentences = testing::random_sentences(10, 4, 8, 77);
  auto vocab = Vocab::build(sentences);
  auto reps = synthetic::random_reps(sentences, 5, 78);
  testing::SmallModelSpec spec;
  spec.window = 2;
  std::map<std::string, double> worst;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    auto params = testing::small_model<double>(spec, vocab, 500 + i);
    auto batch = make_batch(sentences, std::vector<std::size_t>{i}, &reps, vocab);
    for (const auto& e : testing::model_gradient_errors(params, batch, kGradStep)) {
      worst[e.name] = std::max(worst[e.name], e.group_error);
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = secs < kGradSeconds && !worst.empty();
  std::string worst_name;
  double worst_all = 0;
  for (const auto& [name, err] : worst) {
    if (!(err < kGradTol)) o.pass = false;
    if (err >= worst_all) worst_all = err, worst_name = name;
  }
  // Every group the criterion names must be covered.
  for (const char* g : {"encoder.mix.raw", "encoder.mix.gamma", "encoder.lstm.fwd.w_input", "encoder.lstm.bwd.w_hidden",
                        "encoder.fusion.fwd.bias", "encoder.fusion.bwd.w_input", "encoder.attention.w", "crf.proj",
                        "crf.bias", "crf.trans"}) {
    if (!worst.count(g)) o.pass = false, worst_name += std::string(" (missing ") + g + ")";
  }
  o.detail = std::to_string(worst.size()) + " parameter groups x 10 sentences, worst rel err " +
             fmt("%.2e", worst_all) + " (" + worst_name + "), " + fmt("%.1f", secs) + " s";
  return o;
}

// ---- Attention properties ------------------------------------------------------

Outcome attention_properties() {
  std::mt19937_64 rng(31);
  double worst_row = 0, worst_unbounded = 0, outside = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T_ = 1 + trial % 15, D = 2 + trial % 5, K = 1 + trial % 4;
    auto h = testing::random_tensor<double>(Shape{T_, D}, rng, -2, 2);
    AttentionParams<double> p{testing::random_tensor<double>(Shape{3 * D}, rng, -1, 1), AttentionWindow::bounded(K)};
    auto r = restricted_attention(h, p);
    for (std::size_t i = 0; i < T_; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < T_; ++j) {
        sum += r.weights.at(i, j);
        if ((i > j ? i - j : j - i) > K) outside = std::max(outside, std::abs(r.weights.at(i, j)));
      }
      worst_row = std::max(worst_row, std::abs(sum - 1));
    }
    auto wide = p;
    wide.window = AttentionWindow::bounded(std::max<std::size_t>(1, T_ - 1 + trial % 3));
    auto full = p;
    full.window = AttentionWindow::unbounded();
    auto a = restricted_attention(h, wide);
    auto b = restricted_attention(h, full);
    for (std::size_t k = 0; k < a.attended.size(); ++k)
      worst_unbounded = std::max(worst_unbounded, std::abs(a.attended[k] - b.attended[k]));
    for (std::size_t k = 0; k < a.weights.size(); ++k)
      worst_unbounded = std::max(worst_unbounded, std::abs(a.weights[k] - b.weights[k]));
  }
  // The unbounded configuration is selectable end to end.
  bool unbounded_runs = false;
  {
    auto sentences = testing::random_sentences(8, 1, 30, 5);
    auto vocab = Vocab::build(sentences);
    TrainConfig tc = train_config_from_json(R"({"window": "inf", "hidden": 4})");
    ModelConfig mc = model_config_for(tc, 6, 0);
    auto params = init_segmenter<float>(mc, Tensor<float>(Shape{vocab.size(), 6}), 1);
    auto out = decode_corpus(params, vocab, sentences, nullptr, 4);
    unbounded_runs = params.encoder.attention && params.encoder.attention->window.is_unbounded() &&
                     out.size() == sentences.size();
  }
  Outcome o;
  o.pass = worst_row < kAttnRowTol && outside == 0 && worst_unbounded < kAttnUnboundedTol && unbounded_runs;
  o.detail = "100 draws, max |row sum - 1| " + fmt("%.1e", worst_row) + ", max |alpha| outside window " +
             fmt("%.1e", outside) + ", K>=T-1 vs unbounded max diff " + fmt("%.1e", worst_unbounded) +
             ", unbounded model decodes: " + (unbounded_runs ? "yes" : "no");
  return o;
}

// ---- Padding invariance -----------------------------------------------------------

Outcome padding_invariance() {
  auto sentences = testing::random_sentences(100, 1, 40, 909);
  auto vocab = Vocab::build(sentences);
  auto reps = synthetic::random_reps(sentences, 16, 910);
  testing::SmallModelSpec spec;
  spec.word_dim = 24;
  spec.context_dim = 16;
  spec.hidden = 16;
  spec.window = 5;
  auto params = testing::small_model<float>(spec, vocab, 911);

  auto singles = decode_corpus(params, vocab, sentences, &reps, 1);
  auto batched = decode_corpus(params, vocab, sentences, &reps, 32);
  std::size_t label_mismatch = 0;
  for (std::size_t i = 0; i < sentences.size(); ++i) label_mismatch += singles[i] != batched[i];

  double worst = 0;
  auto hidden_of = [&](const Batch& b) {
    Graph<float> g;
    ParamBinder<float> bind(g, params.views());
    auto enc = encode_sentence(bind, b, params.encoder, false);
    std::vector<Tensor<float>> rows;
    for (std::size_t k = 0; k < b.batch_size; ++k) rows.push_back(enc.sentence(k));
    return rows;
  };
  for (const auto& big : make_batches(sentences, &reps, vocab, 32)) {
    auto rows = hidden_of(big);
    for (std::size_t b = 0; b < big.batch_size; ++b) {
      const std::size_t idx = big.sentence_index[b];
      auto alone = hidden_of(make_batch(sentences, std::vector<std::size_t>{idx}, &reps, vocab)).at(0);
      for (std::size_t k = 0; k < rows[b].size(); ++k)
        worst = std::max(worst, static_cast<double>(std::abs(rows[b][k] - alone[k])));
    }
  }
  Outcome o;
  o.pass = label_mismatch == 0 && worst < kPaddingHiddenTol;
  o.detail = "100 sentences, batch 1 vs 32: " + std::to_string(label_mismatch) + " label mismatches, max hidden diff " +
             fmt("%.2e", worst);
  return o;
}

// ---- Synthetic end-to-end -------------------------------------------------------

struct E2eArtifacts {
  bool ready = false;
  Checkpoint checkpoint;
  synthetic::Splits splits;
};

E2eArtifacts& e2e_artifacts() {
  static E2eArtifacts a;
  return a;
}

Outcome synthetic_end_to_end() {
  const auto t0 = Clock::now();
  auto& art = e2e_artifacts();
  art.splits = synthetic::connective_splits(7);
  Vocab vocab = Vocab::build(art.splits.train);
  EmbeddingTable emb = synthetic::random_embeddings(vocab, 300, 11);
  TrainConfig config;  // published defaults
  config.use_elmo = false;
  config.max_epochs = kE2eMaxEpochs;
  auto result = train(config, vocab, emb, {art.splits.train, {}}, {art.splits.val, {}});
  const auto inference = result.best.inference_params();
  const auto test = evaluate_corpus(inference, vocab, art.splits.test, nullptr);
  art.checkpoint = Checkpoint::from_state(config, vocab, result.best);
  art.ready = true;
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = test.f1 >= kE2eMinF1 && result.history.size() <= kE2eMaxEpochs && secs < kE2eSeconds;
  o.detail = "test " + test.summary() + ", best epoch " + std::to_string(result.best_epoch) + " of " +
             std::to_string(result.history.size()) + ", " + fmt("%.0f", secs) + " s";
  return o;
}

Outcome attention_ablation() {
  const auto t0 = Clock::now();
  double with_sum = 0, without_sum = 0;
  std::ostringstream per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto splits = synthetic::trigger_splits(100 + seed);
    Vocab vocab = Vocab::build(splits.train);
    EmbeddingTable emb = synthetic::random_embeddings(vocab, 50, 200 + seed);
    double f1[2];
    for (int attn = 0; attn < 2; ++attn) {
      TrainConfig c;
      c.use_elmo = false;
      c.use_attention = attn == 1;
      c.hidden = 32;
      c.learning_rate = 1e-3;
      c.max_epochs = 40;
      c.patience = c.max_epochs;
      c.seed = seed;
      auto r = train(c, vocab, emb, {splits.train, {}}, {splits.val, {}});
      f1[attn] = evaluate_corpus(r.best.inference_params(), vocab, splits.test, nullptr).f1;
    }
    without_sum += f1[0];
    with_sum += f1[1];
    per_seed << (seed > 1 ? ", " : "") << fmt("%.3f", f1[1]) << "/" << fmt("%.3f", f1[0]);
  }
  Outcome o;
  o.pass = with_sum / 5 > without_sum / 5;
  o.detail = "offset-4 trigger task, mean test F1 with attention " + fmt("%.4f", with_sum / 5) + " vs without " +
             fmt("%.4f", without_sum / 5) + " (per seed with/without: " + per_seed.str() + "), " +
             fmt("%.0f", seconds_since(t0)) + " s";
  return o;
}

// ---- Bench gate -----------------------------------------------------------------

struct Workspace {
  testing::TempDir dir;
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

// Trained model from the end-to-end check, or a quick one when run alone.
void ensure_checkpoint() {
  auto& art = e2e_artifacts();
  if (art.ready) return;
  art.splits = synthetic::connective_splits(7);
  Vocab vocab = Vocab::build(art.splits.train);
  TrainConfig config;
  config.max_epochs = 2;
  config.learning_rate = 1e-3;
  auto r = train(config, vocab, synthetic::random_embeddings(vocab, 300, 11), {art.splits.train, {}}, {art.splits.val, {}});
  art.checkpoint = Checkpoint::from_state(config, vocab, r.best);
  art.ready = true;
}

Outcome bench_gate() {
  ensure_checkpoint();
  auto& art = e2e_artifacts();
  auto& ws = workspace();
  save_checkpoint(art.checkpoint, ws.path("bench.ckpt"));
  std::vector<Sentence> corpus = art.splits.train;
  write_corpus(ws.path("bench.txt"), corpus);
  std::ostringstream out, err;
  const int code = cli::run({"bench", "--checkpoint", ws.path("bench.ckpt"), "--corpus", ws.path("bench.txt"),
                             "--batch-sizes", "1,32", "--repetitions", "5", "--bench-json", ws.path("bench.json")},
                            out, err);
  Outcome o;
  if (code != 0) {
    o.detail = "bench exited " + std::to_string(code) + ": " + err.str();
    return o;
  }
  std::ifstream in(ws.path("bench.json"));
  const json j = json::parse(in);
  const double one = j.at("rows").at(0).at("median_sents_per_s"), many = j.at("rows").at(1).at("median_sents_per_s");

  // A decoder whose batched output differs must be refused.
  bool refused = false;
  try {
    std::ostringstream log;
    cli::time_decoder({1, 32}, 1, 1, 0,
                      [](std::size_t bs) { return std::vector<std::vector<int>>{{0, bs == 1 ? 0 : 1}}; }, log);
  } catch (const Error&) {
    refused = true;
  }
  o.pass = many > one && refused;
  o.detail = std::to_string(corpus.size()) + " sentences, median " + fmt("%.1f", one) + " sents/s at batch 1 vs " +
             fmt("%.1f", many) + " at batch 32 (" + fmt("%.1fx", many / one) +
             "), mismatched decodes refused: " + (refused ? "yes" : "no");
  return o;
}

// ---- Trainer units ---------------------------------------------------------------

Outcome trainer_units() {
  // Clipping against a recomputed norm.
  std::mt19937_64 rng(17);
  double clip_err = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Gradients<double> g;
    double sq = 0;
    for (ParamSlot s = 0; s < 3; ++s) {
      auto t = testing::random_tensor<double>(Shape{2 + s, 4}, rng, -5, 5);
      for (double v : t.values()) sq += v * v;
      g.accumulate(s, t);
    }
    const double max_norm = 1.0 + trial % 20;
    const double ratio = std::min(1.0, max_norm / std::sqrt(sq));
    auto clipped = clip_gradients(g, max_norm);
    double out_sq = 0;
    for (const auto& [slot, t] : clipped)
      for (std::size_t i = 0; i < t.size(); ++i) {
        out_sq += t[i] * t[i];
        clip_err = std::max(clip_err, std::abs(t[i] - g.at(slot)[i] * ratio));
      }
    clip_err = std::max(clip_err, std::abs(std::sqrt(out_sq) - std::min(std::sqrt(sq), max_norm)));
  }

  // Adam on f(x) = x^2 against a plain scalar implementation.
  double adam_err = 0;
  {
    Tensor<double> x = Tensor<double>::scalar(1.0);
    std::vector<ParamRef<double>> refs{{"x", &x, true}};
    auto state = OptimizerState<double>::init(refs);
    double rx = 1.0, m = 0, v = 0;
    for (int t = 1; t <= 5; ++t) {
      Gradients<double> g;
      g.accumulate(0, Tensor<double>::scalar(2 * x.item()));
      adam_step<double>(refs, g, state, 0.1, 0.0);
      const double gr = 2 * rx;
      m = 0.9 * m + 0.1 * gr;
      v = 0.999 * v + 0.001 * gr * gr;
      rx -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      adam_err = std::max(adam_err, std::abs(x.item() - rx));
    }
  }

  // EMA against the geometric closed form.
  double ema_err = 0;
  {
    Tensor<double> p = Tensor<double>::scalar(-2.0);
    std::vector<ParamRef<double>> refs{{"p", &p, true}};
    auto ema = EMAState<double>::init(refs, 0.95);
    p = Tensor<double>::scalar(4.0);
    for (int n = 1; n <= 200; ++n) {
      ema_update<double>(ema, refs);
      const double dn = std::pow(0.95, n);
      ema_err = std::max(ema_err, std::abs(ema.shadow[0].item() - (dn * -2.0 + (1 - dn) * 4.0)));
    }
  }
  Outcome o;
  o.pass = clip_err < kClipTol && adam_err < kAdamTol && ema_err < kEmaTol;
  o.detail = "clip max err " + fmt("%.1e", clip_err) + ", Adam 5-step trace max err " + fmt("%.1e", adam_err) +
             ", EMA closed form max err " + fmt("%.1e", ema_err);
  return o;
}

// ---- Persistence -------------------------------------------------------------------

Outcome persistence() {
  ensure_checkpoint();
  auto& art = e2e_artifacts();
  auto& ws = workspace();
  const auto& c = art.checkpoint;
  save_checkpoint(c, ws.path("a.ckpt"));
  save_checkpoint(c, ws.path("b.ckpt"));
  const bool identical = testing::read_text(ws.path("a.ckpt")) == testing::read_text(ws.path("b.ckpt"));
  const auto loaded = load_checkpoint(ws.path("a.ckpt"));
  std::vector<Sentence> eval_set = art.splits.val;
  eval_set.insert(eval_set.end(), art.splits.test.begin(), art.splits.test.end());
  const auto before = decode_corpus(c.inference_params(), c.vocab, eval_set, nullptr);
  const auto after = decode_corpus(loaded.inference_params(), loaded.vocab, eval_set, nullptr);
  const auto m_before = score_corpus(eval_set, before);
  const auto m_after = score_corpus(eval_set, after);
  Outcome o;
  o.pass = identical && before == after && m_before.to_json() == m_after.to_json();
  o.detail = "double save byte-identical: " + std::string(identical ? "yes" : "no") + ", " +
             std::to_string(eval_set.size()) + " sentences decode-identical after reload: " +
             (before == after ? "yes" : "no") + " (" + m_after.summary() + ")";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"crf-oracle", crf_oracle},
      {"gradient-suite", gradient_suite},
      {"attention-properties", attention_properties},
      {"padding-invariance", padding_invariance},
      {"synthetic-end-to-end", synthetic_end_to_end},
      {"attention-ablation", attention_ablation},
      {"bench-gate", bench_gate},
      {"trainer-units", trainer_units},
      {"persistence", persistence},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [name, check] : checks) {
    if (!only.empty() && !only.count(name)) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
