#include "eduseg/synthetic.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <random>

namespace eduseg::synthetic {

namespace {

const std::vector<std::string>& fillers() {
  static const std::vector<std::string> words = [] {
    const char* base[] = {"the",    "a",       "company", "said",   "it",      "market",  "shares",
                          "price",  "year",    "new",     "sales",  "report",  "bank",    "stock",
                          "rose",   "fell",    "percent", "board",  "plan",    "analyst", "quarter",
                          "profit", "rate",    "bond",    "trade",  "firm",    "deal",    "unit",
                          "would",  "could",   "expects", "issued", "million", "billion", "mr.",
                          "he",     "they",    "its",     "of",     "in",      "on",      "for",
                          "to",     "and",     "but",     "with",   "from",    "by",      "as",
                          "at",     "chief",   "officer", "yield",  "index",   "funds",   "cash",
                          "debt",   "offer",   "bid",     "group",  "court",   "state",   "law"};
    std::vector<std::string> out(std::begin(base), std::end(base));
    for (int i = 0; i < 40; ++i) out.push_back("w" + std::to_string(i));
    return out;
  }();
  return words;
}

std::string pick(const std::vector<std::string>& words, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, words.size() - 1);
  return words[d(rng)];
}

}  // namespace

const std::vector<std::string>& connectives() {
  static const std::vector<std::string> words = {"because", "which", "when"};
  return words;
}

const std::vector<std::string>& triggers() {
  static const std::vector<std::string> words = {"said", "says"};
  return words;
}

std::vector<Sentence> connective_corpus(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len_dist(6, 24);
  std::uniform_int_distribution<int> n_conn(0, 2);
  std::vector<Sentence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Sentence s;
    const std::size_t len = len_dist(rng);
    for (std::size_t t = 0; t < len; ++t) s.tokens.push_back(pick(fillers(), rng));
    s.labels.assign(len, 0);
    const int k = n_conn(rng);
    std::uniform_int_distribution<std::size_t> pos(1, len - 1);
    for (int c = 0; c < k; ++c) {
      const std::size_t t = pos(rng);
      s.tokens[t] = pick(connectives(), rng);
      s.labels[t] = 1;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sentence> trigger_corpus(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len_dist(8, 24);
  std::uniform_int_distribution<int> n_trig(0, 2);
  std::vector<std::string> pool;
  for (const auto& w : fillers()) {
    if (std::find(triggers().begin(), triggers().end(), w) == triggers().end()) pool.push_back(w);
  }
  std::vector<Sentence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Sentence s;
    const std::size_t len = len_dist(rng);
    for (std::size_t t = 0; t < len; ++t) s.tokens.push_back(pick(pool, rng));
    const int k = n_trig(rng);
    std::uniform_int_distribution<std::size_t> pos(0, len - 1);
    for (int c = 0; c < k; ++c) s.tokens[pos(rng)] = pick(triggers(), rng);
    s.labels.assign(len, 0);
    for (std::size_t t = kTriggerOffset; t < len; ++t) {
      const auto& w = s.tokens[t - kTriggerOffset];
      if (std::find(triggers().begin(), triggers().end(), w) != triggers().end()) s.labels[t] = 1;
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

Splits split(std::vector<Sentence> all, std::size_t train, std::size_t val) {
  Splits s;
  s.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(train));
  s.val.assign(all.begin() + static_cast<std::ptrdiff_t>(train),
               all.begin() + static_cast<std::ptrdiff_t>(train + val));
  s.test.assign(all.begin() + static_cast<std::ptrdiff_t>(train + val), all.end());
  return s;
}

}  // namespace

Splits connective_splits(std::uint64_t seed, std::size_t train, std::size_t val, std::size_t test) {
  return split(connective_corpus(train + val + test, seed), train, val);
}

Splits trigger_splits(std::uint64_t seed, std::size_t train, std::size_t val, std::size_t test) {
  return split(trigger_corpus(train + val + test, seed), train, val);
}

EmbeddingTable random_embeddings(const Vocab& vocab, std::size_t dim, std::uint64_t seed, float sigma) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, sigma);
  EmbeddingTable table;
  table.matrix = Tensor<float>(Shape{vocab.size(), dim});
  for (std::size_t r = Vocab::kReserved; r < vocab.size(); ++r) {
    for (auto& v : table.matrix.row(r)) v = normal(rng);
  }
  return table;
}

void write_embeddings(const std::filesystem::path& path, const Vocab& vocab, const EmbeddingTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[32];
  for (std::size_t r = Vocab::kReserved; r < vocab.size(); ++r) {
    out << vocab.token(r);
    for (float v : table.matrix.row(r)) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

ContextualReps random_reps(std::span<const Sentence> sentences, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  ContextualReps reps;
  reps.dim = dim;
  for (const auto& s : sentences) {
    Tensor<float> t(Shape{ContextualReps::kLayers, s.size(), dim});
    for (auto& v : t.values()) v = normal(rng);
    reps.sentences.push_back(std::move(t));
  }
  return reps;
}

}  // namespace eduseg::synthetic
