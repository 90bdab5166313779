#include "fixtures.hpp"

#include <fstream>
#include <sstream>

namespace eduseg::testing {

TempDir::TempDir() {
  static std::uint64_t counter = 0;
  std::random_device rd;
  const auto base = std::filesystem::temp_directory_path();
  for (;;) {
    path_ = base / ("eduseg-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    if (std::filesystem::create_directory(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Sentence> random_sentences(std::size_t count, std::size_t min_len, std::size_t max_len,
                                       std::uint64_t seed) {
  static const std::vector<std::string> words = {"the", "cat", "sat", "because", "it", "was", "warm",
                                                 "which", "pleased", "her", "when", "dogs", "bark", "and",
                                                 "rain", "fell", "on", "roofs", "quiet", "town"};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<std::size_t> word(0, words.size() - 1);
  std::bernoulli_distribution boundary(0.2);
  std::vector<Sentence> out;
  for (std::size_t i = 0; i < count; ++i) {
    Sentence s;
    const std::size_t n = len(rng);
    for (std::size_t t = 0; t < n; ++t) {
      s.tokens.push_back(words[word(rng)]);
      s.labels.push_back(t > 0 && boundary(rng) ? 1 : 0);
    }
    out.push_back(std::move(s));
  }
  return out;
}

template <typename T>
SegmenterParams<T> small_model(const SmallModelSpec& spec, const Vocab& vocab, std::uint64_t seed) {
  ModelConfig mc;
  mc.word_dim = spec.word_dim;
  mc.context_dim = spec.use_elmo ? spec.context_dim : 0;
  mc.hidden = spec.hidden;
  mc.window = spec.window == 0 ? AttentionWindow::unbounded() : AttentionWindow::bounded(spec.window);
  mc.use_elmo = spec.use_elmo;
  mc.use_attention = spec.use_attention;
  mc.train_embeddings = spec.train_embeddings;
  mc.dropout = spec.dropout;
  std::mt19937_64 rng(seed ^ 0xabcdefull);
  Tensor<T> emb = random_tensor<T>(Shape{vocab.size(), spec.word_dim}, rng, -1.0, 1.0);
  for (std::size_t r = 0; r < Vocab::kReserved; ++r) {
    for (auto& v : emb.row(r)) v = T(0);
  }
  SegmenterParams<T> p = init_segmenter<T>(mc, std::move(emb), seed);
  // Nonzero scores everywhere so every gradient path is exercised.
  for (Tensor<T>* t : {&p.crf.bias, &p.crf.trans, &p.crf.start, &p.crf.end}) {
    *t = random_tensor<T>(t->shape(), rng, -0.5, 0.5);
  }
  if (p.encoder.mix) {
    p.encoder.mix->raw = random_tensor<T>(p.encoder.mix->raw.shape(), rng, -0.5, 0.5);
    p.encoder.mix->gamma = Tensor<T>::scalar(static_cast<T>(1.3));
  }
  return p;
}

template SegmenterParams<float> small_model<float>(const SmallModelSpec&, const Vocab&, std::uint64_t);
template SegmenterParams<double> small_model<double>(const SmallModelSpec&, const Vocab&, std::uint64_t);

}  // namespace eduseg::testing
