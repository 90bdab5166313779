#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "eduseg/corpus.hpp"
#include "eduseg/model.hpp"

namespace eduseg::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Uniform values in [lo, hi].
template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

// Sentences over a small word list with random lengths and valid labels.
std::vector<Sentence> random_sentences(std::size_t count, std::size_t min_len, std::size_t max_len,
                                       std::uint64_t seed);

// Small model with every component enabled (or as configured) and random
// weights, including nonzero transition/start/end scores.
struct SmallModelSpec {
  std::size_t word_dim = 6;
  std::size_t context_dim = 5;
  std::size_t hidden = 4;
  std::size_t window = 2;  // 0: unbounded
  bool use_elmo = true;
  bool use_attention = true;
  bool train_embeddings = false;
  double dropout = 0.0;
};

template <typename T>
SegmenterParams<T> small_model(const SmallModelSpec& spec, const Vocab& vocab, std::uint64_t seed);

}  // namespace eduseg::testing
