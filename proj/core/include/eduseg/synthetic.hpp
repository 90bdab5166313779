#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "eduseg/corpus.hpp"

namespace eduseg::synthetic {

// Connectives that open a new unit in the connective corpus.
const std::vector<std::string>& connectives();
// Tokens whose presence 4 positions back marks a boundary in the trigger corpus.
const std::vector<std::string>& triggers();
inline constexpr std::size_t kTriggerOffset = 4;

// Filler words mixed with 0-2 connectives; every connective (never first)
// is labelled 1, everything else 0.
std::vector<Sentence> connective_corpus(std::size_t count, std::uint64_t seed);

// label[t] == 1 iff tokens[t - 4] is a trigger word.
std::vector<Sentence> trigger_corpus(std::size_t count, std::uint64_t seed);

struct Splits {
  std::vector<Sentence> train;
  std::vector<Sentence> val;
  std::vector<Sentence> test;
};

// 300 / 50 / 50 sentences unless stated otherwise.
Splits connective_splits(std::uint64_t seed, std::size_t train = 300, std::size_t val = 50,
                         std::size_t test = 50);
Splits trigger_splits(std::uint64_t seed, std::size_t train = 300, std::size_t val = 50,
                      std::size_t test = 50);

// Seeded N(0, sigma^2) vectors for every non-reserved token of `vocab`.
EmbeddingTable random_embeddings(const Vocab& vocab, std::size_t dim, std::uint64_t seed,
                                 float sigma = 0.4f);
void write_embeddings(const std::filesystem::path& path, const Vocab& vocab, const EmbeddingTable& table);

// Seeded standard-normal contextual reps aligned with `sentences` (3 layers).
ContextualReps random_reps(std::span<const Sentence> sentences, std::size_t dim, std::uint64_t seed);

}  // namespace eduseg::synthetic
