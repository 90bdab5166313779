#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "eduseg/tensor.hpp"

namespace eduseg {

// One pre-tokenized sentence. labels[t] == 1 marks a token that starts a new
// discourse unit; the first token is never labelled 1.
struct Sentence {
  std::vector<std::string> tokens;
  std::vector<int> labels;

  std::size_t size() const { return tokens.size(); }
  friend bool operator==(const Sentence&, const Sentence&) = default;
};

// Throws ValidationError if the sentence breaks the invariants above.
void validate_sentence(const Sentence& s);

struct CorpusOptions {
  std::size_t max_tokens = 200;
  // Accept bare "token" lines (label 0), for raw input to the segmenter.
  bool allow_unlabeled = false;
};

// Corpus format: one "token<TAB>label" per line, one blank line between
// sentences, newline-terminated.
std::vector<Sentence> load_corpus(const std::filesystem::path& path, const CorpusOptions& options = {});
std::vector<Sentence> parse_corpus(std::istream& in, const CorpusOptions& options = {},
                                   std::string_view source = "<stream>");
void write_corpus(std::ostream& out, std::span<const Sentence> sentences);
void write_corpus(const std::filesystem::path& path, std::span<const Sentence> sentences);

class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kReserved = 2;

  Vocab();
  // Frequency-descending, ties broken lexicographically.
  static Vocab build(std::span<const Sentence> sentences, std::size_t min_count = 1);
  // `tokens` are the non-reserved entries in id order (ids start at 2).
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return id_to_token_.size(); }
  std::size_t id(std::string_view token) const;
  std::optional<std::size_t> find(std::string_view token) const;
  const std::string& token(std::size_t id) const { return id_to_token_.at(id); }
  std::vector<std::string> corpus_tokens() const;

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.id_to_token_ == b.id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::size_t> token_to_id_;
};

// Word vectors indexed by vocab id; PAD and UNK rows are zero.
struct EmbeddingTable {
  Tensor<float> matrix;  // |V| x D_w
  bool trainable = false;

  std::size_t dim() const { return matrix.cols(); }
  std::size_t rows() const { return matrix.rows(); }
};

// Plain-text vectors: "token v1 v2 ... vD" per line.
EmbeddingTable load_word_embeddings(const std::filesystem::path& path, const Vocab& vocab);

// Per-sentence pretrained LM layer outputs, each shaped L x T x D_c.
struct ContextualReps {
  static constexpr std::size_t kLayers = 3;

  std::size_t layers = kLayers;
  std::size_t dim = 0;
  std::vector<Tensor<float>> sentences;

  std::size_t size() const { return sentences.size(); }
  friend bool operator==(const ContextualReps&, const ContextualReps&) = default;
};

// Reads REP1 binary or the JSON-lines debug variant (auto-detected). When
// `companion` is given, sentence and token counts must match it.
ContextualReps load_contextual_reps(const std::filesystem::path& path,
                                    std::span<const Sentence> companion = {});
void check_alignment(const ContextualReps& reps, std::span<const Sentence> sentences);
void write_rep1(const std::filesystem::path& path, const ContextualReps& reps);
void write_repjsonl(const std::filesystem::path& path, const ContextualReps& reps);

// Padded, masked mini-batch. Rows are sentences; padded positions carry the
// PAD id, zero representations, label 0 and a false mask.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t max_len = 0;
  std::vector<std::size_t> token_ids;      // B x T_max
  std::vector<std::uint8_t> mask;          // B x T_max
  std::vector<int> labels;                 // B x T_max
  std::vector<std::size_t> lengths;        // B
  std::vector<std::size_t> sentence_index; // position in the source corpus
  Tensor<float> reps;                      // B x L x T_max x D_c, empty without reps

  bool has_reps() const { return !reps.empty(); }
  std::size_t rep_layers() const { return has_reps() ? reps.shape()[1] : 0; }
  std::size_t rep_dim() const { return has_reps() ? reps.shape()[3] : 0; }
  std::size_t token_id(std::size_t b, std::size_t t) const { return token_ids[b * max_len + t]; }
  int label(std::size_t b, std::size_t t) const { return labels[b * max_len + t]; }
  bool valid(std::size_t b, std::size_t t) const { return mask[b * max_len + t] != 0; }
  std::vector<int> sentence_labels(std::size_t b) const;
};

Batch make_batch(std::span<const Sentence> sentences, std::span<const std::size_t> indices,
                 const ContextualReps* reps, const Vocab& vocab);

// Without a seed batches follow corpus order; with one, a seeded shuffle.
std::vector<Batch> make_batches(std::span<const Sentence> sentences, const ContextualReps* reps,
                                const Vocab& vocab, std::size_t batch_size,
                                std::optional<std::uint64_t> shuffle_seed = std::nullopt);

// Batches of similar-length sentences, for decoding with little padding.
std::vector<Batch> make_length_batches(std::span<const Sentence> sentences, const ContextualReps* reps,
                                       const Vocab& vocab, std::size_t batch_size);

}  // namespace eduseg
