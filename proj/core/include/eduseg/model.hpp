#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "eduseg/crf.hpp"
#include "eduseg/encoder.hpp"

namespace eduseg {

// Encoder + CRF head.
template <typename T>
struct SegmenterParams {
  EncoderParams<T> encoder;
  CrfParams<T> crf;

  const ModelConfig& config() const { return encoder.config; }
  // Every model tensor sorted by name; the index is the parameter slot.
  std::vector<ParamRef<T>> refs();
  std::vector<ParamView<T>> views() const;
};

template <typename T>
SegmenterParams<T> init_segmenter(const ModelConfig& config, Tensor<T> embeddings, std::uint64_t seed);

template <typename To, typename From>
SegmenterParams<To> cast_params(const SegmenterParams<From>& params);

// Mean per-sentence NLL over the batch, recorded on the binder's graph.
template <typename T>
Var<T> batch_loss(ParamBinder<T>& bind, const SegmenterParams<T>& params, const Batch& batch,
                  bool train_mode, std::mt19937_64* rng = nullptr);

template <typename T>
struct LossAndGrads {
  T loss;
  Gradients<T> grads;
};

// Forward + backward over one batch. `denominator` scales the summed NLL
// (the full batch size when a batch is split across workers).
template <typename T>
LossAndGrads<T> loss_and_gradients(const SegmenterParams<T>& params, const Batch& batch, bool train_mode,
                                   std::mt19937_64* rng, std::size_t denominator = 0);

// Per-sentence emission lattices (eval mode).
template <typename T>
std::vector<LatticeScores<T>> batch_lattices(const SegmenterParams<T>& params, const Batch& batch);

// Viterbi decode of every sentence in the batch, in batch order.
template <typename T>
std::vector<std::vector<int>> decode_batch(const SegmenterParams<T>& params, const Batch& batch);

// Decodes a corpus in `batch_size` chunks; results follow corpus order.
// `workers` > 1 decodes batches on separate threads.
template <typename T>
std::vector<std::vector<int>> decode_corpus(const SegmenterParams<T>& params, const Vocab& vocab,
                                            std::span<const Sentence> sentences,
                                            const ContextualReps* reps, std::size_t batch_size = 32,
                                            std::size_t workers = 1);

}  // namespace eduseg
