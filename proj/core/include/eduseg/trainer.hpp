#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eduseg/config.hpp"
#include "eduseg/corpus.hpp"
#include "eduseg/evaluator.hpp"
#include "eduseg/model.hpp"

namespace eduseg {

template <typename T>
T global_norm(const Gradients<T>& grads);

// Rescales every gradient by max_norm / g when the global L2 norm g exceeds max_norm.
template <typename T>
Gradients<T> clip_gradients(Gradients<T> grads, T max_norm);

// Adam moments, indexed like the parameter list they were created for.
template <typename T>
struct OptimizerState {
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
  std::size_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  // Zero moments shaped like the trainable entries (empty for frozen ones).
  static OptimizerState init(std::span<const ParamRef<T>> params);
};

// One Adam update with bias correction. Trainable params get l2 * param added
// to their gradient first; a missing gradient counts as zero.
template <typename T>
void adam_step(std::span<const ParamRef<T>> params, const Gradients<T>& grads, OptimizerState<T>& state,
               T learning_rate, T l2_weight);

template <typename T>
struct EMAState {
  T decay = T(0.9999);
  std::vector<Tensor<T>> shadow;  // empty for frozen entries

  static EMAState init(std::span<const ParamRef<T>> params, T decay);
};

// shadow <- d * shadow + (1 - d) * param with d = `decay` when given, else ema.decay.
template <typename T>
void ema_update(EMAState<T>& ema, std::span<const ParamRef<T>> params, std::optional<T> decay = std::nullopt);

// Decay used at optimizer step `step` (1-based) when warmup is enabled.
double ema_effective_decay(double decay, std::size_t step, bool warmup);

// Copy of `params` with every trainable tensor replaced by its shadow.
template <typename T>
SegmenterParams<T> with_shadow(const SegmenterParams<T>& params, const EMAState<T>& ema);

struct Dataset {
  std::vector<Sentence> sentences;
  std::optional<ContextualReps> reps;

  const ContextualReps* reps_ptr() const { return reps ? &*reps : nullptr; }
  bool empty() const { return sentences.empty(); }
};

// Everything needed to resume training or run inference.
struct TrainState {
  SegmenterParams<float> params;
  EMAState<float> ema;
  OptimizerState<float> optimizer;

  SegmenterParams<float> inference_params() const { return with_shadow(params, ema); }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_nll = 0;
  std::optional<SegMetrics> val;
  double seconds = 0;

  std::string to_json() const;
};

struct TrainResult {
  TrainState best;
  std::size_t best_epoch = 0;
  std::optional<SegMetrics> best_val;
  std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Mini-batch training with Adam, clipping, L2 and EMA; the EMA weights are
// validated after each epoch and the best epoch kept. `initial` resumes from a
// previous state.
TrainResult train(const TrainConfig& config, const Vocab& vocab, const EmbeddingTable& embeddings,
                  const Dataset& train_set, const Dataset& val_set, const EpochCallback& on_epoch = {},
                  std::optional<TrainState> initial = std::nullopt);

// Mean NLL of one batch split across `workers` threads with gradients merged
// in chunk order.
LossAndGrads<float> parallel_loss_and_gradients(const SegmenterParams<float>& params,
                                                std::span<const Sentence> sentences,
                                                std::span<const std::size_t> indices,
                                                const ContextualReps* reps, const Vocab& vocab,
                                                std::size_t workers, bool train_mode,
                                                std::uint64_t dropout_seed);

}  // namespace eduseg
