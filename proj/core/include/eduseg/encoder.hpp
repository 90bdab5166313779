#pragma once

#include <optional>
#include <random>
#include <vector>

#include "eduseg/config.hpp"
#include "eduseg/corpus.hpp"
#include "eduseg/params.hpp"

namespace eduseg {

// Learned combination of the three pretrained LM layers: raw weights are
// softmax-normalized at use time, gamma scales the mixture.
template <typename T>
struct MixWeights {
  Tensor<T> raw = Tensor<T>(Shape{ContextualReps::kLayers});
  Tensor<T> gamma = Tensor<T>::scalar(T(1));

  Tensor<T> normalized() const { return softmax(raw); }
};

// One LSTM direction, gates packed as [input | forget | cell | output].
template <typename T>
struct LstmWeights {
  Tensor<T> w_input;   // D_in x 4H
  Tensor<T> w_hidden;  // H x 4H
  Tensor<T> bias;      // 4H
};

template <typename T>
struct BiLSTMParams {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  LstmWeights<T> forward;
  LstmWeights<T> backward;

  std::size_t output_dim() const { return 2 * hidden; }
};

template <typename T>
struct AttentionParams {
  Tensor<T> w;  // 3 * 2H: weights for [h_i, h_j, h_i * h_j]
  AttentionWindow window = AttentionWindow::bounded(5);
};

template <typename T>
struct EncoderParams {
  ModelConfig config;
  Tensor<T> embeddings;  // |V| x D_w
  std::optional<MixWeights<T>> mix;
  BiLSTMParams<T> lstm;
  std::optional<AttentionParams<T>> attention;
  std::optional<BiLSTMParams<T>> fusion;

  void append_refs(std::vector<ParamRef<T>>& out);
};

// Rows of a batched sequence matrix are time-major: row t * B + b.
struct SequenceLayout {
  std::size_t batch = 0;
  std::size_t max_len = 0;
  std::vector<std::size_t> lengths;

  static SequenceLayout single(std::size_t len) { return {1, len, {len}}; }
  static SequenceLayout of(const Batch& b) { return {b.batch_size, b.max_len, b.lengths}; }
  std::size_t rows() const { return batch * max_len; }
  std::size_t row(std::size_t b, std::size_t t) const { return t * batch + b; }
  std::vector<std::size_t> sentence_rows(std::size_t b) const;
};

template <typename T>
BiLSTMParams<T> init_bilstm(std::size_t input_dim, std::size_t hidden, std::mt19937_64& rng);
template <typename T>
EncoderParams<T> init_encoder(const ModelConfig& config, Tensor<T> embeddings, std::mt19937_64& rng);

// ---- Reference (single-sentence) entry points ------------------------------

// reps: L x T x D_c -> T x D_c
template <typename T>
Tensor<T> mix_contextual(const Tensor<T>& reps, const MixWeights<T>& mix);

// inputs: T x D_in -> T x 2H, zero initial states.
template <typename T>
Tensor<T> bilstm_encode(const Tensor<T>& inputs, const BiLSTMParams<T>& params);

template <typename T>
struct AttentionResult {
  Tensor<T> attended;  // T x 2H
  Tensor<T> weights;   // T x T, zero outside the window
};

template <typename T>
AttentionResult<T> restricted_attention(const Tensor<T>& h, const AttentionParams<T>& params);

// h, a: T x 2H -> T x 2H via a BiLSTM over [h_t; a_t].
template <typename T>
Tensor<T> fuse(const Tensor<T>& h, const Tensor<T>& a, const BiLSTMParams<T>& params);

// ---- Graph-recording entry points -------------------------------------------

template <typename T>
Var<T> mix_contextual(ParamBinder<T>& bind, std::span<const Var<T>> layers, const MixWeights<T>& mix);

template <typename T>
Var<T> bilstm_encode(ParamBinder<T>& bind, Var<T> inputs, const SequenceLayout& layout,
                     const BiLSTMParams<T>& params);

template <typename T>
Var<T> restricted_attention(ParamBinder<T>& bind, Var<T> h, const SequenceLayout& layout,
                            const AttentionParams<T>& params);

template <typename T>
Var<T> fuse(ParamBinder<T>& bind, Var<T> h, Var<T> a, const SequenceLayout& layout,
            const BiLSTMParams<T>& params);

template <typename T>
struct EncoderOutput {
  Var<T> hidden;  // (T_max * B) x 2H, time-major; padded rows are never read
  SequenceLayout layout;

  // Dense B x T_max x 2H copy with zeros at padded positions.
  Tensor<T> dense() const;
  // T x 2H rows for one sentence.
  Tensor<T> sentence(std::size_t b) const;
};

// Full encoder pipeline. `rng` drives dropout and is only read in train mode.
template <typename T>
EncoderOutput<T> encode_sentence(ParamBinder<T>& bind, const Batch& batch,
                                 const EncoderParams<T>& params, bool train_mode,
                                 std::mt19937_64* rng = nullptr);

template <typename T>
Tensor<T> dropout_mask(Shape shape, double rate, std::mt19937_64& rng);

}  // namespace eduseg
