#include "eduseg/model.hpp"

#include <algorithm>
#include <thread>

namespace eduseg {

template <typename T>
std::vector<ParamRef<T>> SegmenterParams<T>::refs() {
  std::vector<ParamRef<T>> out;
  encoder.append_refs(out);
  crf.append_refs(out);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return out;
}

template <typename T>
std::vector<ParamView<T>> SegmenterParams<T>::views() const {
  auto mutable_refs = const_cast<SegmenterParams*>(this)->refs();
  std::vector<ParamView<T>> out;
  out.reserve(mutable_refs.size());
  for (auto& r : mutable_refs) out.push_back({std::move(r.name), r.tensor, r.trainable});
  return out;
}

template <typename T>
SegmenterParams<T> init_segmenter(const ModelConfig& config, Tensor<T> embeddings, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SegmenterParams<T> p;
  p.encoder = init_encoder<T>(config, std::move(embeddings), rng);
  p.crf = init_crf<T>(config.output_dim(), rng);
  return p;
}

namespace {

template <typename To, typename From>
LstmWeights<To> cast_lstm(const LstmWeights<From>& w) {
  return {tensor_cast<To>(w.w_input), tensor_cast<To>(w.w_hidden), tensor_cast<To>(w.bias)};
}

template <typename To, typename From>
BiLSTMParams<To> cast_bilstm(const BiLSTMParams<From>& p) {
  BiLSTMParams<To> out;
  out.input_dim = p.input_dim;
  out.hidden = p.hidden;
  out.forward = cast_lstm<To>(p.forward);
  out.backward = cast_lstm<To>(p.backward);
  return out;
}

}  // namespace

template <typename To, typename From>
SegmenterParams<To> cast_params(const SegmenterParams<From>& p) {
  SegmenterParams<To> out;
  auto& e = out.encoder;
  e.config = p.encoder.config;
  e.embeddings = tensor_cast<To>(p.encoder.embeddings);
  if (p.encoder.mix) {
    e.mix = MixWeights<To>{tensor_cast<To>(p.encoder.mix->raw), tensor_cast<To>(p.encoder.mix->gamma)};
  }
  e.lstm = cast_bilstm<To>(p.encoder.lstm);
  if (p.encoder.attention) {
    e.attention = AttentionParams<To>{tensor_cast<To>(p.encoder.attention->w), p.encoder.attention->window};
  }
  if (p.encoder.fusion) e.fusion = cast_bilstm<To>(*p.encoder.fusion);
  out.crf.proj = tensor_cast<To>(p.crf.proj);
  out.crf.bias = tensor_cast<To>(p.crf.bias);
  out.crf.trans = tensor_cast<To>(p.crf.trans);
  out.crf.start = tensor_cast<To>(p.crf.start);
  out.crf.end = tensor_cast<To>(p.crf.end);
  return out;
}

namespace {

template <typename T>
Var<T> batch_emissions(ParamBinder<T>& bind, const EncoderOutput<T>& enc, const CrfParams<T>& crf) {
  return ad::add_row(ad::matmul(enc.hidden, bind(crf.proj)), bind(crf.bias));
}

}  // namespace

template <typename T>
Var<T> batch_loss(ParamBinder<T>& bind, const SegmenterParams<T>& params, const Batch& batch,
                  bool train_mode, std::mt19937_64* rng) {
  EncoderOutput<T> enc = encode_sentence(bind, batch, params.encoder, train_mode, rng);
  Var<T> emissions = batch_emissions(bind, enc, params.crf);
  std::vector<Var<T>> losses;
  losses.reserve(batch.batch_size);
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    Var<T> lattice = ad::gather_rows(emissions, enc.layout.sentence_rows(b));
    losses.push_back(crf_nll(bind, lattice, params.crf, batch.sentence_labels(b)));
  }
  return ad::sum(ad::concat_rows<T>(losses));
}

template <typename T>
LossAndGrads<T> loss_and_gradients(const SegmenterParams<T>& params, const Batch& batch,
                                   bool train_mode, std::mt19937_64* rng, std::size_t denominator) {
  if (batch.batch_size == 0) throw ContractError("loss on an empty batch");
  Graph<T> g;
  ParamBinder<T> bind(g, params.views());
  Var<T> total = batch_loss(bind, params, batch, train_mode, rng);
  const std::size_t denom = denominator ? denominator : batch.batch_size;
  Var<T> loss = ad::scale(total, T(1) / static_cast<T>(denom));
  return {loss.value().item(), g.backward(loss)};
}

template <typename T>
std::vector<LatticeScores<T>> batch_lattices(const SegmenterParams<T>& params, const Batch& batch) {
  Graph<T> g;
  ParamBinder<T> bind(g, params.views());
  EncoderOutput<T> enc = encode_sentence(bind, batch, params.encoder, false);
  const Tensor<T>& e = batch_emissions(bind, enc, params.crf).value();
  std::vector<LatticeScores<T>> out(batch.batch_size);
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    const std::size_t len = batch.lengths[b];
    out[b].emissions = Tensor<T>(Shape{len, kNumLabels});
    for (std::size_t t = 0; t < len; ++t) {
      std::copy_n(e.data() + enc.layout.row(b, t) * kNumLabels, kNumLabels,
                  out[b].emissions.data() + t * kNumLabels);
    }
  }
  return out;
}

template <typename T>
std::vector<std::vector<int>> decode_batch(const SegmenterParams<T>& params, const Batch& batch) {
  std::vector<std::vector<int>> out;
  for (const auto& lattice : batch_lattices(params, batch)) {
    out.push_back(viterbi(lattice, params.crf).labels);
  }
  return out;
}

template <typename T>
std::vector<std::vector<int>> decode_corpus(const SegmenterParams<T>& params, const Vocab& vocab,
                                            std::span<const Sentence> sentences,
                                            const ContextualReps* reps, std::size_t batch_size,
                                            std::size_t workers) {
  const ContextualReps* used = params.config().use_elmo ? reps : nullptr;
  if (params.config().use_elmo && !reps) {
    throw ConfigError("model uses contextual reps but none were supplied");
  }
  const auto batches = make_length_batches(sentences, used, vocab, batch_size);
  std::vector<std::vector<int>> out(sentences.size());
  auto run = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < batches.size(); i += stride) {
      auto decoded = decode_batch(params, batches[i]);
      for (std::size_t b = 0; b < decoded.size(); ++b) {
        out[batches[i].sentence_index[b]] = std::move(decoded[b]);
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, batches.size()));
  if (workers == 1) {
    run(0, 1);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        run(w, workers);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

#define EDUSEG_INSTANTIATE(T)                                                                     \
  template struct SegmenterParams<T>;                                                             \
  template SegmenterParams<T> init_segmenter<T>(const ModelConfig&, Tensor<T>, std::uint64_t);    \
  template Var<T> batch_loss<T>(ParamBinder<T>&, const SegmenterParams<T>&, const Batch&, bool,   \
                                std::mt19937_64*);                                                \
  template LossAndGrads<T> loss_and_gradients<T>(const SegmenterParams<T>&, const Batch&, bool,   \
                                                 std::mt19937_64*, std::size_t);                  \
  template std::vector<LatticeScores<T>> batch_lattices<T>(const SegmenterParams<T>&,             \
                                                           const Batch&);                         \
  template std::vector<std::vector<int>> decode_batch<T>(const SegmenterParams<T>&, const Batch&); \
  template std::vector<std::vector<int>> decode_corpus<T>(const SegmenterParams<T>&, const Vocab&, \
                                                          std::span<const Sentence>,              \
                                                          const ContextualReps*, std::size_t,     \
                                                          std::size_t);

EDUSEG_INSTANTIATE(float)
EDUSEG_INSTANTIATE(double)

#undef EDUSEG_INSTANTIATE

template SegmenterParams<double> cast_params<double, float>(const SegmenterParams<float>&);
template SegmenterParams<float> cast_params<float, double>(const SegmenterParams<double>&);
template SegmenterParams<float> cast_params<float, float>(const SegmenterParams<float>&);
template SegmenterParams<double> cast_params<double, double>(const SegmenterParams<double>&);

}  // namespace eduseg
