#include "eduseg/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace eduseg {

std::vector<std::size_t> SequenceLayout::sentence_rows(std::size_t b) const {
  std::vector<std::size_t> rows(lengths.at(b));
  for (std::size_t t = 0; t < rows.size(); ++t) rows[t] = row(b, t);
  return rows;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

template <typename T>
Tensor<T> glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
LstmWeights<T> init_direction(std::size_t input_dim, std::size_t hidden, std::mt19937_64& rng) {
  // Glorot limits follow the packed kernel [x; h] -> 4H.
  const std::size_t fan_in = input_dim + hidden, fan_out = 4 * hidden;
  LstmWeights<T> w;
  w.w_input = glorot<T>(Shape{input_dim, 4 * hidden}, fan_in, fan_out, rng);
  w.w_hidden = glorot<T>(Shape{hidden, 4 * hidden}, fan_in, fan_out, rng);
  w.bias = Tensor<T>(Shape{4 * hidden});
  for (std::size_t j = hidden; j < 2 * hidden; ++j) w.bias[j] = T(1);
  return w;
}

template <typename T>
void append_lstm(std::vector<ParamRef<T>>& out, const std::string& prefix, BiLSTMParams<T>& p) {
  out.push_back({prefix + ".bwd.bias", &p.backward.bias, true});
  out.push_back({prefix + ".bwd.w_hidden", &p.backward.w_hidden, true});
  out.push_back({prefix + ".bwd.w_input", &p.backward.w_input, true});
  out.push_back({prefix + ".fwd.bias", &p.forward.bias, true});
  out.push_back({prefix + ".fwd.w_hidden", &p.forward.w_hidden, true});
  out.push_back({prefix + ".fwd.w_input", &p.forward.w_input, true});
}

}  // namespace

template <typename T>
BiLSTMParams<T> init_bilstm(std::size_t input_dim, std::size_t hidden, std::mt19937_64& rng) {
  BiLSTMParams<T> p;
  p.input_dim = input_dim;
  p.hidden = hidden;
  p.forward = init_direction<T>(input_dim, hidden, rng);
  p.backward = init_direction<T>(input_dim, hidden, rng);
  return p;
}

template <typename T>
EncoderParams<T> init_encoder(const ModelConfig& config, Tensor<T> embeddings, std::mt19937_64& rng) {
  config.validate();
  if (embeddings.cols() != config.word_dim) {
    throw ShapeError("embedding table " + shape_string(embeddings.shape()) +
                     " does not match word_dim " + std::to_string(config.word_dim));
  }
  EncoderParams<T> p;
  p.config = config;
  p.embeddings = std::move(embeddings);
  if (config.use_elmo) p.mix = MixWeights<T>{};
  p.lstm = init_bilstm<T>(config.encoder_input_dim(), config.hidden, rng);
  if (config.use_attention) {
    const std::size_t d = config.output_dim();
    AttentionParams<T> a;
    a.w = glorot<T>(Shape{3 * d}, 3 * d, 1, rng);
    a.window = config.window;
    p.attention = std::move(a);
    p.fusion = init_bilstm<T>(2 * d, config.hidden, rng);
  }
  return p;
}

template <typename T>
void EncoderParams<T>::append_refs(std::vector<ParamRef<T>>& out) {
  if (attention) out.push_back({"encoder.attention.w", &attention->w, true});
  out.push_back({"encoder.embeddings", &embeddings, config.train_embeddings});
  if (fusion) append_lstm(out, "encoder.fusion", *fusion);
  append_lstm(out, "encoder.lstm", lstm);
  if (mix) {
    out.push_back({"encoder.mix.gamma", &mix->gamma, true});
    out.push_back({"encoder.mix.raw", &mix->raw, true});
  }
}

template <typename T>
Tensor<T> dropout_mask(Shape shape, double rate, std::mt19937_64& rng) {
  Tensor<T> m(std::move(shape));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& v : m.values()) v = u(rng) < rate ? T(0) : keep;
  return m;
}

// ---------------------------------------------------------------------------
// Contextual mixing

template <typename T>
Var<T> mix_contextual(ParamBinder<T>& bind, std::span<const Var<T>> layers, const MixWeights<T>& mix) {
  if (layers.size() != ContextualReps::kLayers || mix.raw.size() != ContextualReps::kLayers) {
    throw ShapeError("mix_contextual: expected 3 layers, got " + std::to_string(layers.size()));
  }
  Var<T> weights = ad::softmax(bind(mix.raw));
  Var<T> acc = ad::scale_by(layers[0], ad::element(weights, 0));
  for (std::size_t l = 1; l < layers.size(); ++l) {
    acc = ad::add(acc, ad::scale_by(layers[l], ad::element(weights, l)));
  }
  return ad::scale_by(acc, bind(mix.gamma));
}

template <typename T>
Tensor<T> mix_contextual(const Tensor<T>& reps, const MixWeights<T>& mix) {
  if (reps.rank() != 3 || reps.shape()[0] != ContextualReps::kLayers) {
    throw ShapeError("mix_contextual: expected 3 x T x D reps, got " + shape_string(reps.shape()));
  }
  const std::size_t T_ = reps.shape()[1], D = reps.shape()[2];
  Graph<T> g;
  ParamBinder<T> bind(g, {});
  std::vector<Var<T>> layers;
  for (std::size_t l = 0; l < ContextualReps::kLayers; ++l) {
    std::vector<T> v(reps.data() + l * T_ * D, reps.data() + (l + 1) * T_ * D);
    layers.push_back(g.constant(Tensor<T>(Shape{T_, D}, std::move(v))));
  }
  return mix_contextual<T>(bind, layers, mix).value();
}

// ---------------------------------------------------------------------------
// BiLSTM

namespace {

template <typename T>
std::vector<Var<T>> run_direction(ParamBinder<T>& bind, Var<T> inputs, const SequenceLayout& layout,
                                  const LstmWeights<T>& w, std::size_t H, bool reverse) {
  Graph<T>& g = bind.graph();
  const std::size_t B = layout.batch, steps = layout.max_len;
  Var<T> projected = ad::add_row(ad::matmul(inputs, bind(w.w_input)), bind(w.bias));
  Var<T> w_hidden = bind(w.w_hidden);
  Var<T> h = g.constant(Tensor<T>(Shape{B, H}));
  Var<T> c = h;
  const std::size_t widths[4] = {H, H, H, H};
  std::vector<Var<T>> outputs(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    Var<T> gates = ad::add(ad::slice_rows(projected, t * B, (t + 1) * B), ad::matmul(h, w_hidden));
    auto parts = ad::split_cols<T>(gates, widths);
    Var<T> in_gate = ad::sigmoid(parts[0]);
    Var<T> forget = ad::sigmoid(parts[1]);
    Var<T> cell = ad::tanh(parts[2]);
    Var<T> out_gate = ad::sigmoid(parts[3]);
    Var<T> c_new = ad::add(ad::mul(forget, c), ad::mul(in_gate, cell));
    Var<T> h_new = ad::mul(out_gate, ad::tanh(c_new));

    std::vector<std::uint8_t> active(B);
    bool all = true;
    for (std::size_t b = 0; b < B; ++b) {
      active[b] = t < layout.lengths[b];
      all = all && active[b];
    }
    if (all) {
      c = c_new;
      h = h_new;
    } else {
      c = ad::select_rows(c_new, c, active);
      h = ad::select_rows(h_new, h, std::move(active));
    }
    outputs[t] = h;
  }
  return outputs;
}

template <typename T>
Tensor<T> as_time_major(const Tensor<T>& x) {
  return x.rank() == 2 ? x : Tensor<T>(Shape{x.rows(), x.cols()}, x.storage());
}

}  // namespace

template <typename T>
Var<T> bilstm_encode(ParamBinder<T>& bind, Var<T> inputs, const SequenceLayout& layout,
                     const BiLSTMParams<T>& params) {
  const Tensor<T>& x = inputs.value();
  if (x.cols() != params.input_dim || x.rows() != layout.rows()) {
    throw ShapeError("bilstm_encode: input " + shape_string(x.shape()) + " but layer expects " +
                     std::to_string(layout.rows()) + " rows of width " +
                     std::to_string(params.input_dim));
  }
  if (layout.max_len == 0) throw ShapeError("bilstm_encode: empty sequence");
  auto fwd = run_direction(bind, inputs, layout, params.forward, params.hidden, false);
  auto bwd = run_direction(bind, inputs, layout, params.backward, params.hidden, true);
  Var<T> halves[2] = {ad::concat_rows<T>(fwd), ad::concat_rows<T>(bwd)};
  return ad::concat_cols<T>(halves);
}

template <typename T>
Tensor<T> bilstm_encode(const Tensor<T>& inputs, const BiLSTMParams<T>& params) {
  Graph<T> g;
  ParamBinder<T> bind(g, {});
  Var<T> x = g.constant(as_time_major(inputs));
  return bilstm_encode<T>(bind, x, SequenceLayout::single(x.value().rows()), params).value();
}

template <typename T>
Var<T> fuse(ParamBinder<T>& bind, Var<T> h, Var<T> a, const SequenceLayout& layout,
            const BiLSTMParams<T>& params) {
  if (h.shape() != a.shape()) {
    throw ShapeError("fuse: hidden " + shape_string(h.shape()) + " vs attention " +
                     shape_string(a.shape()));
  }
  if (params.input_dim != 2 * h.value().cols()) {
    throw ShapeError("fuse: fusion layer expects input width " + std::to_string(params.input_dim) +
                     ", got 2 x " + std::to_string(h.value().cols()));
  }
  Var<T> parts[2] = {h, a};
  return bilstm_encode<T>(bind, ad::concat_cols<T>(parts), layout, params);
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& h, const Tensor<T>& a, const BiLSTMParams<T>& params) {
  Graph<T> g;
  ParamBinder<T> bind(g, {});
  Var<T> hv = g.constant(as_time_major(h));
  Var<T> av = g.constant(as_time_major(a));
  return fuse<T>(bind, hv, av, SequenceLayout::single(hv.value().rows()), params).value();
}

// ---------------------------------------------------------------------------
// Restricted self-attention

namespace {

// Scores and softmax weights of query i over positions [lo, hi]:
// s_ij = w1.h_i + w2.h_j + w3.(h_i * h_j).
template <typename T, typename RowFn>
void window_weights(RowFn row, std::size_t D, const T* w, std::size_t i, std::size_t lo,
                    std::size_t hi, T* alpha) {
  const T* hi_row = row(i);
  const T* w1 = w;
  const T* w2 = w + D;
  const T* w3 = w + 2 * D;
  T base = T(0);
  for (std::size_t d = 0; d < D; ++d) base += w1[d] * hi_row[d];
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = lo; j <= hi; ++j) {
    const T* hj = row(j);
    T s = base;
    for (std::size_t d = 0; d < D; ++d) s += w2[d] * hj[d] + w3[d] * hi_row[d] * hj[d];
    alpha[j - lo] = s;
    mx = std::max(mx, s);
  }
  T total = T(0);
  for (std::size_t j = lo; j <= hi; ++j) {
    alpha[j - lo] = std::exp(alpha[j - lo] - mx);
    total += alpha[j - lo];
  }
  for (std::size_t j = lo; j <= hi; ++j) alpha[j - lo] /= total;
}

template <typename T>
class RestrictedAttentionOp final : public CustomOp<T> {
 public:
  RestrictedAttentionOp(SequenceLayout layout, AttentionWindow window)
      : layout_(std::move(layout)), window_(window) {}

  std::string_view name() const override { return "restricted_attention"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> inputs) const override {
    const Tensor<T>& h = *inputs[0];
    const Tensor<T>& w = *inputs[1];
    const std::size_t D = h.cols();
    if (w.size() != 3 * D) {
      throw ShapeError("restricted_attention: w_attn " + shape_string(w.shape()) +
                       " must hold 3 x " + std::to_string(D) + " values");
    }
    if (h.rows() != layout_.rows()) {
      throw ShapeError("restricted_attention: input " + shape_string(h.shape()) +
                       " does not match the batch layout");
    }
    Tensor<T> out(Shape{h.rows(), D});
    std::vector<T> alpha;
    for (std::size_t b = 0; b < layout_.batch; ++b) {
      const std::size_t len = layout_.lengths[b];
      auto row = [&](std::size_t t) { return h.data() + layout_.row(b, t) * D; };
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t lo = window_.lo(i), hi = window_.hi(i, len);
        alpha.resize(hi - lo + 1);
        window_weights(row, D, w.data(), i, lo, hi, alpha.data());
        T* dst = out.data() + layout_.row(b, i) * D;
        for (std::size_t j = lo; j <= hi; ++j) {
          const T a = alpha[j - lo];
          const T* hj = row(j);
          for (std::size_t d = 0; d < D; ++d) dst[d] += a * hj[d];
        }
      }
    }
    return out;
  }

  void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>&,
                const Tensor<T>& grad_out, std::span<Tensor<T>* const> grads) const override {
    const Tensor<T>& h = *inputs[0];
    const Tensor<T>& w = *inputs[1];
    Tensor<T>* dh = grads[0];
    Tensor<T>* dw = grads[1];
    const std::size_t D = h.cols();
    const T* w1 = w.data();
    const T* w2 = w.data() + D;
    const T* w3 = w.data() + 2 * D;
    std::vector<T> alpha, dscore;
    for (std::size_t b = 0; b < layout_.batch; ++b) {
      const std::size_t len = layout_.lengths[b];
      auto row = [&](std::size_t t) { return h.data() + layout_.row(b, t) * D; };
      auto grow = [&](Tensor<T>* g, std::size_t t) { return g->data() + layout_.row(b, t) * D; };
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t lo = window_.lo(i), hi = window_.hi(i, len);
        const std::size_t n = hi - lo + 1;
        alpha.resize(n);
        dscore.resize(n);
        window_weights(row, D, w.data(), i, lo, hi, alpha.data());
        const T* g = grad_out.data() + layout_.row(b, i) * D;
        const T* hi_row = row(i);

        T dot = T(0);
        for (std::size_t j = lo; j <= hi; ++j) {
          const T* hj = row(j);
          T da = T(0);
          for (std::size_t d = 0; d < D; ++d) da += g[d] * hj[d];
          dscore[j - lo] = da;
          dot += alpha[j - lo] * da;
        }
        T dsum = T(0);
        for (std::size_t j = lo; j <= hi; ++j) {
          const T a = alpha[j - lo];
          const T ds = a * (dscore[j - lo] - dot);
          dscore[j - lo] = ds;
          dsum += ds;
          if (dh) {
            T* dhj = grow(dh, j);
            for (std::size_t d = 0; d < D; ++d) {
              dhj[d] += a * g[d] + ds * (w2[d] + w3[d] * hi_row[d]);
            }
          }
        }
        if (dh) {
          T* dhi = grow(dh, i);
          for (std::size_t j = lo; j <= hi; ++j) {
            const T ds = dscore[j - lo];
            const T* hj = row(j);
            for (std::size_t d = 0; d < D; ++d) dhi[d] += ds * w3[d] * hj[d];
          }
          for (std::size_t d = 0; d < D; ++d) dhi[d] += dsum * w1[d];
        }
        if (dw) {
          T* dw1 = dw->data();
          T* dw2 = dw->data() + D;
          T* dw3 = dw->data() + 2 * D;
          for (std::size_t d = 0; d < D; ++d) dw1[d] += dsum * hi_row[d];
          for (std::size_t j = lo; j <= hi; ++j) {
            const T ds = dscore[j - lo];
            const T* hj = row(j);
            for (std::size_t d = 0; d < D; ++d) {
              dw2[d] += ds * hj[d];
              dw3[d] += ds * hi_row[d] * hj[d];
            }
          }
        }
      }
    }
  }

 private:
  SequenceLayout layout_;
  AttentionWindow window_;
};

}  // namespace

template <typename T>
Var<T> restricted_attention(ParamBinder<T>& bind, Var<T> h, const SequenceLayout& layout,
                            const AttentionParams<T>& params) {
  auto op = std::make_shared<const RestrictedAttentionOp<T>>(layout, params.window);
  Var<T> inputs[2] = {h, bind(params.w)};
  return ad::custom<T>(std::move(op), inputs);
}

template <typename T>
AttentionResult<T> restricted_attention(const Tensor<T>& h, const AttentionParams<T>& params) {
  const std::size_t len = h.rows(), D = h.cols();
  if (len == 0) throw ShapeError("restricted_attention: empty sequence");
  if (params.w.size() != 3 * D) {
    throw ShapeError("restricted_attention: w_attn " + shape_string(params.w.shape()) +
                     " must hold 3 x " + std::to_string(D) + " values");
  }
  AttentionResult<T> r;
  r.attended = Tensor<T>(Shape{len, D});
  r.weights = Tensor<T>(Shape{len, len});
  auto row = [&](std::size_t t) { return h.data() + t * D; };
  std::vector<T> alpha;
  for (std::size_t i = 0; i < len; ++i) {
    const std::size_t lo = params.window.lo(i), hi = params.window.hi(i, len);
    alpha.resize(hi - lo + 1);
    window_weights(row, D, params.w.data(), i, lo, hi, alpha.data());
    for (std::size_t j = lo; j <= hi; ++j) {
      r.weights.at(i, j) = alpha[j - lo];
      for (std::size_t d = 0; d < D; ++d) r.attended.at(i, d) += alpha[j - lo] * h.at(j, d);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Full pipeline

template <typename T>
Tensor<T> EncoderOutput<T>::dense() const {
  const Tensor<T>& v = hidden.value();
  const std::size_t D = v.cols(), B = layout.batch, Tm = layout.max_len;
  Tensor<T> out(Shape{B, Tm, D});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < layout.lengths[b]; ++t) {
      std::copy_n(v.data() + layout.row(b, t) * D, D, out.data() + (b * Tm + t) * D);
    }
  }
  return out;
}

template <typename T>
Tensor<T> EncoderOutput<T>::sentence(std::size_t b) const {
  const Tensor<T>& v = hidden.value();
  const std::size_t D = v.cols(), len = layout.lengths.at(b);
  Tensor<T> out(Shape{len, D});
  for (std::size_t t = 0; t < len; ++t) {
    std::copy_n(v.data() + layout.row(b, t) * D, D, out.data() + t * D);
  }
  return out;
}

template <typename T>
EncoderOutput<T> encode_sentence(ParamBinder<T>& bind, const Batch& batch,
                                 const EncoderParams<T>& params, bool train_mode,
                                 std::mt19937_64* rng) {
  const ModelConfig& cfg = params.config;
  if (cfg.use_elmo) {
    if (!batch.has_reps()) throw ConfigError("use_elmo is set but the batch carries no contextual reps");
    if (batch.rep_layers() != ContextualReps::kLayers || batch.rep_dim() != cfg.context_dim) {
      throw ShapeError("contextual reps " + shape_string(batch.reps.shape()) +
                       " do not match context_dim " + std::to_string(cfg.context_dim));
    }
  }
  const bool dropping = train_mode && cfg.dropout > 0;
  if (dropping && !rng) throw ContractError("encode_sentence: train mode needs a dropout generator");

  Graph<T>& g = bind.graph();
  SequenceLayout layout = SequenceLayout::of(batch);
  const std::size_t B = layout.batch, Tm = layout.max_len, N = layout.rows();

  std::vector<std::size_t> ids(N);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < Tm; ++t) ids[layout.row(b, t)] = batch.token_id(b, t);
  }
  Var<T> x;
  if (cfg.train_embeddings) {
    x = ad::gather_rows(bind(params.embeddings), std::move(ids));
  } else {
    const std::size_t Dw = params.embeddings.cols();
    Tensor<T> emb(Shape{N, Dw});
    for (std::size_t r = 0; r < N; ++r) {
      if (ids[r] >= params.embeddings.rows()) {
        throw ShapeError("token id " + std::to_string(ids[r]) + " outside the embedding table");
      }
      std::copy_n(params.embeddings.data() + ids[r] * Dw, Dw, emb.data() + r * Dw);
    }
    x = g.constant(std::move(emb));
  }

  if (cfg.use_elmo) {
    const std::size_t L = batch.rep_layers(), Dc = batch.rep_dim();
    std::vector<Var<T>> layers;
    for (std::size_t l = 0; l < L; ++l) {
      Tensor<T> layer(Shape{N, Dc});
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < Tm; ++t) {
          const float* src = batch.reps.data() + ((b * L + l) * Tm + t) * Dc;
          T* dst = layer.data() + layout.row(b, t) * Dc;
          for (std::size_t d = 0; d < Dc; ++d) dst[d] = static_cast<T>(src[d]);
        }
      }
      layers.push_back(g.constant(std::move(layer)));
    }
    Var<T> parts[2] = {x, mix_contextual<T>(bind, layers, *params.mix)};
    x = ad::concat_cols<T>(parts);
  }

  if (dropping) x = ad::mul_const(x, dropout_mask<T>(x.shape(), cfg.dropout, *rng));
  Var<T> h = bilstm_encode(bind, x, layout, params.lstm);
  if (cfg.use_attention) {
    Var<T> a = restricted_attention(bind, h, layout, *params.attention);
    h = fuse(bind, h, a, layout, *params.fusion);
  }
  if (dropping) h = ad::mul_const(h, dropout_mask<T>(h.shape(), cfg.dropout, *rng));
  return EncoderOutput<T>{h, std::move(layout)};
}

#define EDUSEG_INSTANTIATE(T)                                                                   \
  template struct EncoderParams<T>;                                                             \
  template struct EncoderOutput<T>;                                                             \
  template BiLSTMParams<T> init_bilstm<T>(std::size_t, std::size_t, std::mt19937_64&);          \
  template EncoderParams<T> init_encoder<T>(const ModelConfig&, Tensor<T>, std::mt19937_64&);   \
  template Tensor<T> dropout_mask<T>(Shape, double, std::mt19937_64&);                          \
  template Tensor<T> mix_contextual<T>(const Tensor<T>&, const MixWeights<T>&);                 \
  template Var<T> mix_contextual<T>(ParamBinder<T>&, std::span<const Var<T>>,                   \
                                    const MixWeights<T>&);                                      \
  template Tensor<T> bilstm_encode<T>(const Tensor<T>&, const BiLSTMParams<T>&);                \
  template Var<T> bilstm_encode<T>(ParamBinder<T>&, Var<T>, const SequenceLayout&,              \
                                   const BiLSTMParams<T>&);                                     \
  template AttentionResult<T> restricted_attention<T>(const Tensor<T>&,                         \
                                                      const AttentionParams<T>&);               \
  template Var<T> restricted_attention<T>(ParamBinder<T>&, Var<T>, const SequenceLayout&,       \
                                          const AttentionParams<T>&);                           \
  template Tensor<T> fuse<T>(const Tensor<T>&, const Tensor<T>&, const BiLSTMParams<T>&);       \
  template Var<T> fuse<T>(ParamBinder<T>&, Var<T>, Var<T>, const SequenceLayout&,               \
                          const BiLSTMParams<T>&);                                              \
  template EncoderOutput<T> encode_sentence<T>(ParamBinder<T>&, const Batch&,                   \
                                               const EncoderParams<T>&, bool, std::mt19937_64*);

EDUSEG_INSTANTIATE(float)
EDUSEG_INSTANTIATE(double)

#undef EDUSEG_INSTANTIATE

}  // namespace eduseg
