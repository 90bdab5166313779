#include "eduseg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include <json.hpp>

namespace eduseg {

template <typename T>
T global_norm(const Gradients<T>& grads) {
  double sq = 0.0;
  for (const auto& [slot, g] : grads) {
    for (T v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  return static_cast<T>(std::sqrt(sq));
}

template <typename T>
Gradients<T> clip_gradients(Gradients<T> grads, T max_norm) {
  if (!(max_norm > T(0))) throw ContractError("clip_gradients: max_norm must be positive");
  const T norm = global_norm(grads);
  if (norm > max_norm) grads.scale(max_norm / norm);
  return grads;
}

template <typename T>
OptimizerState<T> OptimizerState<T>::init(std::span<const ParamRef<T>> params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.m.push_back(p.trainable ? Tensor<T>(p.tensor->shape()) : Tensor<T>());
    s.v.push_back(p.trainable ? Tensor<T>(p.tensor->shape()) : Tensor<T>());
  }
  return s;
}

template <typename T>
void adam_step(std::span<const ParamRef<T>> params, const Gradients<T>& grads, OptimizerState<T>& state,
               T learning_rate, T l2_weight) {
  if (state.m.size() != params.size()) throw ShapeError("optimizer state does not match parameters");
  state.step += 1;
  const T c1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
  const T c2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    Tensor<T>& w = *params[i].tensor;
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    if (m.shape() != w.shape()) throw ShapeError("optimizer moment shape mismatch for " + params[i].name);
    const Tensor<T>* g = grads.contains(i) ? &grads.at(i) : nullptr;
    if (g && g->shape() != w.shape()) throw ShapeError("gradient shape mismatch for " + params[i].name);
    for (std::size_t k = 0; k < w.size(); ++k) {
      const T gk = (g ? (*g)[k] : T(0)) + l2_weight * w[k];
      m[k] = state.beta1 * m[k] + (T(1) - state.beta1) * gk;
      v[k] = state.beta2 * v[k] + (T(1) - state.beta2) * gk * gk;
      const T mhat = m[k] / c1;
      const T vhat = v[k] / c2;
      w[k] -= learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

template <typename T>
EMAState<T> EMAState<T>::init(std::span<const ParamRef<T>> params, T decay) {
  EMAState s;
  s.decay = decay;
  for (const auto& p : params) s.shadow.push_back(p.trainable ? *p.tensor : Tensor<T>());
  return s;
}

template <typename T>
void ema_update(EMAState<T>& ema, std::span<const ParamRef<T>> params, std::optional<T> decay) {
  if (ema.shadow.size() != params.size()) throw ShapeError("EMA state does not match parameters");
  const T d = decay.value_or(ema.decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    Tensor<T>& s = ema.shadow[i];
    const Tensor<T>& p = *params[i].tensor;
    if (s.shape() != p.shape()) throw ShapeError("EMA shadow shape mismatch for " + params[i].name);
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = d * s[k] + (T(1) - d) * p[k];
  }
}

double ema_effective_decay(double decay, std::size_t step, bool warmup) {
  if (!warmup) return decay;
  const double n = static_cast<double>(step);
  return std::min(decay, (1.0 + n) / (10.0 + n));
}

template <typename T>
SegmenterParams<T> with_shadow(const SegmenterParams<T>& params, const EMAState<T>& ema) {
  SegmenterParams<T> out = params;
  auto refs = out.refs();
  if (refs.size() != ema.shadow.size()) throw ShapeError("EMA state does not match parameters");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].trainable) *refs[i].tensor = ema.shadow[i];
  }
  return out;
}

std::string EpochMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["train_nll"] = train_nll;
  if (val) {
    j["val_p"] = val->precision;
    j["val_r"] = val->recall;
    j["val_f1"] = val->f1;
  } else {
    j["val_p"] = nullptr;
    j["val_r"] = nullptr;
    j["val_f1"] = nullptr;
  }
  j["seconds"] = seconds;
  return j.dump();
}

LossAndGrads<float> parallel_loss_and_gradients(const SegmenterParams<float>& params,
                                                std::span<const Sentence> sentences,
                                                std::span<const std::size_t> indices,
                                                const ContextualReps* reps, const Vocab& vocab,
                                                std::size_t workers, bool train_mode,
                                                std::uint64_t dropout_seed) {
  const std::size_t n = indices.size();
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::vector<LossAndGrads<float>> parts(workers);
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](std::size_t c) {
    try {
      const std::size_t lo = n * c / workers;
      const std::size_t hi = n * (c + 1) / workers;
      Batch batch = make_batch(sentences, indices.subspan(lo, hi - lo), reps, vocab);
      std::seed_seq seq{dropout_seed, static_cast<std::uint64_t>(c)};
      std::mt19937_64 rng(seq);
      parts[c] = loss_and_gradients(params, batch, train_mode, &rng, n);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t c = 0; c < workers; ++c) pool.emplace_back(run, c);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  LossAndGrads<float> out = std::move(parts[0]);
  for (std::size_t c = 1; c < workers; ++c) {
    out.loss += parts[c].loss;
    out.grads.merge(parts[c].grads);
  }
  return out;
}

TrainResult train(const TrainConfig& config, const Vocab& vocab, const EmbeddingTable& embeddings,
                  const Dataset& train_set, const Dataset& val_set, const EpochCallback& on_epoch,
                  std::optional<TrainState> initial) {
  config.validate();
  if (train_set.empty()) throw ContractError("training set is empty");
  if (embeddings.rows() != vocab.size()) {
    throw ShapeError("embedding table has " + std::to_string(embeddings.rows()) + " rows for a vocabulary of " +
                     std::to_string(vocab.size()));
  }
  if (config.use_elmo && (!train_set.reps || (!val_set.empty() && !val_set.reps))) {
    throw ConfigError("use_elmo requires contextual representations for every split");
  }
  const ContextualReps* train_reps = config.use_elmo ? train_set.reps_ptr() : nullptr;
  const ContextualReps* val_reps = config.use_elmo ? val_set.reps_ptr() : nullptr;
  if (train_reps) check_alignment(*train_reps, train_set.sentences);
  if (val_reps) check_alignment(*val_reps, val_set.sentences);

  ModelConfig mc = model_config_for(config, embeddings.dim(), train_reps ? train_reps->dim : 0);
  mc.train_embeddings = embeddings.trainable;

  TrainState state;
  if (initial) {
    state = std::move(*initial);
    if (!(state.params.config() == mc)) throw ConfigError("resumed model does not match the configuration");
  } else {
    state.params = init_segmenter<float>(mc, embeddings.matrix, config.seed);
    auto refs = state.params.refs();
    state.optimizer = OptimizerState<float>::init(refs);
    state.ema = EMAState<float>::init(refs, static_cast<float>(config.ema_decay));
  }

  TrainResult result;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train_set.sentences.size());
  const auto lr = static_cast<float>(config.learning_rate);
  const auto l2 = static_cast<float>(config.l2_weight);
  const auto clip = static_cast<float>(config.clip_norm);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq shuffle_seq{config.seed, static_cast<std::uint64_t>(epoch), std::uint64_t{0x5eed}};
    std::mt19937_64 shuffle_rng(shuffle_seq);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double nll_sum = 0.0;
    std::size_t batches = 0;
    auto refs = state.params.refs();
    for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + config.batch_size);
      const std::uint64_t dropout_seed = config.seed * 0x9E3779B97F4A7C15ull + epoch * 1000003ull + batches;
      auto lg = parallel_loss_and_gradients(state.params, train_set.sentences,
                                            std::span<const std::size_t>(order).subspan(lo, hi - lo),
                                            train_reps, vocab, config.workers, true, dropout_seed);
      if (!std::isfinite(lg.loss)) {
        throw NumericError("non-finite loss " + std::to_string(lg.loss) + " at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batches + 1));
      }
      Gradients<float> grads = clip_gradients(std::move(lg.grads), clip);
      adam_step<float>(refs, grads, state.optimizer, lr, l2);
      const double d = ema_effective_decay(config.ema_decay, state.optimizer.step, config.ema_warmup);
      ema_update<float>(state.ema, refs, static_cast<float>(d));
      nll_sum += lg.loss;
      ++batches;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_nll = nll_sum / static_cast<double>(batches);
    bool improved = true;
    if (!val_set.empty()) {
      em.val = evaluate_corpus(state.inference_params(), vocab, val_set.sentences, val_reps,
                               config.batch_size, config.workers);
      improved = !result.best_val || em.val->f1 > result.best_val->f1;
    }
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(em);
    if (on_epoch) on_epoch(em);

    if (improved) {
      result.best = state;
      result.best_epoch = epoch;
      result.best_val = em.val;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

template float global_norm<float>(const Gradients<float>&);
template double global_norm<double>(const Gradients<double>&);
template Gradients<float> clip_gradients<float>(Gradients<float>, float);
template Gradients<double> clip_gradients<double>(Gradients<double>, double);
template struct OptimizerState<float>;
template struct OptimizerState<double>;
template struct EMAState<float>;
template struct EMAState<double>;
template void adam_step<float>(std::span<const ParamRef<float>>, const Gradients<float>&,
                               OptimizerState<float>&, float, float);
template void adam_step<double>(std::span<const ParamRef<double>>, const Gradients<double>&,
                                OptimizerState<double>&, double, double);
template void ema_update<float>(EMAState<float>&, std::span<const ParamRef<float>>, std::optional<float>);
template void ema_update<double>(EMAState<double>&, std::span<const ParamRef<double>>, std::optional<double>);
template SegmenterParams<float> with_shadow<float>(const SegmenterParams<float>&, const EMAState<float>&);
template SegmenterParams<double> with_shadow<double>(const SegmenterParams<double>&, const EMAState<double>&);

}  // namespace eduseg
