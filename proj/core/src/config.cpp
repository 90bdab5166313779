#include "eduseg/config.hpp"

#include <charconv>
#include <cmath>

#include <json.hpp>

#include "eduseg/error.hpp"

namespace eduseg {

using nlohmann::json;

AttentionWindow AttentionWindow::bounded(std::size_t k) {
  if (k < 1) throw ConfigError("attention window K must be at least 1 (or unbounded)");
  return AttentionWindow(k);
}

AttentionWindow AttentionWindow::parse(std::string_view text) {
  if (text == "inf" || text == "unbounded" || text == "infinity") return unbounded();
  std::size_t k = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), k);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw ConfigError("invalid attention window '" + std::string(text) + "'");
  }
  return bounded(k);
}

std::string AttentionWindow::to_string() const {
  return is_unbounded() ? "inf" : std::to_string(k_);
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) fail("learning_rate must be >= 0");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(dropout >= 0 && dropout < 1)) fail("dropout must be in [0, 1)");
  if (!(l2_weight >= 0)) fail("l2_weight must be >= 0");
  if (!(clip_norm > 0)) fail("clip_norm must be > 0");
  if (!(ema_decay >= 0 && ema_decay <= 1)) fail("ema_decay must be in [0, 1]");
  if (hidden == 0) fail("hidden must be positive");
  if (max_epochs == 0) fail("max_epochs must be positive");
  if (patience == 0) fail("patience must be positive");
  if (workers == 0) fail("workers must be positive");
}

void ModelConfig::validate() const {
  if (word_dim == 0) throw ConfigError("word embedding dimension is zero");
  if (use_elmo && context_dim == 0) throw ConfigError("use_elmo requires contextual representations");
  if (hidden == 0) throw ConfigError("hidden must be positive");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
}

ModelConfig model_config_for(const TrainConfig& train, std::size_t word_dim, std::size_t context_dim) {
  ModelConfig m;
  m.word_dim = word_dim;
  m.context_dim = train.use_elmo ? context_dim : 0;
  m.hidden = train.hidden;
  m.window = train.window;
  m.use_elmo = train.use_elmo;
  m.use_attention = train.use_attention;
  m.dropout = train.dropout;
  m.validate();
  return m;
}

namespace {

json window_json(const AttentionWindow& w) {
  if (w.is_unbounded()) return "inf";
  return w.k();
}

AttentionWindow window_from(const json& j) {
  if (j.is_string()) return AttentionWindow::parse(j.get<std::string>());
  if (j.is_number_unsigned() || j.is_number_integer()) {
    const auto k = j.get<std::int64_t>();
    if (k < 1) throw ConfigError("attention window K must be at least 1 (or \"inf\")");
    return AttentionWindow::bounded(static_cast<std::size_t>(k));
  }
  throw ConfigError("attention window must be an integer or \"inf\"");
}

template <typename F>
auto guarded(std::string_view what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::string to_json(const TrainConfig& c) {
  json j = {
      {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
      {"dropout", c.dropout},             {"l2_weight", c.l2_weight},
      {"clip_norm", c.clip_norm},         {"ema_decay", c.ema_decay},
      {"ema_warmup", c.ema_warmup},       {"window", window_json(c.window)},
      {"hidden", c.hidden},               {"max_epochs", c.max_epochs},
      {"patience", c.patience},           {"seed", c.seed},
      {"use_elmo", c.use_elmo},           {"use_attention", c.use_attention},
      {"workers", c.workers},
  };
  return j.dump();
}

std::string to_json(const ModelConfig& c) {
  json j = {
      {"word_dim", c.word_dim},       {"context_dim", c.context_dim},
      {"hidden", c.hidden},           {"window", window_json(c.window)},
      {"use_elmo", c.use_elmo},       {"use_attention", c.use_attention},
      {"train_embeddings", c.train_embeddings}, {"dropout", c.dropout},
  };
  return j.dump();
}

TrainConfig train_config_from_json(std::string_view text) {
  return guarded("train config", [&] {
    const json j = json::parse(text);
    TrainConfig c;
    for (const auto& [key, v] : j.items()) {
      if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "dropout") c.dropout = v.get<double>();
      else if (key == "l2_weight") c.l2_weight = v.get<double>();
      else if (key == "clip_norm") c.clip_norm = v.get<double>();
      else if (key == "ema_decay") c.ema_decay = v.get<double>();
      else if (key == "ema_warmup") c.ema_warmup = v.get<bool>();
      else if (key == "window") c.window = window_from(v);
      else if (key == "hidden") c.hidden = v.get<std::size_t>();
      else if (key == "max_epochs") c.max_epochs = v.get<std::size_t>();
      else if (key == "patience") c.patience = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "use_elmo") c.use_elmo = v.get<bool>();
      else if (key == "use_attention") c.use_attention = v.get<bool>();
      else if (key == "workers") c.workers = v.get<std::size_t>();
      else throw ConfigError("unknown train config key '" + key + "'");
    }
    c.validate();
    return c;
  });
}

ModelConfig model_config_from_json(std::string_view text) {
  return guarded("model config", [&] {
    const json j = json::parse(text);
    ModelConfig c;
    for (const auto& [key, v] : j.items()) {
      if (key == "word_dim") c.word_dim = v.get<std::size_t>();
      else if (key == "context_dim") c.context_dim = v.get<std::size_t>();
      else if (key == "hidden") c.hidden = v.get<std::size_t>();
      else if (key == "window") c.window = window_from(v);
      else if (key == "use_elmo") c.use_elmo = v.get<bool>();
      else if (key == "use_attention") c.use_attention = v.get<bool>();
      else if (key == "train_embeddings") c.train_embeddings = v.get<bool>();
      else if (key == "dropout") c.dropout = v.get<double>();
      else throw ConfigError("unknown model config key '" + key + "'");
    }
    c.validate();
    return c;
  });
}

}  // namespace eduseg
