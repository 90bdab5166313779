#include <algorithm>

#include <json.hpp>

#include "eduseg/cli.hpp"
#include "eduseg/error.hpp"

namespace eduseg::cli {

using nlohmann::json;

namespace {

const std::vector<std::string> kTrainKeys = {
    "learning_rate", "batch_size", "dropout",  "l2_weight", "clip_norm",     "ema_decay", "ema_warmup",
    "window",        "hidden",     "max_epochs", "patience", "seed",         "use_elmo",  "use_attention",
    "workers",
};

std::string need_string(const std::string& key, const json& v) {
  if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
  return v.get<std::string>();
}

std::size_t need_size(const std::string& key, const json& v) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k = kTrainKeys;
    for (const char* extra : {"train_embeddings", "train", "val", "corpus", "input", "output", "embeddings", "reps",
                              "val_reps", "checkpoint", "metrics", "batch_sizes", "repetitions", "warmup",
                              "bench_json"}) {
      k.emplace_back(extra);
    }
    return k;
  }();
  return keys;
}

void apply_json(CliConfig& config, const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  json train = json::parse(to_json(config.train));
  bool train_touched = false;
  for (const auto& [key, v] : j.items()) {
    if (std::find(kTrainKeys.begin(), kTrainKeys.end(), key) != kTrainKeys.end()) {
      train[key] = v;
      train_touched = true;
    } else if (key == "train_embeddings") {
      if (!v.is_boolean()) throw ConfigError("config key 'train_embeddings' must be true or false");
      config.train_embeddings = v.get<bool>();
    } else if (key == "train") {
      config.train_path = need_string(key, v);
    } else if (key == "val") {
      config.val_path = need_string(key, v);
    } else if (key == "corpus") {
      config.corpus = need_string(key, v);
    } else if (key == "input") {
      config.input = need_string(key, v);
    } else if (key == "output") {
      config.output = need_string(key, v);
    } else if (key == "embeddings") {
      config.embeddings = need_string(key, v);
    } else if (key == "reps") {
      config.reps = need_string(key, v);
    } else if (key == "val_reps") {
      config.val_reps = need_string(key, v);
    } else if (key == "checkpoint") {
      config.checkpoint = need_string(key, v);
    } else if (key == "metrics") {
      config.metrics = need_string(key, v);
    } else if (key == "bench_json") {
      config.bench_json = need_string(key, v);
    } else if (key == "repetitions") {
      config.repetitions = need_size(key, v);
    } else if (key == "warmup") {
      config.warmup = need_size(key, v);
    } else if (key == "batch_sizes") {
      if (!v.is_array() || v.empty()) throw ConfigError("config key 'batch_sizes' must be a non-empty list");
      std::vector<std::size_t> sizes;
      for (const auto& e : v) sizes.push_back(need_size(key, e));
      config.batch_sizes = std::move(sizes);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  if (train_touched) {
    for (const char* k : {"learning_rate", "dropout", "l2_weight", "clip_norm", "ema_decay"}) {
      if (!train[k].is_number()) throw ConfigError(std::string("config key '") + k + "' must be a number");
    }
    for (const char* k : {"batch_size", "hidden", "max_epochs", "patience", "seed", "workers"}) {
      need_size(k, train[k]);
    }
    for (const char* k : {"ema_warmup", "use_elmo", "use_attention"}) {
      if (!train[k].is_boolean()) throw ConfigError(std::string("config key '") + k + "' must be true or false");
    }
    config.train = train_config_from_json(train.dump());
  }
}

}  // namespace eduseg::cli
