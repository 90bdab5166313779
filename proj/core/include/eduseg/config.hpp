#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace eduseg {

// Attention neighbourhood: positions within distance K of the query, or the
// whole sentence when unbounded.
class AttentionWindow {
 public:
  static AttentionWindow unbounded() { return AttentionWindow(0); }
  static AttentionWindow bounded(std::size_t k);
  // Accepts a positive integer, "inf" or "unbounded".
  static AttentionWindow parse(std::string_view text);

  bool is_unbounded() const { return k_ == 0; }
  std::size_t k() const { return k_; }
  // First/last positions (inclusive) attended by query i in a sentence of `len` tokens.
  std::size_t lo(std::size_t i) const { return is_unbounded() || i < k_ ? 0 : i - k_; }
  std::size_t hi(std::size_t i, std::size_t len) const {
    return is_unbounded() || i + k_ >= len ? len - 1 : i + k_;
  }
  std::string to_string() const;

  friend bool operator==(const AttentionWindow&, const AttentionWindow&) = default;

 private:
  explicit AttentionWindow(std::size_t k) : k_(k) {}
  std::size_t k_;  // 0 encodes "unbounded"
};

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  double dropout = 0.1;
  double l2_weight = 1e-4;
  double clip_norm = 5.0;
  double ema_decay = 0.9999;
  // Caps the EMA decay at (1 + step) / (10 + step) early in training.
  bool ema_warmup = true;
  AttentionWindow window = AttentionWindow::bounded(5);
  std::size_t hidden = 200;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 1;
  bool use_elmo = false;
  bool use_attention = true;
  std::size_t workers = 1;

  // Throws ConfigError on out-of-range values.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Architecture as instantiated: the dimensions come from the data files.
struct ModelConfig {
  std::size_t word_dim = 0;
  std::size_t context_dim = 0;
  std::size_t hidden = 200;
  AttentionWindow window = AttentionWindow::bounded(5);
  bool use_elmo = false;
  bool use_attention = true;
  bool train_embeddings = false;
  double dropout = 0.1;

  std::size_t encoder_input_dim() const { return word_dim + (use_elmo ? context_dim : 0); }
  std::size_t output_dim() const { return 2 * hidden; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

ModelConfig model_config_for(const TrainConfig& train, std::size_t word_dim, std::size_t context_dim);

std::string to_json(const TrainConfig& config);
std::string to_json(const ModelConfig& config);
TrainConfig train_config_from_json(std::string_view json);
ModelConfig model_config_from_json(std::string_view json);

}  // namespace eduseg
