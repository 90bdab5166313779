#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eduseg/config.hpp"
#include "eduseg/corpus.hpp"
#include "eduseg/model.hpp"
#include "eduseg/trainer.hpp"

namespace eduseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  Vocab vocab;
  SegmenterParams<float> params;
  EMAState<float> ema;
  std::optional<OptimizerState<float>> optimizer;

  static Checkpoint from_state(const TrainConfig& config, const Vocab& vocab, const TrainState& state,
                               bool with_optimizer = true);
  // EMA weights, used for evaluation and segmentation.
  SegmenterParams<float> inference_params() const { return with_shadow(params, ema); }
  // Resumable state; requires the optimizer records.
  TrainState train_state() const;
};

// Canonical CKPT1 bytes: identical checkpoints serialize identically.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c,
                                               std::uint32_t version = kCheckpointVersion);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");

// Writes to a sibling temp file, then renames over `path`.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace eduseg
