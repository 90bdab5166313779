#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "eduseg/config.hpp"

namespace eduseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Everything a subcommand can be configured with. JSON config files use the
// snake_case field names; flags use the kebab-case spelling.
struct CliConfig {
  TrainConfig train;
  bool train_embeddings = false;

  std::string train_path;
  std::string val_path;
  std::string corpus;
  std::string input;
  std::string output;
  std::string embeddings;
  std::string reps;
  std::string val_reps;
  std::string checkpoint;
  std::string metrics;

  std::vector<std::size_t> batch_sizes = {1, 32};
  std::size_t repetitions = 5;
  std::size_t warmup = 1;
  std::string bench_json;
};

// Merges `json_text` over `config`. Unknown keys and mistyped values raise ConfigError.
void apply_json(CliConfig& config, const std::string& json_text);
// Every recognised key, in declaration order.
const std::vector<std::string>& config_keys();

struct BenchRow {
  std::size_t batch_size = 0;
  std::vector<double> samples;  // sentences per second, one per repetition
  double median = 0;
  double speedup = 1;
};

// Throughput at each batch size after a decode-equality check against batch
// size 1. Throws Error when decodes differ.
std::vector<BenchRow> run_bench(const CliConfig& config, std::ostream& log);

// Decodes the whole corpus at the given batch size.
using Decoder = std::function<std::vector<std::vector<int>>(std::size_t batch_size)>;

// Timing loop behind run_bench; batch size 1 is always measured first and
// every other size must reproduce its decodes exactly.
std::vector<BenchRow> time_decoder(std::vector<std::size_t> sizes, std::size_t sentence_count,
                                   std::size_t repetitions, std::size_t warmup, const Decoder& decode,
                                   std::ostream& log);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace eduseg::cli
