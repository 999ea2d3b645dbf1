#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "comma/encoder.hpp"
#include "comma/training.hpp"

namespace comma::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kDivergence = 4 };

inline constexpr std::uint64_t kDefaultSeed = 42;

// Everything a JSON run-config file can set. Keys mirror the field names.
struct RunConfig {
  EncoderConfig encoder;
  TrainConfig train;
  MlmSchedule pretrain;
  std::optional<std::filesystem::path> train_path, dev_path, test_path, emoji_map, out_dir, init_checkpoint, corpus;
};

// Applies a JSON object onto config. Unknown keys or wrongly-typed values throw ConfigError.
void apply_config_json(RunConfig& config, const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// Runs one subcommand; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace comma::cli
