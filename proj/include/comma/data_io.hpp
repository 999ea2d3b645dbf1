#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "comma/labels.hpp"
#include "comma/model.hpp"
#include "comma/text_pipeline.hpp"

namespace comma {

// ---------------------------------------------------------------------------
// Datasets: UTF-8 TSV with header id, text, aggression, gender, communal.

struct LoadOptions {
  bool require_text = true;     // prediction files may omit the text column
  bool require_labels = true;   // prediction inputs may omit label columns
  bool allow_empty_text = false;
};

std::vector<Example> parse_dataset(std::string_view content, const LoadOptions& options = {});
std::vector<Example> load_dataset(const std::filesystem::path& path, const LoadOptions& options = {});

// Writes the full five-column schema. Throws DataError if a field contains a tab or newline.
std::string format_dataset(std::span<const Example> rows);
void write_dataset(const std::filesystem::path& path, std::span<const Example> rows);

struct DistributionTable {
  std::size_t nag = 0, cag = 0, oag = 0;
  std::size_t ngen = 0, gen = 0;
  std::size_t ncom = 0, com = 0;
  std::size_t total = 0;

  bool consistent() const { return nag + cag + oag == total && ngen + gen == total && ncom + com == total; }
  friend bool operator==(const DistributionTable&, const DistributionTable&) = default;
};

DistributionTable class_distribution(std::span<const Example> dataset);
std::string distribution_text(const DistributionTable& table);
std::string distribution_json(const DistributionTable& table);

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "CMMA" | u32 LE version | u32 LE header length | JSON header | f32 LE blobs
//
// The header carries the encoder config, pooler kind, vocabulary, emoji map,
// the parameter name/shape table and free-form metadata. Blobs follow in table order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams<float> model;
  Vocab vocab;
  EmojiMap emoji_map;
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace comma
