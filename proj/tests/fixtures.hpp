#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "comma/labels.hpp"

namespace fixtures {

struct Shape {
  std::size_t nag, cag, oag, gen, com;
};

inline constexpr Shape kMeiteiTrain{1258, 1495, 456, 203, 242};
inline constexpr Shape kBengaliDev{333, 157, 501, 367, 112};

// Rows with exactly the given per-class counts; GEN and COM go to the first rows.
inline std::vector<comma::Example> dataset_with(const Shape& s) {
  std::vector<comma::Example> rows;
  const std::size_t total = s.nag + s.cag + s.oag;
  for (std::size_t i = 0; i < total; ++i) {
    comma::Example e;
    e.id = "r" + std::to_string(i);
    e.text = "text " + std::to_string(i);
    e.labels.aggression = i < s.nag ? comma::Aggression::NAG
                          : i < s.nag + s.cag ? comma::Aggression::CAG
                                              : comma::Aggression::OAG;
    e.labels.gender = i < s.gen ? comma::Gender::GEN : comma::Gender::NGEN;
    e.labels.communal = i < s.com ? comma::Communal::COM : comma::Communal::NCOM;
    rows.push_back(std::move(e));
  }
  return rows;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("comma_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
