#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace comma {

enum class Task { kAggression = 0, kGender = 1, kCommunal = 2 };

inline constexpr std::array<Task, 3> kTasks = {Task::kAggression, Task::kGender, Task::kCommunal};

// Class order is fixed: index i of a task's head predicts class_names(task)[i].
enum class Aggression { NAG = 0, CAG = 1, OAG = 2 };
enum class Gender { NGEN = 0, GEN = 1 };
enum class Communal { NCOM = 0, COM = 1 };

struct TriLabel {
  Aggression aggression = Aggression::NAG;
  Gender gender = Gender::NGEN;
  Communal communal = Communal::NCOM;

  int index(Task task) const {
    switch (task) {
      case Task::kAggression: return static_cast<int>(aggression);
      case Task::kGender: return static_cast<int>(gender);
      case Task::kCommunal: return static_cast<int>(communal);
    }
    return 0;
  }
  void set(Task task, int cls) {
    switch (task) {
      case Task::kAggression: aggression = static_cast<Aggression>(cls); break;
      case Task::kGender: gender = static_cast<Gender>(cls); break;
      case Task::kCommunal: communal = static_cast<Communal>(cls); break;
    }
  }

  friend bool operator==(const TriLabel&, const TriLabel&) = default;
};

struct Example {
  std::string id;
  std::string text;
  TriLabel labels;
};

inline constexpr std::size_t num_classes(Task task) { return task == Task::kAggression ? 3 : 2; }

inline constexpr std::string_view task_name(Task task) {
  switch (task) {
    case Task::kAggression: return "aggression";
    case Task::kGender: return "gender";
    case Task::kCommunal: return "communal";
  }
  return "";
}

inline constexpr std::string_view class_name(Task task, int cls) {
  constexpr std::array<std::string_view, 3> agg = {"NAG", "CAG", "OAG"};
  constexpr std::array<std::string_view, 2> gen = {"NGEN", "GEN"};
  constexpr std::array<std::string_view, 2> com = {"NCOM", "COM"};
  switch (task) {
    case Task::kAggression: return agg[static_cast<std::size_t>(cls)];
    case Task::kGender: return gen[static_cast<std::size_t>(cls)];
    case Task::kCommunal: return com[static_cast<std::size_t>(cls)];
  }
  return "";
}

inline std::optional<int> parse_class(Task task, std::string_view name) {
  for (std::size_t c = 0; c < num_classes(task); ++c) {
    if (class_name(task, static_cast<int>(c)) == name) return static_cast<int>(c);
  }
  return std::nullopt;
}

}  // namespace comma
