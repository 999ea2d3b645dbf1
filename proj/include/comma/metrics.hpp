#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "comma/labels.hpp"

namespace comma {

struct TaskScore {
  Task task = Task::kAggression;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::size_t> support;  // gold count per class, in class order
};

struct MetricsReport {
  std::array<TaskScore, 3> tasks;
  double overall_micro_f1 = 0.0;
  double instance_f1 = 0.0;
  std::size_t instances = 0;

  const TaskScore& task(Task t) const { return tasks[static_cast<std::size_t>(t)]; }
};

// Micro-averaged precision/recall/F1 over class indices for one task. With one
// label per instance every false positive is some other class's false negative,
// so all three equal accuracy; the identity is checked and a violation throws.
TaskScore micro_prf(std::span<const int> gold, std::span<const int> pred, Task task);
TaskScore micro_prf(std::span<const TriLabel> gold, std::span<const TriLabel> pred, Task task);

// Unweighted mean of the three per-task micro F1 scores.
double overall_micro_f1(const std::array<double, 3>& task_f1);
double overall_micro_f1(const MetricsReport& report);

// Fraction of instances whose three labels are all correct.
double instance_f1(std::span<const TriLabel> gold, std::span<const TriLabel> pred);

MetricsReport score(std::span<const TriLabel> gold, std::span<const TriLabel> pred);

// Round to 3 decimals, ties to even.
double round3(double x);

std::string report_json(const MetricsReport& report, std::uint64_t seed);
std::string report_text(const MetricsReport& report, std::uint64_t seed);

}  // namespace comma
