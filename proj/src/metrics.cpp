#include "comma/metrics.hpp"

#include <cfenv>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "comma/errors.hpp"

namespace comma {
namespace {

void require_lengths(std::size_t gold, std::size_t pred) {
  if (gold != pred) {
    throw InputError("gold has " + std::to_string(gold) + " labels but prediction has " + std::to_string(pred));
  }
  if (gold == 0) throw InputError("cannot score an empty label sequence");
}

}  // namespace

TaskScore micro_prf(std::span<const int> gold, std::span<const int> pred, Task task) {
  require_lengths(gold.size(), pred.size());
  const std::size_t classes = num_classes(task);
  std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  TaskScore s;
  s.task = task;
  s.support.assign(classes, 0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (int label : {gold[i], pred[i]}) {
      if (label < 0 || static_cast<std::size_t>(label) >= classes) {
        throw InputError("row " + std::to_string(i) + ": class index " + std::to_string(label) + " invalid for " +
                         std::string(task_name(task)));
      }
    }
    const auto g = static_cast<std::size_t>(gold[i]);
    const auto p = static_cast<std::size_t>(pred[i]);
    ++s.support[g];
    if (g == p) {
      ++tp[g];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  std::size_t TP = 0, FP = 0, FN = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    TP += tp[c];
    FP += fp[c];
    FN += fn[c];
  }
  s.correct = TP;
  s.total = gold.size();
  s.precision = static_cast<double>(TP) / static_cast<double>(TP + FP);
  s.recall = static_cast<double>(TP) / static_cast<double>(TP + FN);
  s.f1 = static_cast<double>(2 * TP) / static_cast<double>(2 * TP + FP + FN);
  if (s.precision != s.recall || s.recall != s.f1) {
    throw ContractError("micro precision/recall/F1 identity violated for " + std::string(task_name(task)));
  }
  return s;
}

TaskScore micro_prf(std::span<const TriLabel> gold, std::span<const TriLabel> pred, Task task) {
  require_lengths(gold.size(), pred.size());
  std::vector<int> g(gold.size()), p(pred.size());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    g[i] = gold[i].index(task);
    p[i] = pred[i].index(task);
  }
  return micro_prf(g, p, task);
}

double overall_micro_f1(const std::array<double, 3>& task_f1) { return (task_f1[0] + task_f1[1] + task_f1[2]) / 3.0; }

double overall_micro_f1(const MetricsReport& report) {
  return overall_micro_f1({report.tasks[0].f1, report.tasks[1].f1, report.tasks[2].f1});
}

double instance_f1(std::span<const TriLabel> gold, std::span<const TriLabel> pred) {
  require_lengths(gold.size(), pred.size());
  std::size_t exact = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) exact += gold[i] == pred[i] ? 1 : 0;
  return static_cast<double>(exact) / static_cast<double>(gold.size());
}

MetricsReport score(std::span<const TriLabel> gold, std::span<const TriLabel> pred) {
  MetricsReport r;
  for (Task t : kTasks) r.tasks[static_cast<std::size_t>(t)] = micro_prf(gold, pred, t);
  r.overall_micro_f1 = overall_micro_f1(r);
  r.instance_f1 = instance_f1(gold, pred);
  r.instances = gold.size();
  return r;
}

double round3(double x) {
  const int mode = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double r = std::nearbyint(x * 1000.0) / 1000.0;
  std::fesetround(mode);
  return r;
}

std::string report_json(const MetricsReport& report, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["instances"] = report.instances;
  j["tasks"] = nlohmann::ordered_json::array();
  for (const auto& t : report.tasks) {
    nlohmann::ordered_json row;
    row["task"] = task_name(t.task);
    row["precision"] = round3(t.precision);
    row["recall"] = round3(t.recall);
    row["f1"] = round3(t.f1);
    nlohmann::ordered_json support;
    for (std::size_t c = 0; c < t.support.size(); ++c) support[std::string(class_name(t.task, static_cast<int>(c)))] = t.support[c];
    row["support"] = support;
    j["tasks"].push_back(row);
  }
  j["overall_micro_f1"] = round3(report.overall_micro_f1);
  j["instance_f1"] = round3(report.instance_f1);
  return j.dump(2) + "\n";
}

std::string report_text(const MetricsReport& report, std::uint64_t seed) {
  std::ostringstream os;
  os << "seed: " << seed << "\ninstances: " << report.instances << "\n";
  os << std::left << std::setw(12) << "task" << std::setw(11) << "precision" << std::setw(8) << "recall"
     << std::setw(7) << "f1"
     << "support\n";
  os << std::fixed << std::setprecision(3);
  for (const auto& t : report.tasks) {
    os << std::setw(12) << task_name(t.task) << std::setw(11) << round3(t.precision) << std::setw(8)
       << round3(t.recall) << std::setw(7) << round3(t.f1);
    for (std::size_t c = 0; c < t.support.size(); ++c) {
      os << (c ? " " : "") << class_name(t.task, static_cast<int>(c)) << "=" << t.support[c];
    }
    os << "\n";
  }
  os << std::setw(18) << "overall_micro_f1" << round3(report.overall_micro_f1) << "\n";
  os << std::setw(18) << "instance_f1" << round3(report.instance_f1) << "\n";
  return os.str();
}

}  // namespace comma
