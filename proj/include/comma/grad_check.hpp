#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "comma/autograd.hpp"

namespace comma::ag {

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-3;
  // Denominator floor for the relative error, so entries where both gradients
  // are ~0 compare on an absolute scale.
  double floor = 1e-6;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_tensor = 0;
  Index worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

// Compares backward() against central differences for every coordinate of every
// tensor in inputs. f must be deterministic; it is called twice up front and a
// mismatch (e.g. dropout left on) is a contract error.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                                  const GradCheckOptions& options = {}) {
  if (!(options.eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  {
    NoGradGuard guard;
    const double first = f().item();
    const double second = f().item();
    if (!(first == second || (std::isnan(first) && std::isnan(second)))) {
      throw ContractError("grad_check: function is not deterministic (is dropout enabled?)");
    }
  }
  for (auto& x : inputs) x.zero_grad();
  backward(f());

  GradCheckReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& x = inputs[t];
    const Vec<double> analytic = x.grad();
    auto& values = x.mutable_value();
    for (Index i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus, minus;
      {
        NoGradGuard guard;
        values[i] = saved + options.eps;
        plus = f().item();
        values[i] = saved - options.eps;
        minus = f().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double rel_err = abs_err / std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
      report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
      if (rel_err > report.max_relative_error || std::isnan(rel_err)) {
        report.max_relative_error = std::isnan(rel_err) ? INFINITY : rel_err;
        report.worst_tensor = t;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
      ++report.coordinates;
    }
  }
  report.passed = report.max_relative_error <= options.tol;
  return report;
}

inline GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x,
                                  const GradCheckOptions& options = {}) {
  return grad_check([&]() { return f(x); }, std::vector<Tensor<double>>{x}, options);
}

}  // namespace comma::ag
