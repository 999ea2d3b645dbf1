#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "comma/autograd.hpp"
#include "comma/encoder.hpp"

namespace comma {

// Linear warmup from 0 over warmup_steps, then linear decay to 0 at total_steps.
inline double lr_at(std::size_t step, std::size_t total_steps, double base_lr, std::size_t warmup_steps = 0) {
  if (total_steps < 1) throw ContractError("lr_at: total_steps must be at least 1");
  if (step > total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " beyond total_steps " + std::to_string(total_steps));
  }
  if (warmup_steps > total_steps) throw ContractError("lr_at: warmup_steps exceeds total_steps");
  if (step == total_steps) return 0.0;
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup_steps);
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay, applied only to params flagged decay.
class AdamW {
 public:
  AdamW(std::vector<NamedParam<float>> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
      m_.push_back(ag::Vec<float>::Zero(p.tensor->numel()));
      v_.push_back(ag::Vec<float>::Zero(p.tensor->numel()));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
  }

  // Rescales all gradients so their global L2 norm is at most max_norm. Returns the norm before clipping.
  double clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (auto& p : params_) {
      if (p.tensor->has_grad()) sq += p.tensor->node()->grad.template cast<double>().square().sum();
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
      const float factor = static_cast<float>(max_norm / (norm + 1e-6));
      for (auto& p : params_) {
        if (p.tensor->has_grad()) p.tensor->node()->grad *= factor;
      }
    }
    return norm;
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      auto& value = p.tensor->mutable_value();
      if (p.decay && config_.weight_decay > 0.0) value *= static_cast<float>(1.0 - lr * config_.weight_decay);
      if (!p.tensor->has_grad()) continue;
      const auto& g = p.tensor->node()->grad;
      m_[i] = b1 * m_[i] + (1.0f - b1) * g;
      v_[i] = b2 * v_[i] + (1.0f - b2) * g.square();
      value -= static_cast<float>(lr) * (m_[i] / static_cast<float>(bc1)) /
               ((v_[i] / static_cast<float>(bc2)).sqrt() + static_cast<float>(config_.eps));
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<NamedParam<float>> params_;
  AdamWConfig config_;
  std::vector<ag::Vec<float>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace comma
