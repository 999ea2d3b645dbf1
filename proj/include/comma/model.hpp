#pragma once

// Joint three-task classifier: shared encoder, one pooler, three linear heads.

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "comma/encoder.hpp"
#include "comma/labels.hpp"
#include "comma/pooling.hpp"

namespace comma {

// kNone marks an encoder-only model (masked-LM pretraining output).
enum class PoolerKind { kAttention, kMean, kNone };

inline std::string_view pooler_name(PoolerKind kind) {
  switch (kind) {
    case PoolerKind::kAttention: return "attention";
    case PoolerKind::kMean: return "mean";
    case PoolerKind::kNone: return "none";
  }
  return "";
}

inline std::optional<PoolerKind> parse_pooler(std::string_view name) {
  for (auto k : {PoolerKind::kAttention, PoolerKind::kMean, PoolerKind::kNone}) {
    if (pooler_name(k) == name) return k;
  }
  return std::nullopt;
}

template <class T>
struct ModelParams {
  EncoderConfig config;
  PoolerKind pooler_kind = PoolerKind::kAttention;
  EncoderParams<T> encoder;
  AttentionPoolerParams<T> pooler;
  TaskHeads<T> heads;

  // Encoder drawn from rng; pooler starts at q = 0, W_h = I; heads start at zero.
  static ModelParams init(const EncoderConfig& config, PoolerKind kind, Rng& rng) {
    ModelParams m;
    m.config = config;
    m.pooler_kind = kind;
    m.encoder = EncoderParams<T>::init(config, rng);
    m.pooler = AttentionPoolerParams<T>::init(config.d_model);
    m.heads = zero_heads<T>(config.d_model);
    return m;
  }

  bool has_classifier() const { return pooler_kind != PoolerKind::kNone; }

  // Parameters that exist for this pooler kind, in checkpoint order.
  std::vector<NamedParam<T>> named() {
    auto out = encoder.named();
    if (pooler_kind == PoolerKind::kAttention) {
      out.push_back({"pooler.q", &pooler.q, false});
      out.push_back({"pooler.w_h", &pooler.w_h, true});
    }
    if (has_classifier()) {
      for (Task t : kTasks) {
        const std::string pre = "heads." + std::string(task_name(t)) + ".";
        auto& h = heads[static_cast<std::size_t>(t)];
        out.push_back({pre + "w_o", &h.w_o, true});
        out.push_back({pre + "b_o", &h.b_o, false});
      }
    }
    return out;
  }
};

template <class U, class T>
ModelParams<U> cast_model(ModelParams<T> src) {
  Rng unused(0);
  auto out = ModelParams<U>::init(src.config, src.pooler_kind, unused);
  auto from = src.named();
  auto to = out.named();
  for (std::size_t i = 0; i < from.size(); ++i) *to[i].tensor = from[i].tensor->template cast<U>(true);
  return out;
}

// Independent copy of every parameter value.
template <class T>
ModelParams<T> clone_model(const ModelParams<T>& src) {
  return cast_model<T>(src);
}

template <class T>
struct ForwardResult {
  ag::Tensor<T> hidden;
  ag::Tensor<T> pooled;
  std::array<ag::Tensor<T>, 3> logits;
};

// Encoder -> pooler -> dropout on the pooled vector (train mode) -> heads.
template <class T>
ForwardResult<T> forward(const ModelParams<T>& model, const EncodedBatch& batch, Mode mode, Rng* rng = nullptr) {
  if (!model.has_classifier()) throw ContractError("forward: model has no classifier heads");
  ForwardResult<T> r;
  r.hidden = encode_batch(batch, model.encoder, model.config, mode, rng);
  const PoolDropout drop{model.config.dropout_p, rng, mode};
  if (model.pooler_kind == PoolerKind::kAttention) {
    r.pooled = attention_pool(r.hidden, batch.mask, model.pooler, drop);
  } else {
    r.pooled = mean_pool(r.hidden, batch.mask);
    if (mode == Mode::kTrain && drop.p > 0.0) {
      if (!rng) throw ContractError("forward: train mode needs an rng");
      r.pooled = ag::dropout(r.pooled, drop.p, *rng, true);
    }
  }
  r.logits = head_logits(r.pooled, model.heads);
  return r;
}

template <class T>
struct JointLoss {
  ag::Tensor<T> total;
  std::array<double, 3> per_task{};
};

// Sum over tasks of weight_t * mean cross-entropy_t.
template <class T>
JointLoss<T> joint_loss(const std::array<ag::Tensor<T>, 3>& logits, std::span<const TriLabel> gold,
                        const std::array<double, 3>& weights) {
  JointLoss<T> out;
  for (Task t : kTasks) {
    const auto ti = static_cast<std::size_t>(t);
    std::vector<int> targets(gold.size());
    for (std::size_t i = 0; i < gold.size(); ++i) targets[i] = gold[i].index(t);
    const auto ce = ag::cross_entropy(logits[ti], targets);
    out.per_task[ti] = static_cast<double>(ce.item());
    const auto weighted = ag::scale(ce, static_cast<T>(weights[ti]));
    out.total = out.total.defined() ? ag::add(out.total, weighted) : weighted;
  }
  return out;
}

}  // namespace comma
