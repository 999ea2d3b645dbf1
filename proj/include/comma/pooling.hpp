#pragma once

// Sentence poolers over the encoder's last hidden state and the three per-task
// linear softmax heads.
//
// Attention pooling: s_i = q . h_i over every token, padding excluded;
// alpha = softmax(s); o = W_h^T (sum_i alpha_i h_i).
// Mean pooling: average of the unmasked hidden states.

#include <array>
#include <span>
#include <vector>

#include "comma/autograd.hpp"
#include "comma/encoder.hpp"
#include "comma/labels.hpp"

namespace comma {

template <class T>
struct AttentionPoolerParams {
  ag::Tensor<T> q;    // [d]
  ag::Tensor<T> w_h;  // [d, d]

  // q = 0, W_h = I: starts out identical to mean pooling.
  static AttentionPoolerParams init(ag::Index d) {
    return {ag::Tensor<T>::zeros({d}, true), ag::Tensor<T>::identity(d, true)};
  }
};

template <class T>
struct TaskHead {
  ag::Tensor<T> w_o;  // [d, C]
  ag::Tensor<T> b_o;  // [C]

  static TaskHead zeros(ag::Index d, ag::Index classes) {
    return {ag::Tensor<T>::zeros({d, classes}, true), ag::Tensor<T>::zeros({classes}, true)};
  }
};

template <class T>
using TaskHeads = std::array<TaskHead<T>, 3>;

template <class T>
TaskHeads<T> zero_heads(ag::Index d) {
  TaskHeads<T> heads;
  for (Task t : kTasks) heads[static_cast<std::size_t>(t)] = TaskHead<T>::zeros(d, static_cast<ag::Index>(num_classes(t)));
  return heads;
}

namespace detail {

inline void require_pool_mask(ag::Index B, ag::Index L, std::span<const int> mask) {
  if (static_cast<ag::Index>(mask.size()) != B * L) {
    throw ShapeError("pooling: mask has " + std::to_string(mask.size()) + " entries for a " + std::to_string(B) + "x" +
                     std::to_string(L) + " batch");
  }
  for (ag::Index b = 0; b < B; ++b) {
    bool any = false;
    for (ag::Index i = 0; i < L; ++i) any = any || mask[static_cast<std::size_t>(b * L + i)] != 0;
    if (!any) throw ContractError("pooling: row " + std::to_string(b) + " has no unmasked position");
  }
}

}  // namespace detail

struct PoolDropout {
  double p = 0.0;
  Rng* rng = nullptr;
  Mode mode = Mode::kEval;
};

// H [B, L, d] -> o [B, d]. When alpha_out is given it receives the [B, L] weights.
template <class T>
ag::Tensor<T> attention_pool(const ag::Tensor<T>& H, std::span<const int> mask, const AttentionPoolerParams<T>& params,
                             const PoolDropout& drop = {}, ag::Tensor<T>* alpha_out = nullptr) {
  if (H.rank() != 3) throw ShapeError("attention_pool: H must be [B, L, d], got " + ag::to_string(H.shape()));
  const ag::Index B = H.dim(0), L = H.dim(1), d = H.dim(2);
  if (params.q.shape() != ag::Shape{d} || params.w_h.shape() != ag::Shape{d, d}) {
    throw ShapeError("attention_pool: pooler parameters do not match d=" + std::to_string(d));
  }
  detail::require_pool_mask(B, L, mask);
  ag::Vec<T> bias(B * L);
  for (ag::Index i = 0; i < B * L; ++i) bias[i] = mask[static_cast<std::size_t>(i)] ? T(0) : T(-1e9);

  const auto scores = ag::reshape(ag::matmul(ag::reshape(H, {B * L, d}), ag::reshape(params.q, {d, 1})), {B, L});
  const auto alpha = ag::softmax(ag::add(scores, ag::Tensor<T>({B, L}, std::move(bias))), 1);
  if (alpha_out) *alpha_out = alpha;
  const auto pooled = ag::reshape(ag::bmm(ag::reshape(alpha, {B, 1, L}), H), {B, d});
  const auto o = ag::matmul(pooled, params.w_h);
  if (drop.mode == Mode::kTrain && drop.p > 0.0) {
    if (!drop.rng) throw ContractError("attention_pool: train-mode dropout needs an rng");
    return ag::dropout(o, drop.p, *drop.rng, true);
  }
  return o;
}

// H [B, L, d] -> p [B, d], the mean of unmasked rows.
template <class T>
ag::Tensor<T> mean_pool(const ag::Tensor<T>& H, std::span<const int> mask) {
  if (H.rank() != 3) throw ShapeError("mean_pool: H must be [B, L, d], got " + ag::to_string(H.shape()));
  const ag::Index B = H.dim(0), L = H.dim(1), d = H.dim(2);
  detail::require_pool_mask(B, L, mask);
  ag::Vec<T> weights(B * L);
  for (ag::Index b = 0; b < B; ++b) {
    ag::Index count = 0;
    for (ag::Index i = 0; i < L; ++i) count += mask[static_cast<std::size_t>(b * L + i)] ? 1 : 0;
    for (ag::Index i = 0; i < L; ++i) {
      weights[b * L + i] = mask[static_cast<std::size_t>(b * L + i)] ? T(1) / static_cast<T>(count) : T(0);
    }
  }
  return ag::reshape(ag::bmm(ag::Tensor<T>({B, 1, L}, std::move(weights)), H), {B, d});
}

// Per-task logits W_o^T . pooled + b_o, shapes [B, 3], [B, 2], [B, 2].
template <class T>
std::array<ag::Tensor<T>, 3> head_logits(const ag::Tensor<T>& pooled, const TaskHeads<T>& heads) {
  std::array<ag::Tensor<T>, 3> out;
  for (std::size_t t = 0; t < 3; ++t) out[t] = ag::add(ag::matmul(pooled, heads[t].w_o), heads[t].b_o);
  return out;
}

// Per-task class probabilities.
template <class T>
std::array<ag::Tensor<T>, 3> classify(const ag::Tensor<T>& pooled, const TaskHeads<T>& heads) {
  auto logits = head_logits(pooled, heads);
  for (auto& l : logits) l = ag::softmax(l, -1);
  return logits;
}

// Row-wise argmax; ties go to the lowest class index.
template <class T>
std::vector<int> argmax_rows(const ag::Tensor<T>& scores) {
  const auto m = scores.matrix();
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (ag::Index r = 0; r < m.rows(); ++r) {
    int best = 0;
    for (ag::Index c = 1; c < m.cols(); ++c) {
      if (m(r, c) > m(r, best)) best = static_cast<int>(c);
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

template <class T>
std::vector<TriLabel> predict_labels(const std::array<ag::Tensor<T>, 3>& scores) {
  std::vector<TriLabel> labels(static_cast<std::size_t>(scores[0].dim(0)));
  for (Task t : kTasks) {
    const auto best = argmax_rows(scores[static_cast<std::size_t>(t)]);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i].set(t, best[i]);
  }
  return labels;
}

}  // namespace comma
