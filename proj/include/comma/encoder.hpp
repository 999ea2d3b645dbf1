#pragma once

// Pre-norm transformer encoder producing the last hidden state [B, L, d], and a
// small masked-language-model pretraining loop over it.

#include <cmath>
#include <string>
#include <vector>

#include "comma/autograd.hpp"
#include "comma/errors.hpp"
#include "comma/rng.hpp"
#include "comma/text_pipeline.hpp"

namespace comma {

enum class Mode { kTrain, kEval };

struct EncoderConfig {
  ag::Index vocab_size = 0;
  ag::Index d_model = 64;
  ag::Index n_layers = 2;
  ag::Index n_heads = 2;
  ag::Index d_ff = 128;
  ag::Index max_len = 32;
  double dropout_p = 0.3;
  double init_std = 0.02;

  void validate() const {
    if (vocab_size < 5) throw ConfigError("vocab_size must be at least 5");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
      throw ConfigError("d_model (" + std::to_string(d_model) + ") must be a positive multiple of n_heads (" +
                        std::to_string(n_heads) + ")");
    }
    if (n_layers < 1) throw ConfigError("n_layers must be at least 1");
    if (d_ff < 1) throw ConfigError("d_ff must be at least 1");
    if (max_len < 2) throw ConfigError("max_len must be at least 2");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
    if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// A trainable tensor with its stable name. decay marks weight-decay eligibility.
template <class T>
struct NamedParam {
  std::string name;
  ag::Tensor<T>* tensor;
  bool decay;
};

template <class T>
struct EncoderLayerParams {
  ag::Tensor<T> ln1_gamma, ln1_beta;
  ag::Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  ag::Tensor<T> ln2_gamma, ln2_beta;
  ag::Tensor<T> w1, b1, w2, b2;
};

template <class T>
struct EncoderParams {
  ag::Tensor<T> token_embedding;     // [V, d]; also the tied MLM output projection
  ag::Tensor<T> position_embedding;  // [max_len, d]
  std::vector<EncoderLayerParams<T>> layers;
  ag::Tensor<T> final_gamma, final_beta;
  ag::Tensor<T> mlm_bias;  // [V]

  static EncoderParams init(const EncoderConfig& config, Rng& rng) {
    config.validate();
    const auto d = config.d_model, f = config.d_ff, v = config.vocab_size;
    const double s = config.init_std;
    auto w = [&](ag::Shape shape) { return ag::Tensor<T>::randn(std::move(shape), rng, s, true); };
    auto zeros = [](ag::Shape shape) { return ag::Tensor<T>::zeros(std::move(shape), true); };
    auto ones = [](ag::Shape shape) { return ag::Tensor<T>::full(std::move(shape), T(1), true); };
    EncoderParams p;
    p.token_embedding = w({v, d});
    p.position_embedding = w({config.max_len, d});
    for (ag::Index i = 0; i < config.n_layers; ++i) {
      EncoderLayerParams<T> l;
      l.ln1_gamma = ones({d});
      l.ln1_beta = zeros({d});
      l.wq = w({d, d});
      l.bq = zeros({d});
      l.wk = w({d, d});
      l.bk = zeros({d});
      l.wv = w({d, d});
      l.bv = zeros({d});
      l.wo = w({d, d});
      l.bo = zeros({d});
      l.ln2_gamma = ones({d});
      l.ln2_beta = zeros({d});
      l.w1 = w({d, f});
      l.b1 = zeros({f});
      l.w2 = w({f, d});
      l.b2 = zeros({d});
      p.layers.push_back(std::move(l));
    }
    p.final_gamma = ones({d});
    p.final_beta = zeros({d});
    p.mlm_bias = zeros({v});
    return p;
  }

  std::vector<NamedParam<T>> named() {
    std::vector<NamedParam<T>> out;
    out.push_back({"encoder.token_embedding", &token_embedding, true});
    out.push_back({"encoder.position_embedding", &position_embedding, true});
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      const std::string pre = "encoder.layers." + std::to_string(i) + ".";
      out.push_back({pre + "ln1.gamma", &l.ln1_gamma, false});
      out.push_back({pre + "ln1.beta", &l.ln1_beta, false});
      out.push_back({pre + "attn.wq", &l.wq, true});
      out.push_back({pre + "attn.bq", &l.bq, false});
      out.push_back({pre + "attn.wk", &l.wk, true});
      out.push_back({pre + "attn.bk", &l.bk, false});
      out.push_back({pre + "attn.wv", &l.wv, true});
      out.push_back({pre + "attn.bv", &l.bv, false});
      out.push_back({pre + "attn.wo", &l.wo, true});
      out.push_back({pre + "attn.bo", &l.bo, false});
      out.push_back({pre + "ln2.gamma", &l.ln2_gamma, false});
      out.push_back({pre + "ln2.beta", &l.ln2_beta, false});
      out.push_back({pre + "ffn.w1", &l.w1, true});
      out.push_back({pre + "ffn.b1", &l.b1, false});
      out.push_back({pre + "ffn.w2", &l.w2, true});
      out.push_back({pre + "ffn.b2", &l.b2, false});
    }
    out.push_back({"encoder.final_ln.gamma", &final_gamma, false});
    out.push_back({"encoder.final_ln.beta", &final_beta, false});
    out.push_back({"encoder.mlm_bias", &mlm_bias, false});
    return out;
  }
};

// Converts between scalar types (and copies); every tensor becomes a fresh leaf.
template <class U, class T>
EncoderParams<U> cast_params(EncoderParams<T> src, const EncoderConfig& config) {
  Rng unused(0);
  auto out = EncoderParams<U>::init(config, unused);
  auto from = src.named();
  auto to = out.named();
  for (std::size_t i = 0; i < from.size(); ++i) *to[i].tensor = from[i].tensor->template cast<U>(true);
  return out;
}

namespace detail {

// Additive attention bias for [B*h, L, L] scores: 0 for real keys, -1e9 for padding.
template <class T>
ag::Tensor<T> key_padding_bias(const EncodedBatch& batch, ag::Index heads) {
  const auto B = static_cast<ag::Index>(batch.batch), L = static_cast<ag::Index>(batch.length);
  ag::Vec<T> bias(B * heads * L * L);
  for (ag::Index b = 0; b < B; ++b) {
    for (ag::Index h = 0; h < heads; ++h) {
      for (ag::Index i = 0; i < L; ++i) {
        for (ag::Index j = 0; j < L; ++j) {
          bias[((b * heads + h) * L + i) * L + j] = batch.masked(static_cast<std::size_t>(b), static_cast<std::size_t>(j)) ? T(0) : T(-1e9);
        }
      }
    }
  }
  return ag::Tensor<T>({B * heads, L, L}, std::move(bias));
}

template <class T>
ag::Tensor<T> linear(const ag::Tensor<T>& x, const ag::Tensor<T>& w, const ag::Tensor<T>& b) {
  return ag::add(ag::matmul(x, w), b);
}

// [B*L, d] -> [B*h, L, d/h]
template <class T>
ag::Tensor<T> split_heads(const ag::Tensor<T>& x, ag::Index B, ag::Index L, ag::Index h) {
  const ag::Index dk = x.dim(1) / h;
  return ag::reshape(ag::permute(ag::reshape(x, {B, L, h, dk}), {0, 2, 1, 3}), {B * h, L, dk});
}

// [B*h, L, d/h] -> [B*L, d]
template <class T>
ag::Tensor<T> merge_heads(const ag::Tensor<T>& x, ag::Index B, ag::Index L, ag::Index h) {
  const ag::Index dk = x.dim(2);
  return ag::reshape(ag::permute(ag::reshape(x, {B, h, L, dk}), {0, 2, 1, 3}), {B * L, h * dk});
}

}  // namespace detail

// Last hidden state [B, L, d]. In train mode dropout draws from rng. When
// attention_probs is given, each layer's [B*h, L, L] attention probabilities are appended.
template <class T>
ag::Tensor<T> encode_batch(const EncodedBatch& batch, const EncoderParams<T>& params, const EncoderConfig& config,
                           Mode mode, Rng* rng = nullptr, std::vector<ag::Tensor<T>>* attention_probs = nullptr) {
  const auto B = static_cast<ag::Index>(batch.batch), L = static_cast<ag::Index>(batch.length);
  if (B < 1 || L < 1) throw ShapeError("encode_batch: empty batch");
  if (L > config.max_len) {
    throw ShapeError("encode_batch: length " + std::to_string(L) + " exceeds max_len " + std::to_string(config.max_len));
  }
  if (batch.token_ids.size() != static_cast<std::size_t>(B * L) || batch.mask.size() != batch.token_ids.size()) {
    throw ShapeError("encode_batch: token/mask buffers do not match " + std::to_string(B) + "x" + std::to_string(L));
  }
  const bool training = mode == Mode::kTrain;
  if (training && config.dropout_p > 0.0 && rng == nullptr) throw ContractError("encode_batch: train mode needs an rng");
  Rng no_rng(0);
  Rng& drop_rng = rng ? *rng : no_rng;
  const double p = config.dropout_p;
  const ag::Index h = config.n_heads, d = config.d_model;

  std::vector<int> positions(static_cast<std::size_t>(B * L));
  for (ag::Index i = 0; i < B * L; ++i) positions[static_cast<std::size_t>(i)] = static_cast<int>(i % L);
  ag::Tensor<T> x = ag::add(ag::embedding_lookup(params.token_embedding, batch.token_ids),
                            ag::embedding_lookup(params.position_embedding, positions));
  x = ag::dropout(x, p, drop_rng, training);

  const auto bias = detail::key_padding_bias<T>(batch, h);
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(d / h));
  for (const auto& layer : params.layers) {
    const auto a_in = ag::layer_norm(x, layer.ln1_gamma, layer.ln1_beta);
    const auto q = detail::split_heads(detail::linear(a_in, layer.wq, layer.bq), B, L, h);
    const auto k = detail::split_heads(detail::linear(a_in, layer.wk, layer.bk), B, L, h);
    const auto v = detail::split_heads(detail::linear(a_in, layer.wv, layer.bv), B, L, h);
    const auto scores = ag::add(ag::scale(ag::bmm(q, k, /*transpose_b=*/true), inv_sqrt_dk), bias);
    const auto probs = ag::softmax(scores, -1);
    if (attention_probs) attention_probs->push_back(probs);
    const auto context = detail::merge_heads(ag::bmm(probs, v), B, L, h);
    x = ag::add(x, ag::dropout(detail::linear(context, layer.wo, layer.bo), p, drop_rng, training));

    const auto f_in = ag::layer_norm(x, layer.ln2_gamma, layer.ln2_beta);
    const auto f = detail::linear(ag::gelu(detail::linear(f_in, layer.w1, layer.b1)), layer.w2, layer.b2);
    x = ag::add(x, ag::dropout(f, p, drop_rng, training));
  }
  x = ag::layer_norm(x, params.final_gamma, params.final_beta);
  return ag::reshape(x, {B, L, d});
}

// ---------------------------------------------------------------------------
// Masked-language-model pretraining

struct MlmSchedule {
  std::size_t steps = 300;
  std::size_t batch_size = 16;
  double base_lr = 1e-4;
  std::size_t warmup_steps = 0;
  double mask_rate = 0.15;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  std::uint64_t seed = 42;
};

// One sequence with masked inputs. targets[i] is the original id at masked
// position i, or -1 where no prediction is made.
struct MaskedSequence {
  Encoding input;
  std::vector<int> targets;
};

// Picks max(1, round(rate * n)) of the n non-special positions; each picked
// position becomes [UNK] with prob 0.8, a random non-reserved id with prob 0.1,
// and stays unchanged otherwise. Rows with no real tokens are left unmasked.
MaskedSequence mask_tokens(const Encoding& encoding, std::size_t vocab_size, double rate, Rng& rng);

// Mean cross-entropy at masked positions. Throws InputError when there are none.
template <class T>
ag::Tensor<T> mlm_loss(const std::vector<MaskedSequence>& rows, const EncoderParams<T>& params,
                       const EncoderConfig& config, Mode mode, Rng* rng) {
  std::vector<Encoding> inputs;
  std::vector<int> gather, targets;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    inputs.push_back(rows[r].input);
    for (std::size_t i = 0; i < rows[r].targets.size(); ++i) {
      if (rows[r].targets[i] >= 0) {
        gather.push_back(static_cast<int>(r * rows[r].targets.size() + i));
        targets.push_back(rows[r].targets[i]);
      }
    }
  }
  if (targets.empty()) throw InputError("masked-LM batch has no masked tokens");
  const auto batch = make_batch(inputs);
  const auto hidden = encode_batch(batch, params, config, mode, rng);
  const auto flat = ag::reshape(hidden, {hidden.dim(0) * hidden.dim(1), hidden.dim(2)});
  const auto picked = ag::embedding_lookup(flat, gather);
  const auto logits = ag::add(ag::matmul(picked, ag::permute(params.token_embedding, {1, 0})), params.mlm_bias);
  return ag::cross_entropy(logits, targets);
}

struct MlmResult {
  EncoderParams<float> params;
  std::vector<double> loss_trace;  // training loss per step
  double initial_eval_loss = 0.0;  // fixed-mask loss over the corpus before training
  double final_eval_loss = 0.0;    // same masks after training
};

// Pretrains a freshly initialized encoder on the corpus (normalized texts).
MlmResult pretrain_mlm(const std::vector<std::string>& corpus, const Vocab& vocab, const EncoderConfig& config,
                       const MlmSchedule& schedule);

}  // namespace comma
