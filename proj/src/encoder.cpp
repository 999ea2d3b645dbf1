#include "comma/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "comma/optim.hpp"

namespace comma {

MaskedSequence mask_tokens(const Encoding& encoding, std::size_t vocab_size, double rate, Rng& rng) {
  if (!(rate > 0.0 && rate <= 1.0)) throw InputError("masking rate must lie in (0, 1]");
  MaskedSequence out{encoding, std::vector<int>(encoding.ids.size(), -1)};
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < encoding.ids.size(); ++i) {
    if (encoding.mask[i] && encoding.ids[i] != Vocab::kCls && encoding.ids[i] != Vocab::kSep &&
        encoding.ids[i] != Vocab::kPad) {
      candidates.push_back(i);
    }
  }
  if (candidates.empty()) return out;
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(rate * static_cast<double>(candidates.size()))));
  rng.shuffle(candidates);
  for (std::size_t j = 0; j < std::min(k, candidates.size()); ++j) {
    const std::size_t pos = candidates[j];
    out.targets[pos] = encoding.ids[pos];
    const double u = rng.uniform();
    if (u < 0.8) {
      out.input.ids[pos] = Vocab::kMask;
    } else if (u < 0.9 && vocab_size > 4) {
      out.input.ids[pos] = 4 + static_cast<int>(rng.uniform_index(vocab_size - 4));
    }
  }
  return out;
}

MlmResult pretrain_mlm(const std::vector<std::string>& corpus, const Vocab& vocab, const EncoderConfig& config,
                       const MlmSchedule& schedule) {
  if (corpus.empty()) throw InputError("pretraining corpus is empty");
  if (!(schedule.mask_rate > 0.0 && schedule.mask_rate <= 1.0)) {
    throw InputError("masking rate must lie in (0, 1]; a zero rate leaves nothing to predict");
  }
  if (schedule.steps < 1 || schedule.batch_size < 1) throw ConfigError("pretraining needs steps and batch_size >= 1");
  EncoderConfig enc = config;
  enc.vocab_size = static_cast<ag::Index>(vocab.size());
  enc.validate();

  std::vector<Encoding> encoded;
  for (const auto& text : corpus) {
    auto e = encode(text, vocab, static_cast<std::size_t>(enc.max_len));
    if (std::count(e.mask.begin(), e.mask.end(), 1) > 1) encoded.push_back(std::move(e));
  }
  if (encoded.empty()) throw InputError("pretraining corpus has no maskable tokens");

  Rng init_rng = Rng::derive(schedule.seed, 1);
  Rng dropout_rng = Rng::derive(schedule.seed, 2);
  Rng mask_rng = Rng::derive(schedule.seed, 3);
  Rng order_rng = Rng::derive(schedule.seed, 4);
  Rng eval_mask_rng = Rng::derive(schedule.seed, 5);

  MlmResult result;
  result.params = EncoderParams<float>::init(enc, init_rng);

  std::vector<MaskedSequence> eval_rows;
  for (const auto& e : encoded) eval_rows.push_back(mask_tokens(e, vocab.size(), schedule.mask_rate, eval_mask_rng));
  auto eval = [&] {
    ag::NoGradGuard no_grad;
    return static_cast<double>(mlm_loss(eval_rows, result.params, enc, Mode::kEval, nullptr).item());
  };
  result.initial_eval_loss = eval();

  AdamW optimizer(result.params.named(), AdamWConfig{0.9, 0.999, 1e-8, schedule.weight_decay});
  std::vector<std::size_t> order(encoded.size());
  std::size_t cursor = order.size();
  for (std::size_t step = 0; step < schedule.steps; ++step) {
    std::vector<MaskedSequence> rows;
    while (rows.size() < std::min(schedule.batch_size, encoded.size())) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);
        cursor = 0;
      }
      rows.push_back(mask_tokens(encoded[order[cursor++]], vocab.size(), schedule.mask_rate, mask_rng));
    }
    optimizer.zero_grad();
    const auto diverged = [&] {
      return DivergenceError("masked-LM loss became non-finite at step " + std::to_string(step), static_cast<long>(step));
    };
    ag::Tensor<float> loss;
    try {
      loss = mlm_loss(rows, result.params, enc, Mode::kTrain, &dropout_rng);
    } catch (const NumericError&) {
      throw diverged();
    }
    const double value = loss.item();
    if (!std::isfinite(value)) throw diverged();
    ag::backward(loss);
    optimizer.clip_grad_norm(schedule.clip_norm);
    optimizer.step(lr_at(step, schedule.steps, schedule.base_lr, schedule.warmup_steps));
    result.loss_trace.push_back(value);
  }
  result.final_eval_loss = eval();
  return result;
}

}  // namespace comma
