#include "comma/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "comma/errors.hpp"

namespace comma {
namespace {

enum Stream : std::uint64_t { kInitStream = 1, kDropoutStream = 2, kOrderStream = 4 };

std::vector<std::vector<float>> snapshot(ModelParams<float>& model) {
  std::vector<std::vector<float>> out;
  for (const auto& p : model.named()) out.emplace_back(p.tensor->value().begin(), p.tensor->value().end());
  return out;
}

void restore(ModelParams<float>& model, const std::vector<std::vector<float>>& values) {
  auto params = model.named();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = params[i].tensor->mutable_value();
    std::copy(values[i].begin(), values[i].end(), v.begin());
  }
}

std::vector<TriLabel> predict_encoded(const ModelParams<float>& model, std::span<const Encoding> rows,
                                      std::size_t batch_size) {
  ag::NoGradGuard no_grad;
  std::vector<TriLabel> out;
  out.reserve(rows.size());
  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    const auto n = std::min(batch_size, rows.size() - start);
    const auto batch = make_batch(rows.subspan(start, n));
    const auto labels = predict_labels(forward(model, batch, Mode::kEval).logits);
    out.insert(out.end(), labels.begin(), labels.end());
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
  if (pooler == PoolerKind::kNone) throw ConfigError("training needs an attention or mean pooler");
  bool any = false;
  for (double w : task_loss_weights) {
    if (!(w >= 0.0)) throw ConfigError("task loss weights must be non-negative");
    any = any || w > 0.0;
  }
  if (!any) throw ConfigError("at least one task loss weight must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (vocab_target < 5) throw ConfigError("vocab_target must be at least 5");
}

TrainResult train(const std::vector<Example>& dataset, const EncoderConfig& encoder_config, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (dataset.empty()) throw InputError("training set is empty");

  const EmojiMap& emoji = options.init ? options.init->emoji_map : options.emoji_map;
  const auto normalize_all = [&](std::span<const Example> rows) {
    std::vector<std::string> texts;
    texts.reserve(rows.size());
    for (const auto& r : rows) texts.push_back(normalize(r.text, &emoji));
    return texts;
  };

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  ck.emoji_map = emoji;
  EncoderConfig enc = encoder_config;
  if (options.init) {
    ck.vocab = options.init->vocab;
    enc = options.init->model.config;
  } else {
    ck.vocab = build_vocab(normalize_all(dataset), config.vocab_target);
  }
  enc.vocab_size = static_cast<ag::Index>(ck.vocab.size());
  enc.dropout_p = config.dropout_p;
  enc.validate();

  Rng init_rng = Rng::derive(config.seed, kInitStream);
  ck.model = ModelParams<float>::init(enc, config.pooler, init_rng);
  if (options.init) {
    ck.model.encoder = cast_params<float>(options.init->model.encoder, enc);
  }

  const auto train_rows = config.balance ? balance(dataset, config.seed) : dataset;
  std::vector<Encoding> encoded;
  for (const auto& t : normalize_all(train_rows)) encoded.push_back(encode(t, ck.vocab, static_cast<std::size_t>(enc.max_len)));

  std::vector<Encoding> eval_train, eval_dev;
  if (options.track_train_metrics) {
    for (const auto& t : normalize_all(dataset)) eval_train.push_back(encode(t, ck.vocab, static_cast<std::size_t>(enc.max_len)));
  }
  if (options.dev) {
    for (const auto& t : normalize_all(*options.dev)) eval_dev.push_back(encode(t, ck.vocab, static_cast<std::size_t>(enc.max_len)));
  }
  auto gold_of = [](std::span<const Example> rows) {
    std::vector<TriLabel> g;
    for (const auto& r : rows) g.push_back(r.labels);
    return g;
  };

  auto trainable = ck.model.named();
  if (config.freeze_pooler) {
    std::erase_if(trainable, [](const NamedParam<float>& p) { return p.name.starts_with("pooler."); });
  }
  AdamW optimizer(trainable, AdamWConfig{0.9, 0.999, 1e-8, config.weight_decay});

  Rng dropout_rng = Rng::derive(config.seed, kDropoutStream);
  Rng order_rng = Rng::derive(config.seed, kOrderStream);
  const std::size_t n = encoded.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;

  std::vector<std::size_t> order(n);
  std::vector<std::vector<float>> best;
  double best_score = -1.0;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - start);
      std::vector<Encoding> rows;
      std::vector<TriLabel> gold;
      for (std::size_t k = 0; k < count; ++k) {
        rows.push_back(encoded[order[start + k]]);
        gold.push_back(train_rows[order[start + k]].labels);
      }
      const auto batch = make_batch(rows);
      optimizer.zero_grad();
      const auto diverged = [&] {
        return DivergenceError("loss became non-finite at step " + std::to_string(step), static_cast<long>(step));
      };
      JointLoss<float> loss;
      try {
        const auto out = forward(ck.model, batch, Mode::kTrain, &dropout_rng);
        loss = joint_loss(out.logits, gold, config.task_loss_weights);
      } catch (const NumericError&) {
        throw diverged();
      }
      const double value = loss.total.item();
      if (!std::isfinite(value)) throw diverged();
      ag::backward(loss.total);
      optimizer.clip_grad_norm(config.clip_norm);
      if (options.after_backward) options.after_backward(step, ck.model);
      const double lr = lr_at(step, total_steps, config.base_lr, config.warmup_steps);
      optimizer.step(lr);
      result.steps.push_back({step, lr, value, loss.per_task});
      loss_sum += value;
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(steps_per_epoch);
    if (options.track_train_metrics) {
      const auto gold = gold_of(dataset);
      const auto pred = predict_encoded(ck.model, eval_train, 32);
      rec.train_instance_f1 = instance_f1(gold, pred);
    }
    if (options.dev && !options.dev->empty()) {
      const auto gold = gold_of(*options.dev);
      rec.dev = score(gold, predict_encoded(ck.model, eval_dev, 32));
      if (rec.dev->overall_micro_f1 > best_score) {
        best_score = rec.dev->overall_micro_f1;
        best = snapshot(ck.model);
        result.best_epoch = epoch;
      }
    }
    result.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  if (!best.empty()) restore(ck.model, best);

  ck.metadata["seed"] = config.seed;
  ck.metadata["steps"] = step;
  ck.metadata["epochs"] = config.epochs;
  ck.metadata["best_epoch"] = result.best_epoch;
  ck.metadata["batch_size"] = config.batch_size;
  ck.metadata["base_lr"] = config.base_lr;
  ck.metadata["final_loss"] = result.steps.empty() ? 0.0 : result.steps.back().loss;
  if (result.best_epoch > 0) {
    ck.metadata["best_dev_overall_micro_f1"] = round3(best_score);
  }
  ck.metadata["init"] = options.init ? "pretrained" : "fresh";
  return result;
}

std::vector<TriLabel> predict(const Checkpoint& checkpoint, std::span<const std::string> texts, std::size_t batch_size) {
  if (!checkpoint.model.has_classifier()) {
    throw FormatError(FormatErrorKind::kHeader, "checkpoint has no classifier heads (encoder-only)");
  }
  std::vector<Encoding> rows;
  rows.reserve(texts.size());
  for (const auto& t : texts) {
    rows.push_back(encode(normalize(t, &checkpoint.emoji_map), checkpoint.vocab,
                          static_cast<std::size_t>(checkpoint.model.config.max_len)));
  }
  return predict_encoded(checkpoint.model, rows, std::max<std::size_t>(batch_size, 1));
}

MetricsReport evaluate(const Checkpoint& checkpoint, std::span<const Example> dataset) {
  if (dataset.empty()) throw InputError("evaluation set is empty");
  std::vector<std::string> texts;
  std::vector<TriLabel> gold;
  for (const auto& ex : dataset) {
    texts.push_back(ex.text);
    gold.push_back(ex.labels);
  }
  return score(gold, predict(checkpoint, texts));
}

double eval_loss(const ModelParams<float>& model, const EncodedBatch& batch, std::span<const TriLabel> gold,
                 const std::array<double, 3>& weights) {
  ag::NoGradGuard no_grad;
  return joint_loss(forward(model, batch, Mode::kEval).logits, gold, weights).total.item();
}

std::string steps_csv(std::span<const StepRecord> steps) {
  std::ostringstream os;
  os << "step,lr,loss,loss_aggression,loss_gender,loss_communal\n";
  os << std::setprecision(9);
  for (const auto& s : steps) {
    os << s.step << ',' << s.lr << ',' << s.loss << ',' << s.task_loss[0] << ',' << s.task_loss[1] << ','
       << s.task_loss[2] << '\n';
  }
  return os.str();
}

}  // namespace comma
