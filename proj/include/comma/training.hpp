#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "comma/data_io.hpp"
#include "comma/metrics.hpp"
#include "comma/model.hpp"
#include "comma/optim.hpp"

namespace comma {

struct TrainConfig {
  std::size_t batch_size = 8;
  double dropout_p = 0.3;
  double base_lr = 2e-5;
  std::size_t epochs = 10;
  std::size_t warmup_steps = 0;
  std::uint64_t seed = 42;
  PoolerKind pooler = PoolerKind::kAttention;
  std::array<double, 3> task_loss_weights = {1.0, 1.0, 1.0};
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  bool balance = true;
  bool freeze_pooler = false;    // keep q and W_h at their initial values
  std::size_t vocab_target = 512;  // only used without an initial checkpoint

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::array<double, 3> task_loss{};
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  std::optional<MetricsReport> dev;
  std::optional<double> train_instance_f1;
};

struct TrainOptions {
  const std::vector<Example>* dev = nullptr;
  // Encoder weights, vocabulary and architecture come from here when set.
  const Checkpoint* init = nullptr;
  EmojiMap emoji_map;
  // Scores the (unbalanced) training set after every epoch.
  bool track_train_metrics = false;
  // Called after backward and clipping, before the optimizer update.
  std::function<void(std::size_t step, ModelParams<float>&)> after_backward;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 when no dev split was given (final weights kept)
};

// Joint fine-tuning: encoder -> pooler -> three heads, loss = sum_t w_t * CE_t,
// AdamW with the linear schedule. With a dev split, the epoch with the highest
// overall micro F1 is kept.
TrainResult train(const std::vector<Example>& dataset, const EncoderConfig& encoder_config, const TrainConfig& config,
                  const TrainOptions& options = {});

std::vector<TriLabel> predict(const Checkpoint& checkpoint, std::span<const std::string> texts,
                              std::size_t batch_size = 32);
MetricsReport evaluate(const Checkpoint& checkpoint, std::span<const Example> dataset);

// Loss of the current model on one batch without dropout or graph recording.
double eval_loss(const ModelParams<float>& model, const EncodedBatch& batch, std::span<const TriLabel> gold,
                 const std::array<double, 3>& weights);

std::string steps_csv(std::span<const StepRecord> steps);

}  // namespace comma
