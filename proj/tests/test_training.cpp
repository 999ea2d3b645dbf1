#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "comma/training.hpp"
#include "fixtures.hpp"

using namespace comma;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_len = 16;
  return c;
}

std::vector<Example> synthetic_train() { return load_dataset(COMMA_DATA_DIR "/synthetic_train.tsv"); }

TrainConfig quick_config() {
  TrainConfig tc;
  tc.epochs = 2;
  tc.base_lr = 1e-3;
  tc.vocab_target = 256;
  return tc;
}

}  // namespace

TEST_CASE("linear schedule") {
  CHECK(lr_at(0, 100, 2e-5, 0) == 2e-5);
  CHECK(lr_at(100, 100, 2e-5, 0) == 0.0);
  CHECK(lr_at(50, 100, 2e-5, 0) == doctest::Approx(1e-5));
  CHECK(lr_at(0, 100, 1.0, 10) == 0.0);
  CHECK(lr_at(5, 100, 1.0, 10) == doctest::Approx(0.5));
  CHECK(lr_at(10, 100, 1.0, 10) == doctest::Approx(1.0));
  CHECK(lr_at(55, 100, 1.0, 10) == doctest::Approx(0.5));
  double best = -1;
  std::size_t arg = 0;
  for (std::size_t s = 0; s <= 100; ++s) {
    const double lr = lr_at(s, 100, 1.0, 10);
    CHECK(lr >= 0.0);
    if (lr > best) {
      best = lr;
      arg = s;
    }
  }
  CHECK(arg == 10);
  CHECK_THROWS_AS(lr_at(101, 100, 1.0, 0), ContractError);
  CHECK_THROWS_AS(lr_at(0, 0, 1.0, 0), ContractError);
}

TEST_CASE("config validation") {
  TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = {};
  tc.base_lr = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = {};
  tc.task_loss_weights = {0, 0, 0};
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = {};
  tc.task_loss_weights = {1, -1, 0};
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("first-step loss with zero heads") {
  auto data = synthetic_train();
  auto r = train(data, tiny_encoder(), quick_config());
  const double expected = std::log(3.0) + 2 * std::log(2.0);
  CHECK(std::abs(r.steps.front().loss - expected) < 1e-5);
  CHECK(r.steps.front().task_loss[0] == doctest::Approx(std::log(3.0)));
}

TEST_CASE("zero-weighted tasks receive no gradient") {
  auto data = synthetic_train();
  auto tc = quick_config();
  tc.epochs = 1;
  tc.task_loss_weights = {1, 0, 0};
  std::size_t calls = 0;
  TrainOptions opt;
  opt.after_backward = [&](std::size_t, ModelParams<float>& m) {
    ++calls;
    for (std::size_t t : {1u, 2u}) {
      CHECK((m.heads[t].w_o.grad() == 0.0f).all());
      CHECK((m.heads[t].b_o.grad() == 0.0f).all());
    }
    CHECK_FALSE((m.heads[0].b_o.grad() == 0.0f).all());
  };
  auto r = train(data, tiny_encoder(), tc, opt);
  CHECK(calls == r.steps.size());
  CHECK((r.checkpoint.model.heads[1].w_o.value() == 0.0f).all());
}

TEST_CASE("training is deterministic") {
  auto data = synthetic_train();
  auto a = train(data, tiny_encoder(), quick_config());
  auto b = train(data, tiny_encoder(), quick_config());
  CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));
  CHECK(steps_csv(a.steps) == steps_csv(b.steps));
  auto other = quick_config();
  other.seed = 7;
  auto c = train(data, tiny_encoder(), other);
  CHECK(serialize_checkpoint(a.checkpoint) != serialize_checkpoint(c.checkpoint));
}

TEST_CASE("frozen identity pooler matches mean pooling end to end") {
  auto data = synthetic_train();
  auto att = quick_config();
  att.freeze_pooler = true;
  auto mean = quick_config();
  mean.pooler = PoolerKind::kMean;
  auto a = train(data, tiny_encoder(), att);
  auto m = train(data, tiny_encoder(), mean);
  REQUIRE(a.steps.size() == m.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].loss == m.steps[i].loss);
}

TEST_CASE("dev selection and trace") {
  auto data = synthetic_train();
  auto dev = load_dataset(COMMA_DATA_DIR "/synthetic_dev.tsv");
  auto tc = quick_config();
  tc.epochs = 3;
  TrainOptions opt;
  opt.dev = &dev;
  auto r = train(data, tiny_encoder(), tc, opt);
  CHECK(r.epochs.size() == 3);
  CHECK(r.best_epoch >= 1);
  CHECK(r.best_epoch <= 3);
  double best = 0;
  for (const auto& e : r.epochs) best = std::max(best, e.dev->overall_micro_f1);
  CHECK(r.epochs[r.best_epoch - 1].dev->overall_micro_f1 == best);
  CHECK(evaluate(r.checkpoint, dev).overall_micro_f1 == best);
  const auto csv = steps_csv(r.steps);
  CHECK(csv.rfind("step,lr,loss,loss_aggression,loss_gender,loss_communal\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(r.steps.size() + 1));
}

TEST_CASE("predict and evaluate") {
  auto data = synthetic_train();
  auto r = train(data, tiny_encoder(), quick_config());
  CHECK(predict(r.checkpoint, std::vector<std::string>{}).empty());
  std::vector<std::string> texts;
  for (const auto& e : data) texts.push_back(e.text);
  CHECK(predict(r.checkpoint, texts) == predict(r.checkpoint, texts, 5));
  CHECK_THROWS_AS(evaluate(r.checkpoint, std::vector<Example>{}), InputError);

  Checkpoint encoder_only = r.checkpoint;
  encoder_only.model.pooler_kind = PoolerKind::kNone;
  CHECK_THROWS_AS(predict(encoder_only, texts), FormatError);
}

TEST_CASE("gold against gold scores one") {
  auto data = synthetic_train();
  std::vector<TriLabel> gold;
  for (const auto& e : data) gold.push_back(e.labels);
  auto report = score(gold, gold);
  CHECK(report.overall_micro_f1 == 1.0);
  CHECK(report.instance_f1 == 1.0);
  for (const auto& t : report.tasks) CHECK(t.f1 == 1.0);
}

TEST_CASE("constant-majority model on the Meitei dev shape") {
  auto dev = fixtures::dataset_with({370, 471, 159, 55, 68});
  Checkpoint ck;
  ck.vocab = build_vocab(std::vector<std::string>{"text 0 1 2 3 4 5 6 7 8 9"}, 32);
  auto c = tiny_encoder();
  c.vocab_size = static_cast<ag::Index>(ck.vocab.size());
  Rng rng(1);
  ck.model = ModelParams<float>::init(c, PoolerKind::kMean, rng);
  ck.model.heads[0].b_o = ag::Tensor<float>::from({3}, {0, 1, 0});
  ck.model.heads[1].b_o = ag::Tensor<float>::from({2}, {1, 0});
  ck.model.heads[2].b_o = ag::Tensor<float>::from({2}, {1, 0});
  auto report = evaluate(ck, dev);
  CHECK(report.task(Task::kGender).f1 == 0.945);
  CHECK(report.task(Task::kCommunal).f1 == 0.932);
  CHECK(report.task(Task::kAggression).f1 == 0.471);
}

TEST_CASE("training reports bad input") {
  CHECK_THROWS_AS(train({}, tiny_encoder(), quick_config()), InputError);
  auto tc = quick_config();
  tc.pooler = PoolerKind::kNone;
  CHECK_THROWS_AS(train(synthetic_train(), tiny_encoder(), tc), ConfigError);
}

TEST_CASE("a non-finite loss stops training with its step") {
  auto data = synthetic_train();
  TrainOptions opt;
  opt.after_backward = [](std::size_t step, ModelParams<float>& m) {
    if (step == 2) m.heads[0].b_o.mutable_value()[0] = std::nanf("");
  };
  try {
    train(data, tiny_encoder(), quick_config(), opt);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 3);
    CHECK(std::string(e.what()).find("step 3") != std::string::npos);
  }
}
