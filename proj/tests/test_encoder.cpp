#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <set>

#include "comma/encoder.hpp"
#include "comma/grad_check.hpp"

using namespace comma;

namespace {

EncoderConfig small_config(ag::Index vocab) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 64;
  c.max_len = 16;
  return c;
}

EncodedBatch random_batch(std::size_t B, std::size_t L, int vocab, Rng& rng) {
  std::vector<Encoding> rows;
  for (std::size_t b = 0; b < B; ++b) {
    Encoding e;
    const std::size_t real = 1 + rng.uniform_index(L);
    for (std::size_t i = 0; i < L; ++i) {
      if (i == 0) {
        e.ids.push_back(Vocab::kCls);
      } else if (i < real) {
        e.ids.push_back(4 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(vocab - 4))));
      } else {
        e.ids.push_back(Vocab::kPad);
      }
      e.mask.push_back(i < real ? 1 : 0);
    }
    rows.push_back(std::move(e));
  }
  return make_batch(rows);
}

std::vector<std::string> corpus_lines() {
  std::ifstream in(COMMA_DATA_DIR "/synthetic_corpus.txt");
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(normalize(line));
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  auto c = small_config(50);
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(2);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(50);
  c.dropout_p = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("hidden state shape and bounds") {
  Rng rng(1);
  auto c = small_config(40);
  auto params = EncoderParams<float>::init(c, rng);
  auto batch = random_batch(2, 16, 40, rng);
  auto H = encode_batch(batch, params, c, Mode::kEval, nullptr);
  CHECK(H.shape() == ag::Shape{2, 16, 32});

  auto too_long = random_batch(1, 17, 40, rng);
  CHECK_THROWS_AS(encode_batch(too_long, params, c, Mode::kEval, nullptr), ShapeError);
  auto bad = batch;
  bad.token_ids[1] = 40;
  CHECK_THROWS_AS(encode_batch(bad, params, c, Mode::kEval, nullptr), IndexError);
  CHECK_THROWS_AS(encode_batch(batch, params, c, Mode::kTrain, nullptr), ContractError);
}

TEST_CASE("padding tokens do not leak into real positions") {
  Rng rng(2);
  auto c = small_config(40);
  auto params = EncoderParams<float>::init(c, rng);
  auto batch = random_batch(3, 12, 40, rng);
  batch.mask = {1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1,
                1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  auto H1 = encode_batch(batch, params, c, Mode::kEval, nullptr);
  auto changed = batch;
  for (std::size_t i = 0; i < changed.token_ids.size(); ++i) {
    if (!changed.mask[i]) changed.token_ids[i] = 4 + static_cast<int>(i % 30);
  }
  auto H2 = encode_batch(changed, params, c, Mode::kEval, nullptr);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < 12; ++i) {
      if (!batch.masked(b, i)) continue;
      for (ag::Index k = 0; k < 32; ++k) {
        CHECK(H1.at({static_cast<ag::Index>(b), static_cast<ag::Index>(i), k}) ==
              H2.at({static_cast<ag::Index>(b), static_cast<ag::Index>(i), k}));
      }
    }
  }
}

TEST_CASE("eval mode is deterministic and attention rows are distributions") {
  Rng rng(3);
  auto c = small_config(40);
  auto params = EncoderParams<float>::init(c, rng);
  auto batch = random_batch(2, 10, 40, rng);
  std::vector<ag::Tensor<float>> probs;
  auto H1 = encode_batch(batch, params, c, Mode::kEval, nullptr, &probs);
  auto H2 = encode_batch(batch, params, c, Mode::kEval, nullptr);
  CHECK((H1.value() == H2.value()).all());
  REQUIRE(probs.size() == 2);
  for (const auto& p : probs) {
    CHECK(p.shape() == ag::Shape{4, 10, 10});
    for (ag::Index bh = 0; bh < 4; ++bh) {
      const auto b = static_cast<std::size_t>(bh / 2);
      for (ag::Index i = 0; i < 10; ++i) {
        double total = 0;
        for (ag::Index j = 0; j < 10; ++j) {
          total += p.at({bh, i, j});
          if (!batch.masked(b, static_cast<std::size_t>(j))) CHECK(p.at({bh, i, j}) == 0.0f);
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
  }
  Rng d1(9), d2(9);
  auto T1 = encode_batch(batch, params, c, Mode::kTrain, &d1);
  auto T2 = encode_batch(batch, params, c, Mode::kTrain, &d2);
  CHECK((T1.value() == T2.value()).all());
  CHECK_FALSE((T1.value() == H1.value()).all());
}

TEST_CASE("parameter names are unique and cast round-trips") {
  Rng rng(4);
  auto c = small_config(30);
  auto params = EncoderParams<float>::init(c, rng);
  auto named = params.named();
  std::set<std::string> names;
  for (const auto& p : named) names.insert(p.name);
  CHECK(names.size() == named.size());
  auto copy = cast_params<double>(params, c);
  auto back = cast_params<float>(copy, c);
  auto a = params.named();
  auto b = back.named();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i].tensor->value() == b[i].tensor->value()).all());
}

TEST_CASE("encoder gradients match finite differences") {
  Rng rng(5);
  EncoderConfig c;
  c.vocab_size = 12;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 8;
  c.max_len = 8;
  c.init_std = 0.5;
  auto params = cast_params<double>(EncoderParams<float>::init(c, rng), c);
  auto batch = random_batch(2, 8, 12, rng);
  batch.mask[7] = 0;
  auto weights = ag::Tensor<double>::randn({2, 8, 8}, rng, 1.0);
  auto f = [&] { return ag::sum(ag::mul(encode_batch(batch, params, c, Mode::kEval, nullptr), weights)); };
  std::vector<ag::Tensor<double>> inputs;
  for (auto& p : params.named()) {
    if (p.name != "encoder.mlm_bias") inputs.push_back(*p.tensor);
  }
  auto report = ag::grad_check(f, inputs);
  CHECK(report.passed);
  CHECK(report.max_relative_error <= 1e-3);
}

TEST_CASE("mask_tokens recipe") {
  Rng rng(6);
  Encoding e;
  e.ids = {Vocab::kCls};
  e.mask = {1};
  for (int i = 0; i < 20; ++i) {
    e.ids.push_back(10 + i);
    e.mask.push_back(1);
  }
  e.ids.push_back(Vocab::kPad);
  e.mask.push_back(0);
  auto m = mask_tokens(e, 40, 0.15, rng);
  int picked = 0;
  for (std::size_t i = 0; i < e.ids.size(); ++i) {
    if (m.targets[i] >= 0) {
      ++picked;
      CHECK(m.targets[i] == e.ids[i]);
    } else {
      CHECK(m.input.ids[i] == e.ids[i]);
    }
  }
  CHECK(picked == 3);
  CHECK(m.targets[0] == -1);
  CHECK(m.targets.back() == -1);

  int unk = 0, kept = 0, total = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    auto r = mask_tokens(e, 40, 0.15, rng);
    for (std::size_t i = 0; i < e.ids.size(); ++i) {
      if (r.targets[i] < 0) continue;
      ++total;
      unk += r.input.ids[i] == Vocab::kMask;
      kept += r.input.ids[i] == e.ids[i];
    }
  }
  CHECK(static_cast<double>(unk) / total == doctest::Approx(0.8).epsilon(0.05));
  CHECK(static_cast<double>(kept) / total > 0.08);
  CHECK(static_cast<double>(kept) / total < 0.14);
  CHECK_THROWS_AS(mask_tokens(e, 40, 0.0, rng), InputError);
}

TEST_CASE("masked-LM pretraining lowers the loss and is reproducible") {
  const auto corpus = corpus_lines();
  REQUIRE(corpus.size() == 200);
  auto vocab = build_vocab(corpus, 256);
  auto c = small_config(static_cast<ag::Index>(vocab.size()));
  MlmSchedule s;
  s.steps = 40;
  auto a = pretrain_mlm(corpus, vocab, c, s);
  CHECK(a.loss_trace.size() == 40);
  CHECK(a.final_eval_loss < a.initial_eval_loss);
  auto b = pretrain_mlm(corpus, vocab, c, s);
  CHECK(a.loss_trace == b.loss_trace);
  CHECK((a.params.token_embedding.value() == b.params.token_embedding.value()).all());

  s.mask_rate = 0.0;
  CHECK_THROWS_AS(pretrain_mlm(corpus, vocab, c, s), InputError);
  s.mask_rate = 0.15;
  CHECK_THROWS_AS(pretrain_mlm({}, vocab, c, s), InputError);
}
