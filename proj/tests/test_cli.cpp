#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "json.hpp"

#include "comma/cli.hpp"
#include "comma/data_io.hpp"
#include "fixtures.hpp"

using namespace comma;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

const std::string kData = COMMA_DATA_DIR;
const char* kHeader = "id\ttext\taggression\tgender\tcommunal\n";

std::string tiny_config(const std::filesystem::path& dir) {
  const auto path = dir / "config.json";
  write_file(path, R"({"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "max_len": 16,
                       "epochs": 2, "base_lr": 0.001, "vocab_target": 256})");
  return path.string();
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"bogus"}).code == 2);
  auto r = run({"eval", "--model", "x.ckpt"});
  CHECK(r.code == 2);
  CHECK(r.err.find("--data") != std::string::npos);
  CHECK(run({"train", "--pooler", "max", "--data", "x"}).code == 2);
  CHECK(run({"stats", "--data", kData + "/synthetic_train.tsv", "--format", "xml"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("config file errors exit with 2") {
  auto dir = fixtures::scratch_dir("cli_config");
  write_file(dir / "bad.json", R"({"epochz": 3})");
  auto r = run({"train", "--config", (dir / "bad.json").string(), "--data", kData + "/synthetic_train.tsv",
                "--out", (dir / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("epochz") != std::string::npos);
  write_file(dir / "typed.json", R"({"epochs": "three"})");
  CHECK(run({"train", "--config", (dir / "typed.json").string(), "--data", "x", "--out", "y"}).code == 2);
  write_file(dir / "broken.json", "{");
  CHECK(run({"train", "--config", (dir / "broken.json").string(), "--data", "x", "--out", "y"}).code == 2);
  CHECK(run({"train", "--data", kData + "/synthetic_train.tsv"}).code == 2);

  cli::RunConfig rc;
  cli::apply_config_json(rc, R"({"pooler": "mean", "task_loss_weights": [1, 0, 0.5], "mask_rate": 0.2})");
  CHECK(rc.train.pooler == PoolerKind::kMean);
  CHECK(rc.train.task_loss_weights[2] == 0.5);
  CHECK(rc.pretrain.mask_rate == 0.2);
  CHECK_THROWS_AS(cli::apply_config_json(rc, R"({"pooler": "max"})"), ConfigError);
  CHECK_THROWS_AS(cli::apply_config_json(rc, R"([1, 2])"), ConfigError);
}

TEST_CASE("stats on the Meitei training shape") {
  auto dir = fixtures::scratch_dir("cli_stats");
  const auto rows = fixtures::dataset_with(fixtures::kMeiteiTrain);
  write_dataset(dir / "meitei.tsv", rows);
  auto r = run({"stats", "--data", (dir / "meitei.tsv").string()});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("seed: 42\n", 0) == 0);
  CHECK(r.out.find("3209") != std::string::npos);
  CHECK(r.out.find("1258") != std::string::npos);
  auto j = run({"stats", "--data", (dir / "meitei.tsv").string(), "--format", "json", "--seed", "5"});
  auto parsed = nlohmann::json::parse(j.out);
  CHECK(parsed["seed"] == 5);
  CHECK(parsed["total"] == 3209);
  CHECK(parsed["CAG"] == 1495);
}

TEST_CASE("data problems exit with 3") {
  auto dir = fixtures::scratch_dir("cli_data");
  write_file(dir / "bad.tsv", std::string(kHeader) + "a\tx\tNAG\tNGEN\tNCOM\nb\ty\tMAYBE\tNGEN\tNCOM\n");
  auto r = run({"stats", "--data", (dir / "bad.tsv").string()});
  CHECK(r.code == 3);
  CHECK(r.err.find("line 3") != std::string::npos);
  CHECK(run({"stats", "--data", (dir / "missing.tsv").string()}).code == 3);
  write_file(dir / "junk.ckpt", "not a checkpoint");
  CHECK(run({"eval", "--model", (dir / "junk.ckpt").string(), "--data", kData + "/synthetic_dev.tsv"}).code == 3);
}

TEST_CASE("score") {
  auto dir = fixtures::scratch_dir("cli_score");
  const std::string gold = std::string(kHeader) +
                           "g1\ta\tNAG\tNGEN\tNCOM\n"
                           "g2\tb\tCAG\tGEN\tNCOM\n"
                           "g3\tc\tOAG\tNGEN\tCOM\n"
                           "g4\td\tNAG\tNGEN\tNCOM\n";
  write_file(dir / "gold.tsv", gold);
  // Shuffled order, no text column, one wrong label.
  write_file(dir / "pred.tsv",
             "id\taggression\tgender\tcommunal\n"
             "g3\tOAG\tNGEN\tCOM\n"
             "g1\tNAG\tNGEN\tNCOM\n"
             "g4\tCAG\tNGEN\tNCOM\n"
             "g2\tCAG\tGEN\tNCOM\n");
  auto r = run({"score", "--gold", (dir / "gold.tsv").string(), "--pred", (dir / "pred.tsv").string(), "--format",
                "json"});
  REQUIRE(r.code == 0);
  auto j = nlohmann::json::parse(r.out);
  CHECK(j["instance_f1"] == 0.75);
  CHECK(j["tasks"][0]["f1"] == 0.75);
  CHECK(j["tasks"][1]["f1"] == 1.0);

  write_file(dir / "short.tsv", "id\taggression\tgender\tcommunal\ng1\tNAG\tNGEN\tNCOM\n");
  auto missing = run({"score", "--gold", (dir / "gold.tsv").string(), "--pred", (dir / "short.tsv").string()});
  CHECK(missing.code == 3);
  CHECK(missing.err.find("g2") != std::string::npos);

  write_file(dir / "extra.tsv", std::string(kHeader) + gold.substr(std::string(kHeader).size()) +
                                    "zz\te\tNAG\tNGEN\tNCOM\n");
  CHECK(run({"score", "--gold", (dir / "gold.tsv").string(), "--pred", (dir / "extra.tsv").string()}).code == 3);

  auto self = run({"score", "--gold", (dir / "gold.tsv").string(), "--pred", (dir / "gold.tsv").string(),
                   "--report", (dir / "r.json").string()});
  CHECK(self.code == 0);
  CHECK(nlohmann::json::parse(read_file(dir / "r.json"))["overall_micro_f1"] == 1.0);
}

TEST_CASE("train, predict, score and eval agree") {
  auto dir = fixtures::scratch_dir("cli_pipeline");
  const auto config = tiny_config(dir);
  const auto train_path = kData + "/synthetic_train.tsv";
  const auto dev_path = kData + "/synthetic_dev.tsv";
  auto a = run({"train", "--config", config, "--data", train_path, "--dev", dev_path, "--out", (dir / "a").string()});
  REQUIRE(a.code == 0);
  auto b = run({"train", "--config", config, "--data", train_path, "--dev", dev_path, "--out", (dir / "b").string()});
  REQUIRE(b.code == 0);
  CHECK(read_file(dir / "a" / "model.ckpt") == read_file(dir / "b" / "model.ckpt"));
  CHECK(read_file(dir / "a" / "trace.csv") == read_file(dir / "b" / "trace.csv"));
  CHECK(a.out == b.out);
  CHECK(std::filesystem::exists(dir / "a" / "epochs.csv"));
  CHECK(std::filesystem::exists(dir / "a" / "report.json"));

  const auto model = (dir / "a" / "model.ckpt").string();
  auto eval = run({"eval", "--model", model, "--data", dev_path});
  REQUIRE(eval.code == 0);
  CHECK(eval.out == a.out);
  auto pred = run({"predict", "--model", model, "--input", dev_path, "--output", (dir / "pred.tsv").string()});
  REQUIRE(pred.code == 0);
  auto score = run({"score", "--gold", dev_path, "--pred", (dir / "pred.tsv").string()});
  REQUIRE(score.code == 0);
  CHECK(score.out == eval.out);
  auto eval_json = run({"eval", "--model", model, "--data", dev_path, "--format", "json"});
  CHECK(eval_json.out == read_file(dir / "a" / "report.json"));

  const auto preds = load_dataset(dir / "pred.tsv");
  const auto gold = load_dataset(dev_path);
  REQUIRE(preds.size() == gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) CHECK(preds[i].id == gold[i].id);

  write_file(dir / "empty.tsv", kHeader);
  CHECK(run({"eval", "--model", model, "--data", (dir / "empty.tsv").string()}).code == 3);
  auto empty_pred = run({"predict", "--model", model, "--input", (dir / "empty.tsv").string(), "--output",
                         (dir / "empty_pred.tsv").string()});
  CHECK(empty_pred.code == 0);
  CHECK(load_dataset(dir / "empty_pred.tsv").empty());
}

TEST_CASE("pretrain then fine-tune from the encoder") {
  auto dir = fixtures::scratch_dir("cli_pretrain");
  const auto config = tiny_config(dir);
  auto p = run({"pretrain", "--corpus", kData + "/synthetic_corpus.txt", "--config", config, "--steps", "5", "--out",
                (dir / "pre").string()});
  REQUIRE(p.code == 0);
  CHECK(p.out.find("final_mlm_loss") != std::string::npos);
  const auto encoder = (dir / "pre" / "encoder.ckpt").string();
  CHECK(load_checkpoint(encoder).model.pooler_kind == PoolerKind::kNone);
  CHECK(run({"eval", "--model", encoder, "--data", kData + "/synthetic_dev.tsv"}).code == 3);
  auto t = run({"train", "--config", config, "--data", kData + "/synthetic_train.tsv", "--init", encoder, "--out",
                (dir / "ft").string(), "--epochs", "1"});
  CHECK(t.code == 0);
  CHECK(load_checkpoint(dir / "ft" / "model.ckpt").metadata["init"] == "pretrained");
}
