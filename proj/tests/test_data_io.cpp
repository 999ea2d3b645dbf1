#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>

#include "comma/data_io.hpp"
#include "comma/training.hpp"
#include "fixtures.hpp"

using namespace comma;

namespace {

const char* kHeader = "id\ttext\taggression\tgender\tcommunal\n";

Checkpoint tiny_checkpoint(PoolerKind kind = PoolerKind::kAttention) {
  Checkpoint ck;
  ck.vocab = build_vocab(std::vector<std::string>{"ami tumi se", "tumi ki"}, 20);
  EncoderConfig c;
  c.vocab_size = static_cast<ag::Index>(ck.vocab.size());
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_len = 8;
  Rng rng(4);
  ck.model = ModelParams<float>::init(c, kind, rng);
  ck.emoji_map.add("😡", "gussa");
  ck.metadata["seed"] = 4;
  return ck;
}

template <class Fn>
FormatErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("expected a FormatError");
  return FormatErrorKind::kIo;
}

void set_u32(std::string& bytes, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes[at + i] = static_cast<char>((v >> (8 * i)) & 0xff);
}

}  // namespace

TEST_CASE("parse a well-formed dataset") {
  const std::string text = std::string(kHeader) + "a1\tami bhalo\tNAG\tNGEN\tNCOM\na2\tki holo\tOAG\tGEN\tCOM\n";
  auto rows = parse_dataset(text);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].id == "a1");
  CHECK(rows[0].text == "ami bhalo");
  CHECK(rows[1].labels.aggression == Aggression::OAG);
  CHECK(rows[1].labels.gender == Gender::GEN);
  CHECK(rows[1].labels.communal == Communal::COM);
  CHECK(parse_dataset(format_dataset(rows)).size() == 2);
  CHECK(format_dataset(parse_dataset(format_dataset(rows))) == format_dataset(rows));
}

TEST_CASE("columns are located by header name") {
  const std::string text = "communal\tid\tgender\ttext\taggression\nCOM\tz\tGEN\thello\tCAG\n";
  auto rows = parse_dataset(text);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].id == "z");
  CHECK(rows[0].labels.aggression == Aggression::CAG);
}

TEST_CASE("header-only file is an empty dataset") {
  CHECK(parse_dataset(kHeader).empty());
  CHECK(class_distribution(parse_dataset(kHeader)).total == 0);
}

TEST_CASE("malformed rows report line and field") {
  auto error_of = [](const std::string& body) -> DataError {
    try {
      parse_dataset(std::string(kHeader) + body);
    } catch (const DataError& e) {
      return e;
    }
    FAIL("expected DataError");
    return DataError("unreachable");
  };
  auto bad_label = error_of("a\tx\tNAG\tNGEN\tNCOM\nb\ty\tBAD\tNGEN\tNCOM\n");
  CHECK(bad_label.line() == 3);
  CHECK(bad_label.field() == "aggression");
  CHECK(std::string(bad_label.what()).find("line 3") != std::string::npos);
  CHECK(std::string(bad_label.what()).find("row 'b'") != std::string::npos);

  CHECK(error_of("a\tx\tNAG\tNGEN\n").line() == 2);
  CHECK(error_of("a\t\tNAG\tNGEN\tNCOM\n").field() == "text");
  CHECK(error_of("\tx\tNAG\tNGEN\tNCOM\n").field() == "id");
  CHECK(error_of("a\tx\tNAG\tNGEN\tNCOM\na\ty\tNAG\tNGEN\tNCOM\n").line() == 3);
  CHECK_THROWS_AS(parse_dataset("id\ttext\taggression\tgender\nx\ty\tNAG\tGEN\n"), DataError);
  CHECK_THROWS_AS(load_dataset("/nonexistent/path.tsv"), InputError);

  LoadOptions unlabeled;
  unlabeled.require_labels = false;
  auto rows = parse_dataset("id\ttext\nq\thello\n", unlabeled);
  CHECK(rows.size() == 1);
}

TEST_CASE("class distribution on fixed-shape fixtures") {
  auto meitei = class_distribution(fixtures::dataset_with(fixtures::kMeiteiTrain));
  CHECK(meitei.nag == 1258);
  CHECK(meitei.cag == 1495);
  CHECK(meitei.oag == 456);
  CHECK(meitei.ngen == 3006);
  CHECK(meitei.gen == 203);
  CHECK(meitei.ncom == 2967);
  CHECK(meitei.com == 242);
  CHECK(meitei.total == 3209);
  CHECK(meitei.consistent());

  auto bengali = class_distribution(fixtures::dataset_with(fixtures::kBengaliDev));
  CHECK(bengali.nag == 333);
  CHECK(bengali.cag == 157);
  CHECK(bengali.oag == 501);
  CHECK(bengali.total == 991);
  CHECK(bengali.ngen == 624);
  CHECK(bengali.ncom == 879);

  const auto text = distribution_text(meitei);
  CHECK(text.find("3209") != std::string::npos);
  auto j = nlohmann::json::parse(distribution_json(meitei));
  CHECK(j["total"] == 3209);
  CHECK(j["OAG"] == 456);
}

TEST_CASE("checkpoint round trip is byte exact") {
  auto ck = tiny_checkpoint();
  const auto bytes = serialize_checkpoint(ck);
  CHECK(bytes.substr(0, 4) == "CMMA");
  auto back = parse_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.vocab == ck.vocab);
  CHECK(back.emoji_map == ck.emoji_map);
  CHECK(back.model.config == ck.model.config);
  CHECK(back.metadata["seed"] == 4);

  auto dir = fixtures::scratch_dir("data_io");
  save_checkpoint(ck, dir / "a.ckpt");
  CHECK(read_file(dir / "a.ckpt") == bytes);
  CHECK(serialize_checkpoint(load_checkpoint(dir / "a.ckpt")) == bytes);

  auto encoder_only = tiny_checkpoint(PoolerKind::kNone);
  CHECK(parse_checkpoint(serialize_checkpoint(encoder_only)).model.pooler_kind == PoolerKind::kNone);
  auto mean = tiny_checkpoint(PoolerKind::kMean);
  CHECK(serialize_checkpoint(mean).size() < bytes.size());
}

TEST_CASE("checkpoint errors are distinguishable") {
  const auto bytes = serialize_checkpoint(tiny_checkpoint());
  CHECK(kind_of([&] { parse_checkpoint("XXXX" + bytes.substr(4)); }) == FormatErrorKind::kMagic);
  CHECK(kind_of([&] { parse_checkpoint(""); }) == FormatErrorKind::kMagic);

  auto v2 = bytes;
  set_u32(v2, 4, 2);
  CHECK(kind_of([&] { parse_checkpoint(v2); }) == FormatErrorKind::kVersion);

  CHECK(kind_of([&] { parse_checkpoint(bytes.substr(0, 10)); }) == FormatErrorKind::kTruncated);
  CHECK(kind_of([&] { parse_checkpoint(bytes.substr(0, 40)); }) == FormatErrorKind::kTruncated);
  CHECK(kind_of([&] { parse_checkpoint(bytes.substr(0, bytes.size() - 3)); }) == FormatErrorKind::kTruncated);
  CHECK(kind_of([&] { parse_checkpoint(bytes + "x"); }) == FormatErrorKind::kParameterMismatch);

  auto renamed = bytes;
  const auto at = renamed.find("encoder.token_embedding");
  REQUIRE(at != std::string::npos);
  renamed[at] = 'E';
  CHECK(kind_of([&] { parse_checkpoint(renamed); }) == FormatErrorKind::kParameterMismatch);

  auto garbled = bytes;
  garbled[12] = '!';
  CHECK(kind_of([&] { parse_checkpoint(garbled); }) == FormatErrorKind::kHeader);

  CHECK(kind_of([&] { load_checkpoint("/nonexistent/model.ckpt"); }) == FormatErrorKind::kIo);
}

TEST_CASE("one training step moves the parameters") {
  std::vector<Example> data;
  for (int i = 0; i < 8; ++i) {
    Example e;
    e.id = "x" + std::to_string(i);
    e.text = i % 2 ? "ami tumi" : "se ki";
    e.labels.aggression = i % 2 ? Aggression::OAG : Aggression::NAG;
    data.push_back(e);
  }
  auto init = tiny_checkpoint();
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 8;
  tc.balance = false;
  tc.base_lr = 1e-3;
  TrainOptions opt;
  opt.init = &init;
  auto r = train(data, init.model.config, tc, opt);
  CHECK(r.steps.size() == 1);
  CHECK(serialize_checkpoint(r.checkpoint) != serialize_checkpoint(init));
  const auto& moved = r.checkpoint.model.encoder.token_embedding.value();
  CHECK_FALSE((moved == init.model.encoder.token_embedding.value()).all());
}
