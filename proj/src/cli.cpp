#include "comma/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "comma/data_io.hpp"
#include "comma/errors.hpp"
#include "comma/metrics.hpp"

namespace comma::cli {
namespace {

using Json = nlohmann::json;

template <class T>
T get_value(const Json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

PoolerKind pooler_or_throw(const std::string& name) {
  const auto kind = parse_pooler(name);
  if (!kind || *kind == PoolerKind::kNone) throw ConfigError("pooler must be 'attention' or 'mean', got '" + name + "'");
  return *kind;
}

enum class Format { kText, kJson };

struct Common {
  std::uint64_t seed = kDefaultSeed;
  std::string format = "text";
  std::string report_path;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Seed for all randomness (printed in reports)");
  cmd->add_option("--format", c.format, "Report format on stdout")->check(CLI::IsMember({"text", "json"}));
  cmd->add_option("--report", c.report_path, "Also write the JSON report to this path");
}

void emit_report(const MetricsReport& report, const Common& c, std::ostream& out) {
  const std::string json = report_json(report, c.seed);
  out << (c.format == "json" ? json : report_text(report, c.seed));
  if (!c.report_path.empty()) write_file(c.report_path, json);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::string epochs_csv(const std::vector<EpochRecord>& epochs) {
  std::ostringstream os;
  os << "epoch,mean_loss,dev_overall_micro_f1,dev_instance_f1\n";
  os << std::setprecision(9);
  for (const auto& e : epochs) {
    os << e.epoch << ',' << e.mean_loss << ',';
    if (e.dev) os << e.dev->overall_micro_f1 << ',' << e.dev->instance_f1;
    else os << ',';
    os << '\n';
  }
  return os.str();
}

}  // namespace

void apply_config_json(RunConfig& c, const std::string& json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  auto path = [](const Json& v, const std::string& k) { return std::filesystem::path(get_value<std::string>(v, k)); };
  for (const auto& [key, v] : j.items()) {
    if (key == "d_model") c.encoder.d_model = get_value<ag::Index>(v, key);
    else if (key == "n_layers") c.encoder.n_layers = get_value<ag::Index>(v, key);
    else if (key == "n_heads") c.encoder.n_heads = get_value<ag::Index>(v, key);
    else if (key == "d_ff") c.encoder.d_ff = get_value<ag::Index>(v, key);
    else if (key == "max_len") c.encoder.max_len = get_value<ag::Index>(v, key);
    else if (key == "init_std") c.encoder.init_std = get_value<double>(v, key);
    else if (key == "dropout_p") {
      c.train.dropout_p = get_value<double>(v, key);
      c.encoder.dropout_p = c.train.dropout_p;
    } else if (key == "batch_size") c.train.batch_size = get_value<std::size_t>(v, key);
    else if (key == "base_lr") c.train.base_lr = get_value<double>(v, key);
    else if (key == "epochs") c.train.epochs = get_value<std::size_t>(v, key);
    else if (key == "warmup_steps") c.train.warmup_steps = get_value<std::size_t>(v, key);
    else if (key == "seed") {
      c.train.seed = get_value<std::uint64_t>(v, key);
      c.pretrain.seed = c.train.seed;
    } else if (key == "pooler") c.train.pooler = pooler_or_throw(get_value<std::string>(v, key));
    else if (key == "task_loss_weights") c.train.task_loss_weights = get_value<std::array<double, 3>>(v, key);
    else if (key == "weight_decay") {
      c.train.weight_decay = get_value<double>(v, key);
      c.pretrain.weight_decay = c.train.weight_decay;
    } else if (key == "clip_norm") {
      c.train.clip_norm = get_value<double>(v, key);
      c.pretrain.clip_norm = c.train.clip_norm;
    } else if (key == "balance") c.train.balance = get_value<bool>(v, key);
    else if (key == "freeze_pooler") c.train.freeze_pooler = get_value<bool>(v, key);
    else if (key == "vocab_target") c.train.vocab_target = get_value<std::size_t>(v, key);
    else if (key == "pretrain_steps") c.pretrain.steps = get_value<std::size_t>(v, key);
    else if (key == "pretrain_batch_size") c.pretrain.batch_size = get_value<std::size_t>(v, key);
    else if (key == "pretrain_lr") c.pretrain.base_lr = get_value<double>(v, key);
    else if (key == "pretrain_warmup_steps") c.pretrain.warmup_steps = get_value<std::size_t>(v, key);
    else if (key == "mask_rate") c.pretrain.mask_rate = get_value<double>(v, key);
    else if (key == "train") c.train_path = path(v, key);
    else if (key == "dev") c.dev_path = path(v, key);
    else if (key == "test") c.test_path = path(v, key);
    else if (key == "emoji_map") c.emoji_map = path(v, key);
    else if (key == "out") c.out_dir = path(v, key);
    else if (key == "init_checkpoint") c.init_checkpoint = path(v, key);
    else if (key == "corpus") c.corpus = path(v, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig c;
  std::string text;
  try {
    text = read_file(path);
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  apply_config_json(c, text);
  return c;
}

namespace {

struct TrainFlags {
  std::string data, dev, config, out, init, emoji;
  std::optional<std::string> pooler;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr;
  std::string format = "text";
  std::string report_path;
};

int cmd_train(const TrainFlags& f, std::ostream& out, std::ostream& err) {
  RunConfig rc = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.pooler) rc.train.pooler = pooler_or_throw(*f.pooler);
  if (f.seed) rc.train.seed = *f.seed;
  if (f.epochs) rc.train.epochs = *f.epochs;
  if (f.batch_size) rc.train.batch_size = *f.batch_size;
  if (f.lr) rc.train.base_lr = *f.lr;
  if (!f.data.empty()) rc.train_path = f.data;
  if (!f.dev.empty()) rc.dev_path = f.dev;
  if (!f.out.empty()) rc.out_dir = f.out;
  if (!f.init.empty()) rc.init_checkpoint = f.init;
  if (!f.emoji.empty()) rc.emoji_map = f.emoji;
  if (!rc.train_path) throw ConfigError("train: --data (or config key 'train') is required");
  if (!rc.out_dir) throw ConfigError("train: --out (or config key 'out') is required");
  rc.train.validate();

  const auto data = load_dataset(*rc.train_path);
  if (data.empty()) throw InputError("training set " + rc.train_path->string() + " has no rows");
  std::vector<Example> dev;
  TrainOptions options;
  if (rc.dev_path) {
    dev = load_dataset(*rc.dev_path);
    options.dev = &dev;
  }
  std::optional<Checkpoint> init;
  if (rc.init_checkpoint) {
    init = load_checkpoint(*rc.init_checkpoint);
    options.init = &*init;
  }
  if (rc.emoji_map && !init) options.emoji_map = EmojiMap::load(*rc.emoji_map);
  options.on_epoch = [&err](const EpochRecord& e) {
    err << "epoch " << e.epoch << " loss " << e.mean_loss;
    if (e.dev) err << " dev_overall_micro_f1 " << round3(e.dev->overall_micro_f1);
    err << "\n";
  };

  auto result = train(data, rc.encoder, rc.train, options);
  std::filesystem::create_directories(*rc.out_dir);
  save_checkpoint(result.checkpoint, *rc.out_dir / "model.ckpt");
  write_file(*rc.out_dir / "trace.csv", steps_csv(result.steps));
  write_file(*rc.out_dir / "epochs.csv", epochs_csv(result.epochs));

  const auto& report_rows = rc.dev_path ? dev : data;
  if (report_rows.empty()) throw InputError("nothing to report on: dev split is empty");
  Common c{rc.train.seed, f.format, f.report_path};
  const auto report = evaluate(result.checkpoint, report_rows);
  write_file(*rc.out_dir / "report.json", report_json(report, c.seed));
  emit_report(report, c, out);
  return kOk;
}

int cmd_pretrain(const std::string& corpus_flag, const std::string& config_path, const std::string& out_flag,
                 std::optional<std::uint64_t> seed, std::optional<std::size_t> steps, std::ostream& out) {
  RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  if (!corpus_flag.empty()) rc.corpus = corpus_flag;
  if (!out_flag.empty()) rc.out_dir = out_flag;
  if (seed) rc.pretrain.seed = *seed;
  if (steps) rc.pretrain.steps = *steps;
  if (!rc.corpus) throw ConfigError("pretrain: --corpus (or config key 'corpus') is required");
  if (!rc.out_dir) throw ConfigError("pretrain: --out (or config key 'out') is required");

  EmojiMap emoji;
  if (rc.emoji_map) emoji = EmojiMap::load(*rc.emoji_map);
  std::vector<std::string> corpus;
  for (const auto& line : read_lines(*rc.corpus)) {
    auto text = normalize(line, &emoji);
    if (!text.empty()) corpus.push_back(std::move(text));
  }
  if (corpus.empty()) throw InputError("pretraining corpus " + rc.corpus->string() + " has no text");
  const Vocab vocab = build_vocab(corpus, rc.train.vocab_target);
  EncoderConfig enc = rc.encoder;
  enc.vocab_size = static_cast<ag::Index>(vocab.size());
  const auto result = pretrain_mlm(corpus, vocab, enc, rc.pretrain);

  Checkpoint ck;
  Rng unused(0);
  ck.model = ModelParams<float>::init(enc, PoolerKind::kNone, unused);
  ck.model.encoder = result.params;
  ck.vocab = vocab;
  ck.emoji_map = emoji;
  ck.metadata["seed"] = rc.pretrain.seed;
  ck.metadata["steps"] = rc.pretrain.steps;
  ck.metadata["initial_mlm_loss"] = result.initial_eval_loss;
  ck.metadata["final_mlm_loss"] = result.final_eval_loss;
  std::filesystem::create_directories(*rc.out_dir);
  save_checkpoint(ck, *rc.out_dir / "encoder.ckpt");
  std::ostringstream trace;
  trace << "step,loss\n" << std::setprecision(9);
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) trace << i << ',' << result.loss_trace[i] << '\n';
  write_file(*rc.out_dir / "mlm_trace.csv", trace.str());
  out << "seed: " << rc.pretrain.seed << "\n"
      << "steps: " << rc.pretrain.steps << "\n"
      << "vocab_size: " << vocab.size() << "\n"
      << "initial_mlm_loss: " << result.initial_eval_loss << "\n"
      << "final_mlm_loss: " << result.final_eval_loss << "\n";
  return kOk;
}

int cmd_score(const std::string& gold_path, const std::string& pred_path, const Common& c, std::ostream& out) {
  const auto gold = load_dataset(gold_path);
  LoadOptions pred_opts;
  pred_opts.require_text = false;
  pred_opts.allow_empty_text = true;
  const auto pred = load_dataset(pred_path, pred_opts);
  if (gold.empty()) throw InputError("gold file " + gold_path + " has no rows");

  std::map<std::string, TriLabel> by_id;
  for (const auto& p : pred) by_id.emplace(p.id, p.labels);
  std::vector<std::string> missing;
  std::vector<TriLabel> g, p;
  for (const auto& ex : gold) {
    auto it = by_id.find(ex.id);
    if (it == by_id.end()) {
      missing.push_back(ex.id);
      continue;
    }
    g.push_back(ex.labels);
    p.push_back(it->second);
    by_id.erase(it);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < std::min<std::size_t>(10, missing.size()); ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 10) list += ", ...";
    throw DataError(std::to_string(missing.size()) + " gold ids missing from predictions: " + list);
  }
  if (!by_id.empty()) {
    throw DataError("prediction file has " + std::to_string(by_id.size()) + " ids not in gold, e.g. '" +
                    by_id.begin()->first + "'");
  }
  emit_report(score(g, p), c, out);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-task aggression / gender-bias / communal-bias classifier", "comma"};
  app.require_subcommand(1);

  Common stats_c, eval_c, score_c;
  std::string stats_data;
  auto* stats = app.add_subcommand("stats", "Class distribution of a dataset");
  stats->add_option("--data", stats_data, "Dataset TSV")->required();
  add_common(stats, stats_c);

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Fine-tune the joint classifier");
  train_cmd->add_option("--data", tf.data, "Training TSV");
  train_cmd->add_option("--dev", tf.dev, "Dev TSV for best-epoch selection");
  train_cmd->add_option("--config", tf.config, "JSON run config");
  train_cmd->add_option("--pooler", tf.pooler, "attention or mean")->check(CLI::IsMember({"attention", "mean"}));
  train_cmd->add_option("--seed", tf.seed, "Seed for all randomness");
  train_cmd->add_option("--epochs", tf.epochs, "Training epochs");
  train_cmd->add_option("--batch-size", tf.batch_size, "Batch size");
  train_cmd->add_option("--lr", tf.lr, "Initial learning rate");
  train_cmd->add_option("--init", tf.init, "Pretrained encoder checkpoint");
  train_cmd->add_option("--emoji-map", tf.emoji, "Emoji replacement TSV");
  train_cmd->add_option("--out", tf.out, "Output directory");
  train_cmd->add_option("--format", tf.format, "Report format on stdout")->check(CLI::IsMember({"text", "json"}));
  train_cmd->add_option("--report", tf.report_path, "Also write the JSON report to this path");

  std::string eval_model, eval_data;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a labelled dataset");
  eval->add_option("--model", eval_model, "Checkpoint")->required();
  eval->add_option("--data", eval_data, "Dataset TSV")->required();
  add_common(eval, eval_c);

  std::string pred_model, pred_input, pred_output;
  auto* predict_cmd = app.add_subcommand("predict", "Write predicted labels as TSV");
  predict_cmd->add_option("--model", pred_model, "Checkpoint")->required();
  predict_cmd->add_option("--input", pred_input, "TSV with id and text columns")->required();
  predict_cmd->add_option("--output", pred_output, "Output TSV")->required();

  std::string gold_path, pred_path;
  auto* score_cmd = app.add_subcommand("score", "Score a prediction file against gold labels");
  score_cmd->add_option("--gold", gold_path, "Gold TSV")->required();
  score_cmd->add_option("--pred", pred_path, "Prediction TSV (text column optional)")->required();
  add_common(score_cmd, score_c);

  std::string corpus, pre_config, pre_out;
  std::optional<std::uint64_t> pre_seed;
  std::optional<std::size_t> pre_steps;
  auto* pretrain = app.add_subcommand("pretrain", "Masked-LM pretraining of the encoder");
  pretrain->add_option("--corpus", corpus, "Text file, one sentence per line");
  pretrain->add_option("--config", pre_config, "JSON run config");
  pretrain->add_option("--out", pre_out, "Output directory");
  pretrain->add_option("--seed", pre_seed, "Seed for all randomness");
  pretrain->add_option("--steps", pre_steps, "Optimizer steps");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kConfigError;
  }

  try {
    if (*stats) {
      const auto table = class_distribution(load_dataset(stats_data));
      if (stats_c.format == "json") {
        auto j = nlohmann::ordered_json::parse(distribution_json(table));
        nlohmann::ordered_json withseed;
        withseed["seed"] = stats_c.seed;
        for (auto& [k, v] : j.items()) withseed[k] = v;
        out << withseed.dump(2) << "\n";
      } else {
        out << "seed: " << stats_c.seed << "\n" << distribution_text(table);
      }
      return kOk;
    }
    if (*train_cmd) return cmd_train(tf, out, err);
    if (*eval) {
      const auto ck = load_checkpoint(eval_model);
      const auto data = load_dataset(eval_data);
      if (data.empty()) throw InputError("evaluation set " + eval_data + " has no rows");
      emit_report(evaluate(ck, data), eval_c, out);
      return kOk;
    }
    if (*predict_cmd) {
      const auto ck = load_checkpoint(pred_model);
      LoadOptions opts;
      opts.require_labels = false;
      opts.allow_empty_text = true;
      auto rows = load_dataset(pred_input, opts);
      std::vector<std::string> texts;
      for (const auto& r : rows) texts.push_back(r.text);
      const auto labels = predict(ck, texts);
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i].labels = labels[i];
      write_dataset(pred_output, rows);
      return kOk;
    }
    if (*score_cmd) return cmd_score(gold_path, pred_path, score_c, out);
    if (*pretrain) return cmd_pretrain(corpus, pre_config, pre_out, pre_seed, pre_steps, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kDataError;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace comma::cli
