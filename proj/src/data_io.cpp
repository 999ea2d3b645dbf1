#include "comma/data_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_set>

#include "comma/errors.hpp"
#include "comma/unicode.hpp"

namespace comma {
namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      cols.push_back(line.substr(start));
      return cols;
    }
    cols.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

constexpr std::array<std::string_view, 5> kColumns = {"id", "text", "aggression", "gender", "communal"};

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw InputError("failed writing " + path.string());
}

std::vector<Example> parse_dataset(std::string_view content, const LoadOptions& options) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < content.size()) {
    auto end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    auto line = content.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  if (lines.empty()) throw DataError("missing header row", 1);
  if (lines.front().starts_with("\xEF\xBB\xBF")) lines.front().remove_prefix(3);

  const auto header = split_tabs(lines.front());
  std::map<std::string_view, std::size_t> where;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!where.emplace(header[c], c).second) throw DataError("duplicate column", 1, std::string(header[c]));
  }
  auto column = [&](std::string_view name, bool required) -> std::optional<std::size_t> {
    auto it = where.find(name);
    if (it == where.end()) {
      if (required) throw DataError("missing column", 1, std::string(name));
      return std::nullopt;
    }
    return it->second;
  };
  const auto id_col = column("id", true);
  const auto text_col = column("text", options.require_text);
  std::array<std::optional<std::size_t>, 3> label_cols;
  for (Task t : kTasks) label_cols[static_cast<std::size_t>(t)] = column(task_name(t), options.require_labels);
  // Labels are all-or-nothing.
  const bool has_labels = label_cols[0] || label_cols[1] || label_cols[2];
  if (has_labels) {
    for (Task t : kTasks) column(task_name(t), true);
  }

  std::vector<Example> rows;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    const auto cols = split_tabs(lines[i]);
    if (cols.size() != header.size()) {
      throw DataError("expected " + std::to_string(header.size()) + " columns, found " + std::to_string(cols.size()),
                      line_no);
    }
    Example ex;
    ex.id = std::string(cols[*id_col]);
    if (ex.id.empty()) throw DataError("empty id", line_no, "id");
    if (!seen.insert(ex.id).second) throw DataError("duplicate id '" + ex.id + "'", line_no, "id");
    if (text_col) {
      ex.text = std::string(cols[*text_col]);
      if (ex.text.empty() && !options.allow_empty_text) throw DataError("empty text", line_no, "text");
    }
    if (has_labels) {
      for (Task t : kTasks) {
        const auto value = cols[*label_cols[static_cast<std::size_t>(t)]];
        const auto cls = parse_class(t, value);
        if (!cls) {
          throw DataError("row '" + ex.id + "': invalid label '" + std::string(value) + "'", line_no, std::string(task_name(t)));
        }
        ex.labels.set(t, *cls);
      }
    }
    rows.push_back(std::move(ex));
  }
  return rows;
}

std::vector<Example> load_dataset(const std::filesystem::path& path, const LoadOptions& options) {
  return parse_dataset(read_file(path), options);
}

std::string format_dataset(std::span<const Example> rows) {
  std::string out;
  for (std::size_t c = 0; c < kColumns.size(); ++c) {
    out += kColumns[c];
    out += c + 1 < kColumns.size() ? '\t' : '\n';
  }
  for (const auto& r : rows) {
    for (const auto* field : {&r.id, &r.text}) {
      if (field->find_first_of("\t\r\n") != std::string::npos) {
        throw DataError("row '" + r.id + "' contains a tab or newline and cannot be written as TSV");
      }
    }
    out += r.id;
    out += '\t';
    out += r.text;
    for (Task t : kTasks) {
      out += '\t';
      out += class_name(t, r.labels.index(t));
    }
    out += '\n';
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const Example> rows) {
  write_file(path, format_dataset(rows));
}

DistributionTable class_distribution(std::span<const Example> dataset) {
  DistributionTable d;
  for (const auto& ex : dataset) {
    switch (ex.labels.aggression) {
      case Aggression::NAG: ++d.nag; break;
      case Aggression::CAG: ++d.cag; break;
      case Aggression::OAG: ++d.oag; break;
    }
    (ex.labels.gender == Gender::GEN ? d.gen : d.ngen)++;
    (ex.labels.communal == Communal::COM ? d.com : d.ncom)++;
    ++d.total;
  }
  if (!d.consistent()) throw ContractError("class distribution sums disagree");
  return d;
}

std::string distribution_text(const DistributionTable& t) {
  std::ostringstream os;
  const std::array<std::pair<const char*, std::size_t>, 8> cells = {{{"NAG", t.nag},
                                                                     {"CAG", t.cag},
                                                                     {"OAG", t.oag},
                                                                     {"NGEN", t.ngen},
                                                                     {"GEN", t.gen},
                                                                     {"NCOM", t.ncom},
                                                                     {"COM", t.com},
                                                                     {"Total", t.total}}};
  for (const auto& [name, _] : cells) os << std::setw(8) << name;
  os << "\n";
  for (const auto& [_, count] : cells) os << std::setw(8) << count;
  os << "\n";
  return os.str();
}

std::string distribution_json(const DistributionTable& t) {
  nlohmann::ordered_json j;
  j["NAG"] = t.nag;
  j["CAG"] = t.cag;
  j["OAG"] = t.oag;
  j["NGEN"] = t.ngen;
  j["GEN"] = t.gen;
  j["NCOM"] = t.ncom;
  j["COM"] = t.com;
  j["total"] = t.total;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kMagic = "CMMA";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  return v;
}

nlohmann::ordered_json encoder_json(const EncoderConfig& c) {
  nlohmann::ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["d_ff"] = c.d_ff;
  j["max_len"] = c.max_len;
  j["dropout_p"] = c.dropout_p;
  j["init_std"] = c.init_std;
  return j;
}

EncoderConfig encoder_from_json(const nlohmann::ordered_json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<ag::Index>();
  c.d_model = j.at("d_model").get<ag::Index>();
  c.n_layers = j.at("n_layers").get<ag::Index>();
  c.n_heads = j.at("n_heads").get<ag::Index>();
  c.d_ff = j.at("d_ff").get<ag::Index>();
  c.max_len = j.at("max_len").get<ag::Index>();
  c.dropout_p = j.at("dropout_p").get<double>();
  c.init_std = j.at("init_std").get<double>();
  return c;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  auto model = checkpoint.model;  // handles share storage; named() needs a mutable object
  const auto params = model.named();

  nlohmann::ordered_json header;
  header["encoder"] = encoder_json(model.config);
  header["pooler"] = pooler_name(model.pooler_kind);
  header["vocab"] = checkpoint.vocab.tokens();
  auto emoji = nlohmann::ordered_json::array();
  for (const auto& [key, replacement] : checkpoint.emoji_map.entries()) {
    emoji.push_back({unicode::encode_utf8(key), replacement});
  }
  header["emoji_map"] = emoji;
  auto table = nlohmann::ordered_json::array();
  for (const auto& p : params) table.push_back({{"name", p.name}, {"shape", p.tensor->shape()}});
  header["parameters"] = table;
  header["metadata"] = checkpoint.metadata;
  const std::string header_text = header.dump();

  std::string out(kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  for (const auto& p : params) {
    for (float v : p.tensor->value()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != kMagic) {
    throw FormatError(FormatErrorKind::kMagic, "not a checkpoint: bad magic");
  }
  if (bytes.size() < 12) throw FormatError(FormatErrorKind::kTruncated, "checkpoint truncated in preamble");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrorKind::kVersion, "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t header_len = get_u32(bytes, 8);
  if (bytes.size() - 12 < header_len) throw FormatError(FormatErrorKind::kTruncated, "checkpoint truncated in header");

  Checkpoint ck;
  std::vector<std::pair<std::string, ag::Shape>> table;
  try {
    const auto header = nlohmann::ordered_json::parse(bytes.substr(12, header_len));
    const auto config = encoder_from_json(header.at("encoder"));
    config.validate();
    const auto kind = parse_pooler(header.at("pooler").get<std::string>());
    if (!kind) throw FormatError(FormatErrorKind::kHeader, "unknown pooler kind");
    ck.vocab = Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    if (static_cast<ag::Index>(ck.vocab.size()) != config.vocab_size) {
      throw FormatError(FormatErrorKind::kHeader, "vocabulary size disagrees with encoder config");
    }
    for (const auto& entry : header.at("emoji_map")) {
      ck.emoji_map.add(entry.at(0).get<std::string>(), entry.at(1).get<std::string>());
    }
    for (const auto& p : header.at("parameters")) {
      table.emplace_back(p.at("name").get<std::string>(), p.at("shape").get<ag::Shape>());
    }
    ck.metadata = header.at("metadata");
    Rng unused(0);
    ck.model = ModelParams<float>::init(config, *kind, unused);
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(FormatErrorKind::kHeader, std::string("invalid checkpoint header: ") + e.what());
  }

  auto params = ck.model.named();
  if (params.size() != table.size()) {
    throw FormatError(FormatErrorKind::kParameterMismatch, "checkpoint lists " + std::to_string(table.size()) +
                                                               " parameters, model expects " +
                                                               std::to_string(params.size()));
  }
  std::size_t offset = 12 + header_len;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (table[i].first != params[i].name || table[i].second != params[i].tensor->shape()) {
      throw FormatError(FormatErrorKind::kParameterMismatch,
                        "parameter " + std::to_string(i) + " is '" + table[i].first + "' " + ag::to_string(table[i].second) +
                            ", expected '" + params[i].name + "' " + ag::to_string(params[i].tensor->shape()));
    }
    auto& values = params[i].tensor->mutable_value();
    const std::size_t need = static_cast<std::size_t>(values.size()) * 4;
    if (bytes.size() - offset < need) {
      throw FormatError(FormatErrorKind::kTruncated, "checkpoint truncated in parameter '" + params[i].name + "'");
    }
    for (ag::Index k = 0; k < values.size(); ++k) {
      values[k] = std::bit_cast<float>(get_u32(bytes, offset));
      offset += 4;
    }
  }
  if (offset != bytes.size()) {
    throw FormatError(FormatErrorKind::kParameterMismatch,
                      std::to_string(bytes.size() - offset) + " trailing bytes after parameter data");
  }
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::kIo, "cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrorKind::kIo, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::kIo, "cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace comma
