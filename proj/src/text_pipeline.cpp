#include "comma/text_pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "comma/errors.hpp"
#include "comma/rng.hpp"
#include "comma/unicode.hpp"

namespace comma {
namespace {

using unicode::is_emoji;
using unicode::is_punctuation;
using unicode::is_whitespace;

char32_t ascii_lower(char32_t c) { return (c >= U'A' && c <= U'Z') ? c + 32 : c; }

bool starts_with_ci(std::u32string_view text, std::size_t pos, std::u32string_view prefix) {
  if (pos + prefix.size() > text.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (ascii_lower(text[pos + i]) != prefix[i]) return false;
  }
  return true;
}

// Length of a URL starting at pos, or 0. A URL runs to the next whitespace.
std::size_t url_length(std::u32string_view text, std::size_t pos) {
  std::size_t prefix = 0;
  if (starts_with_ci(text, pos, U"http://")) {
    prefix = 7;
  } else if (starts_with_ci(text, pos, U"https://")) {
    prefix = 8;
  } else if (starts_with_ci(text, pos, U"www.") &&
             (pos == 0 || is_whitespace(text[pos - 1]) || is_punctuation(text[pos - 1]))) {
    prefix = 4;
  } else {
    return 0;
  }
  std::size_t end = pos + prefix;
  while (end < text.size() && !is_whitespace(text[end])) ++end;
  return end - pos;
}

bool is_keycap_base(char32_t c) { return (c >= U'0' && c <= U'9') || c == U'#' || c == U'*'; }

}  // namespace

void EmojiMap::add(std::string_view emoji, std::string_view replacement) {
  const std::u32string key = unicode::decode_utf8(emoji);
  if (key.empty()) throw InputError("emoji map key is empty");
  for (std::size_t i = 0; i < key.size(); ++i) {
    if (!is_emoji(key[i]) && !(i == 0 && key.size() > 1 && is_keycap_base(key[i]))) {
      throw InputError("emoji map key '" + std::string(emoji) + "' contains a non-emoji codepoint");
    }
  }
  for (char32_t c : unicode::decode_utf8(replacement)) {
    if (is_emoji(c)) throw InputError("emoji map replacement for '" + std::string(emoji) + "' contains emoji");
  }
  if (!entries_.emplace(key, std::string(replacement)).second) {
    throw InputError("duplicate emoji map key '" + std::string(emoji) + "'");
  }
  longest_ = std::max(longest_, key.size());
}

EmojiMap EmojiMap::parse(std::string_view content) {
  EmojiMap map;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') {
      if (end == content.size()) break;
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos) {
      throw DataError("expected exactly two tab-separated columns", line_no);
    }
    try {
      map.add(line.substr(0, tab), line.substr(tab + 1));
    } catch (const InputError& e) {
      throw DataError(e.what(), line_no);
    }
    if (end == content.size()) break;
  }
  return map;
}

EmojiMap EmojiMap::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open emoji map " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::size_t EmojiMap::match(std::u32string_view text, std::size_t pos, std::string* replacement) const {
  const std::size_t max_len = std::min(longest_, text.size() - pos);
  for (std::size_t len = max_len; len > 0; --len) {
    auto it = entries_.find(std::u32string(text.substr(pos, len)));
    if (it != entries_.end()) {
      if (replacement) *replacement = it->second;
      return len;
    }
  }
  return 0;
}

std::string normalize(std::string_view raw, const EmojiMap* emoji_map) {
  const std::u32string text = unicode::decode_utf8(raw);
  std::u32string stage;
  stage.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    if (const std::size_t n = url_length(text, i)) {
      stage.push_back(U' ');
      i += n;
      continue;
    }
    std::string replacement;
    if (emoji_map) {
      if (const std::size_t n = emoji_map->match(text, i, &replacement)) {
        stage.push_back(U' ');
        stage += unicode::decode_utf8(replacement);
        stage.push_back(U' ');
        i += n;
        continue;
      }
    }
    if (is_emoji(text[i])) {
      stage.push_back(U' ');
    } else if (!is_punctuation(text[i])) {
      stage.push_back(text[i]);
    }
    ++i;
  }
  // Replacement words may carry punctuation of their own.
  std::u32string out;
  out.reserve(stage.size());
  bool pending_space = false;
  for (char32_t c : stage) {
    if (is_punctuation(c) || is_emoji(c)) continue;
    if (is_whitespace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(U' ');
    pending_space = false;
    out.push_back(c);
  }
  return unicode::encode_utf8(out);
}

Vocab::Vocab() {
  for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add(t);
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  if (tokens.size() < 4 || !std::equal(v.tokens_.begin(), v.tokens_.end(), tokens.begin())) {
    throw InputError("vocabulary must start with [PAD], [UNK], [CLS], [SEP]");
  }
  for (std::size_t i = 4; i < tokens.size(); ++i) {
    if (v.find(tokens[i])) throw InputError("duplicate vocabulary token '" + tokens[i] + "'");
    v.add(tokens[i]);
  }
  return v;
}

int Vocab::add(const std::string& token) {
  if (auto existing = find(token)) return *existing;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

namespace {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::u32string current;
  for (char32_t c : unicode::decode_utf8(text)) {
    if (is_whitespace(c)) {
      if (!current.empty()) words.push_back(unicode::encode_utf8(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) words.push_back(unicode::encode_utf8(current));
  return words;
}

}  // namespace

Vocab build_vocab(std::span<const std::string> corpus, std::size_t target_size) {
  if (corpus.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
  if (target_size < 5) throw InputError("vocabulary target size must be at least 5");

  std::map<std::string, std::size_t> word_counts;
  std::set<char32_t> chars;
  for (const auto& text : corpus) {
    for (const auto& w : split_words(text)) {
      ++word_counts[w];
      for (char32_t c : unicode::decode_utf8(w)) chars.insert(c);
    }
  }
  Vocab vocab;
  for (char32_t c : chars) {
    std::string piece;
    unicode::append_utf8(piece, c);
    vocab.add(piece);
  }
  for (char32_t c : chars) {
    std::string piece(Vocab::kContinuation);
    unicode::append_utf8(piece, c);
    vocab.add(piece);
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(word_counts.begin(), word_counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [word, count] : ranked) {
    if (vocab.size() >= target_size) break;
    vocab.add(word);
  }
  return vocab;
}

std::vector<int> wordpiece(std::string_view word, const Vocab& vocab) {
  if (auto whole = vocab.find(word)) return {*whole};
  const std::u32string cps = unicode::decode_utf8(word);
  std::vector<int> ids;
  std::size_t start = 0;
  while (start < cps.size()) {
    std::optional<int> hit;
    std::size_t end = cps.size();
    for (; end > start; --end) {
      std::string piece = start > 0 ? std::string(Vocab::kContinuation) : std::string();
      piece += unicode::encode_utf8(cps.substr(start, end - start));
      if ((hit = vocab.find(piece))) break;
    }
    if (hit) {
      ids.push_back(*hit);
      start = end;
    } else {
      ids.push_back(Vocab::kUnk);
      ++start;
    }
  }
  return ids;
}

Encoding encode(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 2) throw InputError("max_len must be at least 2");
  Encoding e;
  e.ids.reserve(max_len);
  e.ids.push_back(Vocab::kCls);
  for (const auto& w : split_words(text)) {
    if (e.ids.size() >= max_len) break;
    for (int id : wordpiece(w, vocab)) {
      if (e.ids.size() >= max_len) break;
      e.ids.push_back(id);
    }
  }
  e.mask.assign(max_len, 0);
  std::fill(e.mask.begin(), e.mask.begin() + static_cast<std::ptrdiff_t>(e.ids.size()), 1);
  e.ids.resize(max_len, Vocab::kPad);
  return e;
}

EncodedBatch make_batch(std::span<const Encoding> rows) {
  EncodedBatch b;
  b.batch = rows.size();
  b.length = rows.empty() ? 0 : rows.front().ids.size();
  for (const auto& r : rows) {
    if (r.ids.size() != b.length || r.mask.size() != b.length) throw ShapeError("batch rows differ in length");
    b.token_ids.insert(b.token_ids.end(), r.ids.begin(), r.ids.end());
    b.mask.insert(b.mask.end(), r.mask.begin(), r.mask.end());
  }
  return b;
}

EncodedBatch encode_batch(std::span<const std::string> texts, const Vocab& vocab, std::size_t max_len) {
  std::vector<Encoding> rows;
  rows.reserve(texts.size());
  for (const auto& t : texts) rows.push_back(encode(t, vocab, max_len));
  return make_batch(rows);
}

std::vector<Example> balance(std::span<const Example> dataset, std::uint64_t seed) {
  if (dataset.empty()) return {};
  std::array<std::vector<std::size_t>, 3> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[static_cast<std::size_t>(dataset[i].labels.aggression)].push_back(i);
  }
  std::size_t majority = 0;
  for (const auto& members : by_class) majority = std::max(majority, members.size());

  Rng rng(seed);
  std::vector<Example> out(dataset.begin(), dataset.end());
  for (const auto& members : by_class) {
    if (members.empty()) continue;
    for (std::size_t k = members.size(); k < majority; ++k) {
      out.push_back(dataset[members[rng.uniform_index(members.size())]]);
    }
  }
  rng.shuffle(out);
  return out;
}

}  // namespace comma
