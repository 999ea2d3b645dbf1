#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "comma/labels.hpp"

namespace comma {

// Emoji sequence -> replacement words. Lookup is longest-match on codepoints.
class EmojiMap {
 public:
  // Throws InputError when the key is not an emoji sequence, the replacement
  // contains emoji, or the key is already present.
  void add(std::string_view emoji, std::string_view replacement);

  // UTF-8 TSV, `emoji<TAB>replacement`; '#'-prefixed lines and blank lines skipped.
  static EmojiMap load(const std::filesystem::path& path);
  static EmojiMap parse(std::string_view content);

  // Length in codepoints of the longest key matching text at pos, or 0.
  std::size_t match(std::u32string_view text, std::size_t pos, std::string* replacement) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<std::u32string, std::string>& entries() const { return entries_; }

  friend bool operator==(const EmojiMap& a, const EmojiMap& b) { return a.entries_ == b.entries_; }

 private:
  std::map<std::u32string, std::string> entries_;
  std::size_t longest_ = 0;
};

// Removes URLs and Unicode punctuation, maps emoji through the map (or drops
// them), collapses whitespace and trims. Idempotent.
std::string normalize(std::string_view raw, const EmojiMap* emoji_map = nullptr);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = kUnk;  // masked-LM input reuses [UNK]
  static constexpr std::string_view kContinuation = "##";

  Vocab();
  // Rebuilds from an id-ordered token list; the reserved tokens must come first.
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  int add(const std::string& token);
  std::optional<int> find(std::string_view token) const;
  int id(std::string_view token) const { return find(token).value_or(kUnk); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Reserved tokens, then every observed character as a word-initial piece and a
// continuation piece, then whole words by descending frequency (ties
// lexicographic) until target_size. Character pieces are kept even past target_size.
Vocab build_vocab(std::span<const std::string> corpus, std::size_t target_size);

// Greedy longest-match word pieces of one whitespace-free word.
std::vector<int> wordpiece(std::string_view word, const Vocab& vocab);

struct Encoding {
  std::vector<int> ids;   // length max_len, ids[0] == [CLS]
  std::vector<int> mask;  // 1 on [CLS] and tokens, 0 on padding
};

Encoding encode(std::string_view text, const Vocab& vocab, std::size_t max_len);

// Row-major B x L token ids and attention mask.
struct EncodedBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> token_ids;
  std::vector<int> mask;

  int id(std::size_t b, std::size_t i) const { return token_ids[b * length + i]; }
  int masked(std::size_t b, std::size_t i) const { return mask[b * length + i]; }
};

EncodedBatch make_batch(std::span<const Encoding> rows);
EncodedBatch encode_batch(std::span<const std::string> texts, const Vocab& vocab, std::size_t max_len);

// Oversamples every aggression class present up to the majority-class count
// (draws with replacement), then shuffles. Gender and communal labels ride along.
std::vector<Example> balance(std::span<const Example> dataset, std::uint64_t seed);

}  // namespace comma
