#include "comma/unicode.hpp"

#include <algorithm>
#include <array>

namespace comma::unicode {
namespace {

bool in_ranges(std::span<const CodepointRange> ranges, char32_t cp) {
  auto it = std::upper_bound(ranges.begin(), ranges.end(), cp,
                             [](char32_t value, const CodepointRange& r) { return value < r.first; });
  if (it == ranges.begin()) return false;
  --it;
  return cp >= it->first && cp <= it->last;
}

// Pictographic blocks used by emoji, plus the joiners and modifiers that glue sequences.
constexpr std::array<CodepointRange, 17> kEmoji = {{
    {0x00A9, 0x00A9},   {0x00AE, 0x00AE},   {0x200D, 0x200D},   {0x203C, 0x203C},
    {0x20E3, 0x20E3},   {0x2122, 0x2122},   {0x2190, 0x21FF},   {0x2300, 0x23FF},
    {0x24C2, 0x24C2},   {0x25A0, 0x27BF},   {0x2900, 0x297F},   {0x2B00, 0x2BFF},
    {0x3030, 0x3030},   {0xFE0E, 0xFE0F},   {0x1F000, 0x1FAFF}, {0x1FC00, 0x1FFFD},
    {0xE0020, 0xE007F},
}};

}  // namespace

std::u32string decode_utf8(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    int len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    }
    bool ok = len > 0 && i + len <= text.size();
    for (int k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0) != 0x80) {
        ok = false;
      } else {
        cp = (cp << 6) | (b & 0x3F);
      }
    }
    if (ok) {
      constexpr std::array<char32_t, 5> kMin = {0, 0, 0x80, 0x800, 0x10000};
      ok = cp >= kMin[len] && cp <= 0x10FFFF && !(cp >= 0xD800 && cp <= 0xDFFF);
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
    } else {
      out.push_back(cp);
      i += len;
    }
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string encode_utf8(std::u32string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t cp : text) append_utf8(out, cp);
  return out;
}

bool is_punctuation(char32_t cp) { return in_ranges(detail::punctuation_ranges(), cp); }
bool is_whitespace(char32_t cp) { return in_ranges(detail::whitespace_ranges(), cp); }
bool is_emoji(char32_t cp) { return in_ranges(kEmoji, cp); }

}  // namespace comma::unicode
