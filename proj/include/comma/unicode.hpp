#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace comma::unicode {

struct CodepointRange {
  char32_t first;
  char32_t last;
};

namespace detail {
std::span<const CodepointRange> punctuation_ranges();
std::span<const CodepointRange> whitespace_ranges();
}  // namespace detail

// Decodes UTF-8. Invalid bytes decode to U+FFFD one byte at a time.
std::u32string decode_utf8(std::string_view text);
std::string encode_utf8(std::u32string_view text);
void append_utf8(std::string& out, char32_t cp);

bool is_punctuation(char32_t cp);  // general category P*
bool is_whitespace(char32_t cp);   // Z* plus ASCII/C1 whitespace controls
bool is_emoji(char32_t cp);        // pictographs, dingbats, flags, modifiers, ZWJ, VS16

}  // namespace comma::unicode
