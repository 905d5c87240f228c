#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace synthgen::unicode {

/// Decodes UTF-8. Invalid sequences decode to U+FFFD one byte at a time.
std::u32string decode(std::string_view utf8);
std::string encode(std::u32string_view codepoints);
void append_utf8(std::string& out, char32_t cp);

bool is_punctuation(char32_t cp);  // general category P*
bool is_whitespace(char32_t cp);

std::string to_lower(std::string_view utf8);
std::string casefold(std::string_view utf8);

/// Trims Unicode whitespace from both ends.
std::string trim(std::string_view utf8);

/// Splits on runs of Unicode whitespace; never yields empty tokens.
std::vector<std::string> split_whitespace(std::string_view utf8);

}  // namespace synthgen::unicode
