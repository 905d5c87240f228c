#include "synthgen/unicode.hpp"

#include <algorithm>

namespace synthgen::unicode {
namespace {

struct CodepointRange {
  char32_t first;
  char32_t last;
};

struct CaseMapping {
  char32_t from;
  const char* to;
};

#include "unicode_tables.inc"

template <std::size_t N>
bool in_ranges(const CodepointRange (&table)[N], char32_t cp) {
  auto it = std::upper_bound(std::begin(table), std::end(table), cp,
                             [](char32_t v, const CodepointRange& r) { return v < r.first; });
  if (it == std::begin(table)) return false;
  --it;
  return cp >= it->first && cp <= it->last;
}

template <std::size_t N>
const char* find_mapping(const CaseMapping (&table)[N], char32_t cp) {
  auto it = std::lower_bound(std::begin(table), std::end(table), cp,
                             [](const CaseMapping& m, char32_t v) { return m.from < v; });
  if (it != std::end(table) && it->from == cp) return it->to;
  return nullptr;
}

template <std::size_t N>
std::string map_case(const CaseMapping (&table)[N], std::string_view utf8) {
  std::string out;
  out.reserve(utf8.size());
  for (char32_t cp : decode(utf8)) {
    if (cp < 0x80) {
      out.push_back(cp >= 'A' && cp <= 'Z' ? static_cast<char>(cp + 32) : static_cast<char>(cp));
    } else if (const char* mapped = find_mapping(table, cp)) {
      out += mapped;
    } else {
      append_utf8(out, cp);
    }
  }
  return out;
}

}  // namespace

std::u32string decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
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
    bool ok = len > 0 && i + len <= s.size();
    for (int k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (b & 0x3F);
    }
    if (ok) {
      static constexpr char32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
      if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) ok = false;
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
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

std::string encode(std::u32string_view codepoints) {
  std::string out;
  out.reserve(codepoints.size());
  for (char32_t cp : codepoints) append_utf8(out, cp);
  return out;
}

bool is_punctuation(char32_t cp) { return in_ranges(kPunctuationRanges, cp); }
bool is_whitespace(char32_t cp) { return in_ranges(kWhitespaceRanges, cp); }

std::string to_lower(std::string_view utf8) { return map_case(kLowercase, utf8); }
std::string casefold(std::string_view utf8) { return map_case(kCasefold, utf8); }

std::string trim(std::string_view utf8) {
  const auto cps = decode(utf8);
  std::size_t b = 0;
  std::size_t e = cps.size();
  while (b < e && is_whitespace(cps[b])) ++b;
  while (e > b && is_whitespace(cps[e - 1])) --e;
  return encode(std::u32string_view(cps).substr(b, e - b));
}

std::vector<std::string> split_whitespace(std::string_view utf8) {
  std::vector<std::string> tokens;
  std::string current;
  for (char32_t cp : decode(utf8)) {
    if (is_whitespace(cp)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      append_utf8(current, cp);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

}  // namespace synthgen::unicode
