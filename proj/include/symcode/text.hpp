#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

namespace symcode {

namespace detail {

inline bool is_space(char32_t c) { return u_isUWhiteSpace(static_cast<UChar32>(c)) != 0; }

inline bool is_edge_punct(char32_t c) {
  switch (c) {
    case U'.': case U',': case U':': case U';':
    case U'"': case U'\'': case U'(': case U')':
    case U'[': case U']':
      return true;
    default:
      return false;
  }
}

inline icu::UnicodeString nfc(const icu::UnicodeString& s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) return s;
  icu::UnicodeString out = norm->normalize(s, status);
  return U_FAILURE(status) ? s : out;
}

}  // namespace detail

/// Decodes UTF-8 into code points. Ill-formed sequences become U+FFFD.
inline std::u32string to_u32(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  int32_t i = 0;
  const auto len = static_cast<int32_t>(s.size());
  const auto* bytes = reinterpret_cast<const uint8_t*>(s.data());
  while (i < len) {
    UChar32 c;
    U8_NEXT(bytes, i, len, c);
    out.push_back(c < 0 ? U'\uFFFD' : static_cast<char32_t>(c));
  }
  return out;
}

inline std::string to_utf8(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t c : s) {
    uint8_t buf[4];
    int32_t n = 0;
    UBool err = false;
    U8_APPEND(buf, n, 4, static_cast<UChar32>(c), err);
    if (err) {
      out += "\xEF\xBF\xBD";
    } else {
      out.append(reinterpret_cast<const char*>(buf), static_cast<size_t>(n));
    }
  }
  return out;
}

inline bool is_valid_utf8(std::string_view s) {
  int32_t i = 0;
  const auto len = static_cast<int32_t>(s.size());
  const auto* bytes = reinterpret_cast<const uint8_t*>(s.data());
  while (i < len) {
    UChar32 c;
    U8_NEXT(bytes, i, len, c);
    if (c < 0) return false;
  }
  return true;
}

/// VAERS distribution files are not always UTF-8; anything that fails to
/// decode is reinterpreted as Latin-1.
inline std::string ensure_utf8(std::string_view s) {
  if (is_valid_utf8(s)) return std::string(s);
  std::u32string wide;
  wide.reserve(s.size());
  for (unsigned char c : s) wide.push_back(static_cast<char32_t>(c));
  return to_utf8(wide);
}

/// Canonical form used for every equality test between terms and mentions:
/// NFC, lowercase, whitespace runs collapsed, edge whitespace and
/// punctuation ( .,:;"'()[] ) removed.
inline std::string normalize_term(std::string_view s) {
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  u = detail::nfc(u);
  u.toLower(icu::Locale::getRoot());
  u = detail::nfc(u);

  std::string utf8;
  u.toUTF8String(utf8);
  const std::u32string cps = to_u32(utf8);

  std::u32string collapsed;
  collapsed.reserve(cps.size());
  bool pending_space = false;
  for (char32_t c : cps) {
    if (detail::is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space && !collapsed.empty()) collapsed.push_back(U' ');
    pending_space = false;
    collapsed.push_back(c);
  }

  size_t begin = 0;
  size_t end = collapsed.size();
  auto strippable = [](char32_t c) { return c == U' ' || detail::is_edge_punct(c); };
  while (begin < end && strippable(collapsed[begin])) ++begin;
  while (end > begin && strippable(collapsed[end - 1])) --end;
  return to_utf8(std::u32string_view(collapsed).substr(begin, end - begin));
}

inline std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  const auto first = s.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(ws);
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline size_t word_count(std::string_view s) { return split_whitespace(s).size(); }

/// 64-bit FNV-1a; stable across platforms and processes.
constexpr uint64_t fnv1a64(std::string_view data, uint64_t seed = 0xcbf29ce484222325ULL) {
  uint64_t h = seed;
  for (char c : data) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace symcode
