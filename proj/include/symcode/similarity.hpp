#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "symcode/text.hpp"

namespace symcode {

/// Unit-cost edit distance over code points, two-row dynamic program.
template <class Seq>
size_t levenshtein(const Seq& a, const Seq& b) {
  if (a.size() < b.size()) return levenshtein(b, a);
  std::vector<size_t> prev(b.size() + 1);
  std::vector<size_t> cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      const size_t subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// 1 - distance / max(|a|, |b|) over normalized forms; two empty strings
/// are identical.
inline double fuzzy_ratio(std::string_view a, std::string_view b) {
  const std::u32string na = to_u32(normalize_term(a));
  const std::u32string nb = to_u32(normalize_term(b));
  const size_t longest = std::max(na.size(), nb.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(na, nb)) / static_cast<double>(longest);
}

}  // namespace symcode
