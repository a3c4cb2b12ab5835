#pragma once

// Reference implementations used only by tests. They are written separately
// from the library code on purpose and restrict themselves to ASCII input.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <boost/rational.hpp>

namespace oracle {

using Rational = boost::rational<long long>;

/// ASCII-only normalization: lowercase, collapse blanks, strip edge
/// punctuation from . , : ; " ' ( ) [ ].
inline std::string ascii_normalize(const std::string& s) {
  std::string collapsed;
  bool pending_space = false;
  for (char ch : s) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !collapsed.empty();
      continue;
    }
    if (pending_space) collapsed += ' ';
    pending_space = false;
    collapsed += static_cast<char>(std::tolower(c));
  }
  const std::string strip = " .,:;\"'()[]";
  size_t b = 0, e = collapsed.size();
  while (b < e && strip.find(collapsed[b]) != std::string::npos) ++b;
  while (e > b && strip.find(collapsed[e - 1]) != std::string::npos) --e;
  return collapsed.substr(b, e - b);
}

/// Full-table Wagner-Fischer.
inline size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::vector<size_t>> d(a.size() + 1, std::vector<size_t>(b.size() + 1, 0));
  for (size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (size_t i = 1; i <= a.size(); ++i)
    for (size_t j = 1; j <= b.size(); ++j) {
      size_t best = d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      best = std::min(best, d[i - 1][j] + 1);
      best = std::min(best, d[i][j - 1] + 1);
      d[i][j] = best;
    }
  return d[a.size()][b.size()];
}

/// Fuzzy ratio as an exact fraction (L - d) / L.
inline Rational fuzzy(const std::string& x, const std::string& y) {
  const std::string a = ascii_normalize(x), b = ascii_normalize(y);
  const long long L = static_cast<long long>(std::max(a.size(), b.size()));
  if (L == 0) return Rational(1);
  return Rational(L - static_cast<long long>(edit_distance(a, b)), L);
}

struct Best {
  size_t pairs = 0;
  Rational total{0};
};

/// Exhaustive search over every partial one-to-one mapping between rows and
/// columns restricted to allowed cells; maximizes (pair count, total).
inline Best brute_force(const std::vector<std::vector<Rational>>& w, const std::vector<std::vector<bool>>& allowed) {
  const size_t n = w.size();
  const size_t m = n == 0 ? 0 : w[0].size();
  Best best;
  std::vector<bool> used(m, false);
  size_t pairs = 0;
  Rational total(0);
  auto rec = [&](auto&& self, size_t row) -> void {
    if (row == n) {
      if (pairs > best.pairs || (pairs == best.pairs && total > best.total)) best = {pairs, total};
      return;
    }
    self(self, row + 1);  // row left unmatched
    for (size_t c = 0; c < m; ++c) {
      if (used[c] || !allowed[row][c]) continue;
      used[c] = true;
      ++pairs;
      total += w[row][c];
      self(self, row + 1);
      total -= w[row][c];
      --pairs;
      used[c] = false;
    }
  };
  rec(rec, 0);
  return best;
}

inline Best brute_force(const std::vector<std::vector<Rational>>& w) {
  std::vector<std::vector<bool>> all(w.size(), std::vector<bool>(w.empty() ? 0 : w[0].size(), true));
  return brute_force(w, all);
}

/// Independent recount of report-level term frequencies over
/// (report -> list of gold terms) with ASCII normalization.
inline std::vector<std::pair<std::string, size_t>> recount(const std::vector<std::vector<std::string>>& gold_terms) {
  std::map<std::string, size_t> counts;
  for (const auto& terms : gold_terms) {
    std::vector<std::string> seen;
    for (const auto& t : terms) {
      const std::string n = ascii_normalize(t);
      if (std::find(seen.begin(), seen.end(), n) != seen.end()) continue;
      seen.push_back(n);
      ++counts[n];
    }
  }
  std::vector<std::pair<std::string, size_t>> out(counts.begin(), counts.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

}  // namespace oracle
