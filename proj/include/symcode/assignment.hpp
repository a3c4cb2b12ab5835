#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

namespace symcode {

template <class T>
using Matrix = std::vector<std::vector<T>>;

/// Hungarian algorithm with potentials, O(n^2 m) for an n x m cost matrix
/// with n <= m. Returns the column assigned to each row, minimizing the
/// total cost. Ties resolve deterministically in index order.
template <class T>
std::vector<size_t> hungarian_min_cost(const Matrix<T>& cost) {
  const size_t n = cost.size();
  if (n == 0) return {};
  const size_t m = cost.front().size();
  const T inf = std::numeric_limits<T>::has_infinity ? std::numeric_limits<T>::infinity()
                                                     : std::numeric_limits<T>::max() / 4;
  std::vector<T> u(n + 1, T{}), v(m + 1, T{});
  std::vector<size_t> p(m + 1, 0), way(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    p[0] = i;
    size_t j0 = 0;
    std::vector<T> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const size_t i0 = p[j0];
      T delta = inf;
      size_t j1 = 0;
      for (size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const T cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<size_t> row_to_col(n, 0);
  for (size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

namespace assign_detail {

/// Optimal matching over a subset of rows and columns, maximizing
/// bonus * |pairs| + total weight. Returns pairs in original indices.
template <class T, class Allowed>
std::vector<std::pair<size_t, size_t>> solve(const Matrix<T>& weight, Allowed& allowed, const std::vector<size_t>& rows,
                                             const std::vector<size_t>& cols, T bonus) {
  if (rows.empty() || cols.empty()) return {};
  const bool transpose = rows.size() > cols.size();
  const size_t n = transpose ? cols.size() : rows.size();
  const size_t m = transpose ? rows.size() : cols.size();
  Matrix<T> cost(n, std::vector<T>(m, T{}));
  for (size_t a = 0; a < rows.size(); ++a)
    for (size_t b = 0; b < cols.size(); ++b) {
      const size_t r = rows[a], c = cols[b];
      const T w = allowed(r, c) ? bonus + weight[r][c] : T{};
      (transpose ? cost[b][a] : cost[a][b]) = -w;
    }
  const auto assigned = hungarian_min_cost(cost);
  std::vector<std::pair<size_t, size_t>> pairs;
  for (size_t i = 0; i < n; ++i) {
    const size_t r = transpose ? rows[assigned[i]] : rows[i];
    const size_t c = transpose ? cols[i] : cols[assigned[i]];
    if (allowed(r, c)) pairs.emplace_back(r, c);
  }
  return pairs;
}

template <class T>
T value_of(const Matrix<T>& weight, const std::vector<std::pair<size_t, size_t>>& pairs, T bonus) {
  T v{};
  for (auto [r, c] : pairs) v += bonus + weight[r][c];
  return v;
}

}  // namespace assign_detail

/// One-to-one matching between rows and columns over the allowed cells.
/// The matching first maximizes the number of pairs, then the total weight
/// among matchings of that size; with every cell allowed this is the plain
/// maximum-weight assignment. Weights are expected in [0, 1].
///
/// Among optimal matchings the result is the lexicographically smallest:
/// row 0 takes the lowest column it can while staying optimal (or stays
/// unmatched if it must), then row 1, and so on. Values within `tolerance`
/// of the optimum count as optimal.
template <class T, class Allowed>
std::vector<std::pair<size_t, size_t>> max_weight_matching(const Matrix<T>& weight, Allowed&& allowed,
                                                           T tolerance = static_cast<T>(1e-10)) {
  const size_t rows = weight.size();
  const size_t cols = rows == 0 ? 0 : weight.front().size();
  if (rows == 0 || cols == 0) return {};
  // Any extra pair outweighs all similarity mass a matching can carry.
  const T bonus = static_cast<T>(std::min(rows, cols) + 1);

  std::vector<size_t> free_rows(rows), free_cols(cols);
  for (size_t r = 0; r < rows; ++r) free_rows[r] = r;
  for (size_t c = 0; c < cols; ++c) free_cols[c] = c;

  const T optimum =
      assign_detail::value_of(weight, assign_detail::solve(weight, allowed, free_rows, free_cols, bonus), bonus);

  std::vector<std::pair<size_t, size_t>> fixed;
  T fixed_value{};
  for (size_t r = 0; r < rows; ++r) {
    free_rows.erase(std::find(free_rows.begin(), free_rows.end(), r));
    for (size_t c : std::vector<size_t>(free_cols)) {
      if (!allowed(r, c)) continue;
      std::vector<size_t> rest_cols;
      for (size_t x : free_cols)
        if (x != c) rest_cols.push_back(x);
      const auto rest = assign_detail::solve(weight, allowed, free_rows, rest_cols, bonus);
      const T total = fixed_value + bonus + weight[r][c] + assign_detail::value_of(weight, rest, bonus);
      if (total >= optimum - tolerance) {
        fixed.emplace_back(r, c);
        fixed_value += bonus + weight[r][c];
        free_cols = std::move(rest_cols);
        break;
      }
    }
    // No column kept the optimum reachable, so the row stays unmatched.
  }
  return fixed;
}

template <class T>
std::vector<std::pair<size_t, size_t>> max_weight_matching(const Matrix<T>& weight) {
  return max_weight_matching(weight, [](size_t, size_t) { return true; });
}

}  // namespace symcode
