#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "novelty/errors.hpp"
#include "novelty/matrix.hpp"

namespace novelty {

// Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres with
// potentials, O(n^3)). Returns row_to_col.
inline std::vector<std::size_t> solve_assignment_min(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw ShapeError("assignment: cost must be square");
  const std::size_t n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
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
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

inline constexpr int kUnassigned = -1;

// Injective row -> column assignment maximizing the summed weights of a
// rectangular table. Rows left without a real column get kUnassigned.
inline std::vector<int> solve_assignment_max(const Matrix& weights) {
  const std::size_t rows = weights.rows(), cols = weights.cols();
  const std::size_t n = std::max(rows, cols);
  if (n == 0) return {};
  double top = 0.0;
  for (double w : weights.data()) top = std::max(top, w);
  Matrix cost(n, n, top);  // padding cells have weight 0
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) cost(r, c) = top - weights(r, c);
  const auto match = solve_assignment_min(cost);
  std::vector<int> out(rows, kUnassigned);
  for (std::size_t r = 0; r < rows; ++r)
    if (match[r] < cols) out[r] = static_cast<int>(match[r]);
  return out;
}

}  // namespace novelty
