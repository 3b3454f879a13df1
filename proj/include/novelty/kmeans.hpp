#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "novelty/errors.hpp"
#include "novelty/matrix.hpp"
#include "novelty/random.hpp"

namespace novelty {

struct KMeansResult {
  Matrix centroids;                 // k x dim
  std::vector<std::size_t> assignments;
  double inertia = 0.0;             // sum of squared distances to assigned centroid
  std::size_t iterations = 0;
};

namespace detail {
inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}
}  // namespace detail

// Lloyd's algorithm with k-means++ seeding. Stops at an assignment fixpoint
// or after max_iters. A cluster that empties is re-seeded at the point
// farthest from its current centroid.
inline KMeansResult kmeans(const Matrix& points, std::size_t k, std::size_t max_iters,
                           std::uint64_t seed) {
  const std::size_t n = points.rows(), dim = points.cols();
  if (k == 0) throw ArgumentError("kmeans: k must be >= 1");
  if (k > n) throw ArgumentError("kmeans: k exceeds the number of points");
  Rng rng(seed);

  KMeansResult res;
  res.centroids = Matrix(k, dim);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t chosen = pick(rng);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(points.row(chosen).begin(), dim, res.centroids.row(c).begin());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i],
                            detail::squared_distance(points.row(i), res.centroids.row(c)));
      total += nearest[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      chosen = pick(rng);  // all remaining points coincide with a centroid
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng);
    chosen = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= nearest[i];
      if (target < 0.0 && nearest[i] > 0.0) {
        chosen = i;
        break;
      }
    }
  }

  res.assignments.assign(n, k);  // k = not yet assigned
  for (res.iterations = 0; res.iterations < max_iters; ++res.iterations) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = detail::squared_distance(points.row(i), res.centroids.row(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (res.assignments[i] != best) {
        res.assignments[i] = best;
        changed = true;
      }
    }
    if (!changed) break;

    Matrix sums(k, dim);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto s = sums.row(res.assignments[i]);
      const auto p = points.row(i);
      for (std::size_t d = 0; d < dim; ++d) s[d] += p[d];
      ++counts[res.assignments[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = detail::squared_distance(
              points.row(i), res.centroids.row(res.assignments[i]));
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        std::copy_n(points.row(far).begin(), dim, res.centroids.row(c).begin());
        continue;
      }
      for (std::size_t d = 0; d < dim; ++d)
        res.centroids(c, d) = sums(c, d) / static_cast<double>(counts[c]);
    }
  }

  res.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    res.inertia += detail::squared_distance(points.row(i),
                                            res.centroids.row(res.assignments[i]));
  return res;
}

}  // namespace novelty
