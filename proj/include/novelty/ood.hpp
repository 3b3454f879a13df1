#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "novelty/errors.hpp"
#include "novelty/losses.hpp"
#include "novelty/matrix.hpp"
#include "novelty/nn.hpp"
#include "novelty/random.hpp"

namespace novelty {

struct OodDetection {
  double tau = 0.0;
  std::vector<double> scores;              // one per sample, in [0,1]
  std::vector<std::size_t> ood_indices;    // { i : scores[i] > tau }, ascending
};

// Normalized softmax entropy of every row. Rows are evaluated in chunks.
inline std::vector<double> entropy_scores(const FeedforwardClassifier& model,
                                          const Matrix& samples,
                                          std::size_t chunk = 4096) {
  std::vector<double> scores;
  scores.reserve(samples.rows());
  for (std::size_t begin = 0; begin < samples.rows(); begin += chunk) {
    const std::size_t end = std::min(samples.rows(), begin + chunk);
    const Matrix logits = predict_logits(model, slice_rows(samples, begin, end));
    for (std::size_t r = 0; r < logits.rows(); ++r)
      scores.push_back(entropy_score(softmax(logits.row(r))));
  }
  return scores;
}

// Strict threshold: a score equal to tau counts as in-distribution.
inline OodDetection threshold_scores(std::vector<double> scores, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ArgumentError("detect_ood: tau must be in [0,1]");
  OodDetection det;
  det.tau = tau;
  det.scores = std::move(scores);
  for (std::size_t i = 0; i < det.scores.size(); ++i)
    if (det.scores[i] > tau) det.ood_indices.push_back(i);
  return det;
}

inline OodDetection detect_ood(const FeedforwardClassifier& model, const Matrix& samples,
                               double tau) {
  if (samples.rows() == 0) throw ArgumentError("detect_ood: empty dataset");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ArgumentError("detect_ood: tau must be in [0,1]");
  return threshold_scores(entropy_scores(model, samples), tau);
}

// n points uniform in the box [lower, upper).
inline Matrix sample_uniform_noise(std::size_t n, std::span<const double> lower,
                                   std::span<const double> upper, std::uint64_t seed) {
  if (lower.size() != upper.size() || lower.empty())
    throw ArgumentError("sample_uniform_noise: bounds must have equal, non-zero length");
  for (std::size_t d = 0; d < lower.size(); ++d)
    if (!(lower[d] < upper[d]))
      throw ArgumentError("sample_uniform_noise: lower bound must be < upper bound");
  Matrix out(n, lower.size());
  Rng rng(seed);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t d = 0; d < lower.size(); ++d) {
      std::uniform_real_distribution<double> dist(lower[d], upper[d]);
      out(r, d) = dist(rng);
    }
  return out;
}

// Each output row is the average of two distinct rows of `samples`.
inline Matrix mixup_ood(const Matrix& samples, std::size_t n, std::uint64_t seed) {
  if (samples.rows() < 2) throw ArgumentError("mixup_ood: need at least 2 samples");
  Matrix out(n, samples.cols());
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> first(0, samples.rows() - 1);
  std::uniform_int_distribution<std::size_t> second(0, samples.rows() - 2);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = first(rng);
    std::size_t j = second(rng);
    if (j >= i) ++j;
    const auto a = samples.row(i), b = samples.row(j);
    auto o = out.row(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] = 0.5 * (a[c] + b[c]);
  }
  return out;
}

// Like mixup_ood, but both rows of a pair carry different labels.
inline Matrix mixup_ood(const Matrix& samples, std::span<const int> labels, std::size_t n,
                        std::uint64_t seed) {
  if (labels.size() != samples.rows())
    throw ShapeError("mixup_ood: one label per sample required");
  const bool mixed = std::any_of(labels.begin(), labels.end(),
                                 [&](int y) { return y != labels.front(); });
  if (!mixed) throw ArgumentError("mixup_ood: need samples from at least 2 classes");
  Matrix out(n, samples.cols());
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, samples.rows() - 1);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    while (labels[j] == labels[i]) j = pick(rng);
    const auto a = samples.row(i), b = samples.row(j);
    auto o = out.row(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] = 0.5 * (a[c] + b[c]);
  }
  return out;
}

}  // namespace novelty
