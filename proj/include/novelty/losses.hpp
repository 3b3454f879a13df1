#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "novelty/distances.hpp"
#include "novelty/errors.hpp"
#include "novelty/matrix.hpp"
#include "novelty/nn.hpp"

namespace novelty {

// Every logarithm is evaluated as log(max(p, kLogFloor)).
inline constexpr double kLogFloor = 1e-12;

inline double floored_log(double p) { return std::log(std::max(p, kLogFloor)); }
inline double floored_log_derivative(double p) { return p > kLogFloor ? 1.0 / p : 0.0; }

struct LossWeights {
  double lambda1 = 0.45;  // cross-entropy on replayed in-distribution data
  double lambda2 = 0.45;  // extension loss on OoD data
  double lambda3 = 0.1;   // pairwise cluster loss on OoD data
  double alpha = 5.0;     // cluster loss scale
  double lambda_em = 0.75;  // entropy-max objective: weight of cross-entropy

  void validate() const {
    if (!(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0))
      throw ArgumentError("loss weights must be >= 0");
    if (!(alpha >= 0)) throw ArgumentError("alpha must be >= 0");
    if (!(lambda_em >= 0 && lambda_em <= 1))
      throw ArgumentError("lambda_em must be in [0,1]");
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// ---------------------------------------------------------------------------
// Per-sample losses on probability vectors.

inline double cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size())
    throw ArgumentError("cross_entropy: label " + std::to_string(label) +
                        " out of range for " + std::to_string(probs.size()) +
                        " classes");
  return -floored_log(probs[label]);
}

// Mean probability mass on the q known classes.
inline double extension_loss(std::span<const double> probs, std::size_t q) {
  if (q == 0 || q >= probs.size())
    throw ArgumentError("extension_loss: q must be in [1, class count)");
  double s = 0.0;
  for (std::size_t c = 0; c < q; ++c) s += probs[c];
  return s / static_cast<double>(q);
}

// alpha/(q+k) * d_ij * <p_i, p_j>, with q+k the vector length.
inline double cluster_loss(std::span<const double> probs_i,
                           std::span<const double> probs_j, double distance,
                           double alpha) {
  if (probs_i.size() != probs_j.size())
    throw ShapeError("cluster_loss: probability vectors differ in length");
  if (!(distance >= 0.0)) throw ArgumentError("cluster_loss: negative distance");
  if (!(alpha > 0.0)) throw ArgumentError("cluster_loss: alpha must be > 0");
  double dot = 0.0;
  for (std::size_t c = 0; c < probs_i.size(); ++c) dot += probs_i[c] * probs_j[c];
  return alpha / static_cast<double>(probs_i.size()) * distance * dot;
}

// Softmax entropy normalized by log(q); 0 log 0 is taken as 0.
inline double entropy_score(std::span<const double> probs) {
  if (probs.size() < 2) throw ArgumentError("entropy_score: need >= 2 classes");
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * floored_log(p);
  const double u = h / std::log(static_cast<double>(probs.size()));
  return std::clamp(u, 0.0, 1.0);
}

// Cross-entropy against the uniform target; minimum log(q) at the uniform vector.
inline double entropy_max_loss(std::span<const double> probs) {
  if (probs.empty()) throw ArgumentError("entropy_max_loss: empty vector");
  double s = 0.0;
  for (double p : probs) s -= floored_log(p);
  return s / static_cast<double>(probs.size());
}

// ---------------------------------------------------------------------------
// Batch losses on logits, with gradients with respect to the logits.

struct LossGrad {
  double value = 0.0;
  Matrix grad;  // same shape as the logits
};

namespace detail {
// Turns d(loss)/d(probs) into d(loss)/d(logits) in place: g <- p * (g - <g,p>).
inline void softmax_backward_row(std::span<const double> probs, std::span<double> g) {
  double inner = 0.0;
  for (std::size_t c = 0; c < g.size(); ++c) inner += g[c] * probs[c];
  for (std::size_t c = 0; c < g.size(); ++c) g[c] = probs[c] * (g[c] - inner);
}

inline void softmax_backward(const Matrix& probs, Matrix& g) {
  for (std::size_t r = 0; r < probs.rows(); ++r)
    softmax_backward_row(probs.row(r), g.row(r));
}
}  // namespace detail

// Mean cross-entropy over rows.
inline LossGrad cross_entropy_batch(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows())
    throw ShapeError("cross_entropy_batch: label count != rows");
  LossGrad out{0.0, Matrix(logits.rows(), logits.cols())};
  if (logits.rows() == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  const Matrix probs = softmax_rows(logits);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (labels[r] < 0) throw ArgumentError("cross_entropy_batch: negative label");
    const auto y = static_cast<std::size_t>(labels[r]);
    out.value += cross_entropy(probs.row(r), y);
    out.grad(r, y) = -floored_log_derivative(probs(r, y)) * inv_n;
  }
  out.value *= inv_n;
  detail::softmax_backward(probs, out.grad);
  return out;
}

// Mean extension loss over rows; columns [0, q) are the known classes.
inline LossGrad extension_batch(const Matrix& logits, std::size_t q) {
  LossGrad out{0.0, Matrix(logits.rows(), logits.cols())};
  if (q == 0 || q >= logits.cols())
    throw ArgumentError("extension_batch: q must be in [1, class count)");
  if (logits.rows() == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  const Matrix probs = softmax_rows(logits);
  const double g = inv_n / static_cast<double>(q);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    out.value += extension_loss(probs.row(r), q);
    for (std::size_t c = 0; c < q; ++c) out.grad(r, c) = g;
  }
  out.value *= inv_n;
  detail::softmax_backward(probs, out.grad);
  return out;
}

struct ClusterLossGrad : LossGrad {
  std::size_t pairs = 0;
};

// Mean cluster loss over all unordered row pairs i < j. `ids[r]` is the index
// of row r in the distance table.
inline ClusterLossGrad cluster_batch(const Matrix& logits, std::span<const std::size_t> ids,
                                     const DistanceMatrix& distances, double alpha) {
  if (ids.size() != logits.rows()) throw ShapeError("cluster_batch: id count != rows");
  if (!(alpha > 0.0)) throw ArgumentError("cluster_batch: alpha must be > 0");
  ClusterLossGrad out;
  out.grad = Matrix(logits.rows(), logits.cols());
  const std::size_t n = logits.rows();
  if (n < 2) return out;
  out.pairs = n * (n - 1) / 2;
  const Matrix probs = softmax_rows(logits);
  const double scale = alpha / static_cast<double>(logits.cols());
  const double inv_pairs = 1.0 / static_cast<double>(out.pairs);
  for (std::size_t i = 0; i < n; ++i) {
    const auto pi = probs.row(i);
    auto gi = out.grad.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = distances.at(ids[i], ids[j]);
      if (d == 0.0) continue;
      const auto pj = probs.row(j);
      auto gj = out.grad.row(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < pi.size(); ++c) dot += pi[c] * pj[c];
      out.value += scale * d * dot;
      const double w = scale * d * inv_pairs;
      for (std::size_t c = 0; c < pi.size(); ++c) {
        gi[c] += w * pj[c];
        gj[c] += w * pi[c];
      }
    }
  }
  out.value *= inv_pairs;
  detail::softmax_backward(probs, out.grad);
  return out;
}

// Mean entropy-maximization loss over rows.
inline LossGrad entropy_max_batch(const Matrix& logits) {
  LossGrad out{0.0, Matrix(logits.rows(), logits.cols())};
  if (logits.rows() == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  const double inv_q = 1.0 / static_cast<double>(logits.cols());
  const Matrix probs = softmax_rows(logits);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    out.value += entropy_max_loss(probs.row(r));
    for (std::size_t c = 0; c < logits.cols(); ++c)
      out.grad(r, c) = -inv_q * inv_n * floored_log_derivative(probs(r, c));
  }
  out.value *= inv_n;
  detail::softmax_backward(probs, out.grad);
  return out;
}

// Value and logit gradients of a two-part objective (in-distribution rows and
// OoD rows are separate batches).
struct ObjectiveResult {
  double value = 0.0;
  double cross_entropy = 0.0;  // mean term values, before weighting
  double extension = 0.0;
  double cluster = 0.0;
  double entropy_max = 0.0;
  std::size_t pairs = 0;
  Matrix in_grad;
  Matrix ood_grad;
};

// Fine-tuning objective of the extended model:
//   lambda1 * mean CE(in) + lambda2 * mean ext(ood) + lambda3 * mean cluster(ood pairs).
// Logits have q + k columns; labels of in-distribution rows must be < q.
inline ObjectiveResult total_objective(const Matrix& in_logits, std::span<const int> labels,
                                       const Matrix& ood_logits,
                                       std::span<const std::size_t> ood_ids,
                                       const DistanceMatrix& distances,
                                       const LossWeights& w, std::size_t q) {
  w.validate();
  const std::size_t classes = in_logits.rows() ? in_logits.cols() : ood_logits.cols();
  if (in_logits.rows() && ood_logits.rows() && in_logits.cols() != ood_logits.cols())
    throw ShapeError("total_objective: in/OoD logits differ in width");
  if (q == 0 || q >= classes)
    throw ArgumentError("total_objective: need q >= 1 and at least one empty class");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= q)
      throw ArgumentError("total_objective: in-distribution label outside known classes");
  for (std::size_t id : ood_ids)
    if (id >= distances.size())
      throw ConsistencyError("total_objective: OoD sample " + std::to_string(id) +
                             " has no distance entry");

  ObjectiveResult out;
  auto ce = cross_entropy_batch(in_logits, labels);
  out.cross_entropy = ce.value;
  out.in_grad = std::move(ce.grad);
  for (double& g : out.in_grad.data()) g *= w.lambda1;

  out.ood_grad = Matrix(ood_logits.rows(), ood_logits.cols());
  if (ood_logits.rows() > 0) {
    auto ext = extension_batch(ood_logits, q);
    out.extension = ext.value;
    auto cl = cluster_batch(ood_logits, ood_ids, distances, w.alpha > 0 ? w.alpha : 1.0);
    out.cluster = w.alpha > 0 ? cl.value : 0.0;
    out.pairs = cl.pairs;
    auto og = out.ood_grad.data();
    const auto eg = ext.grad.data();
    const auto cg = cl.grad.data();
    const double l3 = w.alpha > 0 ? w.lambda3 : 0.0;
    for (std::size_t i = 0; i < og.size(); ++i) og[i] = w.lambda2 * eg[i] + l3 * cg[i];
  }
  out.value = w.lambda1 * out.cross_entropy + w.lambda2 * out.extension +
              w.lambda3 * out.cluster;
  return out;
}

// Initial-training objective: lambda * mean CE(in) + (1 - lambda) * mean l_em(ood).
inline ObjectiveResult entropy_max_objective(const Matrix& in_logits,
                                             std::span<const int> labels,
                                             const Matrix& ood_logits, double lambda_em) {
  if (!(lambda_em >= 0.0 && lambda_em <= 1.0))
    throw ArgumentError("entropy_max_objective: lambda must be in [0,1]");
  ObjectiveResult out;
  auto ce = cross_entropy_batch(in_logits, labels);
  auto em = entropy_max_batch(ood_logits);
  out.cross_entropy = ce.value;
  out.entropy_max = em.value;
  out.value = lambda_em * ce.value + (1.0 - lambda_em) * em.value;
  out.in_grad = std::move(ce.grad);
  for (double& g : out.in_grad.data()) g *= lambda_em;
  out.ood_grad = std::move(em.grad);
  for (double& g : out.ood_grad.data()) g *= 1.0 - lambda_em;
  return out;
}

// ---------------------------------------------------------------------------
// Segment-aggregated variants. A pixel table holds one probability (or logit)
// row per pixel; a segment is the set of row indices of one OoD candidate.

using Segment = std::vector<std::size_t>;
using SegmentGroup = std::vector<Segment>;

namespace detail {
inline void check_segment(const Matrix& table, const Segment& segment, const char* who) {
  if (segment.empty()) throw ArgumentError(std::string(who) + ": empty segment");
  for (std::size_t z : segment)
    if (z >= table.rows())
      throw ArgumentError(std::string(who) + ": pixel index out of range");
}
}  // namespace detail

inline ProbabilityVector segment_mean_softmax(const Matrix& pixel_probs,
                                              const Segment& segment) {
  detail::check_segment(pixel_probs, segment, "segment_mean_softmax");
  ProbabilityVector mean(pixel_probs.cols(), 0.0);
  for (std::size_t z : segment) {
    const auto p = pixel_probs.row(z);
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += p[c];
  }
  for (double& v : mean) v /= static_cast<double>(segment.size());
  return mean;
}

// Segment mean of the per-pixel extension loss (non-negative sign convention).
inline double segment_extension_loss(const Matrix& pixel_probs, const Segment& segment,
                                     std::size_t q) {
  detail::check_segment(pixel_probs, segment, "segment_extension_loss");
  double s = 0.0;
  for (std::size_t z : segment) s += extension_loss(pixel_probs.row(z), q);
  return s / static_cast<double>(segment.size());
}

// Cluster loss between the segment-mean probabilities of two candidates.
inline double segment_cluster_loss(const Matrix& pixel_probs_i, const Segment& segment_i,
                                   const Matrix& pixel_probs_j, const Segment& segment_j,
                                   double distance, double alpha, std::size_t q,
                                   std::size_t k) {
  if (pixel_probs_i.cols() != q + k || pixel_probs_j.cols() != q + k)
    throw ShapeError("segment_cluster_loss: tables must have q+k columns");
  const auto mi = segment_mean_softmax(pixel_probs_i, segment_i);
  const auto mj = segment_mean_softmax(pixel_probs_j, segment_j);
  return cluster_loss(mi, mj, distance, alpha);
}

// Gradient of segment_extension_loss with respect to the pixel logits.
inline LossGrad segment_extension_grad(const Matrix& pixel_logits, const Segment& segment,
                                       std::size_t q) {
  detail::check_segment(pixel_logits, segment, "segment_extension_grad");
  if (q == 0 || q >= pixel_logits.cols())
    throw ArgumentError("segment_extension_grad: q must be in [1, class count)");
  LossGrad out{0.0, Matrix(pixel_logits.rows(), pixel_logits.cols())};
  const Matrix probs = softmax_rows(pixel_logits);
  out.value = segment_extension_loss(probs, segment, q);
  const double g = 1.0 / (static_cast<double>(segment.size()) * static_cast<double>(q));
  Matrix dp(pixel_logits.rows(), pixel_logits.cols());
  for (std::size_t z : segment)
    for (std::size_t c = 0; c < q; ++c) dp(z, c) += g;
  for (std::size_t z = 0; z < dp.rows(); ++z) {
    auto row = dp.row(z);
    detail::softmax_backward_row(probs.row(z), row);
    std::copy(row.begin(), row.end(), out.grad.row(z).begin());
  }
  return out;
}

struct SegmentPairGrad {
  double value = 0.0;
  Matrix grad_i;
  Matrix grad_j;
};

// Gradient of segment_cluster_loss with respect to both pixel-logit tables.
inline SegmentPairGrad segment_cluster_grad(const Matrix& pixel_logits_i,
                                            const Segment& segment_i,
                                            const Matrix& pixel_logits_j,
                                            const Segment& segment_j, double distance,
                                            double alpha) {
  if (pixel_logits_i.cols() != pixel_logits_j.cols())
    throw ShapeError("segment_cluster_grad: tables differ in width");
  const Matrix pi = softmax_rows(pixel_logits_i);
  const Matrix pj = softmax_rows(pixel_logits_j);
  const auto mi = segment_mean_softmax(pi, segment_i);
  const auto mj = segment_mean_softmax(pj, segment_j);
  SegmentPairGrad out;
  out.value = cluster_loss(mi, mj, distance, alpha);
  const double scale = alpha / static_cast<double>(mi.size()) * distance;

  auto fill = [&](const Matrix& probs, const Segment& seg, const ProbabilityVector& other) {
    Matrix grad(probs.rows(), probs.cols());
    const double w = scale / static_cast<double>(seg.size());
    for (std::size_t z : seg)
      for (std::size_t c = 0; c < other.size(); ++c) grad(z, c) += w * other[c];
    detail::softmax_backward(probs, grad);
    return grad;
  };
  out.grad_i = fill(pi, segment_i, mj);
  out.grad_j = fill(pj, segment_j, mi);
  return out;
}

}  // namespace novelty
