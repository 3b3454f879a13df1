#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "novelty/distances.hpp"
#include "novelty/losses.hpp"
#include "test_support.hpp"

using namespace novelty;

using Probs = std::vector<double>;

TEST(CrossEntropy, Examples) {
  EXPECT_NEAR(cross_entropy(Probs{0, 1, 0}, 1), 0.0, 1e-12);
  EXPECT_NEAR(cross_entropy(Probs{0.25, 0.25, 0.25, 0.25}, 3), std::log(4.0), 1e-12);
  EXPECT_NEAR(cross_entropy(Probs{0.2, 0.5, 0.3}, 1), -std::log(0.5), 1e-12);
  EXPECT_NEAR(cross_entropy(Probs{0.2, 0.5, 0.3}, 1), 0.6931, 1e-4);
  EXPECT_THROW(cross_entropy(Probs{0.5, 0.5}, 2), ArgumentError);
}

TEST(CrossEntropy, LogFloorKeepsValueFinite) {
  EXPECT_NEAR(cross_entropy(Probs{1, 0}, 1), -std::log(1e-12), 1e-9);
}

TEST(Extension, Examples) {
  EXPECT_NEAR(extension_loss(Probs{0, 0, 1}, 2), 0.0, 1e-12);
  EXPECT_NEAR(extension_loss(Probs{1.0 / 3, 1.0 / 3, 1.0 / 3}, 2), 1.0 / 3, 1e-12);
  EXPECT_NEAR(extension_loss(Probs{0.5, 0.5, 0}, 2), 0.5, 1e-12);
  EXPECT_THROW(extension_loss(Probs{0.5, 0.5}, 2), ArgumentError);
  EXPECT_THROW(extension_loss(Probs{0.5, 0.5}, 0), ArgumentError);
}

TEST(Extension, EqualsKnownMassOverQ) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const std::size_t q = 1 + t % 4, k = 1 + t % 3;
    const auto p = test::random_probs(q + k, rng);
    double empty = 0.0;
    for (std::size_t c = q; c < q + k; ++c) empty += p[c];
    EXPECT_NEAR(extension_loss(p, q), (1.0 - empty) / static_cast<double>(q), 1e-12);
  }
}

TEST(Cluster, Examples) {
  const Probs u{1.0 / 3, 1.0 / 3, 1.0 / 3};
  EXPECT_EQ(cluster_loss(u, u, 0.0, 5.0), 0.0);
  EXPECT_EQ(cluster_loss(Probs{1, 0, 0}, Probs{0, 1, 0}, 7.0, 5.0), 0.0);
  EXPECT_NEAR(cluster_loss(u, u, 2.0, 1.0), 2.0 / 9.0, 1e-12);
  EXPECT_THROW(cluster_loss(u, u, -1.0, 1.0), ArgumentError);
  EXPECT_THROW(cluster_loss(u, u, 1.0, 0.0), ArgumentError);
  EXPECT_THROW(cluster_loss(u, Probs{0.5, 0.5}, 1.0, 1.0), ShapeError);
}

TEST(Cluster, SymmetricAndNonNegative) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    const auto a = test::random_probs(5, rng), b = test::random_probs(5, rng);
    const double d = std::uniform_real_distribution<double>(0, 10)(rng);
    EXPECT_EQ(cluster_loss(a, b, d, 2.5), cluster_loss(b, a, d, 2.5));
    EXPECT_GT(cluster_loss(a, b, d, 2.5), 0.0);  // full support, d > 0
  }
}

TEST(EntropyScore, Examples) {
  EXPECT_NEAR(entropy_score(Probs{0.25, 0.25, 0.25, 0.25}), 1.0, 1e-12);
  EXPECT_EQ(entropy_score(Probs{0, 1, 0}), 0.0);
  const double want = -(0.9 * std::log(0.9) + 0.1 * std::log(0.1)) / std::log(2.0);
  EXPECT_NEAR(entropy_score(Probs{0.9, 0.1}), want, 1e-12);
  EXPECT_NEAR(entropy_score(Probs{0.9, 0.1}), 0.4690, 1e-4);
}

TEST(EntropyScore, StrictlyInsideForMixedVectors) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    const auto p = test::random_probs(2 + t % 5, rng);
    const double u = entropy_score(p);
    EXPECT_GT(u, 0.0);
    EXPECT_LE(u, 1.0);
  }
}

TEST(EntropyMax, Examples) {
  for (std::size_t q = 2; q <= 6; ++q)
    EXPECT_NEAR(entropy_max_loss(Probs(q, 1.0 / static_cast<double>(q))),
                std::log(static_cast<double>(q)), 1e-12);
  EXPECT_NEAR(entropy_max_loss(Probs{0.9, 0.1}), -(0.5 * std::log(0.9) + 0.5 * std::log(0.1)),
              1e-12);
  EXPECT_NEAR(entropy_max_loss(Probs{0.9, 0.1}), 1.2040, 1e-4);
}

TEST(EntropyMax, GibbsInequality) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 200; ++t) {
    const std::size_t q = 2 + t % 5;
    const auto p = test::random_probs(q, rng);
    EXPECT_GT(entropy_max_loss(p), std::log(static_cast<double>(q)));
  }
}

TEST(EntropyMaxObjective, WeightedSum) {
  // One in-distribution row with uniform logits (ce = ln 2) and one uniform OoD row.
  const Matrix in{{0, 0}}, ood{{0, 0}};
  const std::vector<int> y{0};
  EXPECT_NEAR(entropy_max_objective(in, y, ood, 0.5).value, std::log(2.0), 1e-12);
  EXPECT_NEAR(entropy_max_objective(in, y, ood, 0.5).value, 0.6931, 1e-4);

  std::mt19937_64 rng(7);
  const Matrix a = test::random_matrix(4, 3, rng), b = test::random_matrix(5, 3, rng);
  const std::vector<int> labels{0, 2, 1, 1};
  const double ce = cross_entropy_batch(a, labels).value;
  const double em = entropy_max_batch(b).value;
  EXPECT_EQ(entropy_max_objective(a, labels, b, 1.0).value, ce);
  EXPECT_EQ(entropy_max_objective(a, labels, b, 0.0).value, em);
  EXPECT_THROW(entropy_max_objective(a, labels, b, 1.5), ArgumentError);
}

TEST(TotalObjective, DegenerateWeightsGiveCrossEntropy) {
  std::mt19937_64 rng(8);
  const Matrix in = test::random_matrix(6, 5, rng), ood = test::random_matrix(4, 5, rng);
  const std::vector<int> y{0, 1, 0, 1, 1, 0};
  const std::vector<std::size_t> ids{0, 1, 2, 3};
  const auto d = pairwise_euclidean(test::random_matrix(4, 2, rng));
  LossWeights w;
  w.lambda2 = 0.0;
  w.lambda3 = 0.0;
  const auto r = total_objective(in, y, ood, ids, d, w, 2);
  EXPECT_EQ(r.value, w.lambda1 * cross_entropy_batch(in, y).value);
}

TEST(TotalObjective, EmptyOodBatch) {
  std::mt19937_64 rng(9);
  const Matrix in = test::random_matrix(3, 4, rng);
  const std::vector<int> y{0, 1, 1};
  const LossWeights w;
  const auto r = total_objective(in, y, Matrix(0, 4), {}, DistanceMatrix(), w, 2);
  EXPECT_EQ(r.extension, 0.0);
  EXPECT_EQ(r.cluster, 0.0);
  EXPECT_EQ(r.pairs, 0u);
  EXPECT_EQ(r.value, w.lambda1 * r.cross_entropy);
}

TEST(TotalObjective, PairsCountedOnceAndMeanOverPairs) {
  std::mt19937_64 rng(10);
  const std::size_t q = 2, k = 3;
  const Matrix in = test::random_matrix(2, q + k, rng);
  const Matrix ood = test::random_matrix(4, q + k, rng);
  const std::vector<int> y{1, 0};
  const std::vector<std::size_t> ids{3, 0, 2, 1};
  const auto d = pairwise_euclidean(test::random_matrix(4, 3, rng));
  const LossWeights w;
  const auto r = total_objective(in, y, ood, ids, d, w, q);
  EXPECT_EQ(r.pairs, 6u);

  // Independent evaluation from the per-sample definitions.
  const Matrix pin = softmax_rows(in), pood = softmax_rows(ood);
  double ce = 0, ext = 0, cl = 0;
  for (std::size_t i = 0; i < 2; ++i) ce += cross_entropy(pin.row(i), y[i]);
  for (std::size_t i = 0; i < 4; ++i) ext += extension_loss(pood.row(i), q);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j)
      cl += cluster_loss(pood.row(i), pood.row(j), d(ids[i], ids[j]), w.alpha);
  const double want = w.lambda1 * ce / 2 + w.lambda2 * ext / 4 + w.lambda3 * cl / 6;
  EXPECT_NEAR(r.value, want, 1e-12);
}

TEST(TotalObjective, Errors) {
  std::mt19937_64 rng(11);
  const Matrix in = test::random_matrix(1, 4, rng), ood = test::random_matrix(2, 4, rng);
  const auto d = pairwise_euclidean(test::random_matrix(2, 2, rng));
  const LossWeights w;
  const std::vector<std::size_t> missing{0, 5};
  EXPECT_THROW(total_objective(in, std::vector<int>{0}, ood, missing, d, w, 2),
               ConsistencyError);
  const std::vector<std::size_t> ok{0, 1};
  EXPECT_THROW(total_objective(in, std::vector<int>{2}, ood, ok, d, w, 2), ArgumentError);
  EXPECT_THROW(total_objective(in, std::vector<int>{0}, ood, ok, d, w, 4), ArgumentError);
}

TEST(Segments, MeanSoftmaxExamples) {
  const Matrix px{{0.2, 0.8}, {0.4, 0.6}, {0.6, 0.4}, {1, 0}, {0, 1}};
  const auto single = segment_mean_softmax(px, Segment{1});
  EXPECT_EQ(single, (Probs{0.4, 0.6}));
  const auto two = segment_mean_softmax(px, Segment{3, 4});
  EXPECT_NEAR(two[0], 0.5, 1e-15);
  EXPECT_NEAR(two[1], 0.5, 1e-15);
  const auto three = segment_mean_softmax(px, Segment{0, 1, 2});
  EXPECT_NEAR(three[0], 0.4, 1e-15);
  EXPECT_NEAR(three[1], 0.6, 1e-15);
  EXPECT_THROW(segment_mean_softmax(px, Segment{}), ArgumentError);
  EXPECT_THROW(segment_mean_softmax(px, Segment{9}), ArgumentError);
}

TEST(Segments, ExtensionExamples) {
  const Matrix px{{1.0 / 3, 1.0 / 3, 1.0 / 3}, {0, 0, 1}};
  EXPECT_NEAR(segment_extension_loss(px, Segment{0, 1}, 2), 1.0 / 6.0, 1e-12);
  EXPECT_EQ(segment_extension_loss(px, Segment{1}, 2), 0.0);
  EXPECT_THROW(segment_extension_loss(px, Segment{}, 2), ArgumentError);
}

TEST(Segments, ClusterExamples) {
  const Matrix a{{0.5, 0.5, 0}}, b{{0, 0.5, 0.5}};
  EXPECT_NEAR(segment_cluster_loss(a, Segment{0}, b, Segment{0}, 4.0, 1.0, 2, 1), 1.0 / 3.0,
              1e-12);
  EXPECT_EQ(segment_cluster_loss(a, Segment{0}, b, Segment{0}, 0.0, 1.0, 2, 1), 0.0);
  EXPECT_THROW(segment_cluster_loss(a, Segment{}, b, Segment{0}, 1.0, 1.0, 2, 1),
               ArgumentError);
}

TEST(Segments, SingletonsReduceToClassificationLosses) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 100; ++t) {
    const std::size_t q = 1 + t % 3, k = 1 + t % 4;
    const Matrix pi = softmax_rows(test::random_matrix(3, q + k, rng, -3, 3));
    const Matrix pj = softmax_rows(test::random_matrix(3, q + k, rng, -3, 3));
    const std::size_t zi = t % 3, zj = (t + 1) % 3;
    const double d = std::uniform_real_distribution<double>(0, 5)(rng);
    EXPECT_NEAR(segment_extension_loss(pi, Segment{zi}, q), extension_loss(pi.row(zi), q),
                1e-12);
    EXPECT_NEAR(segment_cluster_loss(pi, Segment{zi}, pj, Segment{zj}, d, 2.0, q, k),
                cluster_loss(pi.row(zi), pj.row(zj), d, 2.0), 1e-12);
  }
}

TEST(Gradients, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  std::mt19937_64 rng(13);
  const Matrix logits = test::random_matrix(3, 4, rng);
  const std::vector<int> y{3, 0, 1};
  const auto ce = cross_entropy_batch(logits, y);
  for (std::size_t r = 0; r < 3; ++r) {
    const auto p = softmax(logits.row(r));
    for (std::size_t c = 0; c < 4; ++c)
      EXPECT_NEAR(ce.grad(r, c), (p[c] - (static_cast<int>(c) == y[r] ? 1.0 : 0.0)) / 3.0,
                  1e-12);
  }
}

namespace {
// Central differences of f with respect to every logit.
template <typename F>
Matrix numeric_logit_grad(const Matrix& logits, F f, double eps = 1e-6) {
  Matrix g(logits.rows(), logits.cols());
  Matrix probe = logits;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + eps;
    const double up = f(probe);
    probe.data()[i] = orig - eps;
    const double down = f(probe);
    probe.data()[i] = orig;
    g.data()[i] = (up - down) / (2 * eps);
  }
  return g;
}

void expect_close(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a.data()[i]), std::abs(b.data()[i]), 1e-4});
    EXPECT_LT(std::abs(a.data()[i] - b.data()[i]) / denom, tol) << "entry " << i;
  }
}
}  // namespace

TEST(Gradients, LogitGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(14);
  for (int t = 0; t < 20; ++t) {
    const std::size_t q = 2 + t % 3, k = 1 + t % 3, n = 2 + t % 4;
    const Matrix logits = test::random_matrix(n, q + k, rng, -2, 2);
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng() % q);
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    const auto d = pairwise_euclidean(test::random_matrix(n, 2, rng));

    expect_close(cross_entropy_batch(logits, y).grad,
                 numeric_logit_grad(logits, [&](const Matrix& z) {
                   return cross_entropy_batch(z, y).value;
                 }),
                 1e-5);
    expect_close(extension_batch(logits, q).grad,
                 numeric_logit_grad(logits, [&](const Matrix& z) {
                   return extension_batch(z, q).value;
                 }),
                 1e-5);
    expect_close(cluster_batch(logits, ids, d, 5.0).grad,
                 numeric_logit_grad(logits, [&](const Matrix& z) {
                   return cluster_batch(z, ids, d, 5.0).value;
                 }),
                 1e-5);
    expect_close(entropy_max_batch(logits).grad,
                 numeric_logit_grad(logits, [&](const Matrix& z) {
                   return entropy_max_batch(z).value;
                 }),
                 1e-5);
  }
}

TEST(Gradients, SegmentGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(15);
  const std::size_t q = 2, k = 2;
  const Matrix li = test::random_matrix(5, q + k, rng, -2, 2);
  const Matrix lj = test::random_matrix(4, q + k, rng, -2, 2);
  const Segment si{0, 2, 3}, sj{1, 3};
  expect_close(segment_extension_grad(li, si, q).grad,
               numeric_logit_grad(li, [&](const Matrix& z) {
                 return segment_extension_loss(softmax_rows(z), si, q);
               }),
               1e-5);
  const auto g = segment_cluster_grad(li, si, lj, sj, 1.7, 2.5);
  expect_close(g.grad_i, numeric_logit_grad(li, [&](const Matrix& z) {
                 return segment_cluster_loss(softmax_rows(z), si, softmax_rows(lj), sj, 1.7,
                                             2.5, q, k);
               }),
               1e-5);
  expect_close(g.grad_j, numeric_logit_grad(lj, [&](const Matrix& z) {
                 return segment_cluster_loss(softmax_rows(li), si, softmax_rows(z), sj, 1.7,
                                             2.5, q, k);
               }),
               1e-5);
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.lambda3 = -0.1;
  EXPECT_THROW(w.validate(), ArgumentError);
  w = {};
  w.lambda_em = 1.1;
  EXPECT_THROW(w.validate(), ArgumentError);
}
