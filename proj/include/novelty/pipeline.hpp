#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "novelty/assignment.hpp"
#include "novelty/data.hpp"
#include "novelty/distances.hpp"
#include "novelty/errors.hpp"
#include "novelty/kmeans.hpp"
#include "novelty/losses.hpp"
#include "novelty/nn.hpp"
#include "novelty/ood.hpp"
#include "novelty/optim.hpp"
#include "novelty/random.hpp"

namespace novelty {

enum class DatasetKind { kTwoMoons, kIdx };
enum class KnownUnknowns { kUniform, kMixup };
enum class DistanceSource { kEuclidean, kPrecomputed };
enum class MappingRule { kAssignment, kMajority };

// Synthetic 2-D protocol: moons as known classes, Gaussian blobs as novel ones.
struct TwoMoonsSpec {
  std::size_t train_samples = 1000;
  std::size_t test_samples = 750;
  double noise = 0.1;
  std::size_t ood_samples = 100;  // uniform known unknowns for initial training
  double ood_lower = -4.0;
  double ood_upper = 4.0;
  std::vector<std::vector<double>> blob_centers = {{-1.5, -0.95}, {2.5, 1.5}, {3.0, -1.0}};
  double blob_std = 0.25;
  std::size_t blob_samples = 500;

  friend bool operator==(const TwoMoonsSpec&, const TwoMoonsSpec&) = default;
};

struct IdxSpec {
  std::string train_images, train_labels, test_images, test_labels;
  std::set<int> held_out = {0, 5, 7};
  std::size_t train_limit = 0;  // 0 = use everything
  std::size_t test_limit = 0;

  friend bool operator==(const IdxSpec&, const IdxSpec&) = default;
};

struct TrainingSpec {
  OptimizerConfig optimizer;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;

  friend bool operator==(const TrainingSpec&, const TrainingSpec&) = default;
};

// Minimum/maximum values checked by `--check`; unset entries are not checked.
struct CheckThresholds {
  std::optional<double> min_recall, max_fpr, min_acc_known, min_acc_novel,
      min_novel_in_empty, min_purity;

  friend bool operator==(const CheckThresholds&, const CheckThresholds&) = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  DatasetKind dataset = DatasetKind::kTwoMoons;
  TwoMoonsSpec two_moons;
  IdxSpec idx;

  std::vector<std::size_t> hidden = {32, 32, 32};
  KnownUnknowns known_unknowns = KnownUnknowns::kUniform;
  std::size_t mixup_samples = 0;  // per batch; 0 = the batch size
  TrainingSpec initial;
  double lambda_em = 0.75;

  std::size_t k = 3;
  double tau = 0.8;
  std::optional<double> init_scale;  // unset = 1/sqrt(fan_in)
  TrainingSpec finetune;
  LossWeights weights;
  bool freeze_encoder = true;

  DistanceSource distance_source = DistanceSource::kEuclidean;
  std::string distance_file;
  bool oracle_detection = false;
  bool oracle_distance = false;
  double false_positive_rate = 0.0;  // injected share of known samples in the OoD set
  MappingRule mapping = MappingRule::kAssignment;

  CheckThresholds check;

  void validate() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

inline void ExperimentConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& what) {
    throw ConfigError(key, what);
  };
  if (k < 1) fail("extend.k", "must be >= 1");
  if (!(tau >= 0.0 && tau <= 1.0)) fail("detect.tau", "must be in [0,1]");
  if (initial.epochs < 1) fail("initial.epochs", "must be >= 1");
  if (finetune.epochs < 1) fail("finetune.epochs", "must be >= 1");
  if (initial.batch_size < 1) fail("initial.batch_size", "must be >= 1");
  if (finetune.batch_size < 2) fail("finetune.batch_size", "must be >= 2");
  if (!(lambda_em >= 0.0 && lambda_em <= 1.0)) fail("initial.lambda_em", "must be in [0,1]");
  if (!(weights.lambda1 >= 0)) fail("finetune.lambda1", "must be >= 0");
  if (!(weights.lambda2 >= 0)) fail("finetune.lambda2", "must be >= 0");
  if (!(weights.lambda3 >= 0)) fail("finetune.lambda3", "must be >= 0");
  if (!(weights.alpha > 0)) fail("finetune.alpha", "must be > 0");
  if (init_scale && !(*init_scale >= 0)) fail("extend.init_scale", "must be >= 0");
  if (!(false_positive_rate >= 0.0 && false_positive_rate < 1.0))
    fail("detect.false_positive_rate", "must be in [0,1)");
  try {
    initial.optimizer.validate();
  } catch (const ArgumentError& e) {
    fail("initial.optimizer", e.what());
  }
  try {
    finetune.optimizer.validate();
  } catch (const ArgumentError& e) {
    fail("finetune.optimizer", e.what());
  }
  for (std::size_t h : hidden)
    if (h == 0) fail("model.hidden", "layer widths must be >= 1");
  if (dataset == DatasetKind::kTwoMoons) {
    const auto& t = two_moons;
    if (t.train_samples < 2) fail("two_moons.train_samples", "must be >= 2");
    if (t.test_samples < 2) fail("two_moons.test_samples", "must be >= 2");
    if (!(t.noise >= 0)) fail("two_moons.noise", "must be >= 0");
    if (!(t.ood_lower < t.ood_upper)) fail("two_moons.ood_lower", "must be < ood_upper");
    if (t.blob_centers.empty()) fail("two_moons.blob_centers", "need at least one center");
    for (const auto& c : t.blob_centers)
      if (c.size() != 2) fail("two_moons.blob_centers", "centers must be 2-D");
    if (!(t.blob_std > 0)) fail("two_moons.blob_std", "must be > 0");
    if (known_unknowns == KnownUnknowns::kUniform && t.ood_samples == 0)
      fail("two_moons.ood_samples", "must be >= 1 for uniform known unknowns");
  } else {
    if (idx.train_images.empty()) fail("idx.train_images", "required");
    if (idx.train_labels.empty()) fail("idx.train_labels", "required");
    if (idx.test_images.empty()) fail("idx.test_images", "required");
    if (idx.test_labels.empty()) fail("idx.test_labels", "required");
    if (idx.held_out.empty()) fail("idx.held_out", "need at least one novel class");
    if (known_unknowns == KnownUnknowns::kUniform)
      fail("initial.known_unknowns", "uniform noise is only defined for two_moons");
  }
  if (distance_source == DistanceSource::kPrecomputed && distance_file.empty())
    fail("distances.file", "required when source = precomputed");
}

// ---------------------------------------------------------------------------
// Data

struct ExperimentData {
  LabeledDataset train;   // known classes, labels 0..q-1
  Matrix known_unknowns;  // fixed OoD set for initial training (uniform noise)
  LabeledDataset test;    // labels 0..q-1 known, q..q+m-1 novel
  std::size_t q = 0;
  std::size_t novel_classes = 0;

  std::size_t input_width() const { return train.samples.cols(); }
};

inline ExperimentData prepare_data(const ExperimentConfig& config) {
  config.validate();
  ExperimentData data;
  const auto seed = config.seed;
  if (config.dataset == DatasetKind::kTwoMoons) {
    const auto& t = config.two_moons;
    data.train = generate_two_moons(t.train_samples, t.noise,
                                    derive_seed(seed, streams::kTrainData));
    auto moons = generate_two_moons(t.test_samples, t.noise,
                                    derive_seed(seed, streams::kTestData));
    const auto counts = balanced_counts(t.blob_samples, t.blob_centers.size());
    auto blobs = generate_blobs(t.blob_centers, t.blob_std, counts,
                                derive_seed(seed, streams::kNovelData));
    for (int& y : blobs.labels) y += 2;
    data.test = concat(moons, blobs);
    data.q = 2;
    data.novel_classes = t.blob_centers.size();
    if (config.known_unknowns == KnownUnknowns::kUniform) {
      const std::vector<double> lo(2, t.ood_lower), hi(2, t.ood_upper);
      data.known_unknowns = sample_uniform_noise(t.ood_samples, lo, hi,
                                                 derive_seed(seed, streams::kKnownUnknowns));
    }
    return data;
  }

  const auto& spec = config.idx;
  auto train_full = load_idx(spec.train_images, spec.train_labels);
  auto test_full = load_idx(spec.test_images, spec.test_labels);
  if (spec.train_limit)
    train_full = subsample(train_full, spec.train_limit,
                           derive_seed(seed, streams::kSubsample));
  if (spec.test_limit)
    test_full = subsample(test_full, spec.test_limit,
                          derive_seed(seed, streams::kSubsample + 100));
  auto split = split_by_class(train_full, SplitSpec{spec.held_out, seed});
  data.train = std::move(split.train);
  data.q = split.retained_classes.size();
  data.novel_classes = spec.held_out.size();
  // Evaluation labels: retained classes keep their dense ids, held-out classes
  // follow in ascending order of their original id.
  std::vector<int> remap(256, -1);
  for (std::size_t i = 0; i < split.retained_classes.size(); ++i)
    remap[static_cast<std::size_t>(split.retained_classes[i])] = static_cast<int>(i);
  int next = static_cast<int>(data.q);
  for (int c : spec.held_out) remap[static_cast<std::size_t>(c)] = next++;
  data.test = std::move(test_full);
  for (int& y : data.test.labels) {
    if (y < 0 || y >= 256 || remap[static_cast<std::size_t>(y)] < 0)
      throw FormatError("test set contains class " + std::to_string(y) +
                        " absent from the training data");
    y = remap[static_cast<std::size_t>(y)];
  }
  return data;
}

// ---------------------------------------------------------------------------
// Stage I: initial model trained with entropy maximization.

namespace detail {
// Cycles through a shuffled index set, reshuffling after each full pass.
class IndexCycler {
 public:
  IndexCycler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> take(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count && !order_.empty()) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

inline std::vector<int> select_labels(std::span<const int> labels,
                                      std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

// Back-propagates both parts of a batch and applies one optimizer step.
inline void two_part_step(FeedforwardClassifier& model, const ForwardResult& in_fwd,
                          const Matrix& in_grad, const ForwardResult& ood_fwd,
                          const Matrix& ood_grad, OptimizerState& state,
                          const OptimizerConfig& opt, const TrainableMask& mask) {
  Gradients g = backward(model, in_fwd.cache, in_grad, mask);
  if (ood_grad.rows() > 0) g += backward(model, ood_fwd.cache, ood_grad, mask);
  optimizer_step(model, g, state, opt, mask);
}
}  // namespace detail

// Cross-entropy on the known classes plus entropy maximization on known
// unknowns: uniform noise (fixed set, cycled proportionally to the batch) or
// freshly generated mixup samples per batch.
inline FeedforwardClassifier train_initial(const ExperimentConfig& config,
                                           const ExperimentData& data) {
  config.validate();
  if (data.train.size() == 0) throw ConfigError("data", "empty training set");
  std::vector<std::size_t> widths{data.input_width()};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(data.q);
  FeedforwardClassifier model =
      make_classifier(widths, derive_seed(config.seed, streams::kInit));

  const auto& spec = config.initial;
  const TrainableMask mask = all_trainable(model);
  OptimizerState state;
  Rng rng(derive_seed(config.seed, streams::kInitialTraining));
  const std::size_t n = data.train.size();
  const std::size_t batch = std::min(spec.batch_size, n);
  detail::IndexCycler ood_cycle(data.known_unknowns.rows(), rng());
  const std::size_t ood_per_batch =
      data.known_unknowns.rows() == 0
          ? 0
          : std::max<std::size_t>(1, (data.known_unknowns.rows() * batch + n - 1) / n);

  std::uint64_t batch_counter = 0;
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    const auto order = detail::shuffled_indices(n, rng);
    for (std::size_t begin = 0; begin < n; begin += batch) {
      const std::size_t end = std::min(n, begin + batch);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Matrix in_batch = select_rows(data.train.samples, idx);
      const auto labels = detail::select_labels(data.train.labels, idx);

      Matrix ood_batch;
      if (config.known_unknowns == KnownUnknowns::kUniform) {
        const auto ood_idx = ood_cycle.take(ood_per_batch);
        ood_batch = select_rows(data.known_unknowns, ood_idx);
      } else {
        const std::size_t count = config.mixup_samples ? config.mixup_samples : idx.size();
        ood_batch = mixup_ood(data.train.samples, data.train.labels, count,
                              derive_seed(config.seed, 1000 + batch_counter));
      }
      ++batch_counter;

      const auto in_fwd = forward(model, in_batch);
      const auto ood_fwd = forward(model, ood_batch);
      const auto obj =
          entropy_max_objective(in_fwd.logits, labels, ood_fwd.logits, config.lambda_em);
      detail::two_part_step(model, in_fwd, obj.in_grad, ood_fwd, obj.ood_grad, state,
                            spec.optimizer, mask);
    }
  }
  return model;
}

// Accuracy on the known-class samples of `ds` using argmax over the first q outputs.
inline double known_accuracy(const FeedforwardClassifier& model, const LabeledDataset& ds,
                             std::size_t q) {
  const Matrix logits = predict_logits(model, ds.samples);
  std::size_t total = 0, hits = 0;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    if (static_cast<std::size_t>(ds.labels[r]) >= q) continue;
    ++total;
    const auto row = logits.row(r).first(q);
    if (argmax(row) == static_cast<std::size_t>(ds.labels[r])) ++hits;
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------------------
// Stage II: OoD detection.

// Entropy thresholding, or ground-truth novel membership when oracle_detection
// is set. A positive false_positive_rate then appends randomly chosen known
// samples until they make up that share of the OoD set.
inline OodDetection run_ood_stage(const FeedforwardClassifier& model,
                                  const LabeledDataset& test, const ExperimentConfig& config,
                                  std::size_t q) {
  OodDetection det = detect_ood(model, test.samples, config.tau);
  if (config.oracle_detection || config.false_positive_rate > 0.0) {
    if (!test.has_labels()) throw ArgumentError("oracle detection needs labeled test data");
    det.ood_indices.clear();
    for (std::size_t i = 0; i < test.size(); ++i)
      if (static_cast<std::size_t>(test.labels[i]) >= q) det.ood_indices.push_back(i);
  }
  if (config.false_positive_rate > 0.0) {
    std::vector<std::size_t> known;
    for (std::size_t i = 0; i < test.size(); ++i)
      if (static_cast<std::size_t>(test.labels[i]) < q) known.push_back(i);
    const double rate = config.false_positive_rate;
    auto wanted = static_cast<std::size_t>(
        std::llround(rate / (1.0 - rate) * static_cast<double>(det.ood_indices.size())));
    wanted = std::min(wanted, known.size());
    Rng rng(derive_seed(config.seed, streams::kFalsePositives));
    std::shuffle(known.begin(), known.end(), rng);
    det.ood_indices.insert(det.ood_indices.end(), known.begin(),
                           known.begin() + static_cast<std::ptrdiff_t>(wanted));
    std::sort(det.ood_indices.begin(), det.ood_indices.end());
  }
  return det;
}

struct DetectionStats {
  std::size_t flagged = 0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  double recall = 0.0;               // flagged novel / all novel
  double false_positive_rate = 0.0;  // flagged known / all known
};

inline DetectionStats detection_stats(const OodDetection& det, const LabeledDataset& test,
                                      std::size_t q) {
  DetectionStats s;
  std::size_t novel = 0, known = 0;
  for (int y : test.labels) (static_cast<std::size_t>(y) >= q ? novel : known)++;
  for (std::size_t i : det.ood_indices) {
    ++s.flagged;
    (static_cast<std::size_t>(test.labels[i]) >= q ? s.true_positives : s.false_positives)++;
  }
  s.recall = novel ? static_cast<double>(s.true_positives) / static_cast<double>(novel) : 0.0;
  s.false_positive_rate =
      known ? static_cast<double>(s.false_positives) / static_cast<double>(known) : 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Stage III: distances over the detected OoD set.

inline DistanceMatrix build_distances(const Matrix& ood_samples,
                                      std::span<const int> ood_labels,
                                      const ExperimentConfig& config) {
  if (config.oracle_distance) {
    if (ood_labels.size() != ood_samples.rows())
      throw ArgumentError("oracle distance needs labels for every OoD sample");
    if (ood_samples.rows() == 0) return DistanceMatrix();
    return oracle_distance(ood_labels);
  }
  if (config.distance_source == DistanceSource::kPrecomputed) {
    auto d = load_distance_csv(config.distance_file);
    if (d.size() != ood_samples.rows())
      throw ConsistencyError("precomputed distance table covers " + std::to_string(d.size()) +
                             " samples, OoD set has " + std::to_string(ood_samples.rows()));
    return d;
  }
  return pairwise_euclidean(ood_samples);
}

// ---------------------------------------------------------------------------
// Stage IV: extension and fine-tuning.

inline FeedforwardClassifier extend_model(const FeedforwardClassifier& model,
                                          const ExperimentConfig& config) {
  const auto seed = derive_seed(config.seed, streams::kExtension);
  return config.init_scale ? extend_output_layer(model, config.k, *config.init_scale, seed)
                           : extend_output_layer(model, config.k, seed);
}

namespace detail {
// Batches pair up to half a batch of OoD samples with the same number of
// replayed training samples. An epoch is one pass over the larger of the two
// sets; the smaller one is cycled. Calls step(replay_idx, ood_idx) per batch.
template <typename Step>
void for_each_finetune_batch(const ExperimentConfig& config, std::size_t n_train,
                             std::size_t n_ood, Rng& rng, Step&& step) {
  const std::size_t half = std::max<std::size_t>(1, config.finetune.batch_size / 2);
  IndexCycler replay(n_train, rng());
  IndexCycler ood(n_ood, rng());
  const std::size_t per_batch = n_ood == 0 ? half : std::min(half, n_ood);
  const std::size_t batches = (std::max(n_train, n_ood) + per_batch - 1) / per_batch;
  for (std::size_t epoch = 0; epoch < config.finetune.epochs; ++epoch)
    for (std::size_t b = 0; b < batches; ++b) {
      auto ood_idx = ood.take(per_batch);
      const std::size_t replay_count = n_ood == 0 ? per_batch : ood_idx.size();
      step(replay.take(replay_count), std::move(ood_idx));
    }
}
}  // namespace detail

// Minimizes the fine-tuning objective (replay CE + extension + pairwise
// cluster loss) on the extended model. Row i of `ood_samples` corresponds to
// index i of `distances`.
inline FeedforwardClassifier finetune_extended(FeedforwardClassifier model,
                                               const LabeledDataset& train,
                                               const Matrix& ood_samples,
                                               const DistanceMatrix& distances,
                                               const ExperimentConfig& config, std::size_t q) {
  if (model.num_classes() <= q)
    throw UsageError("finetune_extended: model has not been extended beyond q classes");
  if (distances.size() != ood_samples.rows())
    throw ConsistencyError("finetune_extended: distance table does not match OoD set");
  const TrainableMask mask =
      config.freeze_encoder ? freeze_encoder(model) : all_trainable(model);
  OptimizerState state;
  Rng rng(derive_seed(config.seed, streams::kFinetune));
  detail::for_each_finetune_batch(
      config, train.size(), ood_samples.rows(), rng,
      [&](const std::vector<std::size_t>& replay_idx, const std::vector<std::size_t>& ood_idx) {
        const Matrix in_batch = select_rows(train.samples, replay_idx);
        const auto labels = detail::select_labels(train.labels, replay_idx);
        const Matrix ood_batch = select_rows(ood_samples, ood_idx);
        const auto in_fwd = forward(model, in_batch);
        const auto ood_fwd = forward(model, ood_batch);
        const auto obj = total_objective(in_fwd.logits, labels, ood_fwd.logits, ood_idx,
                                         distances, config.weights, q);
        detail::two_part_step(model, in_fwd, obj.in_grad, ood_fwd, obj.ood_grad, state,
                              config.finetune.optimizer, mask);
      });
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation

// mapping[e] = novel class (0-based among novel classes) assigned to empty
// class e, or kUnassigned.
struct ClusterMapping {
  std::vector<int> assignment;
  bool partial = false;  // fewer empty classes than novel classes
};

// `counts(e, t)`: novel samples of novel class t predicted as empty class e.
inline ClusterMapping map_clusters(const Matrix& counts,
                                   MappingRule rule = MappingRule::kAssignment) {
  ClusterMapping m;
  m.partial = counts.rows() < counts.cols();
  if (rule == MappingRule::kAssignment) {
    m.assignment = solve_assignment_max(counts);
  } else {
    m.assignment.assign(counts.rows(), kUnassigned);
    for (std::size_t e = 0; e < counts.rows(); ++e)
      if (counts.cols() > 0) {
        const std::size_t best = argmax(counts.row(e));
        if (counts(e, best) > 0) m.assignment[e] = static_cast<int>(best);
      }
  }
  return m;
}

struct MetricsReport {
  std::size_t q = 0, k = 0, novel_classes = 0;
  std::size_t known_samples = 0, novel_samples = 0;
  double acc_known = 0.0;
  double acc_novel = 0.0;
  double novel_in_empty = 0.0;  // share of novel samples predicted into an empty class
  double purity = 0.0;          // matched / novel samples predicted into empty classes
  Matrix confusion;             // (q+k) predicted x (q+m) true, counts
  ClusterMapping mapping;
  std::vector<std::size_t> unused_clusters;  // empty classes matched to no novel class
  std::optional<DetectionStats> detection;
};

inline MetricsReport evaluate(const FeedforwardClassifier& model, const LabeledDataset& eval,
                              std::size_t q, std::size_t k,
                              MappingRule rule = MappingRule::kAssignment) {
  if (!eval.has_labels()) throw ArgumentError("evaluate: evaluation set has no labels");
  if (model.num_classes() != q + k)
    throw ArgumentError("evaluate: model width != q + k");
  MetricsReport rep;
  rep.q = q;
  rep.k = k;
  const std::size_t true_classes =
      std::max<std::size_t>(q, static_cast<std::size_t>(eval.num_classes()));
  rep.novel_classes = true_classes - q;
  rep.confusion = Matrix(q + k, true_classes);
  const Matrix logits = predict_logits(model, eval.samples);
  std::vector<std::size_t> predicted(eval.size());
  for (std::size_t r = 0; r < eval.size(); ++r) {
    predicted[r] = argmax(logits.row(r));
    rep.confusion(predicted[r], static_cast<std::size_t>(eval.labels[r])) += 1.0;
  }
  Matrix novel_counts(k, rep.novel_classes);
  for (std::size_t e = 0; e < k; ++e)
    for (std::size_t t = 0; t < rep.novel_classes; ++t)
      novel_counts(e, t) = rep.confusion(q + e, q + t);
  rep.mapping = map_clusters(novel_counts, rule);

  std::size_t known_hits = 0, novel_hits = 0, novel_in_empty = 0;
  for (std::size_t r = 0; r < eval.size(); ++r) {
    const auto y = static_cast<std::size_t>(eval.labels[r]);
    if (y < q) {
      ++rep.known_samples;
      if (predicted[r] == y) ++known_hits;
      continue;
    }
    ++rep.novel_samples;
    if (predicted[r] < q) continue;
    ++novel_in_empty;
    if (rep.mapping.assignment[predicted[r] - q] == static_cast<int>(y - q)) ++novel_hits;
  }
  for (std::size_t e = 0; e < k; ++e) {
    const int t = rep.mapping.assignment[e];
    if (t == kUnassigned || novel_counts(e, static_cast<std::size_t>(t)) == 0)
      rep.unused_clusters.push_back(e);
  }
  auto ratio = [](std::size_t a, std::size_t b) {
    return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0;
  };
  rep.acc_known = ratio(known_hits, rep.known_samples);
  rep.acc_novel = ratio(novel_hits, rep.novel_samples);
  rep.novel_in_empty = ratio(novel_in_empty, rep.novel_samples);
  rep.purity = ratio(novel_hits, novel_in_empty);
  return rep;
}

// ---------------------------------------------------------------------------
// k-means baseline: pseudo-label the OoD set and fine-tune with cross-entropy.

struct BaselineResult {
  FeedforwardClassifier model;
  KMeansResult clusters;
  MetricsReport report;
};

inline constexpr std::size_t kKMeansMaxIters = 300;

inline BaselineResult kmeans_baseline(FeedforwardClassifier model, const LabeledDataset& train,
                                      const Matrix& ood_samples, const LabeledDataset& eval,
                                      const ExperimentConfig& config, std::size_t q) {
  if (model.num_classes() <= q)
    throw UsageError("kmeans_baseline: model has not been extended beyond q classes");
  const std::size_t k = model.num_classes() - q;
  BaselineResult res;
  if (ood_samples.rows() >= k)
    res.clusters =
        kmeans(ood_samples, k, kKMeansMaxIters, derive_seed(config.seed, streams::kKMeans));
  std::vector<int> pseudo(ood_samples.rows(), 0);
  for (std::size_t i = 0; i < res.clusters.assignments.size(); ++i)
    pseudo[i] = static_cast<int>(q + res.clusters.assignments[i]);
  if (res.clusters.assignments.empty() && ood_samples.rows() > 0)
    for (std::size_t i = 0; i < ood_samples.rows(); ++i)
      pseudo[i] = static_cast<int>(q + std::min(i, k - 1));

  const TrainableMask mask =
      config.freeze_encoder ? freeze_encoder(model) : all_trainable(model);
  OptimizerState state;
  Rng rng(derive_seed(config.seed, streams::kFinetune));
  detail::for_each_finetune_batch(
      config, train.size(), ood_samples.rows(), rng,
      [&](const std::vector<std::size_t>& replay_idx, const std::vector<std::size_t>& ood_idx) {
        const Matrix batch = stack_rows(select_rows(train.samples, replay_idx),
                                        select_rows(ood_samples, ood_idx));
        auto labels = detail::select_labels(train.labels, replay_idx);
        for (std::size_t i : ood_idx) labels.push_back(pseudo[i]);
        const auto fwd = forward(model, batch);
        const auto ce = cross_entropy_batch(fwd.logits, labels);
        optimizer_step(model, backward(model, fwd.cache, ce.grad, mask), state,
                       config.finetune.optimizer, mask);
      });
  res.report = evaluate(model, eval, q, k, config.mapping);
  res.model = std::move(model);
  return res;
}

// ---------------------------------------------------------------------------
// Whole pipeline

enum class Stage { kTrain = 0, kDetect = 1, kDistances = 2, kExtend = 3, kEvaluate = 4 };

struct PipelineResult {
  ExperimentData data;
  FeedforwardClassifier initial_model;
  double initial_acc_known = 0.0;
  std::optional<OodDetection> detection;
  std::optional<DetectionStats> detection_stats;
  Matrix ood_samples;
  std::vector<int> ood_labels;  // ground truth, evaluation only
  std::optional<DistanceMatrix> distances;
  std::optional<FeedforwardClassifier> extended_model;  // before fine-tuning
  std::optional<FeedforwardClassifier> final_model;
  std::optional<MetricsReport> report;
  std::optional<BaselineResult> baseline;
};

inline PipelineResult run_pipeline(const ExperimentConfig& config,
                                   Stage stop = Stage::kEvaluate, bool with_baseline = false) {
  config.validate();
  PipelineResult res;
  res.data = prepare_data(config);
  const std::size_t q = res.data.q;
  res.initial_model = train_initial(config, res.data);
  res.initial_acc_known = known_accuracy(res.initial_model, res.data.test, q);
  if (stop == Stage::kTrain) return res;

  res.detection = run_ood_stage(res.initial_model, res.data.test, config, q);
  res.detection_stats = detection_stats(*res.detection, res.data.test, q);
  res.ood_samples = select_rows(res.data.test.samples, res.detection->ood_indices);
  res.ood_labels = detail::select_labels(res.data.test.labels, res.detection->ood_indices);
  if (stop == Stage::kDetect) return res;

  res.distances = build_distances(res.ood_samples, res.ood_labels, config);
  if (stop == Stage::kDistances && !with_baseline) return res;

  res.extended_model = extend_model(res.initial_model, config);
  if (stop >= Stage::kExtend) {
    res.final_model = finetune_extended(*res.extended_model, res.data.train, res.ood_samples,
                                        *res.distances, config, q);
    if (stop == Stage::kEvaluate) {
      res.report = evaluate(*res.final_model, res.data.test, q, config.k, config.mapping);
      res.report->detection = res.detection_stats;
    }
  }
  if (with_baseline) {
    res.baseline = kmeans_baseline(*res.extended_model, res.data.train, res.ood_samples,
                                   res.data.test, config, q);
    res.baseline->report.detection = res.detection_stats;
  }
  return res;
}

}  // namespace novelty
