#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "novelty/errors.hpp"
#include "novelty/matrix.hpp"
#include "novelty/random.hpp"

namespace novelty {

enum class Activation { kRelu, kIdentity };

inline const char* to_string(Activation a) {
  return a == Activation::kRelu ? "relu" : "identity";
}

struct DenseLayer {
  Matrix weights;               // out x in
  std::vector<double> biases;   // out
  Activation activation = Activation::kIdentity;

  std::size_t in() const { return weights.cols(); }
  std::size_t out() const { return weights.rows(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

namespace detail {
inline std::uint64_t next_revision() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

// Dense classifier producing logits; softmax is applied by the loss and score
// functions. Any mutable access to the layers invalidates existing caches.
class FeedforwardClassifier {
 public:
  FeedforwardClassifier() = default;
  explicit FeedforwardClassifier(std::vector<DenseLayer> layers)
      : layers_(std::move(layers)) {
    validate();
  }

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& mutable_layers() {
    revision_ = detail::next_revision();
    return layers_;
  }

  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t input_width() const { return layers_.front().in(); }
  std::size_t num_classes() const { return layers_.back().out(); }
  std::uint64_t revision() const noexcept { return revision_; }

  void validate() const {
    if (layers_.empty()) throw ArgumentError("classifier needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.biases.size() != l.out())
        throw ShapeError("layer " + std::to_string(i) + ": bias length mismatch");
      if (i + 1 < layers_.size() && layers_[i + 1].in() != l.out())
        throw ShapeError("layer " + std::to_string(i + 1) +
                         ": input width does not chain");
    }
    if (layers_.back().activation != Activation::kIdentity)
      throw ArgumentError("final layer must have identity activation");
    if (num_classes() < 2) throw ArgumentError("classifier needs >= 2 classes");
  }

  friend bool operator==(const FeedforwardClassifier& a,
                         const FeedforwardClassifier& b) {
    return a.layers_ == b.layers_;
  }

 private:
  std::vector<DenseLayer> layers_;
  std::uint64_t revision_ = detail::next_revision();
};

// Builds an MLP with relu hidden layers. Weights and biases are uniform in
// [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline FeedforwardClassifier make_classifier(std::span<const std::size_t> widths,
                                             std::uint64_t seed) {
  if (widths.size() < 2) throw ArgumentError("make_classifier: need >= 2 widths");
  Rng rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t in = widths[i], out = widths[i + 1];
    if (in == 0 || out == 0) throw ArgumentError("make_classifier: zero width");
    const double a = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-a, a);
    DenseLayer layer;
    layer.weights = Matrix(out, in);
    for (double& w : layer.weights.data()) w = dist(rng);
    layer.biases.resize(out);
    for (double& b : layer.biases) b = dist(rng);
    layer.activation =
        (i + 2 == widths.size()) ? Activation::kIdentity : Activation::kRelu;
    layers.push_back(std::move(layer));
  }
  return FeedforwardClassifier(std::move(layers));
}

// Activations recorded during forward, sufficient for backward.
struct ForwardCache {
  std::uint64_t revision = 0;
  std::vector<Matrix> inputs;           // input to each layer
  std::vector<Matrix> pre_activations;  // z of each layer (only relu layers kept)
};

struct ForwardResult {
  Matrix logits;
  ForwardCache cache;
};

inline ForwardResult forward(const FeedforwardClassifier& model, const Matrix& batch) {
  if (batch.cols() != model.input_width())
    throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                     " columns, model expects " +
                     std::to_string(model.input_width()));
  ForwardResult result;
  result.cache.revision = model.revision();
  const auto& layers = model.layers();
  result.cache.inputs.reserve(layers.size());
  result.cache.pre_activations.resize(layers.size());
  Matrix current = batch;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    Matrix z = matmul_transposed(current, layer.weights);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto zr = z.row(r);
      for (std::size_t c = 0; c < zr.size(); ++c) zr[c] += layer.biases[c];
    }
    result.cache.inputs.push_back(std::move(current));
    if (layer.activation == Activation::kRelu) {
      Matrix a = z;
      for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
      result.cache.pre_activations[l] = std::move(z);
      current = std::move(a);
    } else {
      current = std::move(z);
    }
  }
  result.logits = std::move(current);
  return result;
}

// Logits only, no cache.
inline Matrix predict_logits(const FeedforwardClassifier& model, const Matrix& batch) {
  return forward(model, batch).logits;
}

using ProbabilityVector = std::vector<double>;

// Softmax with max-subtraction.
inline ProbabilityVector softmax(std::span<const double> logits) {
  if (logits.size() < 2) throw ArgumentError("softmax: need >= 2 entries");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite logit");
    mx = std::max(mx, v);
  }
  ProbabilityVector p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto p = softmax(logits.row(r));
    std::copy(p.begin(), p.end(), probs.row(r).begin());
  }
  return probs;
}

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

struct LayerMask {
  bool weights = true;
  bool biases = true;
  friend bool operator==(const LayerMask&, const LayerMask&) = default;
};

// One entry per layer; flags cover that layer's weight and bias tensors.
struct TrainableMask {
  std::vector<LayerMask> layers;

  bool any() const {
    for (const auto& l : layers)
      if (l.weights || l.biases) return true;
    return false;
  }
};

inline TrainableMask all_trainable(const FeedforwardClassifier& model) {
  return TrainableMask{std::vector<LayerMask>(model.num_layers())};
}

inline TrainableMask all_frozen(const FeedforwardClassifier& model) {
  return TrainableMask{std::vector<LayerMask>(model.num_layers(), {false, false})};
}

// Only the final dense layer stays trainable.
inline TrainableMask freeze_encoder(const FeedforwardClassifier& model) {
  if (model.num_layers() < 2)
    throw ArgumentError("freeze_encoder: model has no encoder (single layer)");
  TrainableMask mask = all_frozen(model);
  mask.layers.back() = {true, true};
  return mask;
}

struct LayerGradient {
  Matrix weights;
  std::vector<double> biases;
};

struct Gradients {
  std::vector<LayerGradient> layers;

  Gradients& operator+=(const Gradients& other) {
    if (other.layers.size() != layers.size())
      throw ShapeError("Gradients: layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto dst = layers[l].weights.data();
      auto src = other.layers[l].weights.data();
      if (dst.size() != src.size()) throw ShapeError("Gradients: weight shape mismatch");
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      for (std::size_t i = 0; i < layers[l].biases.size(); ++i)
        layers[l].biases[i] += other.layers[l].biases[i];
    }
    return *this;
  }
};

inline Gradients zero_gradients(const FeedforwardClassifier& model) {
  Gradients g;
  for (const auto& layer : model.layers())
    g.layers.push_back({Matrix(layer.out(), layer.in()),
                        std::vector<double>(layer.out(), 0.0)});
  return g;
}

// Back-propagates d(loss)/d(logits). Parameters masked out get zero gradient.
// The relu derivative at 0 is taken as 0.
inline Gradients backward(const FeedforwardClassifier& model, const ForwardCache& cache,
                          const Matrix& output_gradient, const TrainableMask& mask) {
  if (cache.revision != model.revision())
    throw UsageError("backward: cache was produced for a different model state");
  if (mask.layers.size() != model.num_layers())
    throw ShapeError("backward: mask does not match model layers");
  const auto& layers = model.layers();
  if (cache.inputs.size() != layers.size())
    throw UsageError("backward: incomplete cache");
  const std::size_t n = cache.inputs.front().rows();
  if (output_gradient.rows() != n || output_gradient.cols() != model.num_classes())
    throw ShapeError("backward: output gradient shape mismatch");

  Gradients grads = zero_gradients(model);
  // Lowest layer index that still needs a gradient.
  std::size_t lowest = layers.size();
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (mask.layers[l].weights || mask.layers[l].biases) {
      lowest = l;
      break;
    }
  if (lowest == layers.size()) return grads;

  Matrix delta = output_gradient;
  for (std::size_t l = layers.size(); l-- > lowest;) {
    auto& g = grads.layers[l];
    if (mask.layers[l].weights)
      accumulate_transposed_product(delta, cache.inputs[l], g.weights);
    if (mask.layers[l].biases)
      for (std::size_t r = 0; r < delta.rows(); ++r) {
        const auto dr = delta.row(r);
        for (std::size_t c = 0; c < dr.size(); ++c) g.biases[c] += dr[c];
      }
    if (l == lowest) break;
    Matrix upstream = matmul(delta, layers[l].weights);
    const auto& prev = layers[l - 1];
    if (prev.activation == Activation::kRelu) {
      const auto z = cache.pre_activations[l - 1].data();
      auto u = upstream.data();
      for (std::size_t i = 0; i < u.size(); ++i)
        if (!(z[i] > 0.0)) u[i] = 0.0;
    }
    delta = std::move(upstream);
  }
  return grads;
}

// Appends k output units. Existing rows and biases are copied unchanged; new
// weights and biases are uniform in [-init_scale, init_scale].
inline FeedforwardClassifier extend_output_layer(const FeedforwardClassifier& model,
                                                 std::size_t k, double init_scale,
                                                 std::uint64_t seed) {
  if (k == 0) throw ArgumentError("extend_output_layer: k must be >= 1");
  if (!(init_scale >= 0.0)) throw ArgumentError("extend_output_layer: init_scale < 0");
  std::vector<DenseLayer> layers = model.layers();
  DenseLayer& last = layers.back();
  const std::size_t q = last.out(), in = last.in();
  Matrix w(q + k, in);
  std::copy(last.weights.data().begin(), last.weights.data().end(), w.data().begin());
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-init_scale, init_scale);
  for (std::size_t r = q; r < q + k; ++r)
    for (std::size_t c = 0; c < in; ++c) w(r, c) = init_scale > 0 ? dist(rng) : 0.0;
  last.weights = std::move(w);
  for (std::size_t r = 0; r < k; ++r)
    last.biases.push_back(init_scale > 0 ? dist(rng) : 0.0);
  return FeedforwardClassifier(std::move(layers));
}

// Default scale 1/sqrt(fan_in) keeps the new logits small next to the old ones.
inline FeedforwardClassifier extend_output_layer(const FeedforwardClassifier& model,
                                                 std::size_t k, std::uint64_t seed) {
  const double scale =
      1.0 / std::sqrt(static_cast<double>(model.layers().back().in()));
  return extend_output_layer(model, k, scale, seed);
}

}  // namespace novelty
