#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "novelty/errors.hpp"
#include "novelty/nn.hpp"

namespace novelty {

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double momentum = 0.0;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ArgumentError("optimizer: learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw ArgumentError("optimizer: momentum must be in [0,1)");
    if (!(weight_decay >= 0.0)) throw ArgumentError("optimizer: weight_decay must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0))
      throw ArgumentError("optimizer: adam_beta1 must be in [0,1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw ArgumentError("optimizer: adam_beta2 must be in [0,1)");
    if (!(adam_epsilon > 0.0)) throw ArgumentError("optimizer: adam_epsilon must be > 0");
  }

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

inline const char* to_string(OptimizerKind k) {
  return k == OptimizerKind::kSgd ? "sgd" : "adam";
}

// Moment buffers of one parameter tensor. SGD uses `first` as the momentum buffer.
struct TensorState {
  std::vector<double> first;
  std::vector<double> second;
};

// Updates one tensor in place. `step` is the 1-based step count (for Adam bias
// correction).
//   SGD:  v <- momentum*v + (g + wd*p);  p <- p - lr*v
//   Adam: g' = g + wd*p; m, v moment updates; p <- p - lr*m_hat/(sqrt(v_hat)+eps)
inline void update_tensor(std::span<double> params, std::span<const double> grads,
                          TensorState& state, const OptimizerConfig& config,
                          std::size_t step) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: gradient shape mismatch");
  if (state.first.empty()) state.first.assign(params.size(), 0.0);
  if (config.kind == OptimizerKind::kAdam && state.second.empty())
    state.second.assign(params.size(), 0.0);
  if (state.first.size() != params.size()) throw ShapeError("optimizer: state shape mismatch");

  const double lr = config.learning_rate, wd = config.weight_decay;
  if (config.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i] + wd * params[i];
      state.first[i] = config.momentum * state.first[i] + g;
      params[i] -= lr * state.first[i];
    }
    return;
  }
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + wd * params[i];
    state.first[i] = b1 * state.first[i] + (1.0 - b1) * g;
    state.second[i] = b2 * state.second[i] + (1.0 - b2) * g * g;
    const double m_hat = state.first[i] / c1;
    const double v_hat = state.second[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
  }
}

struct OptimizerState {
  std::size_t step = 0;
  std::vector<TensorState> weights;
  std::vector<TensorState> biases;
};

// Applies one optimizer step to every trainable tensor; frozen tensors are not
// touched at all (weight decay included).
inline void optimizer_step(FeedforwardClassifier& model, const Gradients& grads,
                           OptimizerState& state, const OptimizerConfig& config,
                           const TrainableMask& mask) {
  if (grads.layers.size() != model.num_layers() ||
      mask.layers.size() != model.num_layers())
    throw ShapeError("optimizer_step: gradient/mask layer count mismatch");
  if (state.weights.empty()) {
    state.weights.resize(model.num_layers());
    state.biases.resize(model.num_layers());
  }
  if (state.weights.size() != model.num_layers())
    throw ShapeError("optimizer_step: state layer count mismatch");
  ++state.step;
  auto& layers = model.mutable_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (mask.layers[l].weights)
      update_tensor(layers[l].weights.data(), grads.layers[l].weights.data(),
                    state.weights[l], config, state.step);
    if (mask.layers[l].biases)
      update_tensor(layers[l].biases, grads.layers[l].biases, state.biases[l], config,
                    state.step);
  }
}

}  // namespace novelty
