#pragma once

#include <cmath>
#include <functional>
#include <limits>

#include "novelty/errors.hpp"
#include "novelty/losses.hpp"
#include "novelty/nn.hpp"

namespace novelty {

// Loss as a function of the logits of one batch: value and d(value)/d(logits).
using LogitLoss = std::function<LossGrad(const Matrix& logits)>;

// Gradients smaller than this are compared in absolute terms.
inline constexpr double kGradcheckFloor = 1e-6;

// Compares backward() against central differences over every parameter and
// returns the worst |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double finite_difference_check(const FeedforwardClassifier& model,
                                      const Matrix& batch, const LogitLoss& loss,
                                      double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2))
    throw ArgumentError("finite_difference_check: epsilon must be in (0, 1e-2]");
  auto fwd = forward(model, batch);
  const auto analytic_loss = loss(fwd.logits);
  const Gradients analytic =
      backward(model, fwd.cache, analytic_loss.grad, all_trainable(model));

  FeedforwardClassifier probe = model;
  auto value_at = [&] { return loss(predict_logits(probe, batch)).value; };

  double worst = 0.0;
  auto compare = [&](double a, double n) {
    const double denom = std::max({std::abs(a), std::abs(n), kGradcheckFloor});
    worst = std::max(worst, std::abs(a - n) / denom);
  };
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const std::size_t nw = model.layers()[l].weights.size();
    for (std::size_t i = 0; i < nw; ++i) {
      const double orig = probe.layers()[l].weights.data()[i];
      probe.mutable_layers()[l].weights.data()[i] = orig + epsilon;
      const double up = value_at();
      probe.mutable_layers()[l].weights.data()[i] = orig - epsilon;
      const double down = value_at();
      probe.mutable_layers()[l].weights.data()[i] = orig;
      compare(analytic.layers[l].weights.data()[i], (up - down) / (2.0 * epsilon));
    }
    const std::size_t nb = model.layers()[l].biases.size();
    for (std::size_t i = 0; i < nb; ++i) {
      const double orig = probe.layers()[l].biases[i];
      probe.mutable_layers()[l].biases[i] = orig + epsilon;
      const double up = value_at();
      probe.mutable_layers()[l].biases[i] = orig - epsilon;
      const double down = value_at();
      probe.mutable_layers()[l].biases[i] = orig;
      compare(analytic.layers[l].biases[i], (up - down) / (2.0 * epsilon));
    }
  }
  return worst;
}

// Smallest |pre-activation| over all relu units for this batch. Central
// differences are unreliable when this is below the step size.
inline double min_relu_margin(const FeedforwardClassifier& model, const Matrix& batch) {
  const auto fwd = forward(model, batch);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < model.num_layers(); ++l)
    if (model.layers()[l].activation == Activation::kRelu)
      for (double z : fwd.cache.pre_activations[l].data())
        margin = std::min(margin, std::abs(z));
  return margin;
}

}  // namespace novelty
