// SPDX-License-Identifier: Apache-2.0
#include "evtrack/dps.hpp"

#include <cmath>
#include <string>

#include "evtrack/error.hpp"
#include "evtrack/nn/ops.hpp"

namespace evtrack::dps {

double halting_prob(const nn::Tensor& features, const HaltingPredictor& p) {
  const nn::Tensor pooled = nn::global_avg_pool(features);
  if (p.weight.size() != pooled.size() || p.bias.size() != 1) {
    throw ShapeError("halting_prob: predictor " + nn::to_string(p.weight.dims()) +
                     " does not match features " + nn::to_string(features.dims()));
  }
  double z = p.bias[0];
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    z += static_cast<double>(p.weight[i]) * static_cast<double>(pooled[i]);
  }
  if (!std::isfinite(z)) throw NonFiniteError("halting_prob: non-finite logit");
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

HaltingController::HaltingController(std::size_t start_layer, std::size_t final_layer)
    : start_(start_layer), final_(final_layer), next_(start_layer) {
  if (start_layer < 1 || start_layer > final_layer) {
    throw InvalidArgument("halting controller: start layer must be in [1, final layer]");
  }
}

Decision HaltingController::step(double prob) {
  if (halted_) throw StateError("halting controller: step() after halt");
  if (!(prob >= 0.0 && prob <= 1.0)) throw InvalidArgument("halting probability outside [0, 1]");
  cumulative_ += prob;
  probs_.push_back(prob);
  cumulative_trace_.push_back(cumulative_);
  if (cumulative_ >= 1.0 || next_ == final_) {
    halted_ = true;
    return Decision::halt;
  }
  ++next_;
  return Decision::proceed;
}

HaltingRecord HaltingController::record() const {
  if (!halted_) throw StateError("halting controller: record() before halt");
  HaltingRecord r;
  r.start_layer = start_;
  r.final_layer = final_;
  r.probs = probs_;
  r.cumulative = cumulative_trace_;
  r.halting_layer = next_;
  r.weights = aggregation_weights(probs_, start_, next_);
  return r;
}

std::vector<double> aggregation_weights(std::span<const double> probs, std::size_t start_layer,
                                        std::size_t halting_layer) {
  if (halting_layer < start_layer) throw InvalidArgument("aggregate: halting layer before start");
  const std::size_t n = halting_layer - start_layer + 1;
  if (probs.size() < n - 1) throw InvalidArgument("aggregate: not enough halting probabilities");
  std::vector<double> w(n);
  double used = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    w[i] = probs[i];
    used += probs[i];
  }
  const double remainder = 1.0 - used;
  // The controller halts as soon as the sum reaches 1, so the layers before
  // the halt always leave a positive remainder.
  if (remainder < 0.0) {
    throw InvalidArgument("aggregate: negative remainder " + std::to_string(remainder));
  }
  w[n - 1] = remainder;
  return w;
}

nn::Tensor aggregate(std::span<const nn::Tensor> features, std::span<const double> weights) {
  if (features.empty() || features.size() != weights.size()) {
    throw ShapeError("aggregate: " + std::to_string(features.size()) + " features vs " +
                     std::to_string(weights.size()) + " weights");
  }
  const nn::Shape& shape = features.front().dims();
  std::vector<double> acc(features.front().size(), 0.0);
  for (std::size_t l = 0; l < features.size(); ++l) {
    if (features[l].dims() != shape) throw ShapeError("aggregate: layer feature shapes differ");
    const auto f = features[l].data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weights[l] * static_cast<double>(f[i]);
  }
  nn::Tensor out(shape);
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);
  return out;
}

HaltingRecord disabled_record(std::size_t start_layer, std::size_t final_layer) {
  HaltingRecord r;
  r.start_layer = start_layer;
  r.final_layer = final_layer;
  r.halting_layer = final_layer;
  return r;
}

double ponder_loss(std::size_t halting_layer, std::size_t start_layer, std::size_t final_layer) {
  if (halting_layer < start_layer || halting_layer > final_layer) {
    throw InvalidArgument("ponder_loss: halting layer " + std::to_string(halting_layer) +
                          " outside [" + std::to_string(start_layer) + ", " +
                          std::to_string(final_layer) + "]");
  }
  return static_cast<double>(halting_layer) - static_cast<double>(start_layer - 1);
}

}  // namespace evtrack::dps
