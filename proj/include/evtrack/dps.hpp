// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "evtrack/nn/tensor.hpp"

namespace evtrack::dps {

/// Per-frame trace of the halting controller. Index i of `probs` and
/// `cumulative` refers to layer start_layer + i.
struct HaltingRecord {
  std::size_t start_layer = 7;
  std::size_t final_layer = 12;
  std::vector<double> probs;
  std::vector<double> cumulative;
  std::size_t halting_layer = 12;
  std::vector<double> weights;  // aggregation weight per layer start..halting

  friend bool operator==(const HaltingRecord&, const HaltingRecord&) = default;
};

/// Halting predictor parameters: weight [1, D], bias [1].
struct HaltingPredictor {
  const nn::Tensor& weight;
  const nn::Tensor& bias;
};

/// sigmoid(w . GAP(features) + b) over the full token sequence [N, D].
double halting_prob(const nn::Tensor& features, const HaltingPredictor& predictor);

enum class Decision { proceed, halt };

/// Cumulative halting: C_p starts at 0 before `start_layer`, each step adds
/// the layer's probability, and the controller halts once C_p >= 1 or the
/// final layer is reached.
class HaltingController {
 public:
  HaltingController(std::size_t start_layer, std::size_t final_layer);

  /// Feeds the probability of the next layer. Throws StateError after a halt.
  Decision step(double prob);

  bool halted() const { return halted_; }
  /// Layer that the next step() refers to.
  std::size_t next_layer() const { return next_; }
  double cumulative() const { return cumulative_; }
  /// Completed record including aggregation weights. Requires halted().
  HaltingRecord record() const;

 private:
  std::size_t start_;
  std::size_t final_;
  std::size_t next_;
  double cumulative_ = 0.0;
  bool halted_ = false;
  std::vector<double> probs_;
  std::vector<double> cumulative_trace_;
};

/// Aggregation weights for layers start..halting_layer: the layer's own
/// probability for every layer before the halt and the remainder
/// 1 - sum(previous) at the halting layer. Sums to 1.
std::vector<double> aggregation_weights(std::span<const double> probs, std::size_t start_layer,
                                        std::size_t halting_layer);

/// F_o = sum_i w_i F_i, accumulated in double per element.
nn::Tensor aggregate(std::span<const nn::Tensor> features, std::span<const double> weights);

/// Record of a run that never halts early: layer `final_layer`, no probabilities,
/// all weight on the last layer.
HaltingRecord disabled_record(std::size_t start_layer, std::size_t final_layer);

/// Number of executed layers after the controller starts: L - (start - 1).
double ponder_loss(std::size_t halting_layer, std::size_t start_layer = 7,
                   std::size_t final_layer = 12);

}  // namespace evtrack::dps
