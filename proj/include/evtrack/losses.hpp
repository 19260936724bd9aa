// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "evtrack/bbox.hpp"

namespace evtrack::losses {

/// Scalar loss plus the gradient with respect to the prediction.
struct LossGrad {
  double value = 0.0;
  std::vector<double> grad;
};

inline constexpr double kFocalAlpha = 2.0;
inline constexpr double kFocalBeta = 4.0;

/// Center-point focal loss over a post-sigmoid score map and a Gaussian
/// target (peaks exactly 1). Normalized by the number of peaks (at least 1).
/// Scores must lie strictly inside (0, 1).
LossGrad focal_loss(std::span<const double> pred, std::span<const double> gt);

/// Mean absolute error; the subgradient at equality is 0.
LossGrad l1_loss(std::span<const double> pred, std::span<const double> gt);

/// 1 - GIoU for two (x, y, w, h) boxes; gradient order is (x, y, w, h) of `pred`.
/// Throws InvalidArgument on a degenerate box.
LossGrad giou_loss(const BBox& pred, const BBox& gt);

struct LossWeights {
  double l1 = 1.0;  // focal
  double l2 = 5.0;  // L1
  double l3 = 2.0;  // GIoU
  double alpha = 0.04;
  double e = 0.0;
  double e_start = 10.0;
  double e_total = 50.0;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// alpha (1 - cos(pi R)) with R = 0 before e_start and (e - e_start) /
/// (e_total - e_start) after.
double lambda4(double alpha, double e, double e_start, double e_total);

struct LossComponents {
  double focal = 0.0;
  double l1 = 0.0;
  double giou = 0.0;
};

/// l1 focal + l2 L1 + l3 GIoU + lambda4 (L - 6).
double total_loss(const LossComponents& c, const LossWeights& w, std::size_t halting_layer);

}  // namespace evtrack::losses
