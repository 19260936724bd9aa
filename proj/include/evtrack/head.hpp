// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "evtrack/bbox.hpp"
#include "evtrack/frame_builder.hpp"
#include "evtrack/model_config.hpp"
#include "evtrack/nn/tensor.hpp"
#include "evtrack/weights.hpp"

namespace evtrack::head {

/// Maps on the search feature grid F x F.
struct HeadOutput {
  nn::Tensor score;   // [1, F, F]
  nn::Tensor offset;  // [2, F, F], (dx, dy) within the cell
  nn::Tensor size;    // [2, F, F], (w, h) as a fraction of the search crop side

  std::size_t grid() const { return score.dim(1); }
};

/// fused [F*F, D] -> three Conv-BN-ReLU stacks with sigmoid outputs.
HeadOutput head_forward(const nn::Tensor& fused, const ModelWeights& weights, const ModelConfig& config);

struct Decoded {
  BBox crop_box;    // search crop pixels
  BBox sensor_box;  // sensor pixels
  std::size_t peak_row = 0;
  std::size_t peak_col = 0;
  float peak_score = 0.0f;
  /// The score map had no positive value; the box sits at the map center.
  bool fallback = false;
};

/// Peak cell is the row-major first maximum of the score map.
Decoded decode_box(const HeadOutput& out, const frames::Crop& crop, std::size_t patch);

/// Maps that decode exactly to `crop_box` (crop pixels): one-hot score at
/// the cell containing the center, offset and size at that cell.
HeadOutput encode_ideal(const BBox& crop_box, std::size_t grid, std::size_t patch);

/// Gaussian radius (in cells) for a box of `height` x `width` cells such that
/// a corner shift by the radius keeps IoU >= min_overlap.
double gaussian_radius(double height, double width, double min_overlap = 0.7);

struct Targets {
  nn::Tensor heatmap;  // [1, F, F] Gaussian peaked at the center cell
  std::size_t row = 0;
  std::size_t col = 0;
  float offset[2]{};
  float size[2]{};
};

/// Training targets of a box given in search crop pixels.
Targets encode_targets(const BBox& crop_box, std::size_t grid, std::size_t patch);

}  // namespace evtrack::head
