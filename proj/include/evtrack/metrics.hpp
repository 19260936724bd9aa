// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evtrack/bbox.hpp"
#include "evtrack/frame_builder.hpp"

namespace evtrack::metrics {

inline constexpr double kPrecisionThresholdPx = 20.0;

/// IoU thresholds 0, 0.05, ..., 1.
std::vector<double> success_thresholds();
/// Normalized error thresholds 0, 0.005, ..., 0.5.
std::vector<double> normalized_thresholds();

/// Mean over thresholds of the fraction of frames with IoU > 0 and IoU >= thr.
double success_rate(std::span<const double> ious);
/// Fraction of frames with center error <= 20 px.
double precision(std::span<const double> center_errors);
/// Mean over thresholds of the fraction of frames with normalized error <= thr.
double normalized_precision(std::span<const double> normalized_errors);

double center_error(const BBox& pred, const BBox& gt);
/// Center error divided by the diagonal of the ground-truth box.
double normalized_center_error(const BBox& pred, const BBox& gt);

/// One tracked frame as written to the box file.
struct FrameRecord {
  std::size_t k = 0;
  BBox box;
  std::size_t halting_layer = 12;
  std::optional<frames::Density> selected;
};

struct MetricsReport {
  double sr = 0.0;
  double pr = 0.0;
  double npr = 0.0;
  double fps = 0.0;
  std::size_t frames = 0;
  double mean_halting_layer = 0.0;
  std::array<std::size_t, 6> halting_histogram{};  // layers 7..12
  std::array<std::size_t, 3> expert_selection_counts{};  // dense, medium, sparse
  std::size_t no_selection = 0;

  std::string to_json() const;
};

/// Frames are scored against `gt[frame.k]`. `timing_us` is empty or one
/// entry per frame; FPS is 0 without timing.
MetricsReport evaluate(std::span<const FrameRecord> frames, std::span<const BBox> gt,
                       std::span<const double> timing_us = {});

}  // namespace evtrack::metrics
