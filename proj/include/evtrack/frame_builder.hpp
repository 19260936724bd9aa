// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "evtrack/bbox.hpp"
#include "evtrack/event_io.hpp"
#include "evtrack/nn/tensor.hpp"

namespace evtrack::frames {

/// Closed integer interval [lo, hi] in microseconds. Empty when lo > hi.
struct Interval {
  std::int64_t lo = 0;
  std::int64_t hi = -1;

  bool empty() const { return lo > hi; }
  bool contains(std::int64_t t) const { return lo <= t && t <= hi; }
  bool contains(const Interval& o) const { return o.empty() || (lo <= o.lo && o.hi <= hi); }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// The three nested accumulation windows of one temporal segment.
struct SegmentWindows {
  std::int64_t center = 0;
  Interval sparse;  // half-width dt/4
  Interval medium;  // half-width dt/2
  Interval dense;   // half-width 3dt/4
};

/// Windows of width dt/2, dt and 3dt/2 centered at `center`, with fractional
/// bounds rounded inward and clipped to [0, duration].
SegmentWindows segment_windows(std::int64_t center, std::int64_t dt, std::int64_t duration);

/// Center time of segment k: k*dt + dt/2 (integer division).
std::int64_t segment_center(std::size_t k, std::int64_t dt);

/// Number of whole segments in a stream.
std::size_t segment_count(const events::EventStream& stream, std::int64_t dt);

/// Stacked event frame. Planes (each H x W, row-major):
///   0: positive-event count, 1: negative-event count,
///   2: recency of the latest event, (t - lo) / (hi - lo) in [0, 1].
struct EventFrame {
  nn::Tensor planes;  // [3, H, W]
  std::size_t density = 0;

  std::size_t width() const { return planes.dim(2); }
  std::size_t height() const { return planes.dim(1); }
};

/// Network input encoding: count planes clipped at 255 and scaled to [0, 1];
/// the recency plane is kept as is.
EventFrame normalized(const EventFrame& frame);

enum class Density : std::uint8_t { dense = 0, medium = 1, sparse = 2 };
inline constexpr std::array<Density, 3> kAllDensities{Density::dense, Density::medium,
                                                      Density::sparse};
const char* name(Density d);
Density density_from_name(std::string_view s);

struct FrameTriplet {
  EventFrame sparse;
  EventFrame medium;
  EventFrame dense;

  const EventFrame& get(Density d) const;
};

/// Accumulates the events of a single closed interval.
EventFrame accumulate(const events::EventStream& stream, const Interval& window);

FrameTriplet build_triplet(const events::EventStream& stream, const SegmentWindows& windows);

/// A square resampled crop plus its affine map back to sensor coordinates:
///   sensor = offset + scale * crop   (continuous pixel coordinates).
struct Crop {
  nn::Tensor pixels;  // [3, S, S]
  double scale = 1.0;
  double offset_x = 0.0;
  double offset_y = 0.0;

  std::size_t size() const { return pixels.dim(1); }
  std::array<double, 2> to_sensor(double u, double v) const {
    return {offset_x + scale * u, offset_y + scale * v};
  }
  std::array<double, 2> to_crop(double x, double y) const {
    return {(x - offset_x) / scale, (y - offset_y) / scale};
  }
  BBox to_sensor(const BBox& b) const {
    return {offset_x + scale * b.x, offset_y + scale * b.y, scale * b.w, scale * b.h};
  }
};

inline constexpr std::size_t kTemplateSize = 128;
inline constexpr std::size_t kSearchSize = 256;
inline constexpr double kTemplateContext = 2.0;
inline constexpr double kSearchContext = 4.0;

/// Square crop of side context_factor * sqrt(w*h) centered on the box,
/// bilinearly resampled to out_size; area outside the frame reads as zero.
Crop crop_resize(const EventFrame& frame, const BBox& center_box, double context_factor,
                 std::size_t out_size);

}  // namespace evtrack::frames
