// SPDX-License-Identifier: Apache-2.0
#include "evtrack/frame_builder.hpp"

#include <algorithm>
#include <cmath>

#include "evtrack/error.hpp"

namespace evtrack::frames {

namespace {

// floor(n / d) and ceil(n / d) for d > 0.
std::int64_t floor_div(std::int64_t n, std::int64_t d) {
  const std::int64_t q = n / d;
  return (n % d != 0 && n < 0) ? q - 1 : q;
}
std::int64_t ceil_div(std::int64_t n, std::int64_t d) {
  const std::int64_t q = n / d;
  return (n % d != 0 && n > 0) ? q + 1 : q;
}

// [c - q*dt/4, c + q*dt/4] rounded inward, clipped to [0, duration].
Interval window(std::int64_t c, std::int64_t dt, std::int64_t quarters, std::int64_t duration) {
  Interval w{ceil_div(4 * c - quarters * dt, 4), floor_div(4 * c + quarters * dt, 4)};
  w.lo = std::max<std::int64_t>(w.lo, 0);
  w.hi = std::min(w.hi, duration);
  return w;
}

}  // namespace

SegmentWindows segment_windows(std::int64_t center, std::int64_t dt, std::int64_t duration) {
  if (dt <= 0) throw InvalidArgument("segment length dt must be positive");
  return {center, window(center, dt, 1, duration), window(center, dt, 2, duration),
          window(center, dt, 3, duration)};
}

std::int64_t segment_center(std::size_t k, std::int64_t dt) {
  return static_cast<std::int64_t>(k) * dt + dt / 2;
}

std::size_t segment_count(const events::EventStream& stream, std::int64_t dt) {
  if (dt <= 0) throw InvalidArgument("segment length dt must be positive");
  return static_cast<std::size_t>(stream.duration_us / static_cast<std::uint64_t>(dt));
}

const char* name(Density d) {
  switch (d) {
    case Density::dense: return "dense";
    case Density::medium: return "medium";
    case Density::sparse: return "sparse";
  }
  return "?";
}

Density density_from_name(std::string_view s) {
  for (Density d : kAllDensities) {
    if (s == name(d)) return d;
  }
  throw InvalidArgument("unknown density '" + std::string(s) + "'");
}

const EventFrame& FrameTriplet::get(Density d) const {
  switch (d) {
    case Density::dense: return dense;
    case Density::medium: return medium;
    case Density::sparse: return sparse;
  }
  throw InvalidArgument("bad density");
}

EventFrame accumulate(const events::EventStream& stream, const Interval& window) {
  const std::size_t W = stream.sensor_w;
  const std::size_t H = stream.sensor_h;
  EventFrame f{nn::Tensor({3, H, W}), 0};
  if (window.empty()) return f;

  const auto by_time = [](const events::Event& e, std::int64_t t) {
    return static_cast<std::int64_t>(e.t) < t;
  };
  const auto first = std::lower_bound(stream.events.begin(), stream.events.end(), window.lo, by_time);
  const auto last = std::lower_bound(first, stream.events.end(), window.hi + 1, by_time);

  auto data = f.planes.data();
  float* pos = data.data();
  float* neg = pos + H * W;
  float* recency = neg + H * W;
  const double span = static_cast<double>(window.hi - window.lo);
  for (auto it = first; it != last; ++it) {
    const std::size_t i = std::size_t{it->y} * W + it->x;
    (it->p > 0 ? pos : neg)[i] += 1.0f;
    const float r =
        span > 0.0 ? static_cast<float>(static_cast<double>(static_cast<std::int64_t>(it->t) - window.lo) / span)
                   : 1.0f;
    recency[i] = std::max(recency[i], r);
  }
  f.density = static_cast<std::size_t>(last - first);
  return f;
}

FrameTriplet build_triplet(const events::EventStream& stream, const SegmentWindows& w) {
  return {accumulate(stream, w.sparse), accumulate(stream, w.medium), accumulate(stream, w.dense)};
}

EventFrame normalized(const EventFrame& frame) {
  EventFrame out = frame;
  auto data = out.planes.data();
  const std::size_t plane = frame.width() * frame.height();
  for (std::size_t i = 0; i < 2 * plane; ++i) data[i] = std::min(data[i], 255.0f) / 255.0f;
  return out;
}

Crop crop_resize(const EventFrame& frame, const BBox& box, double context_factor,
                 std::size_t out_size) {
  if (!(box.w > 0.0) || !(box.h > 0.0)) throw InvalidArgument("crop_resize: degenerate box");
  if (!(context_factor > 0.0)) throw InvalidArgument("crop_resize: context factor must be > 0");
  if (out_size == 0) throw InvalidArgument("crop_resize: output size must be > 0");

  const double side = context_factor * std::sqrt(box.w * box.h);
  Crop c;
  c.scale = side / static_cast<double>(out_size);
  c.offset_x = box.cx() - 0.5 * side;
  c.offset_y = box.cy() - 0.5 * side;
  c.pixels = nn::Tensor({3, out_size, out_size});

  const auto W = static_cast<std::int64_t>(frame.width());
  const auto H = static_cast<std::int64_t>(frame.height());
  const auto src = frame.planes.data();
  auto dst = c.pixels.data();

  // Source pixel j covers [j, j+1); its value sits at j + 0.5.
  auto sample = [&](std::size_t ch, double sx, double sy) -> float {
    const double fx = sx - 0.5;
    const double fy = sy - 0.5;
    const auto x0 = static_cast<std::int64_t>(std::floor(fx));
    const auto y0 = static_cast<std::int64_t>(std::floor(fy));
    const double ax = fx - static_cast<double>(x0);
    const double ay = fy - static_cast<double>(y0);
    const float* p = src.data() + ch * static_cast<std::size_t>(W * H);
    auto at = [&](std::int64_t x, std::int64_t y) -> double {
      if (x < 0 || y < 0 || x >= W || y >= H) return 0.0;
      return p[y * W + x];
    };
    double v = 0.0;
    if (ax < 1.0 && ay < 1.0) v += (1.0 - ax) * (1.0 - ay) * at(x0, y0);
    if (ax > 0.0 && ay < 1.0) v += ax * (1.0 - ay) * at(x0 + 1, y0);
    if (ax < 1.0 && ay > 0.0) v += (1.0 - ax) * ay * at(x0, y0 + 1);
    if (ax > 0.0 && ay > 0.0) v += ax * ay * at(x0 + 1, y0 + 1);
    return static_cast<float>(v);
  };

  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t v = 0; v < out_size; ++v) {
      const double sy = c.offset_y + c.scale * (static_cast<double>(v) + 0.5);
      for (std::size_t u = 0; u < out_size; ++u) {
        const double sx = c.offset_x + c.scale * (static_cast<double>(u) + 0.5);
        dst[(ch * out_size + v) * out_size + u] = sample(ch, sx, sy);
      }
    }
  }
  return c;
}

}  // namespace evtrack::frames
