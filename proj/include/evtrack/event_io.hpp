// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "evtrack/bbox.hpp"

namespace evtrack::events {

/// One asynchronous camera event. Timestamps are integer microseconds.
struct Event {
  std::uint64_t t = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;  // +1 brightness increase, -1 decrease

  friend bool operator==(const Event&, const Event&) = default;
};

/// Time-ordered events from one sensor over [0, duration_us].
struct EventStream {
  std::vector<Event> events;
  std::uint16_t sensor_w = 0;
  std::uint16_t sensor_h = 0;
  std::uint64_t duration_us = 0;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

/// Throws FormatError if the stream breaks any EventStream invariant.
void validate(const EventStream& stream);

/// Annotation carrier: one box per temporal segment.
struct GroundTruth {
  std::vector<BBox> boxes;

  std::size_t segment_count() const { return boxes.size(); }
  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

// Text format: `# evt1 <W> <H> <T_us>` header, `#` comments, then `t x y p` per line.
EventStream parse_text(std::istream& in);
EventStream parse_text(const std::filesystem::path& path);
void write_text(const EventStream& stream, std::ostream& out);
void write_text(const EventStream& stream, const std::filesystem::path& path);

// Binary format: "EVB1", u16 W, u16 H, u64 T_us, u64 count, 16-byte records
// (u64 t, u16 x, u16 y, i8 p, 3 zero bytes). All little-endian.
EventStream parse_binary(std::istream& in);
EventStream parse_binary(const std::filesystem::path& path);
void write_binary(const EventStream& stream, std::ostream& out);
void write_binary(const EventStream& stream, const std::filesystem::path& path);

/// Picks the parser from the leading bytes ("EVB" prefix means binary).
EventStream load(const std::filesystem::path& path);

// Ground truth: one `k x y w h` line per segment, `#` comments allowed.
GroundTruth parse_ground_truth(std::istream& in);
GroundTruth parse_ground_truth(const std::filesystem::path& path);
void write_ground_truth(const GroundTruth& gt, std::ostream& out);
void write_ground_truth(const GroundTruth& gt, const std::filesystem::path& path);

struct Waypoint {
  std::uint64_t t_us = 0;
  double cx = 0.0;  // target center, pixels
  double cy = 0.0;
};

/// Synthetic scene: a rectangular target moving along piecewise-linear
/// waypoints, emitting edge events, over uniform background noise.
struct SceneSpec {
  std::uint16_t sensor_w = 240;
  std::uint16_t sensor_h = 180;
  std::uint64_t duration_us = 1'000'000;
  std::uint64_t segment_us = 20'000;
  std::vector<Waypoint> trajectory;
  std::uint16_t target_w = 24;
  std::uint16_t target_h = 24;
  double edge_rate = 2e-4;  // events per microsecond per perimeter pixel
  double noise_rate = 1e-6;  // events per microsecond per sensor pixel
};

/// Target center at time t (held constant outside the waypoint span).
std::pair<double, double> target_center(const SceneSpec& spec, double t_us);

/// Target box (top-left + size) at time t.
BBox target_box(const SceneSpec& spec, double t_us);

/// Pure function of (spec, seed). Ground truth holds the target box at each
/// segment center k*segment_us + segment_us/2 for k < duration/segment.
std::pair<EventStream, GroundTruth> generate_synthetic(const SceneSpec& spec, std::uint64_t seed);

/// Bouncing trajectory used by the `gen` command: starts near the sensor
/// center and moves at `speed_px_s`, reflecting off a margin of half the
/// target size. One waypoint per segment boundary.
std::vector<Waypoint> bouncing_trajectory(const SceneSpec& spec, double speed_px_s);

}  // namespace evtrack::events
