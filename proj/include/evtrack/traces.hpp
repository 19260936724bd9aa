// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "evtrack/dps.hpp"
#include "evtrack/metrics.hpp"
#include "evtrack/sa_moe.hpp"
#include "evtrack/tracker.hpp"

namespace evtrack::traces {

/// Box file: `k x y w h L selected_density` per frame (`none` without SA-MoE).
void write_boxes(const tracker::TrackResult& r, std::ostream& out);
std::vector<metrics::FrameRecord> read_boxes(std::istream& in);
std::vector<metrics::FrameRecord> read_boxes(const std::filesystem::path& path);

/// Halting trace: `frame L C_p...` per frame.
struct HaltingLine {
  std::size_t frame = 0;
  std::size_t halting_layer = 12;
  std::vector<double> cumulative;
};
void write_halting(const tracker::TrackResult& r, std::ostream& out);
std::vector<HaltingLine> read_halting(std::istream& in);

/// Routing trace: `frame layer K logits[0..K) selected` per executed SA-MoE layer.
struct RoutingLine {
  std::size_t frame = 0;
  std::size_t layer = 0;
  std::size_t active = 0;
  std::vector<double> logits;
  frames::Density selected = frames::Density::dense;
};
void write_routing(const tracker::TrackResult& r, std::ostream& out);
std::vector<RoutingLine> read_routing(std::istream& in);

/// Timing sidecar: `frame microseconds` per frame.
void write_timing(const tracker::TrackResult& r, std::ostream& out);
std::vector<double> read_timing(std::istream& in);

}  // namespace evtrack::traces
