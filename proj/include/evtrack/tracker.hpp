// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "evtrack/backbone.hpp"
#include "evtrack/bbox.hpp"
#include "evtrack/dps.hpp"
#include "evtrack/event_io.hpp"
#include "evtrack/frame_builder.hpp"
#include "evtrack/metrics.hpp"
#include "evtrack/sa_moe.hpp"

namespace evtrack::tracker {

struct TrackerConfig {
  ModelConfig model;
  std::int64_t dt_us = 20000;
  double template_factor = frames::kTemplateContext;
  double search_factor = frames::kSearchContext;
  bool dps_enabled = true;
  bool moe_enabled = true;
  moe::RoutingMode routing = moe::RoutingMode::hard;
  /// Gumbel noise in routing, drawn from a generator seeded with `seed`.
  bool routing_noise = false;
  double tau = moe::kRoutingTemperature;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrackerConfig&, const TrackerConfig&) = default;
};

struct TrackerState {
  nn::Tensor template_tokens;  // [N_z, D]
  frames::Crop template_crop;
  BBox last_box;
  /// Segment 0 had no event in its medium window.
  bool template_empty = false;
};

/// Template from the medium-density frame of segment 0 around `box0`.
TrackerState init(const backbone::Backbone& net, const events::EventStream& stream, const BBox& box0,
                  const TrackerConfig& config);

struct FrameResult {
  BBox box;
  dps::HaltingRecord halting;
  std::vector<moe::RoutingRecord> routing;
  bool fallback = false;
};

/// Search crops of segment k around state.last_box; updates last_box.
FrameResult step(const backbone::Backbone& net, TrackerState& state, const events::EventStream& stream,
                 std::size_t k, const TrackerConfig& config, nn::Rng* rng);

struct TrackResult {
  std::vector<std::size_t> frames;  // segment index k of every entry
  std::vector<BBox> boxes;
  std::vector<dps::HaltingRecord> halting;
  std::vector<std::vector<moe::RoutingRecord>> routing;
  std::vector<bool> fallback;
  std::vector<double> timing_us;
  bool template_empty = false;

  std::size_t size() const { return frames.size(); }
  /// Density picked at the deepest executed SA-MoE layer of frame i.
  std::optional<frames::Density> selected(std::size_t i) const;
  std::vector<metrics::FrameRecord> records() const;
};

/// Everything but the timing.
bool same_outputs(const TrackResult& a, const TrackResult& b);

/// Tracks segments 1..n-1, n = min(segment count of the stream, gt boxes).
TrackResult track_sequence(const backbone::Backbone& net, const events::EventStream& stream,
                           const events::GroundTruth& gt, const TrackerConfig& config);

/// Keeps the size (capped at the sensor) and shifts the box inside the sensor.
BBox clamp_to_sensor(const BBox& box, double sensor_w, double sensor_h);

}  // namespace evtrack::tracker
