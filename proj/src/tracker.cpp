// SPDX-License-Identifier: Apache-2.0
#include "evtrack/tracker.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "evtrack/error.hpp"
#include "evtrack/head.hpp"

namespace evtrack::tracker {

void TrackerConfig::validate() const {
  model.validate();
  if (dt_us <= 0) throw InvalidArgument("dt_us must be positive");
  if (!(template_factor > 0.0) || !(search_factor > 0.0)) throw InvalidArgument("context factors must be positive");
  if (!(tau > 0.0)) throw InvalidArgument("tau must be positive");
}

BBox clamp_to_sensor(const BBox& b, double sw, double sh) {
  if (!std::isfinite(b.x) || !std::isfinite(b.y) || !std::isfinite(b.w) || !std::isfinite(b.h)) {
    throw NonFiniteError("clamp_to_sensor: non-finite box");
  }
  const double w = std::clamp(b.w, 1.0, sw), h = std::clamp(b.h, 1.0, sh);
  return {std::clamp(b.x, 0.0, sw - w), std::clamp(b.y, 0.0, sh - h), w, h};
}

TrackerState init(const backbone::Backbone& net, const events::EventStream& stream, const BBox& box0,
                  const TrackerConfig& config) {
  if (!box0.valid()) throw InvalidArgument("init: invalid initial box");
  if (config.model != net.config()) throw InvalidArgument("init: tracker and backbone configs differ");
  const auto windows = frames::segment_windows(frames::segment_center(0, config.dt_us), config.dt_us,
                                               static_cast<std::int64_t>(stream.duration_us));
  const frames::EventFrame medium = frames::accumulate(stream, windows.medium);
  TrackerState s;
  s.template_empty = medium.density == 0;
  s.template_crop = frames::crop_resize(frames::normalized(medium), box0, config.template_factor,
                                        config.model.template_size);
  s.template_tokens =
      backbone::patch_embed(s.template_crop, net.weights(), net.config(), backbone::CropKind::template_crop);
  s.last_box = box0;
  return s;
}

FrameResult step(const backbone::Backbone& net, TrackerState& state, const events::EventStream& stream,
                 std::size_t k, const TrackerConfig& config, nn::Rng* rng) {
  const ModelConfig& mc = net.config();
  const auto windows = frames::segment_windows(frames::segment_center(k, config.dt_us), config.dt_us,
                                               static_cast<std::int64_t>(stream.duration_us));
  const frames::FrameTriplet triplet = frames::build_triplet(stream, windows);

  std::array<frames::Crop, 3> crops;
  std::array<nn::Tensor, 3> tokens;
  for (frames::Density d : frames::kAllDensities) {
    const auto i = static_cast<std::size_t>(d);
    crops[i] = frames::crop_resize(frames::normalized(triplet.get(d)), state.last_box, config.search_factor,
                                   mc.search_size);
    tokens[i] = backbone::patch_embed(crops[i], net.weights(), mc, backbone::CropKind::search);
  }

  backbone::ForwardOptions opt;
  opt.moe_enabled = config.moe_enabled;
  opt.dps_enabled = config.dps_enabled;
  opt.routing = config.routing;
  opt.rng = rng;
  opt.tau = config.tau;
  backbone::ForwardResult fwd = net.forward(state.template_tokens, tokens, opt);

  const head::HeadOutput maps = head::head_forward(fwd.fused, net.weights(), mc);
  const head::Decoded dec = head::decode_box(maps, crops[0], mc.patch);

  FrameResult r;
  r.box = clamp_to_sensor(dec.sensor_box, stream.sensor_w, stream.sensor_h);
  r.halting = std::move(fwd.halting);
  r.routing = std::move(fwd.routing);
  r.fallback = dec.fallback;
  state.last_box = r.box;
  return r;
}

std::optional<frames::Density> TrackResult::selected(std::size_t i) const {
  if (routing.at(i).empty()) return std::nullopt;
  return routing[i].back().selected;
}

std::vector<metrics::FrameRecord> TrackResult::records() const {
  std::vector<metrics::FrameRecord> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back({frames[i], boxes[i], halting[i].halting_layer, selected(i)});
  return out;
}

bool same_outputs(const TrackResult& a, const TrackResult& b) {
  return a.frames == b.frames && a.boxes == b.boxes && a.halting == b.halting && a.routing == b.routing &&
         a.fallback == b.fallback && a.template_empty == b.template_empty;
}

TrackResult track_sequence(const backbone::Backbone& net, const events::EventStream& stream,
                           const events::GroundTruth& gt, const TrackerConfig& config) {
  config.validate();
  if (gt.boxes.empty()) throw InvalidArgument("track_sequence: empty ground truth");
  const std::size_t n = std::min(frames::segment_count(stream, config.dt_us), gt.segment_count());
  if (n == 0) throw InvalidArgument("track_sequence: stream shorter than one segment");

  nn::Rng rng(config.seed);
  nn::Rng* noise = config.routing_noise ? &rng : nullptr;
  TrackerState state = init(net, stream, gt.boxes[0], config);

  TrackResult res;
  res.template_empty = state.template_empty;
  for (std::size_t k = 1; k < n; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    FrameResult fr = step(net, state, stream, k, config, noise);
    const auto t1 = std::chrono::steady_clock::now();
    res.frames.push_back(k);
    res.boxes.push_back(fr.box);
    res.halting.push_back(std::move(fr.halting));
    res.routing.push_back(std::move(fr.routing));
    res.fallback.push_back(fr.fallback);
    res.timing_us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  return res;
}

}  // namespace evtrack::tracker
