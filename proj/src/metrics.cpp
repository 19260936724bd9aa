// SPDX-License-Identifier: Apache-2.0
#include "evtrack/metrics.hpp"

#include <cmath>
#include <json.hpp>

#include "evtrack/error.hpp"

namespace evtrack::metrics {

std::vector<double> success_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 20; ++i) t.push_back(i / 20.0);
  return t;
}

std::vector<double> normalized_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 100; ++i) t.push_back(i / 200.0);
  return t;
}

double success_rate(std::span<const double> ious) {
  if (ious.empty()) throw InvalidArgument("success_rate: empty sequence");
  const auto thr = success_thresholds();
  std::size_t hits = 0;
  for (double t : thr) {
    for (double v : ious) hits += (v > 0.0 && v >= t) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(thr.size() * ious.size());
}

double precision(std::span<const double> errs) {
  if (errs.empty()) throw InvalidArgument("precision: empty sequence");
  std::size_t hits = 0;
  for (double e : errs) hits += e <= kPrecisionThresholdPx ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(errs.size());
}

double normalized_precision(std::span<const double> errs) {
  if (errs.empty()) throw InvalidArgument("normalized_precision: empty sequence");
  const auto thr = normalized_thresholds();
  std::size_t hits = 0;
  for (double t : thr) {
    for (double e : errs) hits += e <= t ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(thr.size() * errs.size());
}

double center_error(const BBox& p, const BBox& g) { return std::hypot(p.cx() - g.cx(), p.cy() - g.cy()); }

double normalized_center_error(const BBox& p, const BBox& g) {
  if (!g.valid()) throw InvalidArgument("normalized_center_error: degenerate ground-truth box");
  return center_error(p, g) / std::hypot(g.w, g.h);
}

MetricsReport evaluate(std::span<const FrameRecord> frames, std::span<const BBox> gt,
                       std::span<const double> timing_us) {
  if (frames.empty()) throw InvalidArgument("evaluate: empty sequence");
  if (!timing_us.empty() && timing_us.size() != frames.size()) {
    throw InvalidArgument("evaluate: timing has " + std::to_string(timing_us.size()) + " entries for " +
                          std::to_string(frames.size()) + " frames");
  }
  std::vector<double> ious, errs, nerrs;
  MetricsReport r;
  double layer_sum = 0.0;
  for (const FrameRecord& f : frames) {
    if (f.k >= gt.size()) {
      throw InvalidArgument("evaluate: frame " + std::to_string(f.k) + " has no ground truth (" +
                            std::to_string(gt.size()) + " boxes)");
    }
    const BBox& g = gt[f.k];
    ious.push_back(iou(f.box, g));
    errs.push_back(center_error(f.box, g));
    nerrs.push_back(normalized_center_error(f.box, g));
    if (f.halting_layer < 7 || f.halting_layer > 12) {
      throw InvalidArgument("evaluate: halting layer " + std::to_string(f.halting_layer) + " outside [7, 12]");
    }
    ++r.halting_histogram[f.halting_layer - 7];
    layer_sum += static_cast<double>(f.halting_layer);
    if (f.selected) {
      ++r.expert_selection_counts[static_cast<std::size_t>(*f.selected)];
    } else {
      ++r.no_selection;
    }
  }
  r.frames = frames.size();
  r.sr = success_rate(ious);
  r.pr = precision(errs);
  r.npr = normalized_precision(nerrs);
  r.mean_halting_layer = layer_sum / static_cast<double>(r.frames);
  double total_us = 0.0;
  for (double t : timing_us) total_us += t;
  r.fps = total_us > 0.0 ? static_cast<double>(r.frames) / (total_us * 1e-6) : 0.0;
  return r;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["sr"] = sr;
  j["pr"] = pr;
  j["npr"] = npr;
  j["fps"] = fps;
  j["frames"] = frames;
  j["mean_halting_layer"] = mean_halting_layer;
  nlohmann::ordered_json hist;
  for (std::size_t i = 0; i < halting_histogram.size(); ++i) hist[std::to_string(7 + i)] = halting_histogram[i];
  j["halting_histogram"] = hist;
  nlohmann::ordered_json experts;
  for (evtrack::frames::Density d : evtrack::frames::kAllDensities) {
    experts[std::string(evtrack::frames::name(d))] = expert_selection_counts[static_cast<std::size_t>(d)];
  }
  experts["none"] = no_selection;
  j["expert_selection_counts"] = experts;
  return j.dump(2) + "\n";
}

}  // namespace evtrack::metrics
