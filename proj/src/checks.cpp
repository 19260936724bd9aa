// SPDX-License-Identifier: Apache-2.0
#include "evtrack/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "evtrack/backbone.hpp"
#include "evtrack/dps.hpp"
#include "evtrack/error.hpp"
#include "evtrack/event_io.hpp"
#include "evtrack/frame_builder.hpp"
#include "evtrack/head.hpp"
#include "evtrack/losses.hpp"
#include "evtrack/metrics.hpp"
#include "evtrack/nn/rng.hpp"
#include "evtrack/sa_moe.hpp"
#include "evtrack/traces.hpp"
#include "evtrack/tracker.hpp"
#include "evtrack/weights.hpp"

namespace evtrack::checks {

using nn::Tensor;

namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

CheckResult finish(int id, const char* name, bool ok, const std::string& detail, const Stopwatch& sw) {
  return {id, name, ok, detail, sw.seconds()};
}

std::string num(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

Tensor random_tensor(nn::Rng& rng, nn::Shape dims, double lo, double hi) {
  Tensor t(std::move(dims));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Double-precision evaluation of an FFN with float parameters.
std::vector<double> ffn_f64(const moe::Ffn& f, std::span<const double> x) {
  const std::size_t h = f.hidden(), d = f.embed();
  std::vector<double> hidden(h);
  for (std::size_t i = 0; i < h; ++i) {
    double a = f.fc1_bias[i];
    for (std::size_t j = 0; j < d; ++j) a += static_cast<double>(f.fc1_weight(i, j)) * x[j];
    hidden[i] = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
  }
  std::vector<double> y(d);
  for (std::size_t r = 0; r < d; ++r) {
    double a = f.fc2_bias[r];
    for (std::size_t i = 0; i < h; ++i) a += static_cast<double>(f.fc2_weight(r, i)) * hidden[i];
    y[r] = a;
  }
  return y;
}

double norm2(std::span<const double> v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale < 1e-10 ? 0.0 : std::abs(a - b) / scale;
}

template <class F>
double fd_max_rel(std::vector<double> x, const std::vector<double>& analytic, F&& f, double step = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f(x);
    x[i] = keep - step;
    const double down = f(x);
    x[i] = keep;
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * step)));
  }
  return worst;
}

struct Sequence {
  events::EventStream stream;
  events::GroundTruth gt;
};

Sequence synthetic_sequence(std::size_t frames, std::uint64_t seed) {
  events::SceneSpec spec;
  spec.duration_us = frames * spec.segment_us;
  spec.trajectory = events::bouncing_trajectory(spec, 120.0);
  auto [stream, gt] = events::generate_synthetic(spec, seed);
  return {std::move(stream), std::move(gt)};
}

tracker::TrackerConfig tracker_config(const ModelConfig& model, bool dps, bool moe_on) {
  tracker::TrackerConfig c;
  c.model = model;
  c.dps_enabled = dps;
  c.moe_enabled = moe_on;
  return c;
}

std::string serialize(const tracker::TrackResult& r) {
  std::ostringstream os;
  traces::write_boxes(r, os);
  traces::write_halting(r, os);
  traces::write_routing(r, os);
  return os.str();
}

double mean_layer(const tracker::TrackResult& r) {
  double s = 0.0;
  for (const auto& h : r.halting) s += static_cast<double>(h.halting_layer);
  return s / static_cast<double>(r.size());
}

double fps(const tracker::TrackResult& r) {
  const double us = std::accumulate(r.timing_us.begin(), r.timing_us.end(), 0.0);
  return static_cast<double>(r.size()) / (us * 1e-6);
}

}  // namespace

CheckResult ffn_partition(const CheckOptions& opt) {
  Stopwatch sw;
  nn::Rng rng(opt.seed ^ 0x1);
  constexpr std::size_t kHidden[] = {6, 12, 48};
  constexpr std::size_t kEmbed[] = {4, 16};
  constexpr std::size_t kFfns = 100, kInputs = 100;
  double worst = 0.0;
  for (std::size_t n = 0; n < kFfns; ++n) {
    const std::size_t h = kHidden[n % 3], d = kEmbed[(n / 3) % 2];
    const moe::Ffn full{random_tensor(rng, {h, d}, -1, 1), random_tensor(rng, {h}, -1, 1),
                        random_tensor(rng, {d, h}, -1, 1), random_tensor(rng, {d}, -1, 1)};
    moe::ExpertSet set = moe::split_ffn(full);
    if (opt.mutate_bias_split) {
      for (auto& e : set.experts) e.fc2_bias = full.fc2_bias;
    }
    for (std::size_t t = 0; t < kInputs; ++t) {
      std::vector<double> x(d);
      for (double& v : x) v = rng.uniform(-2.0, 2.0);
      const auto ref = ffn_f64(full, x);
      std::vector<double> sum(d, 0.0), diff(d);
      for (const auto& e : set.experts) {
        const auto y = ffn_f64(e, x);
        for (std::size_t j = 0; j < d; ++j) sum[j] += y[j];
      }
      for (std::size_t j = 0; j < d; ++j) diff[j] = sum[j] - ref[j];
      worst = std::max(worst, norm2(diff) / (norm2(ref) + 1e-12));
    }
  }
  const double secs = sw.seconds();
  const bool ok = worst < 1e-6 && secs < 5.0;
  return finish(1, "ffn_partition", ok,
                std::to_string(kFfns) + " FFNs x " + std::to_string(kInputs) + " inputs, max rel err " + num(worst) +
                    " (< 1e-6), " + num(secs) + " s (< 5 s)",
                sw);
}

CheckResult dps_normalization(const CheckOptions& opt) {
  Stopwatch sw;
  nn::Rng rng(opt.seed ^ 0x2);
  constexpr double kScales[] = {1.0, 0.5, 0.25, 0.1, 0.02};
  constexpr std::size_t kTrials = 10000;
  std::array<std::size_t, 6> hist{};
  double worst_sum = 0.0;
  bool ok = true;
  std::string first_failure;
  for (std::size_t trial = 0; trial < kTrials && ok; ++trial) {
    const double scale = kScales[rng.uniform_int(5)];
    std::array<double, 6> p{};
    for (double& v : p) v = rng.uniform_open() * scale;

    // Running-sum oracle.
    std::vector<double> trace;
    std::size_t oracle_layer = 12;
    double c = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      c += p[i];
      trace.push_back(c);
      if (c >= 1.0 || i == 5) {
        oracle_layer = 7 + i;
        break;
      }
    }

    dps::HaltingController ctl(7, 12);
    for (std::size_t i = 0; i < 6; ++i) {
      if (ctl.step(p[i]) == dps::Decision::halt) break;
    }
    const dps::HaltingRecord rec = ctl.record();
    ++hist[rec.halting_layer - 7];
    double sum = 0.0;
    bool nonneg = true;
    for (double w : rec.weights) {
      sum += w;
      nonneg = nonneg && w >= 0.0;
    }
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    if (rec.halting_layer != oracle_layer || rec.cumulative != trace || !nonneg ||
        std::abs(sum - 1.0) > 1e-6 || rec.weights.size() != trace.size()) {
      ok = false;
      first_failure = "trial " + std::to_string(trial) + ": layer " + std::to_string(rec.halting_layer) +
                      " vs oracle " + std::to_string(oracle_layer);
    }
  }
  const double secs = sw.seconds();
  ok = ok && secs < 1.0;
  std::string detail = std::to_string(kTrials) + " trajectories, max |sum w - 1| " + num(worst_sum) +
                       ", halting layers 7..12: ";
  for (std::size_t i = 0; i < 6; ++i) detail += (i ? "/" : "") + std::to_string(hist[i]);
  detail += ", " + num(secs) + " s (< 1 s)";
  if (!first_failure.empty()) detail += "; " + first_failure;
  return finish(2, "dps_normalization", ok, detail, sw);
}

CheckResult ponder_schedule(const CheckOptions&) {
  Stopwatch sw;
  bool ok = true;
  for (std::size_t l = 7; l <= 12; ++l) ok = ok && dps::ponder_loss(l) == static_cast<double>(l) - 6.0;
  const double e_start = 10.0, e_total = 50.0;
  for (double alpha : {0.04, 0.06, 0.10}) {
    ok = ok && losses::lambda4(alpha, 0.0, e_start, e_total) == 0.0;
    ok = ok && losses::lambda4(alpha, e_start - 1.0, e_start, e_total) == 0.0;
    ok = ok && losses::lambda4(alpha, e_total, e_start, e_total) == 2.0 * alpha;
    ok = ok && losses::lambda4(alpha, 0.5 * (e_start + e_total), e_start, e_total) == alpha;
  }
  return finish(3, "ponder_schedule", ok,
                "L-6 for L in 7..12; lambda4 = 0 / 2a / a at e<e_start / e_total / midpoint for a in {0.04,0.06,0.10}",
                sw);
}

CheckResult window_nesting(const CheckOptions& opt) {
  Stopwatch sw;
  nn::Rng rng(opt.seed ^ 0x4);
  constexpr std::size_t kTrials = 1000;
  bool ok = true;
  std::string failure;
  std::size_t nonempty = 0;
  for (std::size_t trial = 0; trial < kTrials && ok; ++trial) {
    events::EventStream s;
    s.sensor_w = 16;
    s.sensor_h = 12;
    s.duration_us = 1 + rng.uniform_int(1'000'000);
    const std::size_t n = rng.uniform_int(400);
    for (std::size_t i = 0; i < n; ++i) {
      events::Event e;
      e.t = rng.uniform_int(s.duration_us + 1);
      e.x = static_cast<std::uint16_t>(rng.uniform_int(s.sensor_w));
      e.y = static_cast<std::uint16_t>(rng.uniform_int(s.sensor_h));
      e.p = rng.uniform_int(2) ? 1 : -1;
      s.events.push_back(e);
    }
    std::stable_sort(s.events.begin(), s.events.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    const auto dt = static_cast<std::int64_t>(1 + rng.uniform_int(100'000));
    const auto center = static_cast<std::int64_t>(rng.uniform_int(s.duration_us + 1));
    const auto w = frames::segment_windows(center, dt, static_cast<std::int64_t>(s.duration_us));
    const bool nested = w.dense.contains(w.medium) && w.medium.contains(w.sparse);

    std::array<std::size_t, 3> density{}, brute{};
    const frames::Interval* iv[3] = {&w.sparse, &w.medium, &w.dense};
    for (std::size_t i = 0; i < 3; ++i) {
      density[i] = frames::accumulate(s, *iv[i]).density;
      for (const auto& e : s.events) brute[i] += iv[i]->contains(static_cast<std::int64_t>(e.t)) ? 1 : 0;
    }
    nonempty += density[0] > 0 ? 1 : 0;
    if (!nested || density != brute || density[0] > density[1] || density[1] > density[2]) {
      ok = false;
      failure = "; trial " + std::to_string(trial) + " (center " + std::to_string(center) + ", dt " +
                std::to_string(dt) + ")";
    }
  }
  return finish(4, "window_nesting", ok,
                std::to_string(kTrials) + " random windows and streams, sparse within medium within dense, densities "
                                          "monotone and equal to brute-force counts (" +
                    std::to_string(nonempty) + " with non-empty sparse frames)" + failure,
                sw);
}

CheckResult token_accounting(const CheckOptions& opt) {
  Stopwatch sw;
  const ModelConfig& mc = opt.model;
  const ModelWeights weights = make_selftest_weights(mc, {opt.seed, 0.0f});
  const backbone::Backbone net(mc, weights);
  nn::Rng rng(opt.seed ^ 0x5);
  const Tensor z = random_tensor(rng, {mc.template_tokens(), mc.embed_dim}, -1, 1);
  std::array<Tensor, 3> x;
  for (auto& t : x) t = random_tensor(rng, {mc.search_tokens(), mc.embed_dim}, -1, 1);
  backbone::ForwardOptions fo;
  fo.dps_enabled = false;
  const auto res = net.forward(z, x, fo);

  std::vector<std::size_t> expected;
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < mc.layers_per_stage[s]; ++i) {
      expected.push_back(mc.template_tokens() + (s + 1) * mc.search_tokens());
    }
  }
  bool ok = res.sequence_lengths == expected;
  for (const auto& r : res.template_ranges) ok = ok && r == TokenRange{0, mc.template_tokens()};
  // Pinned values for the default geometry.
  if (mc.patch == 16 && mc.template_size == 128 && mc.search_size == 256) {
    ok = ok && expected.front() == 320 && expected[mc.layers_per_stage[0]] == 576 && expected.back() == 832;
  }
  std::string lens;
  for (std::size_t i = 0; i < res.sequence_lengths.size(); ++i) {
    lens += (i ? "," : "") + std::to_string(res.sequence_lengths[i]);
  }
  return finish(5, "token_accounting", ok,
                "sequence lengths per layer [" + lens + "], template range [0, " +
                    std::to_string(mc.template_tokens()) + ") at every layer",
                sw);
}

CheckResult routing_validity(const CheckOptions& opt) {
  Stopwatch sw;
  nn::Rng rng(opt.seed ^ 0x6);
  constexpr std::size_t kTrials = 10000, kDim = 8;
  const std::array<frames::Density, 3> order{frames::Density::dense, frames::Density::medium,
                                             frames::Density::sparse};
  bool ok = true;
  std::string failure;
  double worst_sum = 0.0;
  std::array<std::size_t, 3> picks{};
  for (std::size_t trial = 0; trial < kTrials && ok; ++trial) {
    moe::RouterParams router{random_tensor(rng, {kDim, 2 * kDim}, -2, 2), random_tensor(rng, {kDim}, -2, 2),
                             random_tensor(rng, {3, kDim}, -2, 2), random_tensor(rng, {3}, -2, 2)};
    const Tensor tpool = random_tensor(rng, {kDim}, -1, 1);
    const Tensor spool = random_tensor(rng, {kDim}, -1, 1);
    const std::size_t k = 1 + rng.uniform_int(3);
    const auto mode = trial % 2 ? moe::RoutingMode::soft : moe::RoutingMode::hard;
    const bool noisy = trial % 4 >= 2;
    nn::Rng noise(opt.seed + trial), noise_copy = noise;

    const auto rec = moe::route_pooled(tpool, spool, k, order, router, mode, noisy ? &noise : nullptr);
    double sum = 0.0;
    bool simplex = rec.mask.size() == k;
    std::size_t ones = 0, zeros = 0;
    for (float m : rec.mask) {
      simplex = simplex && m >= 0.0f && std::isfinite(m);
      sum += m;
      ones += m == 1.0f ? 1 : 0;
      zeros += m == 0.0f ? 1 : 0;
    }
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    simplex = simplex && std::abs(sum - 1.0) <= 1e-6;
    const bool one_hot = mode == moe::RoutingMode::soft || (ones == 1 && zeros == k - 1);
    const bool k1_dense = k != 1 || rec.selected == frames::Density::dense;

    moe::RouterParams perturbed = router;
    for (std::size_t r = k; r < 3; ++r) {
      for (std::size_t c = 0; c < kDim; ++c) perturbed.fc2_weight(r, c) = static_cast<float>(rng.uniform(-50, 50));
      perturbed.fc2_bias[r] = static_cast<float>(rng.uniform(-50, 50));
    }
    const auto rec2 =
        moe::route_pooled(tpool, spool, k, order, perturbed, mode, noisy ? &noise_copy : nullptr);
    const bool invariant = rec2.mask == rec.mask && rec2.selected == rec.selected;
    ++picks[static_cast<std::size_t>(rec.selected)];
    if (!(simplex && one_hot && k1_dense && invariant)) {
      ok = false;
      failure = "; trial " + std::to_string(trial) + (simplex ? "" : " not a simplex point") +
                (one_hot ? "" : " not one-hot") + (k1_dense ? "" : " K=1 did not pick dense") +
                (invariant ? "" : " decision changed by inactive logits");
    }
  }
  return finish(6, "routing_validity", ok,
                std::to_string(kTrials) + " trials (hard/soft, with and without noise), max |sum m - 1| " +
                    num(worst_sum) + ", selections dense/medium/sparse " + std::to_string(picks[0]) + "/" +
                    std::to_string(picks[1]) + "/" + std::to_string(picks[2]) + failure,
                sw);
}

CheckResult loss_gradients(const CheckOptions& opt) {
  Stopwatch sw;
  nn::Rng rng(opt.seed ^ 0x7);
  constexpr std::size_t kInstances = 100, kGrid = 8, kPatch = 16;
  constexpr double kTol = 1e-4, kKink = 1e-3;
  double worst_focal = 0.0, worst_l1 = 0.0, worst_giou = 0.0;

  for (std::size_t n = 0; n < kInstances; ++n) {
    const double side = kGrid * kPatch;
    const double w = rng.uniform(8, 64), h = rng.uniform(8, 64);
    const BBox box{rng.uniform(0, side - w), rng.uniform(0, side - h), w, h};
    const auto targets = head::encode_targets(box, kGrid, kPatch);
    std::vector<double> gt(targets.heatmap.data().begin(), targets.heatmap.data().end());
    std::vector<double> pred(gt.size());
    for (double& p : pred) p = rng.uniform(0.05, 0.95);
    const auto a = losses::focal_loss(pred, gt);
    worst_focal = std::max(worst_focal, fd_max_rel(pred, a.grad, [&](const std::vector<double>& p) {
                                           return losses::focal_loss(p, gt).value;
                                         }));
  }

  for (std::size_t n = 0; n < kInstances; ++n) {
    std::vector<double> pred(4), gt(4);
    for (std::size_t i = 0; i < 4; ++i) {
      do {
        pred[i] = rng.uniform(-1, 1);
        gt[i] = rng.uniform(-1, 1);
      } while (std::abs(pred[i] - gt[i]) < kKink);
    }
    const auto a = losses::l1_loss(pred, gt);
    worst_l1 = std::max(worst_l1, fd_max_rel(pred, a.grad, [&](const std::vector<double>& p) {
                                     return losses::l1_loss(p, gt).value;
                                   }));
  }

  std::size_t disjoint = 0;
  for (std::size_t n = 0; n < kInstances; ++n) {
    BBox p, g;
    for (;;) {
      g = {rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(2, 30), rng.uniform(2, 30)};
      p = {rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(2, 30), rng.uniform(2, 30)};
      const double iw = std::min(p.x + p.w, g.x + g.w) - std::max(p.x, g.x);
      const double ih = std::min(p.y + p.h, g.y + g.h) - std::max(p.y, g.y);
      const double gaps[] = {p.x - g.x, (p.x + p.w) - (g.x + g.w), p.y - g.y, (p.y + p.h) - (g.y + g.h), iw, ih};
      if (std::all_of(std::begin(gaps), std::end(gaps), [&](double v) { return std::abs(v) >= kKink; })) break;
    }
    disjoint += iou(p, g) == 0.0 ? 1 : 0;
    const auto a = losses::giou_loss(p, g);
    const std::vector<double> x{p.x, p.y, p.w, p.h};
    worst_giou = std::max(worst_giou, fd_max_rel(x, a.grad, [&](const std::vector<double>& v) {
                                         return losses::giou_loss({v[0], v[1], v[2], v[3]}, g).value;
                                       }));
  }

  const BBox b{3.0, 4.0, 5.0, 6.0};
  const auto same = losses::giou_loss(b, b);
  const bool identity_ok =
      same.value == 0.0 && std::all_of(same.grad.begin(), same.grad.end(), [](double v) { return v == 0.0; });
  const double far = losses::giou_loss({0, 0, 1, 1}, {2, 0, 1, 1}).value;
  const bool disjoint_ok = std::abs(far - 4.0 / 3.0) <= 1e-6;

  const double secs = sw.seconds();
  const bool ok = worst_focal <= kTol && worst_l1 <= kTol && worst_giou <= kTol && identity_ok && disjoint_ok &&
                  secs < 10.0;
  return finish(7, "loss_gradients", ok,
                "max rel err vs central differences: focal " + num(worst_focal) + ", l1 " + num(worst_l1) +
                    ", giou " + num(worst_giou) + " (<= 1e-4, " + std::to_string(disjoint) +
                    " disjoint giou cases); giou(b,b) " + num(same.value) + ", disjoint case " + num(far, 10) +
                    ", " + num(secs) + " s (< 10 s)",
                sw);
}

CheckResult end_to_end(const CheckOptions& opt) {
  Stopwatch sw;
  const ModelConfig& mc = opt.model;
  const Sequence seq = synthetic_sequence(opt.sequence_frames, opt.seed);
  const ModelWeights weights = make_selftest_weights(mc, {opt.seed, 0.0f});
  const backbone::Backbone net(mc, weights);

  double slowest = 0.0;
  auto run = [&](const backbone::Backbone& b, const tracker::TrackerConfig& cfg) {
    Stopwatch t;
    auto r = tracker::track_sequence(b, seq.stream, seq.gt, cfg);
    slowest = std::max(slowest, t.seconds());
    return r;
  };

  const auto first = run(net, tracker_config(mc, true, true));
  const auto second = run(net, tracker_config(mc, true, true));
  const bool deterministic = tracker::same_outputs(first, second) && serialize(first) == serialize(second);

  const auto full = run(net, tracker_config(mc, false, true));
  bool all_twelve = full.size() > 0;
  for (const auto& h : full.halting) all_twelve = all_twelve && h.halting_layer == mc.num_layers();

  ModelWeights zeroed = weights;
  for (std::size_t l = 1; l <= mc.num_layers(); ++l) {
    if (!mc.is_moe_layer(l)) continue;
    for (std::size_t e = 0; e < 3; ++e) {
      for (const char* leaf : {"fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"}) {
        auto& t = zeroed.mutable_tensor(names::expert(l, e, leaf));
        std::fill(t.data().begin(), t.data().end(), 0.0f);
      }
    }
  }
  const backbone::Backbone net_zero(mc, zeroed);
  const auto shared_only = run(net, tracker_config(mc, true, false));
  const auto zero_experts = run(net_zero, tracker_config(mc, true, true));
  bool routed = true;
  for (const auto& r : zero_experts.routing) routed = routed && !r.empty();
  bool unrouted = true;
  for (const auto& r : shared_only.routing) unrouted = unrouted && r.empty();
  const bool ablation = shared_only.boxes == zero_experts.boxes && shared_only.halting == zero_experts.halting &&
                        shared_only.fallback == zero_experts.fallback && routed && unrouted;

  const bool ok = deterministic && all_twelve && ablation && slowest < 60.0;
  return finish(8, "end_to_end", ok,
                std::to_string(first.size()) + " tracked frames at D=" + std::to_string(mc.embed_dim) +
                    ": rerun " + (deterministic ? "bit-identical" : "DIFFERS") + ", no-dps " +
                    (all_twelve ? "L=12 on all frames" : "has early halts") + ", no-moe vs zeroed experts " +
                    (ablation ? "bit-identical" : "DIFFERS") + ", mean L with DPS " + num(mean_layer(first)) +
                    ", slowest run " + num(slowest) + " s (< 60 s)",
                sw);
}

CheckResult metric_oracle(const CheckOptions& opt) {
  Stopwatch sw;
  // gt 10x10 at the origin; IoU 1, 0.5, 0 and center errors 0, 5, 20.
  const std::vector<BBox> gt(4, BBox{0, 0, 10, 10});
  const std::vector<metrics::FrameRecord> frames{
      {1, {0, 0, 10, 10}, 12, std::nullopt}, {2, {0, 0, 10, 20}, 12, std::nullopt},
      {3, {20, 0, 10, 10}, 12, std::nullopt}};
  const auto rep = metrics::evaluate(frames, gt);
  // SR: 21 + 11 + 0 successes over 21 thresholds x 3 frames.
  // NPR: normalized errors 0, 5/(10 sqrt 2), 20/(10 sqrt 2) pass 101 + 30 + 0 of 101 thresholds.
  const double sr = 32.0 / 63.0, pr = 1.0, npr = 131.0 / 303.0;
  bool ok = rep.sr == sr && rep.pr == pr && rep.npr == npr && rep.frames == 3 && rep.fps == 0.0;

  nn::Rng rng(opt.seed ^ 0x9);
  std::vector<BBox> truth;
  std::vector<metrics::FrameRecord> perfect;
  for (std::size_t k = 0; k < 10; ++k) {
    truth.push_back({rng.uniform(0, 200), rng.uniform(0, 150), rng.uniform(5, 40), rng.uniform(5, 40)});
    if (k > 0) perfect.push_back({k, truth.back(), 12, std::nullopt});
  }
  const auto best = metrics::evaluate(perfect, truth);
  ok = ok && best.sr == 1.0 && best.pr == 1.0 && best.npr == 1.0;
  return finish(9, "metric_oracle", ok,
                "hand case SR " + num(rep.sr, 17) + " (32/63), PR " + num(rep.pr) + ", NPR " + num(rep.npr, 17) +
                    " (131/303); perfect tracking SR/PR/NPR " + num(best.sr) + "/" + num(best.pr) + "/" +
                    num(best.npr),
                sw);
}

CheckResult dps_efficiency(const CheckOptions& opt) {
  Stopwatch sw;
  const ModelConfig& mc = opt.model;
  const Sequence seq = synthetic_sequence(opt.efficiency_frames, opt.seed + 1);
  const ModelWeights weights = make_selftest_weights(mc, {opt.seed, 2.0f});
  const backbone::Backbone net(mc, weights);
  const auto dynamic = tracker::track_sequence(net, seq.stream, seq.gt, tracker_config(mc, true, true));
  const auto forced = tracker::track_sequence(net, seq.stream, seq.gt, tracker_config(mc, false, true));
  const double layers = mean_layer(dynamic), fps_dyn = fps(dynamic), fps_full = fps(forced);
  const bool ok = layers < 12.0 && fps_dyn > fps_full;
  return finish(10, "dps_efficiency", ok,
                "halting bias +2: mean executed layers " + num(layers) + " (< 12), FPS " + num(fps_dyn) +
                    " vs " + num(fps_full) + " with L=12 forced",
                sw);
}

std::vector<CheckResult> run_acceptance(const CheckOptions& opt,
                                        const std::function<void(const CheckResult&)>& on_result) {
  using Fn = CheckResult (*)(const CheckOptions&);
  constexpr Fn kChecks[] = {ffn_partition,    dps_normalization, ponder_schedule, window_nesting,
                            token_accounting, routing_validity,  loss_gradients,  end_to_end,
                            metric_oracle,    dps_efficiency};
  const char* names[] = {"ffn_partition",    "dps_normalization", "ponder_schedule", "window_nesting",
                         "token_accounting", "routing_validity",  "loss_gradients",  "end_to_end",
                         "metric_oracle",    "dps_efficiency"};
  std::vector<CheckResult> out;
  for (std::size_t i = 0; i < std::size(kChecks); ++i) {
    CheckResult r;
    try {
      r = kChecks[i](opt);
    } catch (const std::exception& e) {
      r = {static_cast<int>(i + 1), names[i], false, std::string("exception: ") + e.what(), 0.0};
    }
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  }
  return out;
}

CheckResult mutation_detected(const CheckOptions& opt) {
  Stopwatch sw;
  CheckOptions mutated = opt;
  mutated.mutate_bias_split = true;
  const CheckResult r = ffn_partition(mutated);
  return finish(11, "bias_split_mutation", !r.passed,
                std::string("partition check with b2* = b2 ") + (r.passed ? "still passes" : "fails") + ": " +
                    r.detail,
                sw);
}

CheckResult corruption_detected(const CheckOptions& opt) {
  Stopwatch sw;
  ModelConfig small;
  small.embed_dim = 24;
  small.head_channels = 8;
  const ModelWeights w = make_selftest_weights(small, {opt.seed, 0.0f});
  std::ostringstream os;
  w.save(os);
  const std::string clean = os.str();

  auto loads = [&](const std::string& bytes) {
    try {
      std::istringstream in(bytes);
      ModelWeights::load(in).audit(small);
      return true;
    } catch (const Error&) {
      return false;
    }
  };
  std::string payload = clean;
  payload[payload.size() / 2] = static_cast<char>(payload[payload.size() / 2] ^ 0x01);
  // First dim of the first tensor: magic, version, count, name length, name, rank.
  const std::size_t name_len = static_cast<unsigned char>(clean[12]) | (static_cast<unsigned char>(clean[13]) << 8);
  std::string shape = clean;
  shape[14 + name_len + 1] = static_cast<char>(shape[14 + name_len + 1] ^ 0x01);

  const bool clean_ok = loads(clean), payload_rejected = !loads(payload), shape_rejected = !loads(shape);
  return finish(12, "weight_corruption", clean_ok && payload_rejected && shape_rejected,
                std::string("clean file ") + (clean_ok ? "loads" : "REJECTED") + ", payload byte flip " +
                    (payload_rejected ? "rejected" : "ACCEPTED") + ", shape byte flip " +
                    (shape_rejected ? "rejected" : "ACCEPTED"),
                sw);
}

std::string format(const CheckResult& r) {
  std::ostringstream os;
  os << (r.passed ? "PASS" : "FAIL") << ' ' << std::setw(2) << r.id << ' ' << r.name << " (" << std::fixed
     << std::setprecision(3) << r.seconds << " s): " << r.detail;
  return os.str();
}

}  // namespace evtrack::checks
