// SPDX-License-Identifier: Apache-2.0
// evtrack: synthetic data generation, tracking, evaluation and self-test.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "evtrack/backbone.hpp"
#include "evtrack/checks.hpp"
#include "evtrack/config.hpp"
#include "evtrack/error.hpp"
#include "evtrack/event_io.hpp"
#include "evtrack/metrics.hpp"
#include "evtrack/nn/simd.hpp"
#include "evtrack/traces.hpp"
#include "evtrack/tracker.hpp"
#include "evtrack/weights.hpp"

namespace fs = std::filesystem;
using namespace evtrack;

namespace {

struct GenArgs {
  fs::path out;
  std::uint64_t seed = 1;
  std::size_t frames = 50;
  std::string sensor = "240x180";
  std::uint64_t dt_us = 20000;
  double noise = 1e-6;
  double speed = 120.0;
  double edge_rate = 2e-4;
  std::size_t target = 24;
};

struct TrackArgs {
  fs::path events, gt, weights, config, out;
  bool no_dps = false;
  bool no_moe = false;
};

struct EvalArgs {
  fs::path boxes, gt, report, timing;
};

struct InspectArgs {
  fs::path halting, routing, weights, config;
};

struct InitArgs {
  fs::path out, config;
  std::uint64_t seed = 0;
  float halting_bias = 0.0f;
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + p.string() + "' for writing");
  return f;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error("cannot open '" + p.string() + "' for reading");
  return f;
}

config::RunConfig load_config(const fs::path& p) { return p.empty() ? config::RunConfig{} : config::load(p); }

int cmd_gen(const GenArgs& a) {
  unsigned w = 0, h = 0;
  char x = 0;
  if (std::sscanf(a.sensor.c_str(), "%u%c%u", &w, &x, &h) != 3 || x != 'x' || w == 0 || h == 0 || w > 65535 ||
      h > 65535) {
    throw InvalidArgument("--sensor expects WxH, got '" + a.sensor + "'");
  }
  if (a.frames == 0 || a.dt_us == 0) throw InvalidArgument("--frames and --dt-us must be positive");
  events::SceneSpec spec;
  spec.sensor_w = static_cast<std::uint16_t>(w);
  spec.sensor_h = static_cast<std::uint16_t>(h);
  spec.segment_us = a.dt_us;
  spec.duration_us = a.frames * a.dt_us;
  spec.noise_rate = a.noise;
  spec.edge_rate = a.edge_rate;
  spec.target_w = spec.target_h = static_cast<std::uint16_t>(a.target);
  spec.trajectory = events::bouncing_trajectory(spec, a.speed);
  const auto [stream, gt] = events::generate_synthetic(spec, a.seed);

  fs::create_directories(a.out);
  events::write_text(stream, a.out / "events.txt");
  events::write_binary(stream, a.out / "events.evb");
  events::write_ground_truth(gt, a.out / "gt.txt");
  std::cout << "wrote " << stream.events.size() << " events and " << gt.boxes.size() << " boxes to "
            << a.out.string() << "\n";
  return 0;
}

int cmd_track(const TrackArgs& a) {
  config::RunConfig cfg = load_config(a.config);
  if (a.no_dps) cfg.tracker.dps_enabled = false;
  if (a.no_moe) cfg.tracker.moe_enabled = false;
  const auto stream = events::load(a.events);
  const auto gt = events::parse_ground_truth(a.gt);
  const ModelWeights weights = ModelWeights::load(a.weights, cfg.tracker.model);
  const backbone::Backbone net(cfg.tracker.model, weights);
  const auto result = tracker::track_sequence(net, stream, gt, cfg.tracker);

  fs::create_directories(a.out);
  {
    auto f = open_out(a.out / "boxes.txt");
    traces::write_boxes(result, f);
  }
  {
    auto f = open_out(a.out / "halting.txt");
    traces::write_halting(result, f);
  }
  {
    auto f = open_out(a.out / "routing.txt");
    traces::write_routing(result, f);
  }
  {
    auto f = open_out(a.out / "timing.txt");
    traces::write_timing(result, f);
  }
  std::size_t fallbacks = 0;
  for (bool b : result.fallback) fallbacks += b ? 1 : 0;
  if (result.template_empty) std::cerr << "evtrack: warning: empty segment-0 medium frame, zero template\n";
  if (fallbacks) std::cerr << "evtrack: warning: " << fallbacks << " frames decoded at the map center\n";
  std::cout << "tracked " << result.size() << " frames (isa " << nn::simd::name(nn::simd::active_isa()) << ")\n";
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  const auto frames = traces::read_boxes(a.boxes);
  const auto gt = events::parse_ground_truth(a.gt);
  std::vector<double> timing;
  if (!a.timing.empty()) {
    auto f = open_in(a.timing);
    timing = traces::read_timing(f);
  }
  const auto report = metrics::evaluate(frames, gt.boxes, timing);
  const std::string json = report.to_json();
  if (!a.report.empty()) {
    auto f = open_out(a.report);
    f << json;
  }
  std::cout << json;
  return 0;
}

int cmd_inspect(const InspectArgs& a) {
  bool any = false;
  if (!a.halting.empty()) {
    any = true;
    auto f = open_in(a.halting);
    const auto lines = traces::read_halting(f);
    std::map<std::size_t, std::size_t> hist;
    double sum = 0.0;
    for (const auto& l : lines) {
      ++hist[l.halting_layer];
      sum += static_cast<double>(l.halting_layer);
    }
    std::cout << "halting: " << lines.size() << " frames, mean L "
              << (lines.empty() ? 0.0 : sum / static_cast<double>(lines.size())) << "\n";
    for (std::size_t l = 7; l <= 12; ++l) std::cout << "  L=" << l << " " << hist[l] << "\n";
  }
  if (!a.routing.empty()) {
    any = true;
    auto f = open_in(a.routing);
    const auto lines = traces::read_routing(f);
    std::map<std::size_t, std::map<std::string, std::size_t>> by_layer;
    for (const auto& l : lines) ++by_layer[l.layer][frames::name(l.selected)];
    std::cout << "routing: " << lines.size() << " decisions\n";
    for (const auto& [layer, counts] : by_layer) {
      std::cout << "  layer " << layer << ":";
      for (const auto& [name, n] : counts) std::cout << " " << name << "=" << n;
      std::cout << "\n";
    }
  }
  if (!a.weights.empty()) {
    any = true;
    const auto cfg = load_config(a.config);
    const ModelWeights w = ModelWeights::load(a.weights);
    std::size_t params = 0;
    for (const auto& [name, t] : w.tensors()) params += t.size();
    std::cout << "weights: " << w.size() << " tensors, " << params << " parameters\n";
    w.audit(cfg.tracker.model);
    std::cout << "  audit against config: ok\n";
  }
  if (!a.config.empty() && a.weights.empty()) {
    any = true;
    std::cout << config::to_text(load_config(a.config));
  }
  if (!any) throw InvalidArgument("inspect needs --halting, --routing, --weights or --config");
  return 0;
}

int cmd_selftest() {
  checks::CheckOptions opt;
  bool ok = true;
  auto report = [&](const checks::CheckResult& r) {
    std::cout << checks::format(r) << std::endl;
    ok = ok && r.passed;
  };
  checks::run_acceptance(opt, report);
  report(checks::mutation_detected(opt));
  report(checks::corruption_detected(opt));
  std::cout << (ok ? "selftest: all checks passed" : "selftest: FAILED") << std::endl;
  return ok ? 0 : 1;
}

int cmd_init(const InitArgs& a) {
  const auto cfg = load_config(a.config);
  const ModelWeights w = make_selftest_weights(cfg.tracker.model, {a.seed, a.halting_bias});
  w.save(a.out);
  std::cout << "wrote " << w.size() << " tensors to " << a.out.string() << "\n";
  return 0;
}

const char* kind(const std::exception& e) {
  if (dynamic_cast<const VersionError*>(&e)) return "version";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const InvalidArgument*>(&e)) return "argument";
  if (dynamic_cast<const NonFiniteError*>(&e)) return "non-finite";
  if (dynamic_cast<const StateError*>(&e)) return "state";
  if (dynamic_cast<const Error*>(&e)) return "io";
  return "internal";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-camera single-object tracker"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic event sequence with ground truth");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Random seed");
  g->add_option("--frames", gen.frames, "Number of segments");
  g->add_option("--sensor", gen.sensor, "Sensor size WxH");
  g->add_option("--dt-us", gen.dt_us, "Segment length in microseconds");
  g->add_option("--noise", gen.noise, "Background events per microsecond per pixel");
  g->add_option("--speed", gen.speed, "Target speed in pixels per second");
  g->add_option("--edge-rate", gen.edge_rate, "Edge events per microsecond per perimeter pixel");
  g->add_option("--target", gen.target, "Target side in pixels")->check(CLI::Range(2, 4096));

  TrackArgs track;
  auto* t = app.add_subcommand("track", "Track the target through an event sequence");
  t->add_option("--events", track.events, "Event file (text or binary)")->required()->check(CLI::ExistingFile);
  t->add_option("--gt", track.gt, "Ground-truth file (box 0 initializes)")->required()->check(CLI::ExistingFile);
  t->add_option("--weights", track.weights, "Weight file")->required()->check(CLI::ExistingFile);
  t->add_option("--config", track.config, "key = value config file")->check(CLI::ExistingFile);
  t->add_flag("--no-dps", track.no_dps, "Run all layers");
  t->add_flag("--no-moe", track.no_moe, "Use the shared FFN only");
  t->add_option("--out", track.out, "Output directory")->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score a box file against ground truth");
  e->add_option("--boxes", eval.boxes, "Box file from track")->required()->check(CLI::ExistingFile);
  e->add_option("--gt", eval.gt, "Ground-truth file")->required()->check(CLI::ExistingFile);
  e->add_option("--report", eval.report, "JSON report path");
  e->add_option("--timing", eval.timing, "Timing file from track (enables FPS)")->check(CLI::ExistingFile);

  InspectArgs inspect;
  auto* i = app.add_subcommand("inspect", "Summarize traces, weights or a config");
  i->add_option("--halting", inspect.halting, "Halting trace")->check(CLI::ExistingFile);
  i->add_option("--routing", inspect.routing, "Routing trace")->check(CLI::ExistingFile);
  i->add_option("--weights", inspect.weights, "Weight file")->check(CLI::ExistingFile);
  i->add_option("--config", inspect.config, "Config file")->check(CLI::ExistingFile);

  auto* s = app.add_subcommand("selftest", "Run the acceptance checks");

  InitArgs init;
  auto* w = app.add_subcommand("init-weights", "Write seeded shape-correct weights");
  w->add_option("--out", init.out, "Weight file")->required();
  w->add_option("--config", init.config, "Config file")->check(CLI::ExistingFile);
  w->add_option("--seed", init.seed, "Random seed");
  w->add_option("--halting-bias", init.halting_bias, "Bias of every halting predictor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_track(track);
    if (*e) return cmd_eval(eval);
    if (*i) return cmd_inspect(inspect);
    if (*s) return cmd_selftest();
    if (*w) return cmd_init(init);
  } catch (const std::exception& ex) {
    std::cerr << "evtrack: error: " << kind(ex) << ": " << ex.what() << "\n";
    return 1;
  }
  return 2;
}
