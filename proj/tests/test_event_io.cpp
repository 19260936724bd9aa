// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "evtrack/error.hpp"
#include "evtrack/event_io.hpp"
#include "evtrack/nn/rng.hpp"

namespace evtrack::events {
namespace {

EventStream random_stream(std::uint64_t seed, std::size_t n) {
  nn::Rng rng(seed);
  EventStream s;
  s.sensor_w = 64;
  s.sensor_h = 48;
  s.duration_us = 100000;
  for (std::size_t i = 0; i < n; ++i) {
    s.events.push_back({rng.uniform_int(s.duration_us + 1), static_cast<std::uint16_t>(rng.uniform_int(64)),
                        static_cast<std::uint16_t>(rng.uniform_int(48)),
                        static_cast<std::int8_t>(rng.uniform_int(2) ? 1 : -1)});
  }
  std::stable_sort(s.events.begin(), s.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return s;
}

EventStream parse(const std::string& text) {
  std::istringstream in(text);
  return parse_text(in);
}

TEST(EventText, SingleEvent) {
  const auto s = parse("# evt1 64 64 1000\n10 3 5 1\n");
  ASSERT_EQ(s.events.size(), 1u);
  EXPECT_EQ(s.events[0], (Event{10, 3, 5, 1}));
  EXPECT_EQ(s.sensor_w, 64);
  EXPECT_EQ(s.duration_us, 1000u);
}

TEST(EventText, EmptyBody) {
  const auto s = parse("# evt1 64 64 1000\n");
  EXPECT_TRUE(s.events.empty());
  EXPECT_EQ(s.duration_us, 1000u);
}

TEST(EventText, UnsortedInputIsSorted) {
  const auto s = parse("# evt1 64 64 1000\n20 1 1 1\n10 2 2 -1\n");
  ASSERT_EQ(s.events.size(), 2u);
  EXPECT_EQ(s.events[0].t, 10u);
  EXPECT_EQ(s.events[1].t, 20u);
}

TEST(EventText, ErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text) {
    try {
      parse(text);
    } catch (const FormatError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  EXPECT_EQ(line_of("# evt1 64 64 1000\n10 3 5 1\n10 3 5\n"), 3u);
  EXPECT_EQ(line_of("# evt1 64 64 1000\n10 3 5 2\n"), 2u);
  EXPECT_EQ(line_of("# evt1 64 64 1000\n10 64 5 1\n"), 2u);
  EXPECT_EQ(line_of("# evt1 64 64 1000\n1001 3 5 1\n"), 2u);
  EXPECT_EQ(line_of("# evt1 64 64 1000\n10 3 5 1 7\n"), 2u);
  EXPECT_EQ(line_of("# evt1 64 64 1000\n# evt1 64 64 1000\n"), 2u);
  EXPECT_THROW(parse("10 3 5 1\n"), FormatError);
  EXPECT_THROW(parse(""), FormatError);
}

TEST(EventText, RoundTripIsLossless) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = random_stream(seed, 500);
    std::ostringstream out;
    write_text(s, out);
    EXPECT_EQ(parse(out.str()), s);
  }
}

TEST(EventBinary, RoundTripIsByteIdentical) {
  const auto s = random_stream(7, 1000);
  std::ostringstream a;
  write_binary(s, a);
  std::istringstream in(a.str());
  const auto back = parse_binary(in);
  EXPECT_EQ(back, s);
  std::ostringstream b;
  write_binary(back, b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(EventBinary, TextAndBinaryAgree) {
  const auto s = random_stream(3, 300);
  std::ostringstream t, b;
  write_text(s, t);
  write_binary(s, b);
  std::istringstream bin(b.str());
  EXPECT_EQ(parse(t.str()), parse_binary(bin));
}

TEST(EventBinary, VersionMismatch) {
  const auto s = random_stream(1, 10);
  std::ostringstream b;
  write_binary(s, b);
  std::string bytes = b.str();
  ASSERT_EQ(bytes.substr(0, 4), "EVB1");
  bytes[3] = '0';
  std::istringstream in(bytes);
  EXPECT_THROW(parse_binary(in), VersionError);
}

TEST(EventBinary, RejectsCorruptInput) {
  const auto s = random_stream(2, 10);
  std::ostringstream b;
  write_binary(s, b);
  const std::string bytes = b.str();
  {
    std::istringstream in("XXXX" + bytes.substr(4));
    EXPECT_THROW(parse_binary(in), FormatError);
  }
  {
    std::istringstream in(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(parse_binary(in), FormatError);
  }
  {
    std::istringstream in(bytes + "x");
    EXPECT_THROW(parse_binary(in), FormatError);
  }
}

TEST(EventBinary, RejectsUnsortedRecords) {
  EventStream s;
  s.sensor_w = s.sensor_h = 8;
  s.duration_us = 100;
  s.events = {{20, 1, 1, 1}, {10, 1, 1, 1}};
  std::ostringstream b;
  write_binary(s, b);
  std::istringstream in(b.str());
  EXPECT_THROW(parse_binary(in), FormatError);
}

TEST(EventIo, LoadDetectsFormat) {
  const auto dir = std::filesystem::temp_directory_path() / "evtrack_io_test";
  std::filesystem::create_directories(dir);
  const auto s = random_stream(5, 100);
  write_text(s, dir / "e.txt");
  write_binary(s, dir / "e.evb");
  EXPECT_EQ(load(dir / "e.txt"), s);
  EXPECT_EQ(load(dir / "e.evb"), s);
  std::filesystem::remove_all(dir);
}

TEST(GroundTruthIo, RoundTrip) {
  GroundTruth gt;
  gt.boxes = {{1.5, 2.25, 10, 12}, {0.1, 0.2, 0.3, 0.4}, {100.0 / 3.0, 7, 8, 9}};
  std::ostringstream out;
  write_ground_truth(gt, out);
  std::istringstream in(out.str());
  EXPECT_EQ(parse_ground_truth(in), gt);
}

TEST(GroundTruthIo, RequiresSequentialIndices) {
  std::istringstream in("0 1 1 2 2\n2 1 1 2 2\n");
  EXPECT_THROW(parse_ground_truth(in), FormatError);
}

SceneSpec small_spec() {
  SceneSpec spec;
  spec.sensor_w = 64;
  spec.sensor_h = 64;
  spec.duration_us = 200000;
  spec.target_w = spec.target_h = 12;
  spec.trajectory = bouncing_trajectory(spec, 100.0);
  return spec;
}

TEST(Synthetic, ZeroRatesGiveEmptyStreamWithBoxes) {
  SceneSpec spec = small_spec();
  spec.edge_rate = 0.0;
  spec.noise_rate = 0.0;
  const auto [s, gt] = generate_synthetic(spec, 1);
  EXPECT_TRUE(s.events.empty());
  EXPECT_EQ(gt.boxes.size(), spec.duration_us / spec.segment_us);
}

TEST(Synthetic, DeterministicInSeed) {
  const SceneSpec spec = small_spec();
  const auto a = generate_synthetic(spec, 9);
  const auto b = generate_synthetic(spec, 9);
  const auto c = generate_synthetic(spec, 10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.first, c.first);
}

TEST(Synthetic, SortedAndInBounds) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto [s, gt] = generate_synthetic(small_spec(), seed);
    EXPECT_NO_THROW(validate(s));
    EXPECT_TRUE(std::is_sorted(s.events.begin(), s.events.end(),
                               [](const Event& a, const Event& b) { return a.t < b.t; }));
    for (const auto& e : s.events) {
      ASSERT_LT(e.x, s.sensor_w);
      ASSERT_LT(e.y, s.sensor_h);
      ASSERT_LE(e.t, s.duration_us);
    }
  }
}

TEST(Synthetic, BackgroundCountMatchesPoissonMean) {
  SceneSpec spec;
  spec.sensor_w = spec.sensor_h = 64;
  spec.duration_us = 1'000'000;
  spec.edge_rate = 0.0;
  spec.noise_rate = 0.001;
  spec.trajectory = {{0, 32, 32}};
  const auto [s, gt] = generate_synthetic(spec, 4);
  const double mean = 0.001 * 64 * 64 * 1e6;
  EXPECT_LT(std::abs(static_cast<double>(s.events.size()) - mean), 5.0 * std::sqrt(mean));
}

TEST(Synthetic, GroundTruthFollowsTarget) {
  const SceneSpec spec = small_spec();
  const auto [s, gt] = generate_synthetic(spec, 2);
  for (std::size_t k = 0; k < gt.boxes.size(); ++k) {
    const double t = static_cast<double>(k * spec.segment_us + spec.segment_us / 2);
    EXPECT_EQ(gt.boxes[k], target_box(spec, t));
    EXPECT_EQ(gt.boxes[k].w, 12.0);
  }
}

TEST(Synthetic, RejectsTrajectoryOutsideSensor) {
  SceneSpec spec = small_spec();
  spec.trajectory = {{0, 2, 2}};
  EXPECT_THROW(generate_synthetic(spec, 0), InvalidArgument);
}

TEST(BoxIou, KnownValues) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 20}), 0.5);
  EXPECT_EQ(iou({0, 0, 1, 1}, {2, 0, 1, 1}), 0.0);
  EXPECT_EQ(iou({0, 0, 1, 1}, {1, 0, 1, 1}), 0.0);
  nn::Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const BBox b{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(0.1, 30), rng.uniform(0.1, 30)};
    EXPECT_EQ(iou(b, b), 1.0);
  }
}

}  // namespace
}  // namespace evtrack::events
