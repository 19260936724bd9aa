// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "evtrack/error.hpp"
#include "evtrack/frame_builder.hpp"
#include "evtrack/nn/rng.hpp"

namespace evtrack::frames {
namespace {

events::EventStream random_stream(nn::Rng& rng, std::size_t n, std::uint16_t w, std::uint16_t h,
                                  std::uint64_t duration) {
  events::EventStream s;
  s.sensor_w = w;
  s.sensor_h = h;
  s.duration_us = duration;
  for (std::size_t i = 0; i < n; ++i) {
    s.events.push_back({rng.uniform_int(duration + 1), static_cast<std::uint16_t>(rng.uniform_int(w)),
                        static_cast<std::uint16_t>(rng.uniform_int(h)),
                        static_cast<std::int8_t>(rng.uniform_int(2) ? 1 : -1)});
  }
  std::stable_sort(s.events.begin(), s.events.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  return s;
}

double plane_sum(const EventFrame& f, std::size_t plane) {
  const auto d = f.planes.data();
  const std::size_t n = f.width() * f.height();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += d[plane * n + i];
  return s;
}

TEST(Windows, RoundInward) {
  const auto w = segment_windows(50, 10, 1000);
  EXPECT_EQ(w.sparse, (Interval{48, 52}));
  EXPECT_EQ(w.medium, (Interval{45, 55}));
  EXPECT_EQ(w.dense, (Interval{43, 57}));
}

TEST(Windows, ClipToStream) {
  const auto w = segment_windows(0, 10, 100);
  EXPECT_EQ(w.sparse.lo, 0);
  EXPECT_EQ(w.medium.lo, 0);
  EXPECT_EQ(w.dense.lo, 0);
  const auto e = segment_windows(100, 10, 100);
  EXPECT_EQ(e.dense.hi, 100);
}

TEST(Windows, SegmentCenters) {
  EXPECT_EQ(segment_center(0, 20000), 10000);
  EXPECT_EQ(segment_center(3, 20000), 70000);
  events::EventStream s;
  s.sensor_w = s.sensor_h = 4;
  s.duration_us = 1'000'000;
  EXPECT_EQ(segment_count(s, 20000), 50u);
}

TEST(Windows, NestedForRandomCentersAndLengths) {
  nn::Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto dt = static_cast<std::int64_t>(1 + rng.uniform_int(50000));
    const auto T = static_cast<std::int64_t>(1 + rng.uniform_int(1'000'000));
    const auto c = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(T) + 1));
    const auto w = segment_windows(c, dt, T);
    ASSERT_TRUE(w.dense.contains(w.medium)) << c << " " << dt;
    ASSERT_TRUE(w.medium.contains(w.sparse)) << c << " " << dt;
    ASSERT_GE(w.dense.lo, 0);
    ASSERT_LE(w.dense.hi, T);
  }
}

TEST(Accumulate, EmptyStream) {
  events::EventStream s;
  s.sensor_w = 8;
  s.sensor_h = 6;
  s.duration_us = 100;
  const auto t = build_triplet(s, segment_windows(50, 20, 100));
  for (Density d : kAllDensities) {
    EXPECT_EQ(t.get(d).density, 0u);
    EXPECT_EQ(plane_sum(t.get(d), 0) + plane_sum(t.get(d), 1) + plane_sum(t.get(d), 2), 0.0);
    EXPECT_EQ(t.get(d).planes.dims(), (nn::Shape{3, 6, 8}));
  }
}

TEST(Accumulate, SingleEventInSparseWindow) {
  events::EventStream s;
  s.sensor_w = 8;
  s.sensor_h = 6;
  s.duration_us = 100;
  s.events = {{50, 2, 3, -1}};
  const auto t = build_triplet(s, segment_windows(50, 20, 100));
  EXPECT_EQ(t.sparse.density, 1u);
  EXPECT_EQ(t.medium.density, 1u);
  EXPECT_EQ(t.dense.density, 1u);
  EXPECT_EQ(t.medium.planes[1 * 48 + 3 * 8 + 2], 1.0f);
}

TEST(Accumulate, CountsMatchLinearScan) {
  nn::Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_stream(rng, 2000, 16, 12, 100000);
    const auto c = static_cast<std::int64_t>(rng.uniform_int(100001));
    const auto w = segment_windows(c, 1 + static_cast<std::int64_t>(rng.uniform_int(40000)), 100000);
    const auto t = build_triplet(s, w);
    for (Density d : kAllDensities) {
      const Interval iv = d == Density::sparse ? w.sparse : d == Density::medium ? w.medium : w.dense;
      std::size_t pos = 0, neg = 0;
      for (const auto& e : s.events) {
        if (!iv.contains(static_cast<std::int64_t>(e.t))) continue;
        (e.p > 0 ? pos : neg) += 1;
      }
      const EventFrame& f = t.get(d);
      EXPECT_EQ(f.density, pos + neg);
      EXPECT_EQ(plane_sum(f, 0), static_cast<double>(pos));
      EXPECT_EQ(plane_sum(f, 1), static_cast<double>(neg));
    }
    EXPECT_LE(t.sparse.density, t.medium.density);
    EXPECT_LE(t.medium.density, t.dense.density);
  }
}

TEST(Accumulate, RecencyInUnitRange) {
  nn::Rng rng(6);
  const auto s = random_stream(rng, 3000, 16, 12, 100000);
  const auto f = accumulate(s, {20000, 60000});
  const auto d = f.planes.data();
  for (std::size_t i = 0; i < 16 * 12; ++i) {
    EXPECT_GE(d[2 * 192 + i], 0.0f);
    EXPECT_LE(d[2 * 192 + i], 1.0f);
  }
}

TEST(Accumulate, PermutationInvariantOverEqualTimestamps) {
  nn::Rng rng(8);
  auto s = random_stream(rng, 500, 8, 8, 50);
  const auto a = build_triplet(s, segment_windows(25, 20, 50));
  std::mt19937 g(3);
  for (std::size_t i = 0; i < s.events.size();) {
    std::size_t j = i;
    while (j < s.events.size() && s.events[j].t == s.events[i].t) ++j;
    std::shuffle(s.events.begin() + static_cast<std::ptrdiff_t>(i), s.events.begin() + static_cast<std::ptrdiff_t>(j), g);
    i = j;
  }
  const auto b = build_triplet(s, segment_windows(25, 20, 50));
  EXPECT_EQ(a.sparse.planes, b.sparse.planes);
  EXPECT_EQ(a.medium.planes, b.medium.planes);
  EXPECT_EQ(a.dense.planes, b.dense.planes);
}

TEST(Normalize, ClipsCounts) {
  EventFrame f{nn::Tensor({3, 1, 2}), 0};
  f.planes[0] = 300.0f;
  f.planes[1] = 51.0f;
  f.planes[2] = 255.0f;
  f.planes[4] = 0.25f;
  const auto n = normalized(f);
  EXPECT_EQ(n.planes[0], 1.0f);
  EXPECT_EQ(n.planes[1], 51.0f / 255.0f);
  EXPECT_EQ(n.planes[2], 1.0f);
  EXPECT_EQ(n.planes[4], 0.25f);
}

EventFrame random_frame(nn::Rng& rng, std::size_t w, std::size_t h) {
  EventFrame f{nn::Tensor({3, h, w}), 0};
  for (float& v : f.planes.data()) v = static_cast<float>(rng.uniform());
  return f;
}

TEST(Crop, IdentityResample) {
  nn::Rng rng(1);
  const auto f = random_frame(rng, 40, 40);
  // Side 2 * sqrt(10 * 10) = 20 = out_size, aligned to integer offsets.
  const auto c = crop_resize(f, {10, 10, 10, 10}, 2.0, 20);
  EXPECT_EQ(c.scale, 1.0);
  EXPECT_EQ(c.offset_x, 5.0);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t v = 0; v < 20; ++v) {
      for (std::size_t u = 0; u < 20; ++u) {
        ASSERT_EQ(c.pixels[(ch * 20 + v) * 20 + u], f.planes[(ch * 40 + v + 5) * 40 + u + 5]);
      }
    }
  }
}

TEST(Crop, PaddingIsZero) {
  EventFrame f{nn::Tensor({3, 20, 20}, 1.0f), 0};
  const auto c = crop_resize(f, {0, 0, 4, 4}, 4.0, 16);
  // Crop spans [-6, 10) at scale 1: pixels u < 6 or v < 6 read outside the frame.
  for (std::size_t v = 0; v < 16; ++v) {
    for (std::size_t u = 0; u < 16; ++u) {
      const float x = c.pixels[v * 16 + u];
      ASSERT_EQ(x, (u < 6 || v < 6) ? 0.0f : 1.0f) << u << "," << v;
    }
  }
}

TEST(Crop, MappingRoundTrip) {
  nn::Rng rng(2);
  const auto f = random_frame(rng, 64, 48);
  for (int i = 0; i < 100; ++i) {
    const BBox b{rng.uniform(0, 50), rng.uniform(0, 40), rng.uniform(2, 20), rng.uniform(2, 20)};
    const auto c = crop_resize(f, b, 4.0, 256);
    const double u = rng.uniform(0, 256), v = rng.uniform(0, 256);
    const auto [sx, sy] = c.to_sensor(u, v);
    const auto [cu, cv] = c.to_crop(sx, sy);
    EXPECT_NEAR(cu, u, 0.5);
    EXPECT_NEAR(cv, v, 0.5);
    // Crop center maps to the box center.
    const auto [mx, my] = c.to_sensor(128, 128);
    EXPECT_NEAR(mx, b.cx(), 1e-9);
    EXPECT_NEAR(my, b.cy(), 1e-9);
  }
}

TEST(Crop, RejectsDegenerateBox) {
  EventFrame f{nn::Tensor({3, 4, 4}), 0};
  EXPECT_THROW(crop_resize(f, {0, 0, 0, 4}, 2.0, 8), InvalidArgument);
}

TEST(DensityNames, RoundTrip) {
  for (Density d : kAllDensities) EXPECT_EQ(density_from_name(name(d)), d);
  EXPECT_EQ(static_cast<int>(Density::dense), 0);
  EXPECT_THROW(density_from_name("thick"), InvalidArgument);
}

}  // namespace
}  // namespace evtrack::frames
