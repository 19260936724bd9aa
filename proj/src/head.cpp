// SPDX-License-Identifier: Apache-2.0
#include "evtrack/head.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "evtrack/error.hpp"
#include "evtrack/nn/ops.hpp"

namespace evtrack::head {

using nn::Tensor;

namespace {

Tensor branch(const Tensor& feat, const ModelWeights& w, const std::string& name) {
  Tensor h = nn::conv2d(feat, w.get(names::head(name, "conv1.weight")), w.get(names::head(name, "conv1.bias")), 1, 1);
  h = nn::relu(nn::channel_affine(h, w.get(names::head(name, "bn1.scale")), w.get(names::head(name, "bn1.shift"))));
  h = nn::conv2d(h, w.get(names::head(name, "conv2.weight")), w.get(names::head(name, "conv2.bias")), 1, 1);
  h = nn::relu(nn::channel_affine(h, w.get(names::head(name, "bn2.scale")), w.get(names::head(name, "bn2.shift"))));
  h = nn::conv2d(h, w.get(names::head(name, "out.weight")), w.get(names::head(name, "out.bias")), 1, 0);
  return nn::sigmoid(h);
}

std::size_t clamp_cell(double v, std::size_t grid) {
  if (!(v > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(v), grid - 1);
}

}  // namespace

HeadOutput head_forward(const Tensor& fused, const ModelWeights& weights, const ModelConfig& config) {
  const std::size_t f = config.feature_size(), d = config.embed_dim;
  if (fused.dims() != nn::Shape{f * f, d}) {
    throw ShapeError("head_forward: features " + nn::to_string(fused.dims()) + ", expected " +
                     nn::to_string({f * f, d}));
  }
  const Tensor feat = nn::transpose(fused).reshaped({d, f, f});
  return {branch(feat, weights, "score"), branch(feat, weights, "offset"), branch(feat, weights, "size")};
}

Decoded decode_box(const HeadOutput& out, const frames::Crop& crop, std::size_t patch) {
  const std::size_t g = out.grid();
  if (out.score.dims() != nn::Shape{1, g, g} || out.offset.dims() != nn::Shape{2, g, g} ||
      out.size.dims() != nn::Shape{2, g, g}) {
    throw ShapeError("decode_box: inconsistent head maps");
  }
  if (!(crop.scale > 0.0)) throw InvalidArgument("decode_box: crop scale must be positive");

  Decoded r;
  const std::size_t peak = nn::argmax(out.score.data());
  r.peak_row = peak / g;
  r.peak_col = peak % g;
  r.peak_score = out.score[peak];
  const double side = static_cast<double>(g * patch);
  if (!(r.peak_score > 0.0f)) {
    r.fallback = true;
    r.peak_row = r.peak_col = g / 2;
    const double w = out.size[peak] * side, h = out.size[g * g + peak] * side;
    r.crop_box = {0.5 * side - 0.5 * w, 0.5 * side - 0.5 * h, w, h};
  } else {
    const double cx = (static_cast<double>(r.peak_col) + out.offset[peak]) * static_cast<double>(patch);
    const double cy = (static_cast<double>(r.peak_row) + out.offset[g * g + peak]) * static_cast<double>(patch);
    const double w = out.size[peak] * side, h = out.size[g * g + peak] * side;
    r.crop_box = {cx - 0.5 * w, cy - 0.5 * h, w, h};
  }
  r.sensor_box = crop.to_sensor(r.crop_box);
  return r;
}

HeadOutput encode_ideal(const BBox& b, std::size_t grid, std::size_t patch) {
  const double side = static_cast<double>(grid * patch);
  const double gx = b.cx() / static_cast<double>(patch), gy = b.cy() / static_cast<double>(patch);
  const std::size_t col = clamp_cell(gx, grid), row = clamp_cell(gy, grid);
  HeadOutput out{Tensor({1, grid, grid}), Tensor({2, grid, grid}), Tensor({2, grid, grid})};
  const std::size_t i = row * grid + col;
  out.score[i] = 1.0f;
  out.offset[i] = static_cast<float>(gx - static_cast<double>(col));
  out.offset[grid * grid + i] = static_cast<float>(gy - static_cast<double>(row));
  out.size[i] = static_cast<float>(b.w / side);
  out.size[grid * grid + i] = static_cast<float>(b.h / side);
  return out;
}

double gaussian_radius(double height, double width, double min_overlap) {
  const double a1 = 1.0;
  const double b1 = height + width;
  const double c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4.0 * a1 * c1)) / 2.0;

  const double a2 = 4.0;
  const double b2 = 2.0 * (height + width);
  const double c2 = (1.0 - min_overlap) * width * height;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 4.0 * a2 * c2)) / 2.0;

  const double a3 = 4.0 * min_overlap;
  const double b3 = -2.0 * min_overlap * (height + width);
  const double c3 = (min_overlap - 1.0) * width * height;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4.0 * a3 * c3)) / 2.0;
  return std::min({r1, r2, r3});
}

Targets encode_targets(const BBox& b, std::size_t grid, std::size_t patch) {
  if (!b.valid()) throw InvalidArgument("encode_targets: degenerate box");
  const HeadOutput ideal = encode_ideal(b, grid, patch);
  Targets t;
  const std::size_t peak = nn::argmax(ideal.score.data());
  t.row = peak / grid;
  t.col = peak % grid;
  t.offset[0] = ideal.offset[peak];
  t.offset[1] = ideal.offset[grid * grid + peak];
  t.size[0] = ideal.size[peak];
  t.size[1] = ideal.size[grid * grid + peak];

  const double p = static_cast<double>(patch);
  const int radius = std::max(0, static_cast<int>(gaussian_radius(b.h / p, b.w / p)));
  const double sigma = (2.0 * radius + 1.0) / 6.0;
  t.heatmap = Tensor({1, grid, grid});
  const int g = static_cast<int>(grid);
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const int y = static_cast<int>(t.row) + dy, x = static_cast<int>(t.col) + dx;
      if (y < 0 || y >= g || x < 0 || x >= g) continue;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      t.heatmap[static_cast<std::size_t>(y * g + x)] = static_cast<float>(v);
    }
  }
  return t;
}

}  // namespace evtrack::head
