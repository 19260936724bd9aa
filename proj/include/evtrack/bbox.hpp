// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace evtrack {

/// Axis-aligned box, top-left corner plus size, in pixels.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  bool valid() const { return w > 0.0 && h > 0.0; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

double iou(const BBox& a, const BBox& b);

}  // namespace evtrack
