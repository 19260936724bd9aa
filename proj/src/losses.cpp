// SPDX-License-Identifier: Apache-2.0
#include "evtrack/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "evtrack/dps.hpp"
#include "evtrack/error.hpp"

namespace evtrack::losses {

namespace {

void same_size(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size() || a.empty()) throw ShapeError(std::string(op) + ": size mismatch or empty input");
}

}  // namespace

LossGrad focal_loss(std::span<const double> pred, std::span<const double> gt) {
  same_size(pred, gt, "focal_loss");
  LossGrad r;
  r.grad.assign(pred.size(), 0.0);
  double npos = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i], g = gt[i];
    if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("focal_loss: score outside (0, 1)");
    if (!(g >= 0.0 && g <= 1.0)) throw InvalidArgument("focal_loss: target outside [0, 1]");
    if (g == 1.0) {
      npos += 1.0;
      const double q = 1.0 - p;
      r.value -= q * q * std::log(p);
      r.grad[i] = 2.0 * q * std::log(p) - q * q / p;
    } else {
      const double neg = std::pow(1.0 - g, kFocalBeta);
      const double lq = std::log(1.0 - p);
      r.value -= neg * p * p * lq;
      r.grad[i] = -neg * (2.0 * p * lq - p * p / (1.0 - p));
    }
  }
  const double norm = std::max(npos, 1.0);
  r.value /= norm;
  for (double& v : r.grad) v /= norm;
  return r;
}

LossGrad l1_loss(std::span<const double> pred, std::span<const double> gt) {
  same_size(pred, gt, "l1_loss");
  LossGrad r;
  r.grad.assign(pred.size(), 0.0);
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gt[i];
    r.value += std::abs(d);
    r.grad[i] = d > 0.0 ? 1.0 / n : (d < 0.0 ? -1.0 / n : 0.0);
  }
  r.value /= n;
  return r;
}

LossGrad giou_loss(const BBox& pred, const BBox& gt) {
  if (!gt.valid()) throw InvalidArgument("giou_loss: degenerate ground-truth box");
  if (!pred.valid()) throw InvalidArgument("giou_loss: degenerate predicted box");
  const double x1 = pred.x, x2 = pred.x + pred.w, y1 = pred.y, y2 = pred.y + pred.h;
  const double gx1 = gt.x, gx2 = gt.x + gt.w, gy1 = gt.y, gy2 = gt.y + gt.h;

  const double iw_raw = std::min(x2, gx2) - std::max(x1, gx1);
  const double ih_raw = std::min(y2, gy2) - std::max(y1, gy1);
  const bool overlap = iw_raw > 0.0 && ih_raw > 0.0;
  const double iw = overlap ? iw_raw : 0.0, ih = overlap ? ih_raw : 0.0;
  const double inter = iw * ih;
  const double area = pred.w * pred.h;
  const double uni = area + gt.w * gt.h - inter;
  const double cw = std::max(x2, gx2) - std::min(x1, gx1);
  const double ch = std::max(y2, gy2) - std::min(y1, gy1);
  const double hull = cw * ch;

  LossGrad r;
  r.value = 2.0 - inter / uni - uni / hull;

  // Partials with respect to the corners x1, x2, y1, y2.
  std::array<double, 4> di{}, da{}, dc{};
  if (overlap) {
    di[0] = x1 > gx1 ? -ih : 0.0;
    di[1] = x2 < gx2 ? ih : 0.0;
    di[2] = y1 > gy1 ? -iw : 0.0;
    di[3] = y2 < gy2 ? iw : 0.0;
  }
  da = {-pred.h, pred.h, -pred.w, pred.w};
  dc[0] = x1 < gx1 ? -ch : 0.0;
  dc[1] = x2 > gx2 ? ch : 0.0;
  dc[2] = y1 < gy1 ? -cw : 0.0;
  dc[3] = y2 > gy2 ? cw : 0.0;

  std::array<double, 4> dl{};
  for (std::size_t k = 0; k < 4; ++k) {
    const double du = da[k] - di[k];
    dl[k] = -(di[k] * uni - inter * du) / (uni * uni) - (du * hull - uni * dc[k]) / (hull * hull);
  }
  r.grad = {dl[0] + dl[1], dl[2] + dl[3], dl[1], dl[3]};
  return r;
}

void LossWeights::validate() const {
  if (l1 != 1.0 || l2 != 5.0 || l3 != 2.0) throw InvalidArgument("loss weights must be 1, 5, 2");
  if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
  if (!(e_start >= 0.0 && e_start < e_total)) throw InvalidArgument("need 0 <= e_start < e_total");
}

double lambda4(double alpha, double e, double e_start, double e_total) {
  if (!(e_total > e_start)) throw InvalidArgument("lambda4: e_total must exceed e_start");
  if (e > e_total) throw InvalidArgument("lambda4: epoch beyond e_total");
  const double r = e < e_start ? 0.0 : (e - e_start) / (e_total - e_start);
  // cos(pi r) as sin(pi (1/2 - r)): exact at r = 0, 1/2 and 1.
  return alpha * (1.0 - std::sin(std::numbers::pi * (0.5 - r)));
}

double total_loss(const LossComponents& c, const LossWeights& w, std::size_t halting_layer) {
  if (!std::isfinite(c.focal) || !std::isfinite(c.l1) || !std::isfinite(c.giou)) {
    throw NonFiniteError("total_loss: non-finite component");
  }
  const double l4 = lambda4(w.alpha, w.e, w.e_start, w.e_total);
  return w.l1 * c.focal + w.l2 * c.l1 + w.l3 * c.giou + l4 * dps::ponder_loss(halting_layer);
}

}  // namespace evtrack::losses
