// SPDX-License-Identifier: Apache-2.0
#include "evtrack/sa_moe.hpp"

#include <algorithm>
#include <string>

#include "evtrack/error.hpp"
#include "evtrack/nn/ops.hpp"

namespace evtrack::moe {

using nn::Tensor;

Tensor Ffn::forward(const Tensor& tokens) const {
  return nn::linear(nn::gelu(nn::linear(tokens, fc1_weight, fc1_bias)), fc2_weight, fc2_bias);
}

ExpertSet split_ffn(const Ffn& shared) {
  if (shared.fc1_weight.rank() != 2 || shared.fc2_weight.rank() != 2) {
    throw ShapeError("split_ffn: FFN weights must be rank 2");
  }
  const std::size_t h = shared.hidden();
  const std::size_t d = shared.embed();
  if (shared.fc2_weight.dims() != nn::Shape{d, h} || shared.fc1_bias.size() != h ||
      shared.fc2_bias.size() != d) {
    throw ShapeError("split_ffn: inconsistent FFN shapes " + nn::to_string(shared.fc1_weight.dims()) +
                     " / " + nn::to_string(shared.fc2_weight.dims()));
  }
  if (h % 3 != 0) {
    throw InvalidArgument("split_ffn: hidden dim " + std::to_string(h) + " not divisible by 3");
  }
  const std::size_t part = h / 3;

  ExpertSet set;
  set.shared = shared;
  Tensor b2_star({d});
  for (std::size_t j = 0; j < d; ++j) b2_star[j] = shared.fc2_bias[j] / 3.0f;

  for (std::size_t e = 0; e < 3; ++e) {
    Ffn& ex = set.experts[e];
    const std::size_t lo = e * part;
    ex.fc1_weight = shared.fc1_weight.slice_rows(lo, lo + part);
    ex.fc1_bias = Tensor({part});
    for (std::size_t i = 0; i < part; ++i) ex.fc1_bias[i] = shared.fc1_bias[lo + i];
    ex.fc2_weight = Tensor({d, part});
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < part; ++c) ex.fc2_weight(r, c) = shared.fc2_weight(r, lo + c);
    }
    ex.fc2_bias = b2_star;
  }
  return set;
}

RoutingRecord route_pooled(const Tensor& template_pool, const Tensor& search_pool, std::size_t active,
                           std::span<const frames::Density> order, const RouterParams& router,
                           RoutingMode mode, nn::Rng* rng, double tau) {
  if (active < 1 || active > 3) throw InvalidArgument("route: K must be in [1, 3]");
  if (order.size() < active) throw InvalidArgument("route: injection order shorter than K");
  const std::size_t d = template_pool.size();
  if (search_pool.size() != d) throw ShapeError("route: pooled feature sizes differ");

  Tensor r_in({1, 2 * d});
  std::copy(template_pool.data().begin(), template_pool.data().end(), r_in.data().begin());
  std::copy(search_pool.data().begin(), search_pool.data().end(),
            r_in.data().begin() + static_cast<std::ptrdiff_t>(d));
  const Tensor hidden = nn::gelu(nn::linear(r_in, router.fc1_weight, router.fc1_bias));
  const Tensor scores = nn::linear(hidden, router.fc2_weight, router.fc2_bias);
  if (scores.size() != 3) throw ShapeError("route: router must emit 3 logits");

  RoutingRecord rec;
  rec.active = active;
  std::copy(scores.data().begin(), scores.data().end(), rec.logits.begin());
  Tensor active_logits({active}, std::vector<float>(rec.logits.begin(),
                                                    rec.logits.begin() + static_cast<std::ptrdiff_t>(active)));
  const Tensor mask = nn::gumbel_softmax(active_logits, tau, rng, mode == RoutingMode::hard);
  rec.mask.assign(mask.data().begin(), mask.data().end());
  rec.selected = order[nn::argmax(mask.data())];
  return rec;
}

RoutingRecord route(const Tensor& template_tokens, std::span<const Tensor> search_blocks,
                    std::size_t active, std::span<const frames::Density> order,
                    const RouterParams& router, RoutingMode mode, nn::Rng* rng, double tau) {
  if (search_blocks.size() != active) {
    throw InvalidArgument("route: expected " + std::to_string(active) + " search blocks, got " +
                          std::to_string(search_blocks.size()));
  }
  std::size_t rows = 0;
  for (const Tensor& b : search_blocks) {
    if (b.rank() != 2 || b.rows() == 0) throw ShapeError("route: empty search block");
    if (b.cols() != template_tokens.cols()) throw ShapeError("route: search block width mismatch");
    rows += b.rows();
  }
  Tensor all({rows, template_tokens.cols()});
  std::size_t at = 0;
  for (const Tensor& b : search_blocks) {
    std::copy(b.data().begin(), b.data().end(), all.data().begin() + static_cast<std::ptrdiff_t>(at));
    at += b.size();
  }
  return route_pooled(nn::global_avg_pool(template_tokens), nn::global_avg_pool(all), active, order,
                      router, mode, rng, tau);
}

Tensor moe_forward(const TokenLayout& layout, const Tensor& tokens, const ExpertSet& experts,
                   const RoutingRecord& record) {
  if (tokens.rank() != 2 || tokens.rows() != layout.total()) {
    throw ShapeError("moe_forward: token count " + nn::to_string(tokens.dims()) +
                     " does not match layout total " + std::to_string(layout.total()));
  }
  if (record.active != layout.injected_count()) {
    throw InvalidArgument("moe_forward: routing K=" + std::to_string(record.active) + " but " +
                          std::to_string(layout.injected_count()) + " densities injected");
  }
  const auto block = layout.range(record.selected);
  if (!block) {
    throw InvalidArgument(std::string("moe_forward: selected density '") +
                          frames::name(record.selected) + "' not in layout");
  }
  Tensor out = experts.shared.forward(tokens);
  const Tensor specific = experts.expert(record.selected).forward(tokens.slice_rows(block->begin, block->end));
  // Experts keep the embedding width, so no repetition/alignment is needed.
  if (specific.cols() != out.cols()) throw ShapeError("moe_forward: expert output width differs");
  auto dst = out.data();
  const auto src = specific.data();
  const std::size_t offset = block->begin * out.cols();
  for (std::size_t i = 0; i < src.size(); ++i) dst[offset + i] += src[i];
  return out;
}

}  // namespace evtrack::moe
