// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "evtrack/frame_builder.hpp"
#include "evtrack/nn/rng.hpp"
#include "evtrack/nn/tensor.hpp"
#include "evtrack/token_layout.hpp"

namespace evtrack::moe {

/// Two-layer token-wise FFN: fc2(gelu(fc1 x + b1)) + b2, weights stored
/// [out, in] (fc1 is H x D, fc2 is D x H).
struct Ffn {
  nn::Tensor fc1_weight;
  nn::Tensor fc1_bias;
  nn::Tensor fc2_weight;
  nn::Tensor fc2_bias;

  std::size_t hidden() const { return fc1_weight.dim(0); }
  std::size_t embed() const { return fc1_weight.dim(1); }
  nn::Tensor forward(const nn::Tensor& tokens) const;
};

/// Shared expert (the full FFN) plus three density experts, indexed by
/// frames::Density (dense, medium, sparse).
struct ExpertSet {
  Ffn shared;
  std::array<Ffn, 3> experts;

  const Ffn& expert(frames::Density d) const { return experts[static_cast<std::size_t>(d)]; }
};

/// Partitions an FFN along its hidden dimension into three contiguous
/// thirds. Expert i takes rows [iH/3, (i+1)H/3) of fc1 and of its bias, the
/// matching columns of fc2, and fc2_bias / 3. Throws if H % 3 != 0.
/// Summing the three experts reproduces the full FFN.
ExpertSet split_ffn(const Ffn& shared);

/// Router MLP: linear(2D -> D), GELU, linear(D -> 3).
struct RouterParams {
  nn::Tensor fc1_weight;
  nn::Tensor fc1_bias;
  nn::Tensor fc2_weight;
  nn::Tensor fc2_bias;
};

enum class RoutingMode {
  hard,  // one-hot mask; deterministic unless an rng is supplied
  soft,  // Gumbel-softmax mask
};

struct RoutingRecord {
  std::size_t layer = 0;  // 1-based
  std::array<float, 3> logits{};
  std::size_t active = 0;  // K
  std::vector<float> mask;  // length K
  frames::Density selected = frames::Density::dense;

  friend bool operator==(const RoutingRecord&, const RoutingRecord&) = default;
};

inline constexpr double kRoutingTemperature = 1.0;

/// Router decision from pooled features: R_in = [template_pool | search_pool],
/// S = MLP(R_in), active logits S[0:K], m = gumbel_softmax(S_a, tau).
/// `order[i]` names the density injected i-th; selection maps argmax(m)
/// through it.
RoutingRecord route_pooled(const nn::Tensor& template_pool, const nn::Tensor& search_pool,
                           std::size_t active, std::span<const frames::Density> order,
                           const RouterParams& router, RoutingMode mode, nn::Rng* rng,
                           double tau = kRoutingTemperature);

/// Pools the template tokens and all search blocks jointly, then routes.
/// `search_blocks` must hold exactly K = `active` blocks in injection order.
RoutingRecord route(const nn::Tensor& template_tokens, std::span<const nn::Tensor> search_blocks,
                    std::size_t active, std::span<const frames::Density> order,
                    const RouterParams& router, RoutingMode mode, nn::Rng* rng,
                    double tau = kRoutingTemperature);

/// Shared expert on every token; the selected density expert is evaluated
/// on that density's block only and added there.
nn::Tensor moe_forward(const TokenLayout& layout, const nn::Tensor& tokens,
                       const ExpertSet& experts, const RoutingRecord& record);

}  // namespace evtrack::moe
