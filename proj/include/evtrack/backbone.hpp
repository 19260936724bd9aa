// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <vector>

#include "evtrack/dps.hpp"
#include "evtrack/frame_builder.hpp"
#include "evtrack/model_config.hpp"
#include "evtrack/nn/rng.hpp"
#include "evtrack/nn/tensor.hpp"
#include "evtrack/sa_moe.hpp"
#include "evtrack/token_layout.hpp"
#include "evtrack/weights.hpp"

namespace evtrack::backbone {

enum class CropKind { template_crop, search };

/// Non-overlapping P x P patches, linear projection to D, plus the grid's
/// positional embedding (the search grid's table is shared by all densities).
nn::Tensor patch_embed(const frames::Crop& crop, const ModelWeights& weights, const ModelConfig& config,
                       CropKind kind);

/// Residual adapter for tokens entering at a stage boundary:
/// x + linear(layer_norm(x)), with parameters of stage 2 or 3.
nn::Tensor feature_transform(const nn::Tensor& tokens, std::size_t stage, const ModelWeights& weights,
                             const ModelConfig& config);

/// Sum of the search blocks currently in the sequence, in injection order.
nn::Tensor fuse_search_blocks(const nn::Tensor& tokens, const TokenLayout& layout);

struct ForwardOptions {
  bool moe_enabled = true;
  bool dps_enabled = true;
  moe::RoutingMode routing = moe::RoutingMode::hard;
  /// Gumbel noise source for routing; nullptr means noise-free.
  nn::Rng* rng = nullptr;
  double tau = moe::kRoutingTemperature;
  /// Keep the fused search features of every layer from the DPS start layer
  /// on (needed to re-aggregate in tests).
  bool keep_layer_features = false;
};

struct ForwardResult {
  /// Final-normed fused search features [N_x, D].
  nn::Tensor fused;
  dps::HaltingRecord halting;
  std::vector<moe::RoutingRecord> routing;
  /// Sequence length seen by every executed layer.
  std::vector<std::size_t> sequence_lengths;
  /// Template range observed at every executed layer.
  std::vector<TokenRange> template_ranges;
  /// Pre-norm fused search features per layer (layer -> tensor), when kept.
  std::map<std::size_t, nn::Tensor> layer_features;
  /// Aggregated features before the final norm.
  nn::Tensor aggregated;
};

/// Three-stage transformer. Stage s appends the s-th density of the
/// injection order (through the feature transformation for s > 1) and runs
/// its blocks; the first block of each stage carries SA-MoE; the halting
/// controller runs from the DPS start layer on.
class Backbone {
 public:
  /// Audits the weights against the config.
  Backbone(const ModelConfig& config, const ModelWeights& weights);

  const ModelConfig& config() const { return config_; }
  const ModelWeights& weights() const { return weights_; }

  /// `search` is indexed by frames::Density.
  ForwardResult forward(const nn::Tensor& template_tokens, const std::array<nn::Tensor, 3>& search,
                        const ForwardOptions& options) const;

  ForwardResult forward(const frames::Crop& template_crop, const std::array<frames::Crop, 3>& search_crops,
                        const ForwardOptions& options) const;

  /// One pre-norm transformer block (1-based layer). With `routing` set, the
  /// FFN of a MoE layer is replaced by SA-MoE and the decision is stored.
  nn::Tensor block(std::size_t layer, const nn::Tensor& x, const TokenLayout& layout, bool use_moe,
                   moe::RoutingMode mode, nn::Rng* rng, double tau, moe::RoutingRecord* routing) const;

  const moe::ExpertSet& experts(std::size_t layer) const;
  const moe::RouterParams& router(std::size_t layer) const;

 private:
  ModelConfig config_;
  const ModelWeights& weights_;
  std::map<std::size_t, moe::ExpertSet> experts_;
  std::map<std::size_t, moe::RouterParams> routers_;
};

}  // namespace evtrack::backbone
