// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>

#include "evtrack/frame_builder.hpp"

namespace evtrack {

/// Architecture hyperparameters. Layer numbers are 1-based throughout the
/// public API (layer 7 is the first stage-2 block with the default schedule).
struct ModelConfig {
  std::size_t patch = 16;
  std::size_t embed_dim = 192;
  std::size_t heads = 3;
  std::size_t mlp_ratio = 4;
  std::size_t template_size = frames::kTemplateSize;
  std::size_t search_size = frames::kSearchSize;
  std::array<std::size_t, 3> layers_per_stage{6, 4, 2};
  std::array<frames::Density, 3> injection_order{frames::Density::dense, frames::Density::medium,
                                                 frames::Density::sparse};
  std::size_t head_channels = 64;
  std::size_t dps_start_layer = 7;
  float ln_eps = 1e-6f;

  std::size_t hidden_dim() const { return embed_dim * mlp_ratio; }
  std::size_t num_layers() const {
    return layers_per_stage[0] + layers_per_stage[1] + layers_per_stage[2];
  }
  std::size_t template_tokens() const { return (template_size / patch) * (template_size / patch); }
  std::size_t search_tokens() const { return feature_size() * feature_size(); }
  /// Side of the search feature map (search_size / patch).
  std::size_t feature_size() const { return search_size / patch; }

  /// Stage index 1..3 of a 1-based layer.
  std::size_t stage_of(std::size_t layer) const;
  /// First 1-based layer of a stage 1..3.
  std::size_t stage_first_layer(std::size_t stage) const;
  /// SA-MoE sits in the first block of every stage.
  bool is_moe_layer(std::size_t layer) const;
  /// Throws InvalidArgument on any inconsistency.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace evtrack
