// SPDX-License-Identifier: Apache-2.0
#include "evtrack/backbone.hpp"

#include <string>

#include "evtrack/error.hpp"
#include "evtrack/nn/ops.hpp"

namespace evtrack::backbone {

using nn::Tensor;

Tensor patch_embed(const frames::Crop& crop, const ModelWeights& weights, const ModelConfig& config,
                   CropKind kind) {
  const std::size_t expected = kind == CropKind::template_crop ? config.template_size : config.search_size;
  const std::size_t p = config.patch;
  if (crop.pixels.rank() != 3 || crop.pixels.dim(0) != 3 || crop.size() != expected ||
      crop.pixels.dim(2) != expected) {
    throw ShapeError("patch_embed: crop " + nn::to_string(crop.pixels.dims()) + ", expected [3, " +
                     std::to_string(expected) + ", " + std::to_string(expected) + "]");
  }
  if (expected % p != 0) throw ShapeError("patch_embed: patch size does not divide crop size");

  const std::size_t grid = expected / p;
  Tensor patches({grid * grid, 3 * p * p});
  const auto src = crop.pixels.data();
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      auto row = patches.row(gy * grid + gx);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t py = 0; py < p; ++py) {
          const float* line = src.data() + (ch * expected + gy * p + py) * expected + gx * p;
          std::copy(line, line + p, row.begin() + static_cast<std::ptrdiff_t>((ch * p + py) * p));
        }
      }
    }
  }
  Tensor tokens = nn::linear(patches, weights.get("patch_embed.weight"), weights.get("patch_embed.bias"));
  nn::add_inplace(tokens, weights.get(kind == CropKind::template_crop ? "pos_embed.template" : "pos_embed.search"));
  return tokens;
}

Tensor feature_transform(const Tensor& tokens, std::size_t stage, const ModelWeights& w, const ModelConfig& c) {
  if (stage != 2 && stage != 3) throw InvalidArgument("feature_transform: stage must be 2 or 3");
  if (tokens.rank() != 2 || tokens.cols() != c.embed_dim) {
    throw ShapeError("feature_transform: tokens " + nn::to_string(tokens.dims()) + " vs embed dim " +
                     std::to_string(c.embed_dim));
  }
  const Tensor normed = nn::layer_norm(tokens, w.get(names::transform(stage, "norm.weight")),
                                       w.get(names::transform(stage, "norm.bias")), c.ln_eps);
  Tensor out = nn::linear(normed, w.get(names::transform(stage, "linear.weight")),
                          w.get(names::transform(stage, "linear.bias")));
  nn::add_inplace(out, tokens);
  return out;
}

Tensor fuse_search_blocks(const Tensor& tokens, const TokenLayout& layout) {
  if (layout.injected().empty()) throw StateError("fuse: no search block injected");
  const std::size_t d = tokens.cols();
  Tensor out({layout.search_tokens(), d});
  auto dst = out.data();
  for (frames::Density density : layout.injected()) {
    const TokenRange r = *layout.range(density);
    const auto src = tokens.data().subspan(r.begin * d, r.size() * d);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  }
  return out;
}

Backbone::Backbone(const ModelConfig& config, const ModelWeights& weights) : config_(config), weights_(weights) {
  weights_.audit(config_);
  for (std::size_t l = 1; l <= config_.num_layers(); ++l) {
    if (!config_.is_moe_layer(l)) continue;
    moe::ExpertSet set;
    set.shared = {weights_.get(names::block(l, "mlp.fc1.weight")), weights_.get(names::block(l, "mlp.fc1.bias")),
                  weights_.get(names::block(l, "mlp.fc2.weight")), weights_.get(names::block(l, "mlp.fc2.bias"))};
    for (std::size_t e = 0; e < 3; ++e) {
      set.experts[e] = {weights_.get(names::expert(l, e, "fc1.weight")), weights_.get(names::expert(l, e, "fc1.bias")),
                        weights_.get(names::expert(l, e, "fc2.weight")), weights_.get(names::expert(l, e, "fc2.bias"))};
    }
    experts_.emplace(l, std::move(set));
    routers_.emplace(l, moe::RouterParams{weights_.get(names::router(l, "fc1.weight")),
                                          weights_.get(names::router(l, "fc1.bias")),
                                          weights_.get(names::router(l, "fc2.weight")),
                                          weights_.get(names::router(l, "fc2.bias"))});
  }
}

const moe::ExpertSet& Backbone::experts(std::size_t layer) const {
  const auto it = experts_.find(layer);
  if (it == experts_.end()) throw InvalidArgument("layer " + std::to_string(layer) + " has no SA-MoE");
  return it->second;
}

const moe::RouterParams& Backbone::router(std::size_t layer) const {
  const auto it = routers_.find(layer);
  if (it == routers_.end()) throw InvalidArgument("layer " + std::to_string(layer) + " has no router");
  return it->second;
}

Tensor Backbone::block(std::size_t layer, const Tensor& x, const TokenLayout& layout, bool use_moe,
                       moe::RoutingMode mode, nn::Rng* rng, double tau, moe::RoutingRecord* routing) const {
  const auto& w = weights_;
  const Tensor h1 = nn::layer_norm(x, w.get(names::block(layer, "norm1.weight")),
                                   w.get(names::block(layer, "norm1.bias")), config_.ln_eps);
  const nn::AttentionParams attn{w.get(names::block(layer, "attn.qkv.weight")),
                                 w.get(names::block(layer, "attn.qkv.bias")),
                                 w.get(names::block(layer, "attn.proj.weight")),
                                 w.get(names::block(layer, "attn.proj.bias"))};
  Tensor y = nn::add(x, nn::multi_head_attention(h1, h1, attn, config_.heads));

  const Tensor h2 = nn::layer_norm(y, w.get(names::block(layer, "norm2.weight")),
                                   w.get(names::block(layer, "norm2.bias")), config_.ln_eps);
  Tensor ffn_out;
  if (use_moe && config_.is_moe_layer(layer)) {
    const TokenRange tr = layout.template_range();
    const TokenRange search{tr.end, layout.total()};
    moe::RoutingRecord rec = moe::route_pooled(
        nn::global_avg_pool(h2.slice_rows(tr.begin, tr.end)),
        nn::global_avg_pool(h2.slice_rows(search.begin, search.end)), layout.injected_count(),
        layout.injected(), router(layer), mode, rng, tau);
    rec.layer = layer;
    ffn_out = moe::moe_forward(layout, h2, experts(layer), rec);
    if (routing) *routing = std::move(rec);
  } else {
    const moe::Ffn ffn{w.get(names::block(layer, "mlp.fc1.weight")), w.get(names::block(layer, "mlp.fc1.bias")),
                       w.get(names::block(layer, "mlp.fc2.weight")), w.get(names::block(layer, "mlp.fc2.bias"))};
    ffn_out = ffn.forward(h2);
  }
  nn::add_inplace(y, ffn_out);
  return y;
}

ForwardResult Backbone::forward(const Tensor& template_tokens, const std::array<Tensor, 3>& search,
                                const ForwardOptions& opt) const {
  const ModelConfig& c = config_;
  const std::size_t nz = c.template_tokens(), nx = c.search_tokens(), d = c.embed_dim;
  if (template_tokens.dims() != nn::Shape{nz, d}) {
    throw ShapeError("forward: template tokens " + nn::to_string(template_tokens.dims()) + ", expected " +
                     nn::to_string({nz, d}));
  }
  for (const Tensor& s : search) {
    if (s.dims() != nn::Shape{nx, d}) {
      throw ShapeError("forward: search tokens " + nn::to_string(s.dims()) + ", expected " +
                       nn::to_string({nx, d}));
    }
  }

  ForwardResult res;
  TokenLayout layout(nz, nx, d);
  const frames::Density first = c.injection_order[0];
  layout.inject(first);
  Tensor x = nn::concat_rows(template_tokens, search[static_cast<std::size_t>(first)]);

  const std::size_t final_layer = c.num_layers();
  dps::HaltingController controller(c.dps_start_layer, final_layer);
  std::vector<Tensor> fused_per_layer;

  for (std::size_t layer = 1; layer <= final_layer; ++layer) {
    const std::size_t stage = c.stage_of(layer);
    if (layer == c.stage_first_layer(stage) && stage > 1) {
      const frames::Density incoming = c.injection_order[stage - 1];
      layout.inject(incoming);
      x = nn::concat_rows(x, feature_transform(search[static_cast<std::size_t>(incoming)], stage, weights_, c));
    }
    if (x.rows() != nz + layout.injected_count() * nx || layout.template_range() != TokenRange{0, nz}) {
      throw StateError("token accounting violated at layer " + std::to_string(layer));
    }
    res.sequence_lengths.push_back(x.rows());
    res.template_ranges.push_back(layout.template_range());

    moe::RoutingRecord rec;
    const bool moe_here = opt.moe_enabled && c.is_moe_layer(layer);
    x = block(layer, x, layout, opt.moe_enabled, opt.routing, opt.rng, opt.tau, moe_here ? &rec : nullptr);
    if (moe_here) res.routing.push_back(std::move(rec));

    if (layer < c.dps_start_layer) continue;
    const bool need_features = opt.dps_enabled || opt.keep_layer_features || layer == final_layer;
    if (need_features) {
      Tensor fused = fuse_search_blocks(x, layout);
      if (opt.keep_layer_features) res.layer_features.emplace(layer, fused);
      if (opt.dps_enabled || layer == final_layer) fused_per_layer.push_back(std::move(fused));
    }
    if (opt.dps_enabled) {
      const double p = dps::halting_prob(x, {weights_.get(names::halting(layer, "weight")),
                                             weights_.get(names::halting(layer, "bias"))});
      if (controller.step(p) == dps::Decision::halt) {
        break;
      }
    }
  }

  if (opt.dps_enabled) {
    res.halting = controller.record();
    res.aggregated = dps::aggregate(fused_per_layer, res.halting.weights);
  } else {
    res.halting = dps::disabled_record(c.dps_start_layer, final_layer);
    res.aggregated = std::move(fused_per_layer.back());
  }
  res.fused = nn::layer_norm(res.aggregated, weights_.get("norm.weight"), weights_.get("norm.bias"), c.ln_eps);
  return res;
}

ForwardResult Backbone::forward(const frames::Crop& template_crop, const std::array<frames::Crop, 3>& crops,
                                const ForwardOptions& options) const {
  const Tensor z = patch_embed(template_crop, weights_, config_, CropKind::template_crop);
  std::array<Tensor, 3> s;
  for (std::size_t i = 0; i < 3; ++i) s[i] = patch_embed(crops[i], weights_, config_, CropKind::search);
  return forward(z, s, options);
}

}  // namespace evtrack::backbone
