// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "evtrack/nn/rng.hpp"
#include "evtrack/nn/tensor.hpp"

namespace evtrack::nn {

// Dense forward kernels. Inputs must be finite (NonFiniteError otherwise)
// and shape-compatible (ShapeError quoting both shapes). Token matrices are
// [tokens, features]; weight matrices are [out, in] so that y = x W^T + b.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// `bias` may be empty.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-6f);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Softmax along `axis` (negative counts from the end).
Tensor softmax(const Tensor& x, int axis = -1);
/// Column means of a [tokens, D] matrix, returned as [D].
Tensor global_avg_pool(const Tensor& tokens);

Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);

/// Packed projections as in a ViT block: qkv_weight [3D, D] holds the query,
/// key and value maps stacked in that order.
struct AttentionParams {
  const Tensor& qkv_weight;
  const Tensor& qkv_bias;
  const Tensor& proj_weight;
  const Tensor& proj_bias;
};

/// Scaled dot-product attention of q_tokens [Nq, D] over kv_tokens [Nk, D].
Tensor multi_head_attention(const Tensor& q_tokens, const Tensor& kv_tokens,
                            const AttentionParams& params, std::size_t n_heads);

/// x [C, H, W], kernel [O, C, kh, kw], bias [O] or empty -> [O, H', W'].
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t pad);

/// Per-channel affine y = scale[c] * x + shift[c] on [C, H, W] (folded batch norm).
Tensor channel_affine(const Tensor& x, const Tensor& scale, const Tensor& shift);
Tensor relu(const Tensor& x);

/// Gumbel-softmax over rank-1 logits. `rng == nullptr` disables the noise,
/// giving softmax(logits / tau). `hard` returns the one-hot argmax (first
/// maximum) of the soft sample.
Tensor gumbel_softmax(const Tensor& logits, double tau, Rng* rng, bool hard);

/// Index of the first maximum.
std::size_t argmax(std::span<const float> v);

void require_finite(const Tensor& t, const char* op);

}  // namespace evtrack::nn
