// SPDX-License-Identifier: Apache-2.0
// Reference kernels. Plain loops, double-free, no reassociation.
#include <algorithm>
#include <cmath>

#include "simd_internal.hpp"

namespace evtrack::nn::simd::detail {

namespace {

void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const float* bj = b + j * k;
      float s = 0.0f;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] = s;
    }
  }
}

float dot(const float* a, const float* b, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void softmax_row(float* x, std::size_t n) {
  if (n == 0) return;
  const float mx = *std::max_element(x, x + n);
  float sum = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  const float inv = 1.0f / sum;
  for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

void gelu(float* x, std::size_t n) {
  constexpr float kInvSqrt2 = 0.70710678118654752f;
  for (std::size_t i = 0; i < n; ++i) x[i] = 0.5f * x[i] * (1.0f + std::erf(x[i] * kInvSqrt2));
}

constexpr KernelTable kTable{Isa::scalar, gemm_nt, dot, axpy, softmax_row, gelu};

}  // namespace

const KernelTable& scalar_table() { return kTable; }

}  // namespace evtrack::nn::simd::detail
