// SPDX-License-Identifier: Apache-2.0
// AVX2 + FMA kernels. This translation unit is built with -mavx2 -mfma and
// only entered after a runtime CPU check.
#include <immintrin.h>

#include <cmath>

#include "simd_internal.hpp"

namespace evtrack::nn::simd::detail {

namespace {

inline float hsum(__m256 v) {
  const __m128 lo = _mm256_castps256_ps128(v);
  const __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_movehdup_ps(s));
  return _mm_cvtss_f32(s);
}

// Every element goes through the same sequence: 8-lane FMA over full chunks,
// hsum, then a scalar FMA tail. Blocked and single paths therefore agree
// bit for bit.
inline float finish(__m256 acc, const float* a, const float* b, std::size_t k8, std::size_t k) {
  float s = hsum(acc);
  for (std::size_t p = k8; p < k; ++p) s = std::fma(a[p], b[p], s);
  return s;
}

float dot(const float* a, const float* b, std::size_t n) {
  const std::size_t n8 = n & ~std::size_t{7};
  __m256 acc = _mm256_setzero_ps();
  for (std::size_t p = 0; p < n8; p += 8) {
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + p), _mm256_loadu_ps(b + p), acc);
  }
  return finish(acc, a, b, n8, n);
}

void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t n, std::size_t k) {
  constexpr std::size_t kMr = 4;
  constexpr std::size_t kNr = 3;
  const std::size_t k8 = k & ~std::size_t{7};
  const std::size_t m4 = m - m % kMr;
  const std::size_t n3 = n - n % kNr;

  for (std::size_t i = 0; i < m4; i += kMr) {
    const float* a0 = a + (i + 0) * k;
    const float* a1 = a + (i + 1) * k;
    const float* a2 = a + (i + 2) * k;
    const float* a3 = a + (i + 3) * k;
    for (std::size_t j = 0; j < n3; j += kNr) {
      const float* b0 = b + (j + 0) * k;
      const float* b1 = b + (j + 1) * k;
      const float* b2 = b + (j + 2) * k;
      __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps(), c02 = _mm256_setzero_ps();
      __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps(), c12 = _mm256_setzero_ps();
      __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps(), c22 = _mm256_setzero_ps();
      __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps(), c32 = _mm256_setzero_ps();
      for (std::size_t p = 0; p < k8; p += 8) {
        const __m256 vb0 = _mm256_loadu_ps(b0 + p);
        const __m256 vb1 = _mm256_loadu_ps(b1 + p);
        const __m256 vb2 = _mm256_loadu_ps(b2 + p);
        __m256 va = _mm256_loadu_ps(a0 + p);
        c00 = _mm256_fmadd_ps(va, vb0, c00);
        c01 = _mm256_fmadd_ps(va, vb1, c01);
        c02 = _mm256_fmadd_ps(va, vb2, c02);
        va = _mm256_loadu_ps(a1 + p);
        c10 = _mm256_fmadd_ps(va, vb0, c10);
        c11 = _mm256_fmadd_ps(va, vb1, c11);
        c12 = _mm256_fmadd_ps(va, vb2, c12);
        va = _mm256_loadu_ps(a2 + p);
        c20 = _mm256_fmadd_ps(va, vb0, c20);
        c21 = _mm256_fmadd_ps(va, vb1, c21);
        c22 = _mm256_fmadd_ps(va, vb2, c22);
        va = _mm256_loadu_ps(a3 + p);
        c30 = _mm256_fmadd_ps(va, vb0, c30);
        c31 = _mm256_fmadd_ps(va, vb1, c31);
        c32 = _mm256_fmadd_ps(va, vb2, c32);
      }
      float* r0 = c + (i + 0) * n + j;
      float* r1 = c + (i + 1) * n + j;
      float* r2 = c + (i + 2) * n + j;
      float* r3 = c + (i + 3) * n + j;
      r0[0] = finish(c00, a0, b0, k8, k);
      r0[1] = finish(c01, a0, b1, k8, k);
      r0[2] = finish(c02, a0, b2, k8, k);
      r1[0] = finish(c10, a1, b0, k8, k);
      r1[1] = finish(c11, a1, b1, k8, k);
      r1[2] = finish(c12, a1, b2, k8, k);
      r2[0] = finish(c20, a2, b0, k8, k);
      r2[1] = finish(c21, a2, b1, k8, k);
      r2[2] = finish(c22, a2, b2, k8, k);
      r3[0] = finish(c30, a3, b0, k8, k);
      r3[1] = finish(c31, a3, b1, k8, k);
      r3[2] = finish(c32, a3, b2, k8, k);
    }
    for (std::size_t j = n3; j < n; ++j) {
      for (std::size_t r = 0; r < kMr; ++r) c[(i + r) * n + j] = dot(a + (i + r) * k, b + j * k, k);
    }
  }
  for (std::size_t i = m4; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = dot(a + i * k, b + j * k, k);
  }
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  const std::size_t n8 = n & ~std::size_t{7};
  const __m256 va = _mm256_set1_ps(alpha);
  for (std::size_t i = 0; i < n8; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (std::size_t i = n8; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

// Cephes-style expf: range reduction by ln 2 (split constant), degree-5
// polynomial, exponent reassembly. About 1 ulp on [-87, 88].
inline __m256 exp_ps(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.3762626647949f);
  const __m256 lo = _mm256_set1_ps(-87.3365447504019f);
  x = _mm256_min_ps(_mm256_max_ps(x, lo), hi);
  const __m256 n = _mm256_round_ps(_mm256_mul_ps(x, _mm256_set1_ps(1.44269504088896341f)),
                                   _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256 r = _mm256_fnmadd_ps(n, _mm256_set1_ps(0.693359375f), x);
  r = _mm256_fnmadd_ps(n, _mm256_set1_ps(-2.12194440e-4f), r);
  __m256 p = _mm256_set1_ps(1.9875691500e-4f);
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(1.3981999507e-3f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(8.3334519073e-3f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(4.1665795894e-2f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(1.6666665459e-1f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(5.0000001201e-1f));
  const __m256 r2 = _mm256_mul_ps(r, r);
  p = _mm256_fmadd_ps(p, r2, _mm256_add_ps(r, _mm256_set1_ps(1.0f)));
  const __m256i e = _mm256_slli_epi32(_mm256_add_epi32(_mm256_cvtps_epi32(n), _mm256_set1_epi32(127)), 23);
  return _mm256_mul_ps(p, _mm256_castsi256_ps(e));
}

inline float exp_scalar(float x) {
  alignas(32) float buf[8] = {x};
  _mm256_store_ps(buf, exp_ps(_mm256_load_ps(buf)));
  return buf[0];
}

void softmax_row(float* x, std::size_t n) {
  if (n == 0) return;
  const std::size_t n8 = n & ~std::size_t{7};
  __m256 vmax = _mm256_set1_ps(-INFINITY);
  for (std::size_t i = 0; i < n8; i += 8) vmax = _mm256_max_ps(vmax, _mm256_loadu_ps(x + i));
  alignas(32) float lanes[8];
  _mm256_store_ps(lanes, vmax);
  float mx = lanes[0];
  for (int l = 1; l < 8; ++l) mx = mx > lanes[l] ? mx : lanes[l];
  for (std::size_t i = n8; i < n; ++i) mx = mx > x[i] ? mx : x[i];

  const __m256 vm = _mm256_set1_ps(mx);
  __m256 vsum = _mm256_setzero_ps();
  for (std::size_t i = 0; i < n8; i += 8) {
    const __m256 e = exp_ps(_mm256_sub_ps(_mm256_loadu_ps(x + i), vm));
    _mm256_storeu_ps(x + i, e);
    vsum = _mm256_add_ps(vsum, e);
  }
  float sum = hsum(vsum);
  for (std::size_t i = n8; i < n; ++i) {
    x[i] = exp_scalar(x[i] - mx);
    sum += x[i];
  }
  const __m256 inv = _mm256_set1_ps(1.0f / sum);
  for (std::size_t i = 0; i < n8; i += 8) _mm256_storeu_ps(x + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), inv));
  for (std::size_t i = n8; i < n; ++i) x[i] *= 1.0f / sum;
}

// Rational minimax erf on [-4, 4] (|err| ~ 1e-7); erf is +-1 in float beyond.
inline __m256 erf_ps(__m256 a) {
  const __m256 x = _mm256_min_ps(_mm256_max_ps(a, _mm256_set1_ps(-4.0f)), _mm256_set1_ps(4.0f));
  const __m256 x2 = _mm256_mul_ps(x, x);
  __m256 p = _mm256_set1_ps(-2.72614225801306e-10f);
  p = _mm256_fmadd_ps(x2, p, _mm256_set1_ps(2.77068142495902e-08f));
  p = _mm256_fmadd_ps(x2, p, _mm256_set1_ps(-2.10102402082508e-06f));
  p = _mm256_fmadd_ps(x2, p, _mm256_set1_ps(-5.69250639462346e-05f));
  p = _mm256_fmadd_ps(x2, p, _mm256_set1_ps(-7.34990630326855e-04f));
  p = _mm256_fmadd_ps(x2, p, _mm256_set1_ps(-2.95459980854025e-03f));
  p = _mm256_fmadd_ps(x2, p, _mm256_set1_ps(-1.60960333262415e-02f));
  p = _mm256_mul_ps(x, p);
  __m256 q = _mm256_set1_ps(-1.45660718464996e-05f);
  q = _mm256_fmadd_ps(x2, q, _mm256_set1_ps(-2.13374055278905e-04f));
  q = _mm256_fmadd_ps(x2, q, _mm256_set1_ps(-1.68282697438203e-03f));
  q = _mm256_fmadd_ps(x2, q, _mm256_set1_ps(-7.37332916720468e-03f));
  q = _mm256_fmadd_ps(x2, q, _mm256_set1_ps(-1.42647390514189e-02f));
  return _mm256_div_ps(p, q);
}

void gelu(float* x, std::size_t n) {
  const std::size_t n8 = n & ~std::size_t{7};
  const __m256 half = _mm256_set1_ps(0.5f);
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 inv_sqrt2 = _mm256_set1_ps(0.70710678118654752f);
  for (std::size_t i = 0; i < n8; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 e = erf_ps(_mm256_mul_ps(v, inv_sqrt2));
    _mm256_storeu_ps(x + i, _mm256_mul_ps(_mm256_mul_ps(half, v), _mm256_add_ps(one, e)));
  }
  if (n8 < n) {
    alignas(32) float buf[8] = {};
    for (std::size_t i = n8; i < n; ++i) buf[i - n8] = x[i];
    const __m256 v = _mm256_load_ps(buf);
    const __m256 e = erf_ps(_mm256_mul_ps(v, inv_sqrt2));
    _mm256_store_ps(buf, _mm256_mul_ps(_mm256_mul_ps(half, v), _mm256_add_ps(one, e)));
    for (std::size_t i = n8; i < n; ++i) x[i] = buf[i - n8];
  }
}

constexpr KernelTable kTable{Isa::avx2, gemm_nt, dot, axpy, softmax_row, gelu};

}  // namespace

const KernelTable& avx2_table() { return kTable; }

}  // namespace evtrack::nn::simd::detail
