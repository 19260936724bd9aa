// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

namespace evtrack::nn::simd {

enum class Isa { scalar, avx2 };

std::string_view name(Isa isa);
std::optional<Isa> isa_from_name(std::string_view s);

/// Inner-loop kernels. Every ISA provides the same set; results agree with
/// the scalar reference to rounding (summation order differs), and within
/// one ISA every output element is a function of its own inputs only, so a
/// row computes to the same bits whatever batch it is part of.
struct KernelTable {
  Isa isa;

  /// c[m x n] = a[m x k] * b[n x k]^T, contiguous row-major operands.
  void (*gemm_nt)(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
                  std::size_t k);
  float (*dot)(const float* a, const float* b, std::size_t n);
  /// y += alpha * x
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);
  /// In-place softmax of one row.
  void (*softmax_row)(float* x, std::size_t n);
  /// In-place GELU, 0.5 x (1 + erf(x / sqrt 2)).
  void (*gelu)(float* x, std::size_t n);
};

const KernelTable& scalar_kernels();
/// nullptr when the variant was not compiled in or the CPU lacks it.
const KernelTable* avx2_kernels();

bool supported(Isa isa);
const KernelTable& table(Isa isa);

/// Active table: best supported ISA, or the one named by EVTRACK_ISA.
const KernelTable& kernels();
Isa active_isa();
/// Overrides the active table for the lifetime of the guard.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa);
  ~ScopedIsa();
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  const KernelTable* previous_;
};

/// Worker cap from EVTRACK_THREADS (default: hardware concurrency).
std::size_t max_threads();

/// Active-table gemm_nt, split over row blocks when several workers are allowed.
void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t n, std::size_t k);

}  // namespace evtrack::nn::simd
