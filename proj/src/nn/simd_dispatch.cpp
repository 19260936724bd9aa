// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "evtrack/error.hpp"
#include "simd_internal.hpp"

namespace evtrack::nn::simd {

namespace {

bool cpu_has_avx2() {
#if defined(EVTRACK_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  if (const char* env = std::getenv("EVTRACK_ISA")) {
    const auto isa = isa_from_name(env);
    if (!isa) throw InvalidArgument("EVTRACK_ISA: unknown ISA '" + std::string(env) + "'");
    return &table(*isa);
  }
  if (const KernelTable* t = avx2_kernels()) return t;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& active() {
  static std::atomic<const KernelTable*> t{initial_table()};
  return t;
}

}  // namespace

std::string_view name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "?";
}

std::optional<Isa> isa_from_name(std::string_view s) {
  if (s == "scalar") return Isa::scalar;
  if (s == "avx2") return Isa::avx2;
  return std::nullopt;
}

const KernelTable& scalar_kernels() { return detail::scalar_table(); }

const KernelTable* avx2_kernels() {
#if defined(EVTRACK_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &detail::avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

bool supported(Isa isa) { return isa == Isa::scalar || (isa == Isa::avx2 && avx2_kernels()); }

const KernelTable& table(Isa isa) {
  if (isa == Isa::scalar) return scalar_kernels();
  if (const KernelTable* t = avx2_kernels()) return *t;
  throw InvalidArgument("ISA '" + std::string(name(isa)) + "' not supported on this build/CPU");
}

const KernelTable& kernels() { return *active().load(std::memory_order_acquire); }

Isa active_isa() { return kernels().isa; }

ScopedIsa::ScopedIsa(Isa isa) : previous_(&kernels()) { active().store(&table(isa)); }

ScopedIsa::~ScopedIsa() { active().store(previous_); }

std::size_t max_threads() {
  static const std::size_t n = [] {
    std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("EVTRACK_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v >= 1) hw = std::min<std::size_t>(hw, static_cast<std::size_t>(v));
    }
    return hw;
  }();
  return n;
}

void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t n, std::size_t k) {
  const KernelTable& kt = kernels();
  const std::size_t workers = std::min(max_threads(), m / 64);
  if (workers <= 1 || m * n * k < (std::size_t{1} << 22)) {
    kt.gemm_nt(a, b, c, m, n, k);
    return;
  }
  // Row blocks are multiples of 4 so the split does not change which
  // elements share a micro-kernel; per-element results are split-invariant.
  const std::size_t block = ((m + workers - 1) / workers + 3) & ~std::size_t{3};
  std::vector<std::jthread> pool;
  for (std::size_t r0 = 0; r0 < m; r0 += block) {
    const std::size_t rows = std::min(block, m - r0);
    pool.emplace_back([&, r0, rows] { kt.gemm_nt(a + r0 * k, b, c + r0 * n, rows, n, k); });
  }
}

}  // namespace evtrack::nn::simd
