// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "evtrack/nn/simd.hpp"

namespace evtrack::nn::simd::detail {

const KernelTable& scalar_table();
#if defined(EVTRACK_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

}  // namespace evtrack::nn::simd::detail
