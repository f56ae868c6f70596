// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <string>
#include <string_view>

#include "crn/log.hpp"
#include "crn/simd.hpp"

namespace crn::simd {

#if defined(CRN_HAVE_AVX2)
const KernelTable& avx2_kernels_unchecked();
#endif
#if defined(CRN_HAVE_NEON)
const KernelTable& neon_kernels_unchecked();
#endif

const KernelTable* avx2_kernels() {
#if defined(CRN_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported ? &avx2_kernels_unchecked() : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable* neon_kernels() {
#if defined(CRN_HAVE_NEON)
    return &neon_kernels_unchecked();
#else
    return nullptr;
#endif
}

namespace {

const KernelTable& select() {
    const char* env = std::getenv("CRN_SIMD");
    std::string_view want = env ? env : "";
    if (want == "scalar") return scalar_kernels();
    if (const KernelTable* t = avx2_kernels()) return *t;
    if (const KernelTable* t = neon_kernels()) return *t;
    return scalar_kernels();
}

} // namespace

const KernelTable& active_kernels() {
    static const KernelTable& table = []() -> const KernelTable& {
        const KernelTable& t = select();
        log::debug(std::string("simd kernels: ") + t.name);
        return t;
    }();
    return table;
}

} // namespace crn::simd
