// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#include "crn/simd.hpp"

#if defined(CRN_HAVE_NEON)

#include <arm_neon.h>

namespace crn::simd {
namespace {

float dot_neon(const float* a, const float* b, std::size_t n) {
    float32x4_t acc0 = vdupq_n_f32(0.0f);
    float32x4_t acc1 = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = vfmaq_f32(acc0, vld1q_f32(a + i), vld1q_f32(b + i));
        acc1 = vfmaq_f32(acc1, vld1q_f32(a + i + 4), vld1q_f32(b + i + 4));
    }
    for (; i + 4 <= n; i += 4) acc0 = vfmaq_f32(acc0, vld1q_f32(a + i), vld1q_f32(b + i));
    float s = vaddvq_f32(vaddq_f32(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_neon(float alpha, const float* x, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vfmaq_n_f32(vld1q_f32(y + i), vld1q_f32(x + i), alpha));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_neon(const float* w, std::size_t rows, std::size_t cols, const float* x, float* y) {
    for (std::size_t r = 0; r < rows; ++r) y[r] = dot_neon(w + r * cols, x, cols);
}

void gemv_t_acc_neon(const float* w, std::size_t rows, std::size_t cols, const float* x, float* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        if (x[r] != 0.0f) axpy_neon(x[r], w + r * cols, y, cols);
    }
}

void ger_acc_neon(float alpha, const float* x, std::size_t rows, const float* y, std::size_t cols, float* w) {
    for (std::size_t r = 0; r < rows; ++r) {
        float a = alpha * x[r];
        if (a != 0.0f) axpy_neon(a, y, w + r * cols, cols);
    }
}

} // namespace

const KernelTable& neon_kernels_unchecked() {
    static const KernelTable table{"neon", dot_neon, axpy_neon, gemv_neon, gemv_t_acc_neon, ger_acc_neon};
    return table;
}

} // namespace crn::simd

#endif
