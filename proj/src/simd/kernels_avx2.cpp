// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

// Compiled with -mavx2 -mfma. Nothing here may run unless the dispatcher has
// confirmed both features on the host CPU.

#include "crn/simd.hpp"

#if defined(CRN_HAVE_AVX2)

#include <immintrin.h>

namespace crn::simd {
namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
}

float dot_avx2(const float* a, const float* b, std::size_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8) acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    float s = hsum(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_avx2(float alpha, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_avx2(const float* w, std::size_t rows, std::size_t cols, const float* x, float* y) {
    std::size_t r = 0;
    // Four rows at a time share the loads of x.
    for (; r + 4 <= rows; r += 4) {
        const float* w0 = w + r * cols;
        const float* w1 = w0 + cols;
        const float* w2 = w1 + cols;
        const float* w3 = w2 + cols;
        __m256 a0 = _mm256_setzero_ps(), a1 = _mm256_setzero_ps();
        __m256 a2 = _mm256_setzero_ps(), a3 = _mm256_setzero_ps();
        std::size_t c = 0;
        for (; c + 8 <= cols; c += 8) {
            __m256 vx = _mm256_loadu_ps(x + c);
            a0 = _mm256_fmadd_ps(_mm256_loadu_ps(w0 + c), vx, a0);
            a1 = _mm256_fmadd_ps(_mm256_loadu_ps(w1 + c), vx, a1);
            a2 = _mm256_fmadd_ps(_mm256_loadu_ps(w2 + c), vx, a2);
            a3 = _mm256_fmadd_ps(_mm256_loadu_ps(w3 + c), vx, a3);
        }
        float s0 = hsum(a0), s1 = hsum(a1), s2 = hsum(a2), s3 = hsum(a3);
        for (; c < cols; ++c) {
            s0 += w0[c] * x[c];
            s1 += w1[c] * x[c];
            s2 += w2[c] * x[c];
            s3 += w3[c] * x[c];
        }
        y[r] = s0;
        y[r + 1] = s1;
        y[r + 2] = s2;
        y[r + 3] = s3;
    }
    for (; r < rows; ++r) y[r] = dot_avx2(w + r * cols, x, cols);
}

void gemv_t_acc_avx2(const float* w, std::size_t rows, std::size_t cols, const float* x, float* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        if (x[r] != 0.0f) axpy_avx2(x[r], w + r * cols, y, cols);
    }
}

void ger_acc_avx2(float alpha, const float* x, std::size_t rows, const float* y, std::size_t cols, float* w) {
    for (std::size_t r = 0; r < rows; ++r) {
        float a = alpha * x[r];
        if (a != 0.0f) axpy_avx2(a, y, w + r * cols, cols);
    }
}

} // namespace

const KernelTable& avx2_kernels_unchecked() {
    static const KernelTable table{"avx2", dot_avx2, axpy_avx2, gemv_avx2, gemv_t_acc_avx2, ger_acc_avx2};
    return table;
}

} // namespace crn::simd

#endif
