// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string_view>

#include "crn/simd_ref.hpp"

// Dense float kernels used by the captioner's inner loops. Each kernel has a
// scalar reference and, where the target supports it, an AVX2+FMA (x86-64)
// or NEON (aarch64) variant. The variant is picked once at first use from the
// CPU features; CRN_SIMD=scalar forces the reference path.
//
// Double-precision calls always take the scalar templates in simd_ref.hpp.

namespace crn::simd {

struct KernelTable {
    const char* name;
    // sum_i a[i] * b[i]
    float (*dot)(const float* a, const float* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(float alpha, const float* x, float* y, std::size_t n);
    // y[r] = sum_c w[r, c] * x[c]; w is rows x cols row-major
    void (*gemv)(const float* w, std::size_t rows, std::size_t cols, const float* x, float* y);
    // y[c] += sum_r w[r, c] * x[r]
    void (*gemv_t_acc)(const float* w, std::size_t rows, std::size_t cols, const float* x, float* y);
    // w[r, c] += alpha * x[r] * y[c]
    void (*ger_acc)(float alpha, const float* x, std::size_t rows, const float* y, std::size_t cols, float* w);
};

const KernelTable& scalar_kernels();

/// AVX2+FMA table, or nullptr when not compiled in or not supported by the CPU.
const KernelTable* avx2_kernels();

/// NEON table, or nullptr when not compiled in.
const KernelTable* neon_kernels();

/// Table selected for this process.
const KernelTable& active_kernels();

inline float dot(const float* a, const float* b, std::size_t n) { return active_kernels().dot(a, b, n); }
inline void axpy(float alpha, const float* x, float* y, std::size_t n) { active_kernels().axpy(alpha, x, y, n); }
inline void gemv(const float* w, std::size_t rows, std::size_t cols, const float* x, float* y) {
    active_kernels().gemv(w, rows, cols, x, y);
}
inline void gemv_t_acc(const float* w, std::size_t rows, std::size_t cols, const float* x, float* y) {
    active_kernels().gemv_t_acc(w, rows, cols, x, y);
}
inline void ger_acc(float alpha, const float* x, std::size_t rows, const float* y, std::size_t cols, float* w) {
    active_kernels().ger_acc(alpha, x, rows, y, cols, w);
}

inline double dot(const double* a, const double* b, std::size_t n) { return ref::dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { ref::axpy(alpha, x, y, n); }
inline void gemv(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y) {
    ref::gemv(w, rows, cols, x, y);
}
inline void gemv_t_acc(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y) {
    ref::gemv_t_acc(w, rows, cols, x, y);
}
inline void ger_acc(double alpha, const double* x, std::size_t rows, const double* y, std::size_t cols, double* w) {
    ref::ger_acc(alpha, x, rows, y, cols, w);
}

} // namespace crn::simd
