// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#include "crn/simd.hpp"

namespace crn::simd {
namespace {

float dot_scalar(const float* a, const float* b, std::size_t n) { return ref::dot(a, b, n); }
void axpy_scalar(float alpha, const float* x, float* y, std::size_t n) { ref::axpy(alpha, x, y, n); }
void gemv_scalar(const float* w, std::size_t rows, std::size_t cols, const float* x, float* y) {
    ref::gemv(w, rows, cols, x, y);
}
void gemv_t_acc_scalar(const float* w, std::size_t rows, std::size_t cols, const float* x, float* y) {
    ref::gemv_t_acc(w, rows, cols, x, y);
}
void ger_acc_scalar(float alpha, const float* x, std::size_t rows, const float* y, std::size_t cols, float* w) {
    ref::ger_acc(alpha, x, rows, y, cols, w);
}

} // namespace

const KernelTable& scalar_kernels() {
    static const KernelTable table{"scalar", dot_scalar, axpy_scalar, gemv_scalar, gemv_t_acc_scalar,
                                   ger_acc_scalar};
    return table;
}

} // namespace crn::simd
