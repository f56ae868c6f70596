// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

// Scalar reference kernels. These define the semantics the vector variants
// are tested against.

namespace crn::simd::ref {

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    T s{};
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void gemv(const T* w, std::size_t rows, std::size_t cols, const T* x, T* y) {
    for (std::size_t r = 0; r < rows; ++r) y[r] = dot(w + r * cols, x, cols);
}

template <typename T>
void gemv_t_acc(const T* w, std::size_t rows, std::size_t cols, const T* x, T* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        if (x[r] != T{}) axpy(x[r], w + r * cols, y, cols);
    }
}

template <typename T>
void ger_acc(T alpha, const T* x, std::size_t rows, const T* y, std::size_t cols, T* w) {
    for (std::size_t r = 0; r < rows; ++r) {
        T a = alpha * x[r];
        if (a != T{}) axpy(a, y, w + r * cols, cols);
    }
}

} // namespace crn::simd::ref
