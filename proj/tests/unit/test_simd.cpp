// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <vector>

#include "crn/simd.hpp"
#include "helpers.hpp"

using namespace crn;

namespace {

std::vector<const simd::KernelTable*> variants() {
    std::vector<const simd::KernelTable*> out = {&simd::scalar_kernels()};
    if (auto* t = simd::avx2_kernels()) out.push_back(t);
    if (auto* t = simd::neon_kernels()) out.push_back(t);
    return out;
}

// Tolerance for reordered float sums of n products of magnitude ~1.
float tol(std::size_t n) { return 1e-5f * static_cast<float>(n + 1); }

} // namespace

TEST_SUITE("simd") {

TEST_CASE("active table is one of the compiled variants") {
    const auto& active = simd::active_kernels();
    bool found = false;
    for (auto* t : variants()) found |= t == &active;
    CHECK(found);
    MESSAGE("active kernels: " << active.name);
}

TEST_CASE("vector kernels agree with the scalar reference") {
    const auto& ref = simd::scalar_kernels();
    Rng rng(77);
    for (auto* k : variants()) {
        CAPTURE(k->name);
        for (std::size_t n : {0u, 1u, 3u, 7u, 8u, 9u, 15u, 16u, 17u, 31u, 64u, 100u, 257u}) {
            auto a = test::random_vector(rng, n);
            auto b = test::random_vector(rng, n);
            CHECK(k->dot(a.data(), b.data(), n) == doctest::Approx(ref.dot(a.data(), b.data(), n)).epsilon(tol(n)));

            auto y1 = test::random_vector(rng, n);
            auto y2 = y1;
            k->axpy(0.37f, a.data(), y1.data(), n);
            ref.axpy(0.37f, a.data(), y2.data(), n);
            for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-6));
        }
        for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{1, 1}, {4, 7}, {9, 16}, {33, 5}, {64, 64},
                                  {256, 138}}) {
            auto w = test::random_vector(rng, rows * cols);
            auto x = test::random_vector(rng, cols);
            auto xr = test::random_vector(rng, rows);
            std::vector<float> y1(rows), y2(rows);
            k->gemv(w.data(), rows, cols, x.data(), y1.data());
            ref.gemv(w.data(), rows, cols, x.data(), y2.data());
            for (std::size_t r = 0; r < rows; ++r) CHECK(y1[r] == doctest::Approx(y2[r]).epsilon(tol(cols)));

            auto z1 = test::random_vector(rng, cols);
            auto z2 = z1;
            k->gemv_t_acc(w.data(), rows, cols, xr.data(), z1.data());
            ref.gemv_t_acc(w.data(), rows, cols, xr.data(), z2.data());
            for (std::size_t c = 0; c < cols; ++c) CHECK(z1[c] == doctest::Approx(z2[c]).epsilon(tol(rows)));

            auto w1 = w, w2 = w;
            k->ger_acc(0.5f, xr.data(), rows, x.data(), cols, w1.data());
            ref.ger_acc(0.5f, xr.data(), rows, x.data(), cols, w2.data());
            for (std::size_t i = 0; i < w1.size(); ++i) CHECK(w1[i] == doctest::Approx(w2[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("double overloads use the scalar reference") {
    std::vector<double> a = {1, 2, 3}, b = {4, 5, 6};
    CHECK(simd::dot(a.data(), b.data(), 3) == 32.0);
    std::vector<double> w = {1, 2, 3, 4}, x = {1, -1}, y(2);
    simd::gemv(w.data(), 2, 2, x.data(), y.data());
    CHECK(y == std::vector<double>{-1, -1});
}

} // TEST_SUITE
