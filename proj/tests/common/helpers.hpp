// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "crn/rng.hpp"

namespace crn::test {

inline std::string data_path(const std::string& name) { return std::string(CRN_TEST_DATA_DIR) + "/" + name; }

inline std::vector<float> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(scale * rng.normal());
    return v;
}

inline std::vector<float> unit_vector(Rng& rng, std::size_t n) {
    auto v = random_vector(rng, n);
    double s = 0.0;
    for (float x : v) s += double(x) * x;
    s = std::sqrt(s);
    for (auto& x : v) x = static_cast<float>(x / s);
    return v;
}

// Plain double cosine used as an oracle against the library routine.
inline double naive_cosine(std::span<const float> a, std::span<const float> b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += double(a[i]) * b[i];
        aa += double(a[i]) * a[i];
        bb += double(b[i]) * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

} // namespace crn::test
