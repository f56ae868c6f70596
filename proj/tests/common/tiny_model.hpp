// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>

#include "crn/captioner.hpp"
#include "crn/rng.hpp"
#include "crn/vocab_embed.hpp"
#include "helpers.hpp"

namespace crn::test {

// 3 specials + 4 words = N_v 7.
inline Vocabulary tiny_vocab() { return Vocabulary({"a", "b", "c", "d"}, {"novel"}, {"c"}); }

inline CaptionerDims tiny_dims() {
    CaptionerDims d;
    d.vocab = 7;
    d.embed = 3;
    d.image = 4;
    d.hidden = 5;
    d.visual = 4;
    d.classes = 6;
    return d;
}

template <typename T>
inline void randomize(CaptionerParamsT<T>& p, Rng& rng, double scale) {
    p.for_each([&](const char*, auto span) {
        for (auto& x : span) x = static_cast<T>(scale * rng.normal());
    });
}

inline DetectionSet random_detections(Rng& rng, std::size_t n, const CaptionerDims& d) {
    DetectionSet ds;
    for (std::size_t k = 0; k < n; ++k) {
        Detection det;
        det.feature = random_vector(rng, d.visual);
        det.class_scores.assign(d.classes, 0.0f);
        double sum = 0;
        for (auto& s : det.class_scores) {
            s = static_cast<float>(rng.uniform(0.05, 1.0));
            sum += s;
        }
        for (auto& s : det.class_scores) s = static_cast<float>(s / sum);
        det.top_class = static_cast<std::size_t>(
            std::max_element(det.class_scores.begin(), det.class_scores.end()) - det.class_scores.begin());
        ds.detections.push_back(std::move(det));
    }
    return ds;
}

inline TrainingExample make_example(Rng& rng, const Vocabulary& v, const std::vector<float>* image, const DetectionSet* dets,
                             std::size_t len, const CaptionerDims& d) {
    TrainingExample ex;
    ex.image = image;
    ex.detections = dets;
    bool any_label = false;
    for (std::size_t t = 0; t < len; ++t) {
        WordId w = static_cast<WordId>(3 + rng.index(4));
        std::uint8_t label = rng.bernoulli(0.4) ? 1 : 0;
        any_label |= label != 0;
        ex.tokens.push_back({w, label, w});
        ex.targets.push_back(rng.index(d.classes));
    }
    if (!any_label) ex.tokens[0].novel_label = 1;
    (void)v;
    return ex;
}

} // namespace crn::test
