// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <sstream>

#include "crn/captioner.hpp"
#include "crn/error.hpp"
#include "helpers.hpp"
#include "tiny_model.hpp"

using namespace crn;
using namespace crn::test;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Straight-line recomputation of one decoder step from the raw tensors.
struct OracleStep {
    std::vector<double> probs, h, c;
    double m;
};

OracleStep oracle_step(const CaptionerParams& p, WordId w, int label, const std::vector<double>& h_prev,
                       const std::vector<double>& c_prev) {
    const auto& d = p.dims;
    std::vector<double> x;
    for (std::size_t k = 0; k < d.embed; ++k) x.push_back(p.word_embed(w, k));
    for (std::size_t k = 0; k < d.embed; ++k) x.push_back(p.label_embed(label, k));
    for (double v : h_prev) x.push_back(v);
    OracleStep o;
    o.h.resize(d.hidden);
    o.c.resize(d.hidden);
    auto pre = [&](std::size_t row) {
        double s = p.lstm_b[row];
        for (std::size_t k = 0; k < x.size(); ++k) s += p.lstm_w(row, k) * x[k];
        return s;
    };
    for (std::size_t j = 0; j < d.hidden; ++j) {
        double i = sig(pre(j)), f = sig(pre(d.hidden + j)), g = std::tanh(pre(2 * d.hidden + j)),
               ou = sig(pre(3 * d.hidden + j));
        o.c[j] = f * c_prev[j] + i * g;
        o.h[j] = ou * std::tanh(o.c[j]);
    }
    std::vector<double> logits(d.vocab);
    double mx = -1e300;
    for (std::size_t v = 0; v < d.vocab; ++v) {
        logits[v] = p.out_b[v];
        for (std::size_t j = 0; j < d.hidden; ++j) logits[v] += p.out_w(v, j) * o.h[j];
        mx = std::max(mx, logits[v]);
    }
    double z = 0;
    for (auto& l : logits) z += std::exp(l - mx);
    for (auto& l : logits) o.probs.push_back(std::exp(l - mx) / z);
    double ml = p.ppl_b[0];
    for (std::size_t j = 0; j < d.hidden; ++j) ml += p.ppl_w(0, j) * o.h[j];
    o.m = sig(ml);
    return o;
}

std::vector<double> oracle_h0(const CaptionerParams& p, std::span<const float> image) {
    std::vector<double> h(p.dims.hidden);
    for (std::size_t j = 0; j < h.size(); ++j) {
        double s = 0;
        for (std::size_t k = 0; k < image.size(); ++k) s += p.init_proj(j, k) * double(image[k]);
        h[j] = std::tanh(s);
    }
    return h;
}

// -log O_t[target] recomputed from the projected hidden state.
double oracle_det_term(const CaptionerParamsT<double>& p, const std::vector<double>& h, const DetectionSet& ds,
                       std::size_t target) {
    const auto& d = p.dims;
    std::vector<double> u(d.visual, 0.0);
    for (std::size_t r = 0; r < d.visual; ++r)
        for (std::size_t j = 0; j < d.hidden; ++j) u[r] += p.vis_proj(r, j) * h[j];
    std::vector<double> s;
    for (const auto& det : ds.detections) {
        double v = 0;
        for (std::size_t r = 0; r < d.visual; ++r) v += double(det.feature[r]) * u[r];
        s.push_back(v);
    }
    double mx = *std::max_element(s.begin(), s.end()), z = 0;
    for (double v : s) z += std::exp(v - mx);
    double o = 0;
    for (std::size_t k = 0; k < s.size(); ++k) o += std::exp(s[k] - mx) / z * ds.detections[k].class_scores[target];
    return -std::log(std::max(o, kDetLogFloor));
}


} // namespace

TEST_SUITE("captioner") {

TEST_CASE("init is deterministic, bounded and seed dependent") {
    auto a = init_params<float>(tiny_dims(), 3);
    auto b = init_params<float>(tiny_dims(), 3);
    auto c = init_params<float>(tiny_dims(), 4);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    a.for_each([](const char*, auto span) {
        for (float x : span) {
            CHECK(x >= -0.08f);
            CHECK(x <= 0.08f);
        }
    });
    auto z = init_params<float>(tiny_dims(), 3, true);
    z.for_each([](const char*, auto span) {
        for (float x : span) CHECK(x == 0.0f);
    });
}

TEST_CASE("zero heads give a uniform distribution and m = 0.5") {
    auto p = init_params<float>(tiny_dims(), 1);
    std::fill(p.out_w.flat().begin(), p.out_w.flat().end(), 0.0f);
    std::fill(p.out_b.begin(), p.out_b.end(), 0.0f);
    std::fill(p.ppl_w.flat().begin(), p.ppl_w.flat().end(), 0.0f);
    p.ppl_b[0] = 0;
    std::vector<float> img(4, 0.5f);
    auto r = step(p, 0, 0, initial_state(p, img));
    for (float x : r.probs) CHECK(x == doctest::Approx(1.0 / 7.0).epsilon(1e-6));
    CHECK(r.perplexity == doctest::Approx(0.5));
}

TEST_CASE("dimension mismatches are refused") {
    auto p = init_params<float>(tiny_dims(), 1);
    p.out_w = Matrix<float>(7, 4);
    CHECK_THROWS_AS(p.validate(), DimensionError);
    auto q = init_params<float>(tiny_dims(), 1);
    std::vector<float> bad_image(5, 0.1f);
    CHECK_THROWS_AS(initial_state(q, bad_image), DimensionError);
    CaptionerDims d = tiny_dims();
    d.vocab = 2;
    CHECK_THROWS_AS(d.validate(), DimensionError);
}

TEST_CASE("step matches a straight-line recomputation") {
    Rng rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        auto p = init_params<float>(tiny_dims(), 100 + trial);
        randomize(p, rng, 0.7);
        auto img = test::random_vector(rng, 4);
        auto s0 = initial_state(p, img);
        auto h0 = oracle_h0(p, img);
        for (std::size_t j = 0; j < h0.size(); ++j) CHECK(s0.h[j] == doctest::Approx(h0[j]).epsilon(1e-5));

        WordId w = static_cast<WordId>(rng.index(7));
        int label = static_cast<int>(rng.index(2));
        auto r = step(p, w, label, s0);
        auto o = oracle_step(p, w, label, h0, std::vector<double>(5, 0.0));
        for (std::size_t v = 0; v < 7; ++v) CHECK(r.probs[v] == doctest::Approx(o.probs[v]).epsilon(1e-5));
        for (std::size_t j = 0; j < 5; ++j) {
            CHECK(r.state.h[j] == doctest::Approx(o.h[j]).epsilon(1e-5));
            CHECK(r.state.c[j] == doctest::Approx(o.c[j]).epsilon(1e-5));
        }
        CHECK(r.perplexity == doctest::Approx(o.m).epsilon(1e-5));
    }
}

TEST_CASE("softmax normalization and sigmoid range on random inputs") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        auto p = init_params<float>(tiny_dims(), trial);
        randomize(p, rng, trial % 2 ? 3.0 : 0.3);
        auto img = test::random_vector(rng, 4);
        auto r = step(p, static_cast<WordId>(rng.index(7)), static_cast<int>(rng.index(2)), initial_state(p, img));
        double sum = 0;
        for (float x : r.probs) sum += x;
        CHECK(std::abs(sum - 1.0) <= 1e-6);
        CHECK(r.perplexity > 0.0f);
        CHECK(r.perplexity < 1.0f);
    }
}

TEST_CASE("step rejects out-of-range inputs") {
    auto p = init_params<float>(tiny_dims(), 1);
    std::vector<float> img(4, 0.1f);
    auto s = initial_state(p, img);
    CHECK_THROWS_AS(step(p, 7, 0, s), Error);
    CHECK_THROWS_AS(step(p, 0, 2, s), Error);
}

TEST_CASE("greedy decoding caps, stops and stays in-domain") {
    auto v = tiny_vocab();
    auto p = init_params<float>(tiny_dims(), 2);
    std::vector<float> img(4, 0.3f);

    auto stop = p;
    stop.out_b[v.end()] = 50.0f;
    auto empty = decode_greedy(stop, img, 10, 0.15, v);
    CHECK(empty.tokens.empty());

    auto chatty = p;
    chatty.out_b[3] = 50.0f;
    auto one = decode_greedy(chatty, img, 1, 0.15, v, true);
    REQUIRE(one.tokens.size() == 1);
    CHECK(one.tokens[0] == 3);
    CHECK(one.perplexities.size() == 1);
    CHECK(one.hidden_states.size() == 1);
    CHECK(one.distributions.size() == 1);

    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        auto q = init_params<float>(tiny_dims(), trial);
        randomize(q, rng, 1.5);
        auto out = decode_greedy(q, test::random_vector(rng, 4), 12, 0.15, v, true);
        CHECK(out.tokens.size() <= 12);
        CHECK(out.perplexities.size() == out.tokens.size());
        CHECK(out.hidden_states.size() == out.tokens.size());
        for (std::size_t t = 0; t < out.tokens.size(); ++t) {
            CHECK(v.is_in_domain(out.tokens[t]));
            CHECK(out.tokens[t] != v.end());
            double sum = 0;
            for (float x : out.distributions[t]) sum += x;
            CHECK(std::abs(sum - 1.0) <= 1e-6);
            CHECK(out.perplexities[t] > 0.0f);
            CHECK(out.perplexities[t] < 1.0f);
        }
    }
}

TEST_CASE("decoding feeds back the thresholded perplexity label") {
    auto v = tiny_vocab();
    Rng rng(12);
    auto p = init_params<float>(tiny_dims(), 5);
    randomize(p, rng, 1.0);
    p.out_b[v.end()] = -50.0f;
    auto img = test::random_vector(rng, 4);
    auto out = decode_greedy(p, img, 4, 0.5, v);
    REQUIRE(out.tokens.size() == 4);
    auto state = initial_state(p, img);
    WordId w = v.start();
    int label = 0;
    for (std::size_t t = 0; t < 4; ++t) {
        auto r = step(p, w, label, state);
        CHECK(r.perplexity == doctest::Approx(out.perplexities[t]).epsilon(1e-6));
        w = out.tokens[t];
        label = out.perplexities[t] > 0.5f ? 1 : 0;
        state = r.state;
    }
}

TEST_CASE("loss_cap closed forms") {
    Vocabulary v({"a", "b", "c", "d", "e", "f", "g"}, {}, {});
    CaptionerDims d = tiny_dims();
    d.vocab = 10;
    auto p = init_params<float>(d, 0, true);
    std::vector<float> img(4, 0.2f);
    std::vector<TrainingToken> toks = {{3, 0, 3}, {4, 1, 4}, {5, 0, 5}};
    CHECK(loss_cap(p, toks, img, v) == doctest::Approx(std::log(10.0) + std::log(2.0)).epsilon(1e-6));

    // m_t pinned to the label: only the caption term remains.
    std::vector<TrainingToken> zeros = {{3, 0, 3}, {4, 0, 4}};
    p.ppl_b[0] = -60.0f;
    CHECK(loss_cap(p, zeros, img, v) == doctest::Approx(std::log(10.0)).epsilon(1e-6));
    CHECK_THROWS_AS(loss_cap(p, std::vector<TrainingToken>{}, img, v), Error);
}

TEST_CASE("loss_cap matches a straight-line recomputation") {
    auto v = tiny_vocab();
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = init_params<float>(tiny_dims(), trial);
        randomize(p, rng, 0.8);
        auto img = test::random_vector(rng, 4);
        std::vector<TrainingToken> toks;
        for (int t = 0; t < 4; ++t) {
            WordId w = static_cast<WordId>(3 + rng.index(4));
            toks.push_back({w, static_cast<std::uint8_t>(rng.index(2)), w});
        }
        auto h = oracle_h0(p, img);
        std::vector<double> c(5, 0.0);
        WordId in = v.start();
        int lab = 0;
        double total = 0;
        for (std::size_t t = 0; t <= toks.size(); ++t) {
            auto o = oracle_step(p, in, lab, h, c);
            WordId target = t < toks.size() ? toks[t].word_id : v.end();
            int n = t < toks.size() ? toks[t].novel_label : 0;
            total += -std::log(o.probs[target]) - std::log(n ? o.m : 1.0 - o.m);
            h = o.h;
            c = o.c;
            if (t < toks.size()) {
                in = toks[t].word_id;
                lab = toks[t].novel_label;
            }
        }
        total /= double(toks.size() + 1);
        CHECK(loss_cap(p, toks, img, v) == doctest::Approx(total).epsilon(1e-5));
    }
}

TEST_CASE("loss_det closed forms and oracle") {
    Rng rng(41);
    auto d = tiny_dims();
    auto p = init_params<double>(d, 7);
    randomize(p, rng, 0.8);
    std::vector<std::vector<double>> hs(3, std::vector<double>(d.hidden));
    for (auto& h : hs)
        for (auto& x : h) x = rng.normal();
    std::vector<std::size_t> targets = {1, 2, 3};

    auto dets = random_detections(rng, 3, d);
    std::vector<std::uint8_t> none = {0, 0, 0};
    CHECK(loss_det<double>(p, hs, none, dets, targets) == 0.0);

    DetectionSet one;
    Detection det;
    det.feature = test::random_vector(rng, d.visual);
    det.class_scores.assign(d.classes, 0.0f);
    det.class_scores[2] = 1.0f;
    det.top_class = 2;
    one.detections.push_back(det);
    std::vector<std::uint8_t> mid = {0, 1, 0};
    CHECK(loss_det<double>(p, hs, mid, one, targets) == doctest::Approx(0.0).epsilon(1e-12));

    std::vector<std::uint8_t> some = {1, 0, 1};
    double want = (oracle_det_term(p, hs[0], dets, 1) + oracle_det_term(p, hs[2], dets, 3)) / 2.0;
    CHECK(loss_det<double>(p, hs, some, dets, targets) == doctest::Approx(want).epsilon(1e-10));

    // A target outside the detector support hits the log floor instead of infinity.
    std::vector<std::uint8_t> first = {1, 0, 0};
    std::vector<std::size_t> off = {5, 0, 0};
    CHECK(loss_det<double>(p, hs, first, one, off) == doctest::Approx(-std::log(kDetLogFloor)));
}

TEST_CASE("analytic gradients match central differences") {
    auto v = tiny_vocab();
    const auto d = tiny_dims();
    const double eps = 1e-4;
    Rng rng(2026);
    std::size_t checked = 0, failed = 0;
    double worst = 0;
    for (int inst = 0; inst < 20; ++inst) {
        auto p = init_params<double>(d, 500 + inst);
        randomize(p, rng, 0.5);
        std::vector<std::vector<float>> images = {test::random_vector(rng, d.image), test::random_vector(rng, d.image)};
        std::vector<DetectionSet> dets = {random_detections(rng, 1 + rng.index(4), d),
                                          random_detections(rng, 1 + rng.index(4), d)};
        std::vector<TrainingExample> batch = {make_example(rng, v, &images[0], &dets[0], 3, d),
                                              make_example(rng, v, &images[1], &dets[1], 3, d)};
        const double lambda = 1.0;
        auto g = backward(p, std::span<const TrainingExample>(batch), lambda, v);
        auto batch_loss = [&](const CaptionerParamsT<double>& q) {
            double s = 0;
            for (const auto& ex : batch) s += example_loss(q, ex, lambda, v);
            return s / double(batch.size());
        };
        CHECK(g.loss == doctest::Approx(batch_loss(p)).epsilon(1e-12));

        std::vector<std::span<double>> params, grads;
        p.for_each([&](const char*, std::span<double> s) { params.push_back(s); });
        g.grads.for_each([&](const char*, std::span<double> s) { grads.push_back(s); });
        for (std::size_t t = 0; t < params.size(); ++t) {
            for (std::size_t i = 0; i < params[t].size(); ++i) {
                const double keep = params[t][i];
                params[t][i] = keep + eps;
                const double up = batch_loss(p);
                params[t][i] = keep - eps;
                const double down = batch_loss(p);
                params[t][i] = keep;
                const double numeric = (up - down) / (2 * eps);
                const double analytic = grads[t][i];
                const double rel = std::abs(analytic - numeric) /
                                   std::max({std::abs(analytic), std::abs(numeric), 1e-5});
                worst = std::max(worst, rel);
                ++checked;
                if (rel >= 1e-3) ++failed;
            }
        }
    }
    INFO("worst relative error " << worst);
    CHECK(checked > 20 * 200);
    CHECK(failed == 0);
}

TEST_CASE("off-path parameters get exactly zero gradient") {
    auto v = tiny_vocab();
    auto d = tiny_dims();
    Rng rng(3);
    auto p = init_params<double>(d, 1);
    randomize(p, rng, 0.5);
    std::vector<float> img = test::random_vector(rng, d.image);
    auto dets = random_detections(rng, 3, d);
    TrainingExample ex;
    ex.image = &img;
    ex.detections = &dets;
    ex.tokens = {{3, 0, 3}, {4, 0, 4}};
    ex.targets = {0, 0};
    auto g = backward(p, std::span<const TrainingExample>(&ex, 1), 1.0, v);
    for (double x : g.grads.vis_proj.flat()) CHECK(x == 0.0);
    // Word 6 is never an input.
    for (std::size_t k = 0; k < d.embed; ++k) CHECK(g.grads.word_embed(6, k) == 0.0);
}

TEST_CASE("optimizer steps, clipping and finiteness") {
    auto d = tiny_dims();
    Rng rng(6);
    auto p = init_params<float>(d, 1);
    auto grads = init_params<float>(d, 2);
    randomize(grads, rng, 10.0);
    auto before = p;
    sgd_step(p, grads, 0.0);
    CHECK(p == before);
    sgd_step(p, grads, 0.1);
    CHECK_FALSE(p == before);
    CHECK(p.out_b[0] == doctest::Approx(before.out_b[0] - 0.1f * grads.out_b[0]));

    double pre = clip_gradients(grads, 5.0);
    CHECK(pre > 5.0);
    double post = 0;
    grads.for_each([&](const char*, auto s) {
        for (float x : s) post += double(x) * x;
    });
    CHECK(std::sqrt(post) == doctest::Approx(5.0).epsilon(1e-4));

    grads.lstm_b[3] = std::nanf("");
    try {
        check_finite(grads, "gradients");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("lstm_b") != std::string::npos);
    }
}

TEST_CASE("checkpoint round trip and corruption") {
    auto d = tiny_dims();
    Rng rng(9);
    auto p = init_params<float>(d, 4);
    randomize(p, rng, 1.0);
    std::stringstream ss;
    write_checkpoint(ss, p);
    const auto bytes = ss.str();
    CHECK(bytes.substr(0, 8) == "CRNCKPT1");
    {
        std::istringstream in(bytes);
        auto back = read_checkpoint(in, d);
        CHECK(back == p);
        std::stringstream again;
        write_checkpoint(again, back);
        CHECK(again.str() == bytes);
    }
    {
        std::istringstream in(bytes.substr(0, bytes.size() - 5));
        CHECK_THROWS_AS(read_checkpoint(in), Error);
    }
    {
        auto bad = bytes;
        bad[0] = 'X';
        std::istringstream in(bad);
        CHECK_THROWS_AS(read_checkpoint(in), Error);
    }
    {
        auto other = d;
        other.vocab = 9;
        std::istringstream in(bytes);
        try {
            read_checkpoint(in, other);
            FAIL("expected a dimension error");
        } catch (const DimensionError& e) {
            std::string msg = e.what();
            CHECK(msg.find("N_v=9") != std::string::npos);
            CHECK(msg.find("N_v=7") != std::string::npos);
        }
    }
}

TEST_CASE("fresh model loss is near ln N_v + ln 2") {
    Vocabulary v({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p", "q"}, {}, {});
    auto d = tiny_dims();
    d.vocab = v.in_domain_size();
    d.hidden = 16;
    auto p = init_params<float>(d, 3);
    Rng rng(1);
    double total = 0;
    for (int i = 0; i < 50; ++i) {
        auto img = test::unit_vector(rng, d.image);
        std::vector<TrainingToken> toks;
        for (int t = 0; t < 5; ++t) {
            WordId w = static_cast<WordId>(3 + rng.index(d.vocab - 3));
            toks.push_back({w, static_cast<std::uint8_t>(rng.index(2)), w});
        }
        total += loss_cap(p, toks, img, v);
    }
    const double expect = std::log(double(d.vocab)) + std::log(2.0);
    CHECK(std::abs(total / 50 - expect) / expect < 0.05);
}

TEST_CASE("training is reproducible and decodes bit-exactly") {
    auto w = gen_world(WorldConfig{}, 0);
    DataConfig dc;
    dc.train_scenes = 50;
    dc.val_scenes = 0;
    dc.test_scenes = 5;
    auto data = gen_dataset(w, dc, 0);
    auto lex = build_lexicon(w, data.held_out, data.pseudo_sources);
    auto dets = simulate_detections(data.train, w, DetectorNoise{}, 0);
    auto examples = build_training_examples(data.train, dets, w, lex);
    CaptionerDims d;
    d.vocab = lex.vocab.in_domain_size();
    d.hidden = 16;
    d.classes = w.num_classes();
    TrainConfig tc;
    tc.epochs = 2;
    auto a = train(examples, init_params<float>(d, 1), tc, lex.vocab);
    auto b = train(examples, init_params<float>(d, 1), tc, lex.vocab);
    CHECK(a.params == b.params);
    CHECK(a.epoch_losses == b.epoch_losses);
    for (const auto& s : data.test) {
        auto x = decode_greedy(a.params, s.image_feature, 16, 0.15, lex.vocab);
        auto y = decode_greedy(b.params, s.image_feature, 16, 0.15, lex.vocab);
        CHECK(x.tokens == y.tokens);
        CHECK(x.perplexities == y.perplexities);
    }
    check_finite(a.params, "trained parameters");
}

TEST_CASE("training examples carry pseudo labels and class targets") {
    auto w = gen_world(WorldConfig{}, 0);
    DataConfig dc;
    dc.train_scenes = 100;
    dc.val_scenes = 0;
    dc.test_scenes = 0;
    auto data = gen_dataset(w, dc, 0);
    auto lex = build_lexicon(w, data.held_out, data.pseudo_sources);
    auto dets = simulate_detections(data.train, w, DetectorNoise{}, 0);
    auto examples = build_training_examples(data.train, dets, w, lex);
    CHECK(examples.size() == 100 * dc.captions_per_scene);
    for (const auto& ex : examples) {
        REQUIRE(ex.targets.size() == ex.tokens.size());
        for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
            if (!ex.tokens[t].novel_label) continue;
            CHECK(w.classes[ex.targets[t]].name == lex.vocab.word(ex.tokens[t].original_word_id));
        }
    }
    std::vector<DetectionSet> short_dets(dets.begin(), dets.end() - 1);
    CHECK_THROWS_AS(build_training_examples(data.train, short_dets, w, lex), Error);
}

} // TEST_SUITE
