// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#include "crn/captioner.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <type_traits>

#include "crn/error.hpp"
#include "crn/log.hpp"
#include "crn/rng.hpp"
#include "crn/simd.hpp"

namespace crn {

// ---------------------------------------------------------------------------
// Dimensions and parameter containers

void CaptionerDims::validate() const {
    if (vocab < 3) throw DimensionError("captioner: vocabulary must hold at least the three specials");
    if (embed == 0 || image == 0 || hidden == 0 || visual == 0 || classes == 0) {
        throw DimensionError("captioner: every dimension must be positive (" + describe(*this) + ")");
    }
}

std::string describe(const CaptionerDims& d) {
    return "N_v=" + std::to_string(d.vocab) + " D_e=" + std::to_string(d.embed) + " D_I=" + std::to_string(d.image) +
           " H=" + std::to_string(d.hidden) + " D_v=" + std::to_string(d.visual) +
           " N_d=" + std::to_string(d.classes);
}

template <typename T>
CaptionerParamsT<T>::CaptionerParamsT(const CaptionerDims& d)
    : dims(d),
      word_embed(d.vocab, d.embed),
      label_embed(2, d.embed),
      init_proj(d.hidden, d.image),
      lstm_w(4 * d.hidden, d.lstm_input()),
      lstm_b(4 * d.hidden),
      out_w(d.vocab, d.hidden),
      out_b(d.vocab),
      ppl_w(1, d.hidden),
      ppl_b(1),
      vis_proj(d.visual, d.hidden) {
    d.validate();
}

template <typename T>
void CaptionerParamsT<T>::validate() const {
    dims.validate();
    auto check = [](const char* name, std::size_t rows, std::size_t cols, std::size_t er, std::size_t ec) {
        if (rows != er || cols != ec) {
            throw DimensionError(std::string("captioner: ") + name + " is " + std::to_string(rows) + "x" +
                                 std::to_string(cols) + ", expected " + std::to_string(er) + "x" +
                                 std::to_string(ec));
        }
    };
    const auto& d = dims;
    check("word_embed", word_embed.rows(), word_embed.cols(), d.vocab, d.embed);
    check("label_embed", label_embed.rows(), label_embed.cols(), 2, d.embed);
    check("init_proj", init_proj.rows(), init_proj.cols(), d.hidden, d.image);
    check("lstm_w", lstm_w.rows(), lstm_w.cols(), 4 * d.hidden, d.lstm_input());
    check("lstm_b", lstm_b.size(), 1, 4 * d.hidden, 1);
    check("out_w", out_w.rows(), out_w.cols(), d.vocab, d.hidden);
    check("out_b", out_b.size(), 1, d.vocab, 1);
    check("ppl_w", ppl_w.rows(), ppl_w.cols(), 1, d.hidden);
    check("ppl_b", ppl_b.size(), 1, 1, 1);
    check("vis_proj", vis_proj.rows(), vis_proj.cols(), d.visual, d.hidden);
}

template <typename T>
void CaptionerParamsT<T>::fill(T value) {
    for_each([value](std::string_view, std::span<T> s) { std::fill(s.begin(), s.end(), value); });
}

template <typename T>
CaptionerParamsT<T> init_params(const CaptionerDims& dims, std::uint64_t seed, bool zero) {
    CaptionerParamsT<T> p(dims);
    if (zero) return p;
    Rng rng(seed);
    p.for_each([&rng](std::string_view, std::span<T> s) {
        for (auto& x : s) x = static_cast<T>(rng.uniform(-0.08, 0.08));
    });
    return p;
}

template <typename To, typename From>
CaptionerParamsT<To> convert_params(const CaptionerParamsT<From>& p) {
    CaptionerParamsT<To> out(p.dims);
    std::vector<std::span<const From>> src;
    p.for_each([&src](std::string_view, std::span<const From> s) { src.push_back(s); });
    std::size_t k = 0;
    out.for_each([&](std::string_view, std::span<To> s) {
        std::transform(src[k].begin(), src[k].end(), s.begin(), [](From x) { return static_cast<To>(x); });
        ++k;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Forward pieces

namespace {

template <typename T>
T sigmoid(T x) {
    return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x))));
}

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Normalization runs in double so the float result sums to 1 within a few ulps.
template <typename T>
void softmax_inplace(std::span<T> v) {
    if (v.empty()) return;
    T mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (auto& x : v) {
        x = static_cast<T>(std::exp(static_cast<double>(x - mx)));
        sum += static_cast<double>(x);
    }
    for (auto& x : v) x = static_cast<T>(static_cast<double>(x) / sum);
}

template <typename T>
std::vector<T> to_scalar(std::span<const float> v) {
    return std::vector<T>(v.begin(), v.end());
}

// Forward state of one step, kept for backpropagation.
template <typename T>
struct StepCache {
    WordId in_word = 0;
    int in_label = 0;
    std::vector<T> xin;    // [word emb, label emb, h_prev]
    std::vector<T> gates;  // activated i, f, g, o
    std::vector<T> c_prev;
    std::vector<T> c;
    std::vector<T> tanh_c;
    std::vector<T> h;
    std::vector<T> probs;
    T m_logit{};
};

template <typename T>
void forward_step(const CaptionerParamsT<T>& p, WordId word, int label, std::span<const T> h_prev,
                  std::span<const T> c_prev, StepCache<T>& sc) {
    const auto& d = p.dims;
    const std::size_t H = d.hidden, E = d.embed;
    if (word >= d.vocab) {
        throw Error("captioner: word id " + std::to_string(word) + " out of range for vocabulary of " +
                    std::to_string(d.vocab));
    }
    if (label != 0 && label != 1) throw Error("captioner: novel label must be 0 or 1");
    sc.in_word = word;
    sc.in_label = label;
    sc.xin.resize(d.lstm_input());
    std::copy_n(p.word_embed.row(word).data(), E, sc.xin.data());
    std::copy_n(p.label_embed.row(static_cast<std::size_t>(label)).data(), E, sc.xin.data() + E);
    std::copy_n(h_prev.data(), H, sc.xin.data() + 2 * E);

    sc.gates.resize(4 * H);
    simd::gemv(p.lstm_w.data(), 4 * H, d.lstm_input(), sc.xin.data(), sc.gates.data());
    sc.c_prev.assign(c_prev.begin(), c_prev.end());
    sc.c.resize(H);
    sc.tanh_c.resize(H);
    sc.h.resize(H);
    T* g = sc.gates.data();
    for (std::size_t j = 0; j < 4 * H; ++j) g[j] += p.lstm_b[j];
    for (std::size_t j = 0; j < H; ++j) {
        T i = sigmoid(g[j]);
        T f = sigmoid(g[H + j]);
        T gg = std::tanh(g[2 * H + j]);
        T o = sigmoid(g[3 * H + j]);
        g[j] = i;
        g[H + j] = f;
        g[2 * H + j] = gg;
        g[3 * H + j] = o;
        sc.c[j] = f * c_prev[j] + i * gg;
        sc.tanh_c[j] = std::tanh(sc.c[j]);
        sc.h[j] = o * sc.tanh_c[j];
    }

    sc.probs.resize(d.vocab);
    simd::gemv(p.out_w.data(), d.vocab, H, sc.h.data(), sc.probs.data());
    for (std::size_t v = 0; v < d.vocab; ++v) sc.probs[v] += p.out_b[v];
    softmax_inplace(std::span<T>(sc.probs));
    sc.m_logit = simd::dot(p.ppl_w.data(), sc.h.data(), H) + p.ppl_b[0];
}

// Float perplexity kept strictly inside (0, 1).
float perplexity_value(double logit) {
    double m = 1.0 / (1.0 + std::exp(-logit));
    float f = static_cast<float>(m);
    constexpr float lo = std::numeric_limits<float>::min();
    const float hi = std::nextafter(1.0f, 0.0f);
    return std::clamp(f, lo, hi);
}

} // namespace

template <typename T>
LstmState<T> initial_state(const CaptionerParamsT<T>& params, std::span<const float> image) {
    const auto& d = params.dims;
    if (image.size() != d.image) {
        throw DimensionError("captioner: image feature has length " + std::to_string(image.size()) + ", expected " +
                             std::to_string(d.image));
    }
    LstmState<T> s;
    s.h.resize(d.hidden);
    s.c.assign(d.hidden, T{});
    if constexpr (std::is_same_v<T, float>) {
        simd::gemv(params.init_proj.data(), d.hidden, d.image, image.data(), s.h.data());
    } else {
        auto img = to_scalar<T>(image);
        simd::gemv(params.init_proj.data(), d.hidden, d.image, img.data(), s.h.data());
    }
    for (auto& x : s.h) x = std::tanh(x);
    return s;
}

template <typename T>
StepResult<T> step(const CaptionerParamsT<T>& params, WordId prev_word, int prev_label, const LstmState<T>& state) {
    StepCache<T> sc;
    forward_step(params, prev_word, prev_label, std::span<const T>(state.h), std::span<const T>(state.c), sc);
    StepResult<T> r;
    r.probs = std::move(sc.probs);
    r.perplexity = sigmoid(sc.m_logit);
    r.state.h = std::move(sc.h);
    r.state.c = std::move(sc.c);
    return r;
}

DecodeOutput decode_greedy(const CaptionerParams& params, std::span<const float> image, std::size_t max_len,
                           double tau_p, const Vocabulary& vocab, bool keep_distributions) {
    if (max_len == 0) throw Error("decode: max_len must be at least 1");
    DecodeOutput out;
    LstmState<float> state = initial_state(params, image);
    StepCache<float> sc;
    WordId word = vocab.start();
    int label = 0;
    for (std::size_t t = 0; t < max_len; ++t) {
        forward_step(params, word, label, std::span<const float>(state.h), std::span<const float>(state.c), sc);
        // First maximum wins ties.
        auto best = static_cast<WordId>(std::max_element(sc.probs.begin(), sc.probs.end()) - sc.probs.begin());
        if (best == vocab.end()) break;
        float m = perplexity_value(sc.m_logit);
        out.tokens.push_back(best);
        out.perplexities.push_back(m);
        out.hidden_states.push_back(sc.h);
        if (keep_distributions) out.distributions.push_back(sc.probs);
        std::swap(state.h, sc.h);
        std::swap(state.c, sc.c);
        word = best;
        label = m > tau_p ? 1 : 0;
    }
    return out;
}

template <typename T>
VisualScores<T> visual_scores(const CaptionerParamsT<T>& params, std::span<const T> hidden, const DetectionSet& dets) {
    const auto& d = params.dims;
    VisualScores<T> vs;
    vs.projected.resize(d.visual);
    simd::gemv(params.vis_proj.data(), d.visual, d.hidden, hidden.data(), vs.projected.data());
    vs.scores.resize(dets.size());
    std::vector<T> feat;
    for (std::size_t k = 0; k < dets.size(); ++k) {
        const auto& f = dets.detections[k].feature;
        if (f.size() != d.visual) throw DimensionError("detection feature length differs from D_v");
        if constexpr (std::is_same_v<T, float>) {
            vs.scores[k] = simd::dot(f.data(), vs.projected.data(), d.visual);
        } else {
            feat.assign(f.begin(), f.end());
            vs.scores[k] = simd::dot(feat.data(), vs.projected.data(), d.visual);
        }
    }
    vs.weights = vs.scores;
    softmax_inplace(std::span<T>(vs.weights));
    vs.class_probs.assign(d.classes, T{});
    for (std::size_t k = 0; k < dets.size(); ++k) {
        const auto& cs = dets.detections[k].class_scores;
        if (cs.size() != d.classes) throw DimensionError("detection class_scores length differs from N_d");
        for (std::size_t c = 0; c < d.classes; ++c) vs.class_probs[c] += vs.weights[k] * static_cast<T>(cs[c]);
    }
    return vs;
}

template <typename T>
double loss_det(const CaptionerParamsT<T>& params, std::span<const std::vector<T>> hidden_states,
                std::span<const std::uint8_t> labels, const DetectionSet& dets, std::span<const std::size_t> targets) {
    if (labels.size() != hidden_states.size() || targets.size() != hidden_states.size()) {
        throw DimensionError("loss_det: hidden states, labels and targets differ in length");
    }
    double total = 0.0;
    std::size_t masked = 0;
    for (std::size_t t = 0; t < labels.size(); ++t) {
        if (!labels[t]) continue;
        ++masked;
        if (targets[t] >= params.dims.classes) throw Error("loss_det: target class out of range");
        auto vs = visual_scores(params, std::span<const T>(hidden_states[t]), dets);
        double o = dets.empty() ? 0.0 : static_cast<double>(vs.class_probs[targets[t]]);
        total += -std::log(std::max(o, kDetLogFloor));
    }
    return masked ? total / static_cast<double>(masked) : 0.0;
}

// ---------------------------------------------------------------------------
// Joint loss and BPTT

namespace {

template <typename T>
struct Workspace {
    std::vector<StepCache<T>> steps;
    std::vector<T> h0;
    std::vector<T> image;
    std::vector<T> dh, dc, dh_next, dc_next, dz, dxin, dlogits, du, feat;
};

// Forward over one example; when `grads` is set, also accumulates
// weight * d(loss)/d(theta) into it. Returns the unweighted joint loss.
template <typename T>
double run_example(const CaptionerParamsT<T>& p, const TrainingExample& ex, double lambda_det,
                   const Vocabulary& vocab, CaptionerParamsT<T>* grads, double weight, Workspace<T>& ws) {
    const auto& d = p.dims;
    const std::size_t H = d.hidden, E = d.embed;
    const std::size_t n = ex.tokens.size();
    if (n == 0) throw Error("loss: empty token sequence");
    if (!ex.image) throw Error("loss: example has no image feature");
    const std::size_t T_len = n + 1;

    LstmState<T> s0 = initial_state(p, std::span<const float>(*ex.image));
    ws.h0 = s0.h;
    if (ws.steps.size() < T_len) ws.steps.resize(T_len);

    double cap = 0.0;
    const T* h_prev = ws.h0.data();
    std::vector<T> zeros(H, T{});
    const T* c_prev = zeros.data();
    for (std::size_t t = 0; t < T_len; ++t) {
        WordId in_w = t == 0 ? vocab.start() : ex.tokens[t - 1].word_id;
        int in_l = t == 0 ? 0 : ex.tokens[t - 1].novel_label;
        auto& sc = ws.steps[t];
        forward_step(p, in_w, in_l, std::span<const T>(h_prev, H), std::span<const T>(c_prev, H), sc);
        WordId target = t < n ? ex.tokens[t].word_id : vocab.end();
        int label = t < n ? ex.tokens[t].novel_label : 0;
        if (target >= d.vocab) throw Error("loss: target word id out of range");
        double pt = static_cast<double>(sc.probs[target]);
        cap += -std::log(std::max(pt, std::numeric_limits<double>::min()));
        double z = static_cast<double>(sc.m_logit);
        cap += label ? softplus(-z) : softplus(z);
        h_prev = sc.h.data();
        c_prev = sc.c.data();
    }
    cap /= static_cast<double>(T_len);

    // Detection matching loss over masked positions.
    std::size_t masked = 0;
    for (const auto& tk : ex.tokens) masked += tk.novel_label ? 1 : 0;
    double det = 0.0;
    static const DetectionSet kNoDetections{};
    const DetectionSet& dets = ex.detections ? *ex.detections : kNoDetections;
    std::vector<VisualScores<T>> vis;
    if (lambda_det != 0.0 && masked) {
        if (ex.targets.size() != n) throw DimensionError("loss: targets do not parallel tokens");
        vis.resize(n);
        for (std::size_t t = 0; t < n; ++t) {
            if (!ex.tokens[t].novel_label) continue;
            vis[t] = visual_scores(p, std::span<const T>(ws.steps[t].h), dets);
            double o = dets.empty() ? 0.0 : static_cast<double>(vis[t].class_probs[ex.targets[t]]);
            det += -std::log(std::max(o, kDetLogFloor));
        }
        det /= static_cast<double>(masked);
    }
    const double loss = cap + lambda_det * det;
    if (!grads) return loss;

    // Backward through time.
    auto& g = *grads;
    const T cap_scale = static_cast<T>(weight / static_cast<double>(T_len));
    const T det_scale = masked ? static_cast<T>(weight * lambda_det / static_cast<double>(masked)) : T{};
    ws.dh_next.assign(H, T{});
    ws.dc_next.assign(H, T{});
    ws.dh.resize(H);
    ws.dc.resize(H);
    ws.dz.resize(4 * H);
    ws.dxin.resize(d.lstm_input());
    ws.dlogits.resize(d.vocab);
    ws.du.resize(d.visual);
    for (std::size_t tt = T_len; tt-- > 0;) {
        const auto& sc = ws.steps[tt];
        WordId target = tt < n ? ex.tokens[tt].word_id : vocab.end();
        int label = tt < n ? ex.tokens[tt].novel_label : 0;
        ws.dh = ws.dh_next;

        // Word head.
        for (std::size_t v = 0; v < d.vocab; ++v) ws.dlogits[v] = sc.probs[v] * cap_scale;
        ws.dlogits[target] -= cap_scale;
        simd::ger_acc(T{1}, ws.dlogits.data(), d.vocab, sc.h.data(), H, g.out_w.data());
        simd::axpy(T{1}, ws.dlogits.data(), g.out_b.data(), d.vocab);
        simd::gemv_t_acc(p.out_w.data(), d.vocab, H, ws.dlogits.data(), ws.dh.data());

        // Perplexity head.
        T dm = (sigmoid(sc.m_logit) - static_cast<T>(label)) * cap_scale;
        simd::axpy(dm, sc.h.data(), g.ppl_w.data(), H);
        g.ppl_b[0] += dm;
        simd::axpy(dm, p.ppl_w.data(), ws.dh.data(), H);

        // Visual matching head.
        if (tt < n && label && det_scale != T{} && !dets.empty()) {
            const auto& vs = vis[tt];
            const std::size_t y = ex.targets[tt];
            const double o = static_cast<double>(vs.class_probs[y]);
            if (o >= kDetLogFloor) {
                // dL/dw_k = -scale * P[k, y] / O_y; then through the softmax.
                const std::size_t K = dets.size();
                std::vector<T> dw(K), ds(K);
                T dot_wdw{};
                for (std::size_t k = 0; k < K; ++k) {
                    dw[k] = static_cast<T>(-static_cast<double>(det_scale) *
                                           static_cast<double>(dets.detections[k].class_scores[y]) / o);
                    dot_wdw += vs.weights[k] * dw[k];
                }
                std::fill(ws.du.begin(), ws.du.end(), T{});
                for (std::size_t k = 0; k < K; ++k) {
                    ds[k] = vs.weights[k] * (dw[k] - dot_wdw);
                    const auto& f = dets.detections[k].feature;
                    if constexpr (std::is_same_v<T, float>) {
                        simd::axpy(ds[k], f.data(), ws.du.data(), d.visual);
                    } else {
                        ws.feat.assign(f.begin(), f.end());
                        simd::axpy(ds[k], ws.feat.data(), ws.du.data(), d.visual);
                    }
                }
                simd::ger_acc(T{1}, ws.du.data(), d.visual, sc.h.data(), H, g.vis_proj.data());
                simd::gemv_t_acc(p.vis_proj.data(), d.visual, H, ws.du.data(), ws.dh.data());
            }
        }

        // LSTM cell.
        const T* gt = sc.gates.data();
        for (std::size_t j = 0; j < H; ++j) {
            T i = gt[j], f = gt[H + j], gg = gt[2 * H + j], o = gt[3 * H + j];
            T tc = sc.tanh_c[j];
            T dcj = ws.dc_next[j] + ws.dh[j] * o * (T{1} - tc * tc);
            ws.dz[j] = dcj * gg * i * (T{1} - i);
            ws.dz[H + j] = dcj * sc.c_prev[j] * f * (T{1} - f);
            ws.dz[2 * H + j] = dcj * i * (T{1} - gg * gg);
            ws.dz[3 * H + j] = ws.dh[j] * tc * o * (T{1} - o);
            ws.dc[j] = dcj * f;
        }
        simd::ger_acc(T{1}, ws.dz.data(), 4 * H, sc.xin.data(), d.lstm_input(), g.lstm_w.data());
        simd::axpy(T{1}, ws.dz.data(), g.lstm_b.data(), 4 * H);
        std::fill(ws.dxin.begin(), ws.dxin.end(), T{});
        simd::gemv_t_acc(p.lstm_w.data(), 4 * H, d.lstm_input(), ws.dz.data(), ws.dxin.data());
        simd::axpy(T{1}, ws.dxin.data(), g.word_embed.row(sc.in_word).data(), E);
        simd::axpy(T{1}, ws.dxin.data() + E, g.label_embed.row(static_cast<std::size_t>(sc.in_label)).data(), E);
        std::copy_n(ws.dxin.data() + 2 * E, H, ws.dh_next.data());
        std::swap(ws.dc_next, ws.dc);
    }

    // h0 = tanh(U_I * image)
    ws.image.assign(ex.image->begin(), ex.image->end());
    for (std::size_t j = 0; j < H; ++j) ws.dh_next[j] *= T{1} - ws.h0[j] * ws.h0[j];
    simd::ger_acc(T{1}, ws.dh_next.data(), H, ws.image.data(), d.image, g.init_proj.data());
    return loss;
}

template <typename T>
Workspace<T>& thread_workspace() {
    thread_local Workspace<T> ws;
    return ws;
}

} // namespace

template <typename T>
double loss_cap(const CaptionerParamsT<T>& params, std::span<const TrainingToken> tokens,
                std::span<const float> image, const Vocabulary& vocab) {
    std::vector<float> img(image.begin(), image.end());
    TrainingExample ex;
    ex.image = &img;
    ex.tokens.assign(tokens.begin(), tokens.end());
    return run_example(params, ex, 0.0, vocab, static_cast<CaptionerParamsT<T>*>(nullptr), 0.0,
                       thread_workspace<T>());
}

template <typename T>
double example_loss(const CaptionerParamsT<T>& params, const TrainingExample& ex, double lambda_det,
                    const Vocabulary& vocab) {
    return run_example(params, ex, lambda_det, vocab, static_cast<CaptionerParamsT<T>*>(nullptr), 0.0,
                       thread_workspace<T>());
}

template <typename T>
BatchGradient<T> backward(const CaptionerParamsT<T>& params, std::span<const TrainingExample> batch,
                          double lambda_det, const Vocabulary& vocab) {
    if (batch.empty()) throw Error("backward: empty batch");
    BatchGradient<T> out{0.0, CaptionerParamsT<T>(params.dims)};
    const double w = 1.0 / static_cast<double>(batch.size());
    for (const auto& ex : batch) out.loss += w * run_example(params, ex, lambda_det, vocab, &out.grads, w,
                                                             thread_workspace<T>());
    return out;
}

std::vector<TrainingExample> build_training_examples(std::span<const Scene> scenes,
                                                     std::span<const DetectionSet> detections, const World& world,
                                                     const Lexicon& lexicon) {
    if (scenes.size() != detections.size()) throw Error("training examples: scenes and detections differ in count");
    std::vector<TrainingExample> out;
    const auto& vocab = lexicon.vocab;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto& s = scenes[i];
        if (detections[i].scene_id != s.scene_id) {
            throw Error("training examples: detections for scene " + std::to_string(detections[i].scene_id) +
                        " paired with scene " + std::to_string(s.scene_id));
        }
        std::vector<std::vector<WordId>> ids;
        for (const auto& cap : s.captions) {
            std::vector<WordId> seq;
            for (const auto& tok : cap) {
                WordId id = vocab.id(tok);
                if (!vocab.is_in_domain(id)) {
                    throw Error("training examples: novel word '" + tok + "' in a training caption (scene " +
                                std::to_string(s.scene_id) + ")");
                }
                seq.push_back(id);
            }
            ids.push_back(std::move(seq));
        }
        auto seqs = apply_pseudo_substitution(ids, lexicon.pseudo, vocab);
        for (auto& seq : seqs) {
            TrainingExample ex;
            ex.image = &s.image_feature;
            ex.detections = &detections[i];
            ex.targets.assign(seq.size(), 0);
            for (std::size_t t = 0; t < seq.size(); ++t) {
                if (!seq[t].novel_label) continue;
                auto cls = world.class_id(vocab.word(seq[t].original_word_id));
                if (!cls) throw Error("training examples: pseudo source is not a detector class");
                ex.targets[t] = *cls;
            }
            ex.tokens = std::move(seq);
            out.push_back(std::move(ex));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimization

std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw Error("unknown optimizer '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw Error("train config: learning rate must be non-negative");
    if (batch_size == 0) throw Error("train config: batch size must be positive");
    if (!(clip_norm > 0.0)) throw Error("train config: clip norm must be positive");
    if (!(lambda_det >= 0.0)) throw Error("train config: lambda_det must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw Error("train config: bad Adam betas");
    if (!(epsilon > 0.0)) throw Error("train config: epsilon must be positive");
}

void sgd_step(CaptionerParams& params, const CaptionerParams& grads, double lr) {
    std::vector<std::span<const float>> gs;
    grads.for_each([&gs](std::string_view, std::span<const float> s) { gs.push_back(s); });
    std::size_t k = 0;
    const auto a = static_cast<float>(-lr);
    params.for_each([&](std::string_view, std::span<float> s) {
        simd::axpy(a, gs[k].data(), s.data(), s.size());
        ++k;
    });
}

AdamState::AdamState(const CaptionerDims& dims) : m_(dims), v_(dims) {}

void AdamState::step(CaptionerParams& params, const CaptionerParams& grads, const TrainConfig& cfg) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
    const auto step_size = static_cast<float>(cfg.learning_rate / bc1);
    const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<float>(cfg.epsilon);

    std::vector<std::span<const float>> gs;
    grads.for_each([&gs](std::string_view, std::span<const float> s) { gs.push_back(s); });
    std::vector<std::span<float>> ms, vs;
    m_.for_each([&ms](std::string_view, std::span<float> s) { ms.push_back(s); });
    v_.for_each([&vs](std::string_view, std::span<float> s) { vs.push_back(s); });
    std::size_t k = 0;
    params.for_each([&](std::string_view, std::span<float> p) {
        const float* g = gs[k].data();
        float* m = ms[k].data();
        float* v = vs[k].data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            p[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
        }
        ++k;
    });
}

double clip_gradients(CaptionerParams& grads, double max_norm) {
    double sq = 0.0;
    grads.for_each([&sq](std::string_view, std::span<const float> s) {
        for (float x : s) sq += static_cast<double>(x) * x;
    });
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const auto scale = static_cast<float>(max_norm / norm);
        grads.for_each([scale](std::string_view, std::span<float> s) {
            for (auto& x : s) x *= scale;
        });
    }
    return norm;
}

void check_finite(const CaptionerParams& p, std::string_view what) {
    p.for_each([what](std::string_view name, std::span<const float> s) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (!std::isfinite(s[i])) {
                throw Error(std::string(what) + ": non-finite value in " + std::string(name) + " at index " +
                            std::to_string(i));
            }
        }
    });
}

TrainResult train(std::span<const TrainingExample> examples, CaptionerParams initial, const TrainConfig& cfg,
                  const Vocabulary& vocab, const std::function<void(const EpochStats&)>& on_epoch) {
    cfg.validate();
    initial.validate();
    check_finite(initial, "initial parameters");
    if (examples.empty()) throw Error("train: no training examples");

    TrainResult result{std::move(initial), {}};
    CaptionerParams& params = result.params;
    CaptionerParams grads(params.dims);
    AdamState adam(params.dims);
    auto& ws = thread_workspace<float>();

    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, "train", epoch));
        rng.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            const double w = 1.0 / static_cast<double>(stop - start);
            grads.fill(0.0f);
            for (std::size_t i = start; i < stop; ++i) {
                epoch_loss += run_example(params, examples[order[i]], cfg.lambda_det, vocab, &grads, w, ws);
            }
            check_finite(grads, "gradient");
            clip_gradients(grads, cfg.clip_norm);
            if (cfg.optimizer == OptimizerKind::adam) {
                adam.step(params, grads, cfg);
            } else {
                sgd_step(params, grads, cfg.learning_rate);
            }
            check_finite(params, "parameter update");
        }
        epoch_loss /= static_cast<double>(order.size());
        result.epoch_losses.push_back(epoch_loss);
        log::info("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) +
                  " loss " + std::to_string(epoch_loss));
        if (on_epoch) on_epoch({epoch, epoch_loss});
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout: 8-byte magic "CRNCKPT1"; six u32 LE (N_v, D_e, D_I, H, D_v, N_d);
// then word_embed, label_embed, init_proj, lstm_w, lstm_b, out_w, out_b,
// ppl_w, ppl_b, vis_proj, each row-major as f32 LE.

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(std::string("checkpoint truncated in ") + what);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

} // namespace

void write_checkpoint(std::ostream& out, const CaptionerParams& params) {
    params.validate();
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const auto& d = params.dims;
    for (std::size_t v : {d.vocab, d.embed, d.image, d.hidden, d.visual, d.classes}) {
        put_u32(out, static_cast<std::uint32_t>(v));
    }
    params.for_each([&out](std::string_view, std::span<const float> s) {
        for (float x : s) put_u32(out, std::bit_cast<std::uint32_t>(x));
    });
    if (!out) throw Error("checkpoint write failed");
}

CaptionerParams read_checkpoint(std::istream& in, const std::optional<CaptionerDims>& expect) {
    char magic[8];
    if (!in.read(magic, sizeof magic)) throw Error("checkpoint truncated in magic");
    if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw Error("checkpoint: bad magic");
    CaptionerDims d;
    d.vocab = get_u32(in, "header");
    d.embed = get_u32(in, "header");
    d.image = get_u32(in, "header");
    d.hidden = get_u32(in, "header");
    d.visual = get_u32(in, "header");
    d.classes = get_u32(in, "header");
    if (expect && !(*expect == d)) {
        throw DimensionError("checkpoint dimensions differ: expected " + describe(*expect) + ", found " +
                             describe(d));
    }
    d.validate();
    CaptionerParams p(d);
    p.for_each([&in](std::string_view name, std::span<float> s) {
        const std::string what = "tensor " + std::string(name);
        for (auto& x : s) x = std::bit_cast<float>(get_u32(in, what.c_str()));
    });
    if (in.peek() != std::char_traits<char>::eof()) throw Error("checkpoint: trailing bytes after last tensor");
    return p;
}

void save_checkpoint(const CaptionerParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    write_checkpoint(out, params);
}

CaptionerParams load_checkpoint(const std::string& path, const std::optional<CaptionerDims>& expect) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    try {
        return read_checkpoint(in, expect);
    } catch (const DimensionError& e) {
        throw DimensionError(path + ": " + e.what());
    } catch (const Error& e) {
        throw Error(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Instantiations

#define CRN_INSTANTIATE(T)                                                                                       \
    template struct CaptionerParamsT<T>;                                                                         \
    template CaptionerParamsT<T> init_params<T>(const CaptionerDims&, std::uint64_t, bool);                      \
    template LstmState<T> initial_state<T>(const CaptionerParamsT<T>&, std::span<const float>);                  \
    template StepResult<T> step<T>(const CaptionerParamsT<T>&, WordId, int, const LstmState<T>&);                \
    template double loss_cap<T>(const CaptionerParamsT<T>&, std::span<const TrainingToken>,                      \
                                std::span<const float>, const Vocabulary&);                                      \
    template VisualScores<T> visual_scores<T>(const CaptionerParamsT<T>&, std::span<const T>,                    \
                                              const DetectionSet&);                                              \
    template double loss_det<T>(const CaptionerParamsT<T>&, std::span<const std::vector<T>>,                     \
                                std::span<const std::uint8_t>, const DetectionSet&, std::span<const std::size_t>); \
    template double example_loss<T>(const CaptionerParamsT<T>&, const TrainingExample&, double,                  \
                                    const Vocabulary&);                                                          \
    template BatchGradient<T> backward<T>(const CaptionerParamsT<T>&, std::span<const TrainingExample>, double,  \
                                          const Vocabulary&);

CRN_INSTANTIATE(float)
CRN_INSTANTIATE(double)
#undef CRN_INSTANTIATE

template CaptionerParamsT<double> convert_params<double, float>(const CaptionerParamsT<float>&);
template CaptionerParamsT<float> convert_params<float, double>(const CaptionerParamsT<double>&);

} // namespace crn
