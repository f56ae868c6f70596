// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crn/matrix.hpp"
#include "crn/synthworld.hpp"
#include "crn/vocab_embed.hpp"

// Single-layer LSTM captioner with three heads on the hidden state:
//   word distribution   p_t = softmax(W_p h_t + b_p)
//   perplexity          m_t = sigmoid(W_m h_t + b_m)
//   visual projection   u_t = W_v h_t, scored against detection features
// The step input is [W_e onehot(word), W_n onehot(novel label)] and the
// initial hidden state is tanh(U_I * image); the initial cell state is zero.
//
// Parameters are templated on the scalar type so the gradient check can run
// the identical code in double. Production code uses float.

namespace crn {

struct CaptionerDims {
    std::size_t vocab = 0;    // N_v: in-domain output size
    std::size_t embed = 32;   // D_e
    std::size_t image = 64;   // D_I
    std::size_t hidden = 64;  // H
    std::size_t visual = 64;  // D_v
    std::size_t classes = 0;  // N_d: detector classes

    void validate() const;
    std::size_t lstm_input() const noexcept { return 2 * embed + hidden; }
    bool operator==(const CaptionerDims&) const = default;
};

std::string describe(const CaptionerDims& d);

template <typename T>
struct CaptionerParamsT {
    CaptionerDims dims;
    Matrix<T> word_embed;   // vocab x embed
    Matrix<T> label_embed;  // 2 x embed
    Matrix<T> init_proj;    // hidden x image
    Matrix<T> lstm_w;       // 4*hidden x (2*embed + hidden); gate rows i, f, g, o
    std::vector<T> lstm_b;  // 4*hidden
    Matrix<T> out_w;        // vocab x hidden
    std::vector<T> out_b;   // vocab
    Matrix<T> ppl_w;        // 1 x hidden
    std::vector<T> ppl_b;   // 1
    Matrix<T> vis_proj;     // visual x hidden

    CaptionerParamsT() = default;
    /// Zero-filled parameters of the given shape.
    explicit CaptionerParamsT(const CaptionerDims& d);

    /// Throws DimensionError when a tensor disagrees with `dims`.
    void validate() const;

    /// Visits every tensor in checkpoint order as (name, flat view).
    template <typename F>
    void for_each(F&& f) {
        f("word_embed", word_embed.flat());
        f("label_embed", label_embed.flat());
        f("init_proj", init_proj.flat());
        f("lstm_w", lstm_w.flat());
        f("lstm_b", std::span<T>(lstm_b));
        f("out_w", out_w.flat());
        f("out_b", std::span<T>(out_b));
        f("ppl_w", ppl_w.flat());
        f("ppl_b", std::span<T>(ppl_b));
        f("vis_proj", vis_proj.flat());
    }
    template <typename F>
    void for_each(F&& f) const {
        f("word_embed", word_embed.flat());
        f("label_embed", label_embed.flat());
        f("init_proj", init_proj.flat());
        f("lstm_w", lstm_w.flat());
        f("lstm_b", std::span<const T>(lstm_b));
        f("out_w", out_w.flat());
        f("out_b", std::span<const T>(out_b));
        f("ppl_w", ppl_w.flat());
        f("ppl_b", std::span<const T>(ppl_b));
        f("vis_proj", vis_proj.flat());
    }

    void fill(T value);
    bool operator==(const CaptionerParamsT&) const = default;
};

using CaptionerParams = CaptionerParamsT<float>;

/// Uniform(-0.08, 0.08) initialization, deterministic in seed. `zero` gives all zeros.
template <typename T>
CaptionerParamsT<T> init_params(const CaptionerDims& dims, std::uint64_t seed, bool zero = false);

template <typename To, typename From>
CaptionerParamsT<To> convert_params(const CaptionerParamsT<From>& p);

template <typename T>
struct LstmState {
    std::vector<T> h;
    std::vector<T> c;
};

template <typename T>
LstmState<T> initial_state(const CaptionerParamsT<T>& params, std::span<const float> image);

template <typename T>
struct StepResult {
    std::vector<T> probs;  // p_t over the in-domain vocabulary
    T perplexity{};        // m_t
    LstmState<T> state;    // h_t, c_t
};

/// One decoder step. Throws when prev_word or prev_label is out of range.
template <typename T>
StepResult<T> step(const CaptionerParamsT<T>& params, WordId prev_word, int prev_label, const LstmState<T>& state);

struct DecodeOutput {
    std::vector<WordId> tokens;                     // END excluded
    std::vector<float> perplexities;                // m_t per emitted token
    std::vector<std::vector<float>> hidden_states;  // h_t per emitted token
    std::vector<std::vector<float>> distributions;  // p_t per emitted token, when requested
};

/// Greedy decoding from START. The novel label fed to step t+1 is [m_t > tau_p].
DecodeOutput decode_greedy(const CaptionerParams& params, std::span<const float> image, std::size_t max_len,
                           double tau_p, const Vocabulary& vocab, bool keep_distributions = false);

/// Teacher-forced caption + perplexity loss of one caption (END appended as the
/// final target): -(1/T) sum_t [log p_t(w_t) + log Bern(n_t; m_t)].
template <typename T>
double loss_cap(const CaptionerParamsT<T>& params, std::span<const TrainingToken> tokens,
                std::span<const float> image, const Vocabulary& vocab);

/// Softmax-weighted detection mixture for one hidden state.
template <typename T>
struct VisualScores {
    std::vector<T> projected;    // W_v h, length visual
    std::vector<T> scores;       // S_t over detections
    std::vector<T> weights;      // softmax(S_t)
    std::vector<T> class_probs;  // O_t = weights^T * class score matrix
};

template <typename T>
VisualScores<T> visual_scores(const CaptionerParamsT<T>& params, std::span<const T> hidden, const DetectionSet& dets);

inline constexpr double kDetLogFloor = 1e-12;

/// Mean over masked positions of -log O_t[target]; 0 without masked positions.
/// `targets[t]` is ignored where labels[t] == 0.
template <typename T>
double loss_det(const CaptionerParamsT<T>& params, std::span<const std::vector<T>> hidden_states,
                std::span<const std::uint8_t> labels, const DetectionSet& dets, std::span<const std::size_t> targets);

/// One caption with everything the joint loss needs.
struct TrainingExample {
    const std::vector<float>* image = nullptr;
    std::vector<TrainingToken> tokens;
    const DetectionSet* detections = nullptr;
    std::vector<std::size_t> targets;  // detector class per token (used where novel_label == 1)
};

/// Examples for every caption of the given scenes: pseudo substitution applied,
/// targets = class id of the original word. `detections` parallels `scenes`.
std::vector<TrainingExample> build_training_examples(std::span<const Scene> scenes,
                                                     std::span<const DetectionSet> detections, const World& world,
                                                     const Lexicon& lexicon);

/// Joint loss L_cap + lambda * L_det of one example, teacher forced.
template <typename T>
double example_loss(const CaptionerParamsT<T>& params, const TrainingExample& ex, double lambda_det,
                    const Vocabulary& vocab);

/// Batch-mean joint loss and its analytic gradient (BPTT through the LSTM).
template <typename T>
struct BatchGradient {
    double loss = 0.0;
    CaptionerParamsT<T> grads;
};

template <typename T>
BatchGradient<T> backward(const CaptionerParamsT<T>& params, std::span<const TrainingExample> batch,
                          double lambda_det, const Vocabulary& vocab);

enum class OptimizerKind { adam, sgd };
std::string_view optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

struct TrainConfig {
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double clip_norm = 5.0;
    std::uint64_t seed = 0;
    double lambda_det = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

/// Plain gradient step, params -= lr * grads.
void sgd_step(CaptionerParams& params, const CaptionerParams& grads, double lr);

class AdamState {
public:
    explicit AdamState(const CaptionerDims& dims);
    void step(CaptionerParams& params, const CaptionerParams& grads, const TrainConfig& cfg);

private:
    CaptionerParams m_, v_;
    std::uint64_t t_ = 0;
};

/// Scales grads in place so their global L2 norm is at most max_norm; returns the pre-clip norm.
double clip_gradients(CaptionerParams& grads, double max_norm);

/// Throws naming the first tensor holding a NaN or Inf.
void check_finite(const CaptionerParams& p, std::string_view what);

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
};

struct TrainResult {
    CaptionerParams params;
    std::vector<double> epoch_losses;
};

/// Minibatch training with per-epoch shuffling drawn from the "train" stream of cfg.seed.
TrainResult train(std::span<const TrainingExample> examples, CaptionerParams initial, const TrainConfig& cfg,
                  const Vocabulary& vocab, const std::function<void(const EpochStats&)>& on_epoch = {});

// --- Checkpoints --------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'C', 'R', 'N', 'C', 'K', 'P', 'T', '1'};

void write_checkpoint(std::ostream& out, const CaptionerParams& params);
/// Throws on bad magic, truncation, or when `expect` is given and differs.
CaptionerParams read_checkpoint(std::istream& in, const std::optional<CaptionerDims>& expect = std::nullopt);
void save_checkpoint(const CaptionerParams& params, const std::string& path);
CaptionerParams load_checkpoint(const std::string& path, const std::optional<CaptionerDims>& expect = std::nullopt);

} // namespace crn
