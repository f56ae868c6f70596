// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crn/captioner.hpp"
#include "crn/revision.hpp"
#include "crn/synthworld.hpp"
#include "crn/vocab_embed.hpp"

namespace crn {

struct ObjectScore {
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct MetricsReport {
    std::map<std::string, ObjectScore> per_object;
    std::vector<std::string> evaluated;  // novel words entering the average
    double average_f1 = 0.0;
    // Unigram fluency surrogate (not METEOR).
    double fluency = 0.0;
    std::vector<std::string> warnings;
};

/// Whitespace-split, lowercased tokens of a caption whose slots may hold multi-word names.
std::vector<std::string> flatten_tokens(std::span<const std::string> caption);

/// True when the name's tokens occur contiguously in the caption.
bool mentions(std::span<const std::string> caption, std::string_view name);

/// Per-novel-object precision / recall / F1 over scenes. Novel words absent
/// from every scene are left out of the average with a warning. The fluency
/// field is left at 0; see evaluate_captions().
MetricsReport novel_object_f1(std::span<const std::vector<std::string>> predictions, std::span<const Scene> scenes,
                              std::span<const std::string> class_names, std::span<const std::string> novel);

/// Recall-weighted unigram F-mean P*R / (0.9 P + 0.1 R) against the best reference.
double fluency_surrogate(std::span<const std::string> candidate, std::span<const std::vector<std::string>> references);

/// novel_object_f1 plus the mean fluency surrogate.
MetricsReport evaluate_captions(std::span<const std::vector<std::string>> predictions, std::span<const Scene> scenes,
                                std::span<const std::string> class_names, std::span<const std::string> novel);

enum class Variant { crn_i, crn_i_ii, crn_wo_ii, crn_wo_iii, crn_wo_iv, crn_full };
std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view s);
std::span<const Variant> all_variants();

struct EvalSetup {
    const Vocabulary* vocab = nullptr;
    const EmbeddingTable* table = nullptr;
    const CaptionerParams* params = nullptr;
    std::span<const Scene> scenes;
    std::span<const DetectionSet> detections;  // parallel to scenes
    std::vector<std::string> class_names;      // detector classes
    std::vector<std::string> novel;            // words the F1 average runs over

    void validate() const;
};

struct EvalConfig {
    RevisionConfig revision;
    // Threshold on m_t for the novel label fed back while decoding. Kept apart
    // from the revision gate so the primary caption does not move with it.
    double feedback_tau_p = 0.15;
    std::size_t max_len = 16;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    // Replacement slots used by the variant without the perplexity stage.
    std::size_t fixed_positions = 2;
};

struct VariantRun {
    Variant variant = Variant::crn_full;
    std::vector<DecodeOutput> decoded;
    std::vector<RevisedCaption> revised;
    MetricsReport metrics;
    double flagged_per_sentence = 0.0;
    double mean_length = 0.0;

    std::vector<std::vector<std::string>> final_captions() const;
};

/// Decodes every scene (novel-label feedback at feedback_tau_p) and
/// applies the variant's revision. Scene-parallel with `jobs` threads; the
/// result does not depend on the thread count.
VariantRun run_variant(Variant variant, const EvalSetup& setup, const EvalConfig& config);

struct AblationRow {
    Variant variant = Variant::crn_full;
    double average_f1 = 0.0;
    double fluency = 0.0;
};

std::vector<AblationRow> run_ablation(std::span<const Variant> variants, const EvalSetup& setup,
                                      const EvalConfig& config);

struct SweepRow {
    double tau_p = 0.0;
    double average_f1 = 0.0;
    double fluency = 0.0;
    double flagged_per_sentence = 0.0;
    double mean_length = 0.0;
};

/// {0, 0.05, ..., 0.95}
std::vector<double> default_sweep_grid();

/// Full-cascade evaluation at every tau_p, rows ordered by tau_p.
std::vector<SweepRow> threshold_sweep(std::span<const double> grid, const EvalSetup& setup, const EvalConfig& config);

/// Fraction of scenes holding exactly one novel object whose final caption
/// mentions that object. Returns {hits, total}.
std::pair<std::size_t, std::size_t> novel_slot_recovery(const VariantRun& run, std::span<const Scene> scenes,
                                                        std::span<const std::string> class_names,
                                                        std::span<const std::string> novel);

std::string ablation_csv(std::span<const AblationRow> rows);
std::string sweep_csv(std::span<const SweepRow> rows);
std::string metrics_json(const MetricsReport& report);
std::string metrics_csv(const MetricsReport& report);

} // namespace crn
