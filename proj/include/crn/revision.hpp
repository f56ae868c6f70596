// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crn/captioner.hpp"
#include "crn/synthworld.hpp"
#include "crn/vocab_embed.hpp"

// Revision cascade applied to a primary caption:
//   flag_ambiguous  positions whose perplexity exceeds tau_p
//   visual_match    detection/class proposal per flagged position
//   semantic_match  accept or reject each proposal by word-vector cosine
//   apply_revision  one-for-one word substitution

namespace crn {

struct RevisionConfig {
    double tau_p = 0.15;
    double tau_s = 0.3;
    bool dedup = true;

    void validate() const;
};

enum class ProposalStatus { accepted, rejected_semantic, rejected_dedup };
std::string_view status_name(ProposalStatus s);

struct RevisionProposal {
    std::size_t position = 0;
    WordId original_word = 0;
    std::size_t detection_index = 0;
    std::size_t proposed_class = 0;
    std::string proposed_name;
    double visual_score = 0.0;    // O_t at the proposed class
    double semantic_score = 0.0;  // cosine(original word, proposed name)
    ProposalStatus status = ProposalStatus::accepted;
};

/// Ascending positions t with m_t > tau_p.
std::vector<std::size_t> flag_ambiguous(std::span<const float> perplexities, double tau_p);

/// One proposal per flagged position: the class maximizing O_t, and the
/// detection contributing most to that class. Ties go to the lower index.
/// Empty detections give no proposals. Semantic fields are left at defaults.
std::vector<RevisionProposal> visual_match(std::span<const std::size_t> positions,
                                           std::span<const std::vector<float>> hidden_states,
                                           std::span<const WordId> tokens, const DetectionSet& dets,
                                           const CaptionerParams& params, std::span<const std::string> class_names);

/// Scores every proposal, rejects those below tau_s and, with dedup, keeps only
/// the best-scoring position per detection (ties to the lower position).
std::vector<RevisionProposal> semantic_match(std::vector<RevisionProposal> proposals, const Vocabulary& vocab,
                                             const EmbeddingTable& table, const RevisionConfig& config);

/// Substitutes every accepted proposal. Throws on out-of-range or repeated positions.
std::vector<std::string> apply_revision(std::span<const std::string> primary,
                                        std::span<const RevisionProposal> proposals);

struct FlaggedPosition {
    std::size_t position = 0;
    float perplexity = 0.0f;
};

struct RevisedCaption {
    std::vector<std::string> primary;
    std::vector<FlaggedPosition> flagged;
    std::vector<RevisionProposal> proposals;
    std::vector<std::string> final_tokens;
};

std::vector<std::string> token_strings(std::span<const WordId> tokens, const Vocabulary& vocab);

/// Full cascade: flag, visual match, semantic match, apply.
RevisedCaption revise(const DecodeOutput& decoded, const DetectionSet& dets, const CaptionerParams& params,
                      const Vocabulary& vocab, const EmbeddingTable& table, std::span<const std::string> class_names,
                      const RevisionConfig& config);

/// Audit record for one scene (primary tokens, flags, proposals, final tokens).
std::string audit_json(std::uint64_t scene_id, const RevisedCaption& revised);

} // namespace crn
