// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#include "crn/revision.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <json.hpp>

#include "crn/error.hpp"

namespace crn {

void RevisionConfig::validate() const {
    if (!(tau_p >= 0.0 && tau_p <= 1.0)) throw Error("revision config: tau_p must lie in [0, 1]");
    if (!(tau_s >= -1.0 && tau_s <= 1.0)) throw Error("revision config: tau_s must lie in [-1, 1]");
}

std::string_view status_name(ProposalStatus s) {
    switch (s) {
        case ProposalStatus::accepted: return "accepted";
        case ProposalStatus::rejected_semantic: return "rejected_semantic";
        case ProposalStatus::rejected_dedup: return "rejected_dedup";
    }
    return "?";
}

std::vector<std::size_t> flag_ambiguous(std::span<const float> perplexities, double tau_p) {
    std::vector<std::size_t> out;
    for (std::size_t t = 0; t < perplexities.size(); ++t) {
        if (static_cast<double>(perplexities[t]) > tau_p) out.push_back(t);
    }
    return out;
}

std::vector<RevisionProposal> visual_match(std::span<const std::size_t> positions,
                                           std::span<const std::vector<float>> hidden_states,
                                           std::span<const WordId> tokens, const DetectionSet& dets,
                                           const CaptionerParams& params, std::span<const std::string> class_names) {
    std::vector<RevisionProposal> out;
    if (dets.empty()) return out;
    if (class_names.size() != params.dims.classes) {
        throw DimensionError("visual_match: " + std::to_string(class_names.size()) + " class names for N_d=" +
                             std::to_string(params.dims.classes));
    }
    for (std::size_t t : positions) {
        if (t >= hidden_states.size() || t >= tokens.size()) throw Error("visual_match: position out of range");
        auto vs = visual_scores(params, std::span<const float>(hidden_states[t]), dets);
        const std::size_t cls = static_cast<std::size_t>(
            std::max_element(vs.class_probs.begin(), vs.class_probs.end()) - vs.class_probs.begin());
        std::size_t best_det = 0;
        float best_contrib = -1.0f;
        for (std::size_t k = 0; k < dets.size(); ++k) {
            float contrib = vs.weights[k] * dets.detections[k].class_scores[cls];
            if (contrib > best_contrib) {
                best_contrib = contrib;
                best_det = k;
            }
        }
        RevisionProposal p;
        p.position = t;
        p.original_word = tokens[t];
        p.detection_index = best_det;
        p.proposed_class = cls;
        p.proposed_name = class_names[cls];
        p.visual_score = vs.class_probs[cls];
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<RevisionProposal> semantic_match(std::vector<RevisionProposal> proposals, const Vocabulary& vocab,
                                             const EmbeddingTable& table, const RevisionConfig& config) {
    config.validate();
    for (auto& p : proposals) {
        auto word_vec = embed_name(vocab.word(p.original_word), table);
        auto name_vec = embed_name(p.proposed_name, table);
        p.semantic_score = cosine(word_vec, name_vec);
        p.status = p.semantic_score < config.tau_s ? ProposalStatus::rejected_semantic : ProposalStatus::accepted;
    }
    if (config.dedup) {
        // detection -> index of the proposal currently kept
        std::map<std::size_t, std::size_t> keep;
        for (std::size_t i = 0; i < proposals.size(); ++i) {
            auto& p = proposals[i];
            if (p.status != ProposalStatus::accepted) continue;
            auto [it, fresh] = keep.emplace(p.detection_index, i);
            if (fresh) continue;
            auto& q = proposals[it->second];
            bool p_wins = p.semantic_score > q.semantic_score ||
                          (p.semantic_score == q.semantic_score && p.position < q.position);
            if (p_wins) {
                q.status = ProposalStatus::rejected_dedup;
                it->second = i;
            } else {
                p.status = ProposalStatus::rejected_dedup;
            }
        }
    }
    return proposals;
}

std::vector<std::string> apply_revision(std::span<const std::string> primary,
                                        std::span<const RevisionProposal> proposals) {
    std::vector<std::string> out(primary.begin(), primary.end());
    std::set<std::size_t> seen;
    for (const auto& p : proposals) {
        if (p.status != ProposalStatus::accepted) continue;
        if (p.position >= out.size()) throw Error("apply_revision: position " + std::to_string(p.position) +
                                                  " outside a caption of " + std::to_string(out.size()));
        if (!seen.insert(p.position).second) {
            throw Error("apply_revision: overlapping proposals at position " + std::to_string(p.position));
        }
        out[p.position] = p.proposed_name;
    }
    return out;
}

std::vector<std::string> token_strings(std::span<const WordId> tokens, const Vocabulary& vocab) {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (WordId w : tokens) out.push_back(vocab.word(w));
    return out;
}

RevisedCaption revise(const DecodeOutput& decoded, const DetectionSet& dets, const CaptionerParams& params,
                      const Vocabulary& vocab, const EmbeddingTable& table, std::span<const std::string> class_names,
                      const RevisionConfig& config) {
    config.validate();
    RevisedCaption r;
    r.primary = token_strings(decoded.tokens, vocab);
    auto flagged = flag_ambiguous(decoded.perplexities, config.tau_p);
    for (std::size_t t : flagged) r.flagged.push_back({t, decoded.perplexities[t]});
    auto proposals = visual_match(flagged, decoded.hidden_states, decoded.tokens, dets, params, class_names);
    r.proposals = semantic_match(std::move(proposals), vocab, table, config);
    r.final_tokens = apply_revision(r.primary, r.proposals);
    return r;
}

std::string audit_json(std::uint64_t scene_id, const RevisedCaption& revised) {
    nlohmann::json j;
    j["scene_id"] = scene_id;
    j["primary"] = revised.primary;
    nlohmann::json flags = nlohmann::json::array();
    for (const auto& f : revised.flagged) flags.push_back({{"position", f.position}, {"m", f.perplexity}});
    j["flagged"] = std::move(flags);
    nlohmann::json props = nlohmann::json::array();
    for (const auto& p : revised.proposals) {
        props.push_back({{"position", p.position},
                         {"original", p.position < revised.primary.size() ? revised.primary[p.position] : ""},
                         {"detection_index", p.detection_index},
                         {"proposed_class", p.proposed_class},
                         {"proposed_name", p.proposed_name},
                         {"visual_score", p.visual_score},
                         {"semantic_score", p.semantic_score},
                         {"status", status_name(p.status)}});
    }
    j["proposals"] = std::move(props);
    j["final"] = revised.final_tokens;
    return j.dump();
}

} // namespace crn
