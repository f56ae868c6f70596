// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#include "crn/evalbench.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "crn/error.hpp"
#include "crn/log.hpp"
#include "crn/rng.hpp"

namespace crn {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

std::vector<std::string> split_words(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.push_back(lower(s.substr(i, j - i)));
        i = j;
    }
    return out;
}

bool contains_run(std::span<const std::string> hay, std::span<const std::string> needle) {
    if (needle.empty() || needle.size() > hay.size()) return false;
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

double safe_div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed << v;
    return os.str();
}

} // namespace

std::vector<std::string> flatten_tokens(std::span<const std::string> caption) {
    std::vector<std::string> out;
    for (const auto& slot : caption) {
        for (auto& w : split_words(slot)) out.push_back(std::move(w));
    }
    return out;
}

bool mentions(std::span<const std::string> caption, std::string_view name) {
    auto tokens = flatten_tokens(caption);
    auto needle = split_words(name);
    return contains_run(tokens, needle);
}

MetricsReport novel_object_f1(std::span<const std::vector<std::string>> predictions, std::span<const Scene> scenes,
                              std::span<const std::string> class_names, std::span<const std::string> novel) {
    if (predictions.size() != scenes.size()) {
        throw Error("novel_object_f1: " + std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(scenes.size()) + " scenes");
    }
    MetricsReport report;
    std::vector<std::vector<std::string>> flat;
    flat.reserve(predictions.size());
    for (const auto& p : predictions) flat.push_back(flatten_tokens(p));

    double sum = 0.0;
    for (const auto& word : novel) {
        auto needle = split_words(word);
        ObjectScore s;
        bool present_anywhere = false;
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            bool contains = false;
            for (std::size_t cls : scenes[i].objects) {
                if (cls >= class_names.size()) throw Error("novel_object_f1: scene object class out of range");
                if (lower(class_names[cls]) == lower(word)) contains = true;
            }
            present_anywhere = present_anywhere || contains;
            const bool said = contains_run(flat[i], needle);
            if (said && contains) ++s.tp;
            else if (said) ++s.fp;
            else if (contains) ++s.fn;
        }
        s.precision = safe_div(static_cast<double>(s.tp), static_cast<double>(s.tp + s.fp));
        s.recall = safe_div(static_cast<double>(s.tp), static_cast<double>(s.tp + s.fn));
        s.f1 = safe_div(2.0 * s.precision * s.recall, s.precision + s.recall);
        report.per_object[word] = s;
        if (!present_anywhere) {
            report.warnings.push_back("novel word '" + word + "' absent from every scene; excluded from average");
            log::info(report.warnings.back());
            continue;
        }
        report.evaluated.push_back(word);
        sum += s.f1;
    }
    report.average_f1 = report.evaluated.empty() ? 0.0 : sum / static_cast<double>(report.evaluated.size());
    return report;
}

double fluency_surrogate(std::span<const std::string> candidate, std::span<const std::vector<std::string>> references) {
    if (references.empty()) throw Error("fluency_surrogate: at least one reference is required");
    auto cand = flatten_tokens(candidate);
    if (cand.empty()) return 0.0;
    std::unordered_map<std::string, std::size_t> cand_counts;
    for (const auto& w : cand) ++cand_counts[w];

    double best = 0.0;
    for (const auto& ref_caption : references) {
        auto ref = flatten_tokens(ref_caption);
        if (ref.empty()) continue;
        std::unordered_map<std::string, std::size_t> ref_counts;
        for (const auto& w : ref) ++ref_counts[w];
        std::size_t m = 0;
        for (const auto& [w, n] : cand_counts) {
            auto it = ref_counts.find(w);
            if (it != ref_counts.end()) m += std::min(n, it->second);
        }
        if (m == 0) continue;
        const double p = static_cast<double>(m) / static_cast<double>(cand.size());
        const double r = static_cast<double>(m) / static_cast<double>(ref.size());
        best = std::max(best, p * r / (0.9 * p + 0.1 * r));
    }
    return best;
}

MetricsReport evaluate_captions(std::span<const std::vector<std::string>> predictions, std::span<const Scene> scenes,
                                std::span<const std::string> class_names, std::span<const std::string> novel) {
    auto report = novel_object_f1(predictions, scenes, class_names, novel);
    double total = 0.0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        total += fluency_surrogate(predictions[i], scenes[i].captions);
    }
    report.fluency = scenes.empty() ? 0.0 : total / static_cast<double>(scenes.size());
    return report;
}

// --- Variants -----------------------------------------------------------------

namespace {

constexpr Variant kAllVariants[] = {Variant::crn_i,      Variant::crn_i_ii,  Variant::crn_wo_ii,
                                    Variant::crn_wo_iii, Variant::crn_wo_iv, Variant::crn_full};

} // namespace

std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::crn_i: return "CRN_I";
        case Variant::crn_i_ii: return "CRN_I_II";
        case Variant::crn_wo_ii: return "CRN_wo_II";
        case Variant::crn_wo_iii: return "CRN_wo_III";
        case Variant::crn_wo_iv: return "CRN_wo_IV";
        case Variant::crn_full: return "CRN_full";
    }
    return "?";
}

Variant parse_variant(std::string_view s) {
    for (Variant v : kAllVariants) {
        if (lower(variant_name(v)) == lower(s)) return v;
    }
    throw Error("unknown variant '" + std::string(s) +
                "' (expected CRN_I, CRN_I_II, CRN_wo_II, CRN_wo_III, CRN_wo_IV or CRN_full)");
}

std::span<const Variant> all_variants() { return kAllVariants; }

void EvalSetup::validate() const {
    if (!vocab || !table) throw Error("evaluation setup: vocabulary and embedding table are required");
    if (!params) throw Error("evaluation setup: a trained checkpoint is required");
    if (scenes.size() != detections.size()) {
        throw Error("evaluation setup: " + std::to_string(detections.size()) + " detection sets for " +
                    std::to_string(scenes.size()) + " scenes");
    }
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        if (scenes[i].scene_id != detections[i].scene_id) {
            throw Error("evaluation setup: detections for scene " + std::to_string(detections[i].scene_id) +
                        " paired with scene " + std::to_string(scenes[i].scene_id));
        }
    }
    if (class_names.size() != params->dims.classes) {
        throw DimensionError("evaluation setup: " + std::to_string(class_names.size()) +
                             " class names for a checkpoint with N_d=" + std::to_string(params->dims.classes));
    }
    if (params->dims.vocab != vocab->in_domain_size()) {
        throw DimensionError("evaluation setup: checkpoint N_v=" + std::to_string(params->dims.vocab) +
                             " but the vocabulary has " + std::to_string(vocab->in_domain_size()) +
                             " in-domain words");
    }
}

std::vector<std::vector<std::string>> VariantRun::final_captions() const {
    std::vector<std::vector<std::string>> out;
    out.reserve(revised.size());
    for (const auto& r : revised) out.push_back(r.final_tokens);
    return out;
}

namespace {

RevisedCaption revise_random(const DecodeOutput& decoded, const DetectionSet& dets, const EvalSetup& setup,
                             const EvalConfig& config, std::uint64_t scene_id) {
    RevisedCaption r;
    r.primary = token_strings(decoded.tokens, *setup.vocab);
    Rng rng(derive_seed(config.seed, "ablation/random", scene_id));
    for (std::size_t t : flag_ambiguous(decoded.perplexities, config.revision.tau_p)) {
        r.flagged.push_back({t, decoded.perplexities[t]});
        if (dets.empty()) continue;
        const std::size_t k = rng.index(dets.size());
        RevisionProposal p;
        p.position = t;
        p.original_word = decoded.tokens[t];
        p.detection_index = k;
        p.proposed_class = dets.detections[k].top_class;
        p.proposed_name = setup.class_names[p.proposed_class];
        r.proposals.push_back(std::move(p));
    }
    r.final_tokens = apply_revision(r.primary, r.proposals);
    return r;
}

RevisedCaption revise_fixed_positions(const DecodeOutput& decoded, const DetectionSet& dets, const EvalSetup& setup,
                                      const EvalConfig& config) {
    RevisedCaption r;
    r.primary = token_strings(decoded.tokens, *setup.vocab);
    std::vector<std::size_t> order(decoded.tokens.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return decoded.perplexities[a] > decoded.perplexities[b];
    });
    order.resize(std::min(order.size(), config.fixed_positions));
    std::sort(order.begin(), order.end());
    for (std::size_t t : order) r.flagged.push_back({t, decoded.perplexities[t]});
    auto proposals = visual_match(order, decoded.hidden_states, decoded.tokens, dets, *setup.params, setup.class_names);
    r.proposals = semantic_match(std::move(proposals), *setup.vocab, *setup.table, config.revision);
    r.final_tokens = apply_revision(r.primary, r.proposals);
    return r;
}

RevisedCaption revise_semantic_only(const DecodeOutput& decoded, const DetectionSet& dets, const EvalSetup& setup,
                                    const EvalConfig& config) {
    RevisedCaption r;
    r.primary = token_strings(decoded.tokens, *setup.vocab);
    std::vector<RevisionProposal> proposals;
    for (std::size_t t : flag_ambiguous(decoded.perplexities, config.revision.tau_p)) {
        r.flagged.push_back({t, decoded.perplexities[t]});
        if (dets.empty()) continue;
        const auto word_vec = embed_name(r.primary[t], *setup.table);
        std::size_t best = 0;
        double best_sim = -2.0;
        for (std::size_t k = 0; k < dets.size(); ++k) {
            const auto& name = setup.class_names[dets.detections[k].top_class];
            const double sim = cosine(word_vec, embed_name(name, *setup.table));
            if (sim > best_sim) {
                best_sim = sim;
                best = k;
            }
        }
        RevisionProposal p;
        p.position = t;
        p.original_word = decoded.tokens[t];
        p.detection_index = best;
        p.proposed_class = dets.detections[best].top_class;
        p.proposed_name = setup.class_names[p.proposed_class];
        proposals.push_back(std::move(p));
    }
    r.proposals = semantic_match(std::move(proposals), *setup.vocab, *setup.table, config.revision);
    r.final_tokens = apply_revision(r.primary, r.proposals);
    return r;
}

RevisedCaption revise_variant(Variant variant, const DecodeOutput& decoded, const DetectionSet& dets,
                              const EvalSetup& setup, const EvalConfig& config, std::uint64_t scene_id) {
    switch (variant) {
        case Variant::crn_i: {
            RevisedCaption r;
            r.primary = token_strings(decoded.tokens, *setup.vocab);
            r.final_tokens = r.primary;
            return r;
        }
        case Variant::crn_i_ii: return revise_random(decoded, dets, setup, config, scene_id);
        case Variant::crn_wo_ii: return revise_fixed_positions(decoded, dets, setup, config);
        case Variant::crn_wo_iii: return revise_semantic_only(decoded, dets, setup, config);
        case Variant::crn_wo_iv: {
            RevisionConfig open = config.revision;
            open.tau_s = -1.0;
            open.dedup = false;
            return revise(decoded, dets, *setup.params, *setup.vocab, *setup.table, setup.class_names, open);
        }
        case Variant::crn_full:
            return revise(decoded, dets, *setup.params, *setup.vocab, *setup.table, setup.class_names,
                          config.revision);
    }
    throw Error("unhandled variant");
}

} // namespace

VariantRun run_variant(Variant variant, const EvalSetup& setup, const EvalConfig& config) {
    setup.validate();
    config.revision.validate();
    if (!(config.feedback_tau_p >= 0.0 && config.feedback_tau_p <= 1.0)) {
        throw Error("evaluation config: feedback_tau_p must lie in [0, 1]");
    }
    const std::size_t n = setup.scenes.size();
    VariantRun run;
    run.variant = variant;
    run.decoded.resize(n);
    run.revised.resize(n);

    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const Scene& scene = setup.scenes[i];
            run.decoded[i] = decode_greedy(*setup.params, scene.image_feature, config.max_len,
                                           config.feedback_tau_p, *setup.vocab);
            run.revised[i] = revise_variant(variant, run.decoded[i], setup.detections[i], setup, config,
                                            scene.scene_id);
        }
    };

    const std::size_t jobs = std::max<std::size_t>(1, std::min(config.jobs, n));
    if (jobs == 1) {
        work(0, n);
    } else {
        std::vector<std::exception_ptr> errors(jobs);
        std::vector<std::thread> threads;
        threads.reserve(jobs);
        for (std::size_t j = 0; j < jobs; ++j) {
            const std::size_t begin = n * j / jobs;
            const std::size_t end = n * (j + 1) / jobs;
            threads.emplace_back([&, j, begin, end] {
                try {
                    work(begin, end);
                } catch (...) {
                    errors[j] = std::current_exception();
                }
            });
        }
        for (auto& t : threads) t.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    std::size_t flagged = 0, length = 0;
    for (std::size_t i = 0; i < n; ++i) {
        flagged += flag_ambiguous(run.decoded[i].perplexities, config.revision.tau_p).size();
        length += run.decoded[i].tokens.size();
    }
    run.flagged_per_sentence = n == 0 ? 0.0 : static_cast<double>(flagged) / static_cast<double>(n);
    run.mean_length = n == 0 ? 0.0 : static_cast<double>(length) / static_cast<double>(n);
    run.metrics = evaluate_captions(run.final_captions(), setup.scenes, setup.class_names, setup.novel);
    return run;
}

std::vector<AblationRow> run_ablation(std::span<const Variant> variants, const EvalSetup& setup,
                                      const EvalConfig& config) {
    std::vector<AblationRow> rows;
    rows.reserve(variants.size());
    for (Variant v : variants) {
        auto run = run_variant(v, setup, config);
        rows.push_back({v, run.metrics.average_f1, run.metrics.fluency});
        log::info(std::string(variant_name(v)) + ": average F1 " + fmt(run.metrics.average_f1) + ", fluency " +
                  fmt(run.metrics.fluency));
    }
    return rows;
}

std::vector<double> default_sweep_grid() {
    std::vector<double> grid;
    for (int i = 0; i < 20; ++i) grid.push_back(i * 0.05);
    return grid;
}

std::vector<SweepRow> threshold_sweep(std::span<const double> grid, const EvalSetup& setup, const EvalConfig& config) {
    std::vector<double> taus(grid.begin(), grid.end());
    for (double t : taus) {
        if (!(t >= 0.0 && t <= 1.0)) throw Error("threshold_sweep: tau_p " + fmt(t) + " outside [0, 1]");
    }
    std::stable_sort(taus.begin(), taus.end());
    std::vector<SweepRow> rows;
    rows.reserve(taus.size());
    for (double t : taus) {
        EvalConfig c = config;
        c.revision.tau_p = t;
        auto run = run_variant(Variant::crn_full, setup, c);
        rows.push_back({t, run.metrics.average_f1, run.metrics.fluency, run.flagged_per_sentence, run.mean_length});
        log::debug("sweep tau_p=" + fmt(t) + ": F1 " + fmt(run.metrics.average_f1));
    }
    return rows;
}

std::pair<std::size_t, std::size_t> novel_slot_recovery(const VariantRun& run, std::span<const Scene> scenes,
                                                        std::span<const std::string> class_names,
                                                        std::span<const std::string> novel) {
    if (run.revised.size() != scenes.size()) throw Error("novel_slot_recovery: run and scenes differ in length");
    std::size_t hits = 0, total = 0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        std::vector<std::string> present;
        for (std::size_t cls : scenes[i].objects) {
            if (std::find(novel.begin(), novel.end(), class_names[cls]) != novel.end()) {
                present.push_back(class_names[cls]);
            }
        }
        if (present.size() != 1) continue;
        ++total;
        if (mentions(run.revised[i].final_tokens, present.front())) ++hits;
    }
    return {hits, total};
}

std::string ablation_csv(std::span<const AblationRow> rows) {
    std::string out = "variant,average_f1,fluency_surrogate\n";
    for (const auto& r : rows) {
        out += std::string(variant_name(r.variant)) + "," + fmt(r.average_f1) + "," + fmt(r.fluency) + "\n";
    }
    return out;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
    std::string out = "tau_p,average_f1,fluency_surrogate,flagged_per_sentence,mean_length\n";
    for (const auto& r : rows) {
        out += fmt(r.tau_p) + "," + fmt(r.average_f1) + "," + fmt(r.fluency) + "," + fmt(r.flagged_per_sentence) +
               "," + fmt(r.mean_length) + "\n";
    }
    return out;
}

std::string metrics_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["average_f1"] = report.average_f1;
    j["fluency_surrogate"] = report.fluency;
    j["fluency_note"] = "unigram F-mean surrogate, not METEOR";
    nlohmann::ordered_json objects = nlohmann::ordered_json::object();
    for (const auto& [word, s] : report.per_object) {
        objects[word] = {{"tp", s.tp}, {"fp", s.fp},           {"fn", s.fn},
                         {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
    }
    j["per_object"] = std::move(objects);
    j["evaluated"] = report.evaluated;
    j["warnings"] = report.warnings;
    return j.dump(2) + "\n";
}

std::string metrics_csv(const MetricsReport& report) {
    std::string out = "object,tp,fp,fn,precision,recall,f1\n";
    for (const auto& [word, s] : report.per_object) {
        out += word + "," + std::to_string(s.tp) + "," + std::to_string(s.fp) + "," + std::to_string(s.fn) + "," +
               fmt(s.precision) + "," + fmt(s.recall) + "," + fmt(s.f1) + "\n";
    }
    out += "average,,,,,," + fmt(report.average_f1) + "\n";
    return out;
}

} // namespace crn
