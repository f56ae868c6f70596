// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#include "crn/synthworld.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>

#include <json.hpp>

#include "crn/error.hpp"
#include "crn/rng.hpp"

namespace crn {

using nlohmann::json;

namespace {

// Built-in names for the default 12 x 5 world. Row = category; column k is
// the class with id k * 12 + category.
constexpr std::array<std::array<std::string_view, 5>, 12> kBuiltinNames{{
    {"zebra", "giraffe", "elephant", "horse", "cow"},
    {"pizza", "sandwich", "cake", "burger", "donut"},
    {"microwave", "oven", "toaster", "refrigerator", "sink"},
    {"couch", "chair", "bed", "bench", "table"},
    {"bus", "truck", "train", "car", "motorcycle"},
    {"bottle", "cup", "bowl", "vase", "jar"},
    {"racket", "bat", "kite", "ball", "skateboard"},
    {"suitcase", "umbrella", "handbag", "parasol", "backpack"},
    {"parrot", "pigeon", "duck", "owl", "crow"},
    {"shirt", "tie", "hat", "jacket", "scarf"},
    {"laptop", "phone", "keyboard", "remote", "monitor"},
    {"tree", "flower", "bush", "cactus", "fern"},
}};

constexpr std::array<std::string_view, 6> kFillers{"a", "and", "near", "on", "with", "the"};

constexpr std::array<CaptionTemplate, 6> kTemplates{{
    {"a {0}", 1},
    {"the {0}", 1},
    {"a {0} with a {1}", 2},
    {"a {0} near the {1}", 2},
    {"a {0} and a {1} near a {2}", 3},
    {"the {0} on a {1} with the {2}", 3},
}};

std::vector<double> gaussian_vector(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Orthonormal vectors b_0..b_{count-1} in R^dim by Gram-Schmidt over Gaussian draws.
std::vector<std::vector<double>> orthonormal_basis(Rng& rng, std::size_t dim, std::size_t count) {
    std::vector<std::vector<double>> basis;
    while (basis.size() < count) {
        auto v = gaussian_vector(rng, dim);
        for (const auto& b : basis) {
            double d = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
            for (std::size_t i = 0; i < dim; ++i) v[i] -= d * b[i];
        }
        double n = norm(v);
        if (n < 1e-6) continue;
        for (auto& x : v) x /= n;
        basis.push_back(std::move(v));
    }
    return basis;
}

// Unit vector orthogonal to every vector of `basis`.
std::vector<double> orthogonal_unit(Rng& rng, const std::vector<std::vector<double>>& basis, std::size_t dim) {
    while (true) {
        auto v = gaussian_vector(rng, dim);
        for (const auto& b : basis) {
            double d = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
            for (std::size_t i = 0; i < dim; ++i) v[i] -= d * b[i];
        }
        double n = norm(v);
        if (n < 1e-6) continue;
        for (auto& x : v) x /= n;
        return v;
    }
}

// normalize(center + spread * u) with u a unit vector orthogonal to every center.
std::vector<float> offset_vector(const std::vector<double>& center, const std::vector<double>& u, double spread) {
    const std::size_t dim = center.size();
    std::vector<double> v(dim);
    for (std::size_t i = 0; i < dim; ++i) v[i] = center[i] + spread * u[i];
    double n = norm(v);
    std::vector<float> out(dim);
    for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / n);
    return out;
}

std::vector<float> clustered_vector(Rng& rng, const std::vector<std::vector<double>>& centers, std::size_t which,
                                    double spread, std::size_t dim) {
    return offset_vector(centers[which], orthogonal_unit(rng, centers, dim), spread);
}

std::string generic_name(std::size_t category, std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "k%03zux%03zu", category, k);
    return buf;
}

json float_array(std::span<const float> v) {
    json a = json::array();
    for (float x : v) a.push_back(static_cast<double>(x));
    return a;
}

std::vector<float> read_floats(const json& a, std::size_t expect, const std::string& what) {
    if (!a.is_array()) throw Error(what + ": expected an array");
    if (a.size() != expect) {
        throw DimensionError(what + ": length " + std::to_string(a.size()) + ", declared " + std::to_string(expect));
    }
    std::vector<float> out;
    out.reserve(a.size());
    for (const auto& x : a) {
        if (!x.is_number()) throw Error(what + ": non-numeric entry");
        out.push_back(static_cast<float>(x.get<double>()));
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// World

void WorldConfig::validate() const {
    if (num_classes == 0) throw Error("world config: num_classes must be positive");
    if (num_categories == 0) throw Error("world config: num_categories must be positive");
    if (num_categories > num_classes) {
        throw Error("world config: " + std::to_string(num_categories) + " categories exceed " +
                    std::to_string(num_classes) + " classes");
    }
    // Category centers, the function-word center, and at least one free direction.
    if (embed_dim < num_categories + 2) throw Error("world config: embed_dim must be at least num_categories + 2");
    if (visual_dim < num_categories + 1) throw Error("world config: visual_dim must be at least num_categories + 1");
    if (image_dim == 0) throw Error("world config: image_dim must be positive");
    if (!(embed_spread > 0.0) || !(visual_spread > 0.0)) throw Error("world config: spreads must be positive");
    if (image_noise < 0.0) throw Error("world config: image_noise must be non-negative");
}

std::vector<std::string> World::class_names() const {
    std::vector<std::string> out;
    out.reserve(classes.size());
    for (const auto& c : classes) out.push_back(c.name);
    return out;
}

std::optional<std::size_t> World::class_id(std::string_view name) const {
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i].name == name) return i;
    }
    return std::nullopt;
}

double World::within_category_floor() const {
    double r2 = config.embed_spread * config.embed_spread;
    return (1.0 - r2) / (1.0 + r2);
}

double World::cross_category_ceiling() const {
    double r2 = config.embed_spread * config.embed_spread;
    return r2 / (1.0 + r2);
}

World gen_world(const WorldConfig& config, std::uint64_t seed) {
    config.validate();
    World world;
    world.config = config;
    world.seed = seed;
    const std::size_t K = config.num_categories;
    const bool builtin = config.num_classes == 60 && K == 12;

    Rng vis_rng(derive_seed(seed, "world/visual"));
    auto vis_centers = orthonormal_basis(vis_rng, config.visual_dim, K);
    Rng emb_rng(derive_seed(seed, "world/embedding"));
    auto emb_centers = orthonormal_basis(emb_rng, config.embed_dim, K + 1);

    world.embeddings = EmbeddingTable(config.embed_dim);
    // Specials and fillers share the function-word cluster (index K).
    for (auto s : {Vocabulary::kStart, Vocabulary::kEnd, Vocabulary::kUnk}) {
        world.embeddings.add(std::string(s), clustered_vector(emb_rng, emb_centers, K, config.embed_spread,
                                                             config.embed_dim));
    }
    for (auto f : kFillers) {
        world.function_words.emplace_back(f);
        world.embeddings.add(std::string(f), clustered_vector(emb_rng, emb_centers, K, config.embed_spread,
                                                             config.embed_dim));
    }

    world.classes.resize(config.num_classes);
    for (std::size_t id = 0; id < config.num_classes; ++id) {
        auto& c = world.classes[id];
        c.category = id % K;
        std::size_t k = id / K;
        c.name = builtin ? std::string(kBuiltinNames[c.category][k]) : generic_name(c.category, k);
        c.prototype = clustered_vector(vis_rng, vis_centers, c.category, config.visual_spread, config.visual_dim);
        world.embeddings.add(c.name, clustered_vector(emb_rng, emb_centers, c.category, config.embed_spread,
                                                     config.embed_dim));
    }

    Rng proj_rng(derive_seed(seed, "world/projection"));
    world.image_projection = Matrix<float>(config.image_dim, config.visual_dim);
    // Random projection with orthonormal rows (or columns, whichever is shorter).
    const std::size_t rows = config.image_dim, cols = config.visual_dim;
    const bool by_rows = rows <= cols;
    auto basis = orthonormal_basis(proj_rng, by_rows ? cols : rows, by_rows ? rows : cols);
    for (std::size_t k = 0; k < basis.size(); ++k) {
        for (std::size_t i = 0; i < basis[k].size(); ++i) {
            const float x = static_cast<float>(basis[k][i]);
            if (by_rows) world.image_projection(k, i) = x;
            else world.image_projection(i, k) = x;
        }
    }
    return world;
}

std::span<const std::string_view> template_fillers() { return kFillers; }
std::span<const CaptionTemplate> caption_templates() { return kTemplates; }

std::string_view split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw Error("unknown split '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Lexicon

std::vector<std::string> default_held_out(const World& world, std::size_t n) {
    const std::size_t K = world.config.num_categories;
    if (n > K) throw Error("default held-out count " + std::to_string(n) + " exceeds the category count");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(world.classes[i].name);
    return out;
}

std::vector<std::string> default_pseudo_sources(const World& world, const std::vector<std::string>& held_out,
                                                std::size_t n) {
    const std::size_t K = world.config.num_categories;
    std::set<std::size_t> held;
    std::vector<bool> novel_category(K, false);
    for (const auto& h : held_out) {
        auto id = world.class_id(h);
        if (!id) throw Error("held-out class '" + h + "' is not in the world");
        held.insert(*id);
        novel_category[world.classes[*id].category] = true;
    }
    // Seen classes per category in id order; the last one stays a pseudo target.
    std::vector<std::vector<std::size_t>> seen(K);
    for (std::size_t c = 0; c < world.num_classes(); ++c) {
        if (!held.count(c)) seen[world.classes[c].category].push_back(c);
    }
    std::vector<std::size_t> order;
    for (std::size_t k = 0; k < K; ++k) {
        if (novel_category[k]) order.push_back(k);
    }
    for (std::size_t k = 0; k < K; ++k) {
        if (!novel_category[k]) order.push_back(k);
    }

    std::vector<std::size_t> picked;
    std::vector<std::size_t> taken(K, 0);
    for (std::size_t group = 0; group < 2 && picked.size() < n; ++group) {
        bool progress = true;
        while (picked.size() < n && progress) {
            progress = false;
            for (std::size_t k : order) {
                if (novel_category[k] != (group == 0)) continue;
                if (picked.size() == n) break;
                if (taken[k] + 1 >= seen[k].size()) continue;
                picked.push_back(seen[k][taken[k]++]);
                progress = true;
            }
        }
    }
    if (picked.size() < n) {
        throw Error("default pseudo-source count " + std::to_string(n) + " leaves a category without a pseudo target");
    }
    std::sort(picked.begin(), picked.end());
    std::vector<std::string> out;
    for (std::size_t c : picked) out.push_back(world.classes[c].name);
    return out;
}

Lexicon build_lexicon(const World& world, const std::vector<std::string>& held_out,
                      const std::vector<std::string>& pseudo_sources) {
    std::set<std::string> novel_set;
    for (const auto& h : held_out) {
        if (!world.class_id(h)) throw Error("held-out class '" + h + "' is not in the world");
        if (!novel_set.insert(h).second) throw Error("held-out class '" + h + "' listed twice");
    }
    std::vector<std::string> in_domain(world.function_words.begin(), world.function_words.end());
    for (const auto& c : world.classes) {
        if (!novel_set.count(c.name)) in_domain.push_back(c.name);
    }
    std::vector<std::string> novel;
    for (const auto& c : world.classes) {
        if (novel_set.count(c.name)) novel.push_back(c.name);
    }
    for (const auto& p : pseudo_sources) {
        if (!world.class_id(p)) throw Error("pseudo source '" + p + "' is not a world class");
        if (novel_set.count(p)) throw Error("pseudo source '" + p + "' is also held out");
    }
    Lexicon lex{Vocabulary(std::move(in_domain), std::move(novel), pseudo_sources), {}};
    lex.pseudo = build_pseudo_map(lex.vocab, world.embeddings);
    return lex;
}

// ---------------------------------------------------------------------------
// Dataset

const std::vector<Scene>& Dataset::split(Split s) const {
    switch (s) {
        case Split::train: return train;
        case Split::val: return val;
        case Split::test: return test;
    }
    return train;
}

namespace {

std::vector<std::string> fill_template(const CaptionTemplate& t, std::span<const std::string> names) {
    std::vector<std::string> out;
    std::string_view text = t.text;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t j = text.find(' ', i);
        if (j == std::string_view::npos) j = text.size();
        auto tok = text.substr(i, j - i);
        if (tok.size() == 3 && tok.front() == '{' && tok.back() == '}') {
            out.push_back(names[static_cast<std::size_t>(tok[1] - '0')]);
        } else {
            out.emplace_back(tok);
        }
        i = j + 1;
    }
    return out;
}

Scene make_scene(const World& world, const DataConfig& config, std::span<const std::size_t> eligible, Rng& rng,
                 std::uint64_t scene_id, Split split) {
    Scene scene;
    scene.scene_id = scene_id;
    scene.split = split;

    std::set<std::size_t> categories;
    for (std::size_t c : eligible) categories.insert(world.classes[c].category);
    const std::size_t count = 1 + rng.index(std::min(config.max_objects, categories.size()));

    std::vector<bool> used(world.config.num_categories, false);
    for (std::size_t k = 0; k < count; ++k) {
        std::vector<std::size_t> pool;
        for (std::size_t c : eligible) {
            if (!used[world.classes[c].category]) pool.push_back(c);
        }
        std::size_t pick = pool[rng.index(pool.size())];
        used[world.classes[pick].category] = true;
        scene.objects.push_back(pick);
    }

    const std::size_t dv = world.config.visual_dim;
    const std::size_t di = world.config.image_dim;
    std::vector<float> sum(dv, 0.0f);
    for (std::size_t c : scene.objects) {
        for (std::size_t i = 0; i < dv; ++i) sum[i] += world.classes[c].prototype[i];
    }
    std::vector<double> feat(di, 0.0);
    for (std::size_t r = 0; r < di; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < dv; ++i) s += static_cast<double>(world.image_projection(r, i)) * sum[i];
        feat[r] = s;
    }
    double n = norm(feat);
    for (auto& x : feat) x = x / n + world.config.image_noise * rng.normal();
    n = norm(feat);
    scene.image_feature.resize(di);
    for (std::size_t r = 0; r < di; ++r) scene.image_feature[r] = static_cast<float>(feat[r] / n);

    std::vector<const CaptionTemplate*> fits;
    for (const auto& t : kTemplates) {
        if (t.slots == count) fits.push_back(&t);
    }
    // Captions name objects in category order.
    std::vector<std::size_t> by_category = scene.objects;
    std::sort(by_category.begin(), by_category.end(), [&](std::size_t a, std::size_t b) {
        return world.classes[a].category < world.classes[b].category;
    });
    for (std::size_t c = 0; c < config.captions_per_scene; ++c) {
        const CaptionTemplate& t = *fits[rng.index(fits.size())];
        std::vector<std::string> names;
        for (std::size_t id : by_category) names.push_back(world.classes[id].name);
        scene.captions.push_back(fill_template(t, names));
    }
    return scene;
}

} // namespace

Dataset gen_dataset(const World& world, const DataConfig& config, std::uint64_t seed) {
    if (config.max_objects == 0) throw Error("data config: max_objects must be positive");
    if (config.max_objects > 3) throw Error("data config: templates cover at most 3 objects");
    if (config.captions_per_scene == 0) throw Error("data config: captions_per_scene must be positive");

    Dataset data;
    data.config = config;
    data.held_out = config.held_out.empty() ? default_held_out(world, config.num_held_out) : config.held_out;
    data.pseudo_sources = config.pseudo_sources.empty()
                              ? default_pseudo_sources(world, data.held_out, config.num_pseudo_sources)
                              : config.pseudo_sources;
    std::set<std::size_t> held;
    for (const auto& h : data.held_out) {
        auto id = world.class_id(h);
        if (!id) throw Error("held-out class '" + h + "' is not in the world");
        held.insert(*id);
    }

    std::vector<std::size_t> seen_classes, all_classes;
    for (std::size_t c = 0; c < world.num_classes(); ++c) {
        all_classes.push_back(c);
        if (!held.count(c)) seen_classes.push_back(c);
    }
    if (seen_classes.empty()) throw Error("every class is held out");

    std::uint64_t next_id = 0;
    auto generate = [&](Split split, std::size_t count, std::span<const std::size_t> eligible) {
        Rng rng(derive_seed(seed, std::string("data/") + std::string(split_name(split))));
        std::vector<Scene> out;
        out.reserve(count);
        for (std::size_t i = 0; i < count; ++i) out.push_back(make_scene(world, config, eligible, rng, next_id++, split));
        return out;
    };
    data.train = generate(Split::train, config.train_scenes, seen_classes);
    data.val = generate(Split::val, config.val_scenes, all_classes);
    data.test = generate(Split::test, config.test_scenes, all_classes);
    return data;
}

std::vector<std::vector<TrainingToken>> apply_pseudo_substitution(std::span<const std::vector<WordId>> captions,
                                                                  const PseudoMap& pseudo, const Vocabulary& vocab) {
    std::vector<std::vector<TrainingToken>> out;
    out.reserve(captions.size());
    for (const auto& cap : captions) {
        std::vector<TrainingToken> seq;
        seq.reserve(cap.size());
        for (WordId w : cap) {
            if (vocab.is_pseudo_source(w)) {
                auto p = pseudo.pseudo_of(w);
                if (!p) throw Error("pseudo substitution: no pseudo object for '" + vocab.word(w) + "'");
                seq.push_back({*p, 1, w});
            } else {
                seq.push_back({w, 0, w});
            }
        }
        out.push_back(std::move(seq));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Detector

void DetectorNoise::validate() const {
    if (!(miss_rate >= 0.0 && miss_rate <= 1.0)) throw Error("detector noise: miss_rate must lie in [0, 1]");
    if (!(confusion_rate >= 0.0 && confusion_rate <= 1.0)) {
        throw Error("detector noise: confusion_rate must lie in [0, 1]");
    }
    if (!(feature_sigma >= 0.0)) throw Error("detector noise: feature_sigma must be non-negative");
}

DetectionSet simulate_detector(const Scene& scene, const World& world, const DetectorNoise& noise,
                               std::uint64_t seed) {
    noise.validate();
    Rng rng(seed);
    DetectionSet out;
    out.scene_id = scene.scene_id;
    const std::size_t nd = world.num_classes();
    for (std::size_t cls : scene.objects) {
        if (rng.bernoulli(noise.miss_rate)) continue;
        const auto& oc = world.classes.at(cls);
        Detection d;
        d.feature.resize(oc.prototype.size());
        for (std::size_t i = 0; i < d.feature.size(); ++i) {
            d.feature[i] = static_cast<float>(oc.prototype[i] + noise.feature_sigma * rng.normal());
        }
        std::vector<std::size_t> siblings;
        for (std::size_t c = 0; c < nd; ++c) {
            if (c != cls && world.classes[c].category == oc.category) siblings.push_back(c);
        }
        std::vector<double> scores(nd, 0.0);
        if (noise.confusion_rate > 0.0 && !siblings.empty()) {
            scores[cls] = 1.0 - noise.confusion_rate;
            for (std::size_t c : siblings) scores[c] = noise.confusion_rate / static_cast<double>(siblings.size());
        } else {
            scores[cls] = 1.0;
        }
        d.class_scores.assign(scores.begin(), scores.end());
        d.top_class = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
        out.detections.push_back(std::move(d));
    }
    std::stable_sort(out.detections.begin(), out.detections.end(), [](const Detection& a, const Detection& b) {
        return a.class_scores[a.top_class] > b.class_scores[b.top_class];
    });
    if (out.detections.size() > kMaxDetections) out.detections.resize(kMaxDetections);
    return out;
}

std::vector<DetectionSet> simulate_detections(std::span<const Scene> scenes, const World& world,
                                              const DetectorNoise& noise, std::uint64_t seed) {
    std::vector<DetectionSet> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back(simulate_detector(s, world, noise, derive_seed(seed, "detector", s.scene_id)));
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

void write_dataset_jsonl(std::ostream& out, const Dataset& data, const World& world) {
    for (Split split : {Split::train, Split::val, Split::test}) {
        for (const auto& s : data.split(split)) {
            json j;
            j["scene_id"] = s.scene_id;
            j["split"] = split_name(split);
            j["image_feature"] = float_array(s.image_feature);
            json objs = json::array();
            for (std::size_t c : s.objects) objs.push_back({{"name", world.classes[c].name}, {"class_id", c}});
            j["objects"] = std::move(objs);
            j["captions"] = s.captions;
            out << j.dump() << '\n';
        }
    }
}

std::vector<Scene> read_dataset_jsonl(std::istream& in, const World& world, std::optional<Split> only,
                                      const std::string& source) {
    std::vector<Scene> scenes;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            Split split = parse_split(j.at("split").get<std::string>());
            if (only && split != *only) continue;
            Scene s;
            s.scene_id = j.at("scene_id").get<std::uint64_t>();
            s.split = split;
            s.image_feature = read_floats(j.at("image_feature"), world.config.image_dim, "image_feature");
            for (const auto& o : j.at("objects")) {
                std::size_t id = o.at("class_id").get<std::size_t>();
                if (id >= world.num_classes()) throw Error("class_id out of range");
                if (o.at("name").get<std::string>() != world.classes[id].name) {
                    throw Error("object name does not match class_id " + std::to_string(id));
                }
                s.objects.push_back(id);
            }
            s.captions = j.at("captions").get<std::vector<std::vector<std::string>>>();
            scenes.push_back(std::move(s));
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError(source, lineno, e.what());
        }
    }
    return scenes;
}

void write_detections_jsonl(std::ostream& out, const DetectionHeader& header, std::span<const DetectionSet> sets) {
    json h;
    h["header"] = true;
    h["visual_dim"] = header.visual_dim;
    h["num_classes"] = header.num_classes;
    h["class_names"] = header.class_names;
    out << h.dump() << '\n';
    for (const auto& set : sets) {
        json j;
        j["scene_id"] = set.scene_id;
        json dets = json::array();
        for (const auto& d : set.detections) {
            dets.push_back({{"feature", float_array(d.feature)},
                            {"class_scores", float_array(d.class_scores)},
                            {"top_class", d.top_class}});
        }
        j["detections"] = std::move(dets);
        out << j.dump() << '\n';
    }
}

std::vector<DetectionSet> read_detections_jsonl(std::istream& in, const DetectionHeader& expect,
                                                const std::string& source) {
    std::vector<DetectionSet> sets;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw ParseError(source, lineno, e.what());
        }
        if (!have_header) {
            if (!j.is_object() || !j.value("header", false)) throw ParseError(source, lineno, "missing header record");
            std::size_t dv = j.at("visual_dim").get<std::size_t>();
            std::size_t nd = j.at("num_classes").get<std::size_t>();
            if (dv != expect.visual_dim || nd != expect.num_classes) {
                throw DimensionError(source + ":" + std::to_string(lineno) +
                                     ": dimension mismatch: declared visual_dim=" + std::to_string(dv) +
                                     " num_classes=" + std::to_string(nd) + ", expected visual_dim=" +
                                     std::to_string(expect.visual_dim) + " num_classes=" +
                                     std::to_string(expect.num_classes));
            }
            if (j.contains("class_names") && !expect.class_names.empty() &&
                j.at("class_names").get<std::vector<std::string>>() != expect.class_names) {
                throw ParseError(source, lineno, "class_names differ from the world's detector classes");
            }
            have_header = true;
            continue;
        }
        try {
            DetectionSet set;
            set.scene_id = j.at("scene_id").get<std::uint64_t>();
            for (const auto& d : j.at("detections")) {
                Detection det;
                det.feature = read_floats(d.at("feature"), expect.visual_dim, "feature");
                det.class_scores = read_floats(d.at("class_scores"), expect.num_classes, "class_scores");
                double sum = 0.0;
                for (float x : det.class_scores) {
                    if (x < 0.0f) throw Error("negative class score");
                    sum += x;
                }
                if (std::abs(sum - 1.0) > 1e-4) throw Error("class_scores sum to " + std::to_string(sum));
                det.top_class = d.at("top_class").get<std::size_t>();
                if (det.top_class >= expect.num_classes) throw Error("top_class out of range");
                set.detections.push_back(std::move(det));
            }
            sets.push_back(std::move(set));
        } catch (const std::exception& e) {
            throw ParseError(source, lineno, e.what());
        }
    }
    if (!have_header) throw ParseError(source, 0, "empty detections file");
    return sets;
}

void write_world_json(std::ostream& out, const World& world) {
    json j;
    const auto& c = world.config;
    j["seed"] = world.seed;
    j["config"] = {{"num_classes", c.num_classes},   {"num_categories", c.num_categories},
                   {"visual_dim", c.visual_dim},     {"embed_dim", c.embed_dim},
                   {"image_dim", c.image_dim},       {"embed_spread", c.embed_spread},
                   {"visual_spread", c.visual_spread}, {"image_noise", c.image_noise}};
    json classes = json::array();
    for (const auto& oc : world.classes) {
        classes.push_back({{"name", oc.name}, {"category", oc.category}, {"prototype", float_array(oc.prototype)}});
    }
    j["classes"] = std::move(classes);
    j["function_words"] = world.function_words;
    j["image_projection"] = float_array(world.image_projection.flat());
    out << j.dump() << '\n';
}

World read_world_json(std::istream& in, const EmbeddingTable& table, const std::string& source) {
    try {
        json j = json::parse(in);
        World w;
        w.seed = j.at("seed").get<std::uint64_t>();
        const auto& c = j.at("config");
        w.config.num_classes = c.at("num_classes").get<std::size_t>();
        w.config.num_categories = c.at("num_categories").get<std::size_t>();
        w.config.visual_dim = c.at("visual_dim").get<std::size_t>();
        w.config.embed_dim = c.at("embed_dim").get<std::size_t>();
        w.config.image_dim = c.at("image_dim").get<std::size_t>();
        w.config.embed_spread = c.at("embed_spread").get<double>();
        w.config.visual_spread = c.at("visual_spread").get<double>();
        w.config.image_noise = c.at("image_noise").get<double>();
        w.config.validate();
        for (const auto& oc : j.at("classes")) {
            ObjectClass cls;
            cls.name = oc.at("name").get<std::string>();
            cls.category = oc.at("category").get<std::size_t>();
            cls.prototype = read_floats(oc.at("prototype"), w.config.visual_dim, "prototype");
            w.classes.push_back(std::move(cls));
        }
        if (w.classes.size() != w.config.num_classes) throw DimensionError("class count differs from config");
        w.function_words = j.at("function_words").get<std::vector<std::string>>();
        auto proj = read_floats(j.at("image_projection"), w.config.image_dim * w.config.visual_dim, "image_projection");
        w.image_projection = Matrix<float>(w.config.image_dim, w.config.visual_dim);
        std::copy(proj.begin(), proj.end(), w.image_projection.data());
        if (table.dim() != w.config.embed_dim) {
            throw DimensionError("embedding table has dim " + std::to_string(table.dim()) + ", world declares " +
                                 std::to_string(w.config.embed_dim));
        }
        w.embeddings = table;
        return w;
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw ParseError(source, 0, e.what());
    }
}

} // namespace crn
