// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#include "crn/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "crn/error.hpp"
#include "crn/log.hpp"
#include "crn/rng.hpp"

namespace crn {

namespace fs = std::filesystem;

const std::vector<DetectionSet>& Artifacts::detections(Split s) const {
    switch (s) {
        case Split::train: return det_train;
        case Split::val: return det_val;
        case Split::test: return det_test;
    }
    return det_train;
}

std::vector<std::string> Artifacts::novel_words() const {
    std::vector<std::string> out;
    for (WordId id : lexicon.vocab.novel_ids()) out.push_back(lexicon.vocab.word(id));
    return out;
}

CaptionerDims Artifacts::dims(const RunConfig& cfg) const {
    CaptionerDims d;
    d.vocab = lexicon.vocab.in_domain_size();
    d.embed = world.config.embed_dim;
    d.image = world.config.image_dim;
    d.hidden = cfg.hidden_dim;
    d.visual = world.config.visual_dim;
    d.classes = world.num_classes();
    return d;
}

Artifacts build_artifacts(const RunConfig& cfg) {
    cfg.validate();
    Artifacts a;
    a.world = gen_world(cfg.world, cfg.seed);
    a.data = gen_dataset(a.world, cfg.data, cfg.seed);
    a.lexicon = build_lexicon(a.world, a.data.held_out, a.data.pseudo_sources);
    a.det_train = simulate_detections(a.data.train, a.world, cfg.detector, cfg.seed);
    a.det_val = simulate_detections(a.data.val, a.world, cfg.detector, cfg.seed);
    a.det_test = simulate_detections(a.data.test, a.world, cfg.detector, cfg.seed);
    return a;
}

std::string detections_file(Split s) { return "detections_" + std::string(split_name(s)) + ".jsonl"; }

namespace {

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    return out;
}

std::ifstream open_in(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("missing input file " + p.string());
    return in;
}

DetectionHeader header_for(const World& w) {
    return {w.config.visual_dim, w.num_classes(), w.class_names()};
}

} // namespace

void save_artifacts(const Artifacts& a, const std::string& dir) {
    fs::create_directories(dir);
    const fs::path root(dir);
    {
        auto out = open_out(root / kWorldFile);
        write_world_json(out, a.world);
    }
    a.world.embeddings.save_tsv((root / kEmbeddingFile).string());
    {
        auto out = open_out(root / kDatasetFile);
        write_dataset_jsonl(out, a.data, a.world);
    }
    {
        nlohmann::ordered_json j;
        j["held_out"] = a.data.held_out;
        j["pseudo_sources"] = a.data.pseudo_sources;
        j["in_domain_size"] = a.lexicon.vocab.in_domain_size();
        j["words"] = std::vector<std::string>(a.lexicon.vocab.words().begin(), a.lexicon.vocab.words().end());
        auto pairs = nlohmann::ordered_json::array();
        for (const auto& p : a.lexicon.pseudo.pairs()) {
            pairs.push_back({{"source", a.lexicon.vocab.word(p.source)},
                             {"pseudo", a.lexicon.vocab.word(p.pseudo)},
                             {"similarity", p.similarity}});
        }
        j["pseudo_pairs"] = std::move(pairs);
        auto out = open_out(root / kVocabFile);
        out << j.dump(2) << '\n';
    }
    for (Split s : {Split::train, Split::val, Split::test}) {
        auto out = open_out(root / detections_file(s));
        write_detections_jsonl(out, header_for(a.world), a.detections(s));
    }
}

Artifacts load_artifacts(const std::string& dir) {
    const fs::path root(dir);
    Artifacts a;
    auto table = EmbeddingTable::load_tsv((root / kEmbeddingFile).string());
    {
        auto in = open_in(root / kWorldFile);
        a.world = read_world_json(in, table, (root / kWorldFile).string());
    }
    {
        const auto path = root / kVocabFile;
        auto in = open_in(path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
            a.data.held_out = j.at("held_out").get<std::vector<std::string>>();
            a.data.pseudo_sources = j.at("pseudo_sources").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string(), 0, e.what());
        }
        a.lexicon = build_lexicon(a.world, a.data.held_out, a.data.pseudo_sources);
        const auto words = j.at("words").get<std::vector<std::string>>();
        const auto have = a.lexicon.vocab.words();
        if (!std::equal(words.begin(), words.end(), have.begin(), have.end())) {
            throw Error(path.string() + ": word list does not match the world and held-out classes");
        }
    }
    a.data.config.held_out = a.data.held_out;
    a.data.config.pseudo_sources = a.data.pseudo_sources;
    {
        const auto path = root / kDatasetFile;
        auto in = open_in(path);
        for (auto& s : read_dataset_jsonl(in, a.world, std::nullopt, path.string())) {
            switch (s.split) {
                case Split::train: a.data.train.push_back(std::move(s)); break;
                case Split::val: a.data.val.push_back(std::move(s)); break;
                case Split::test: a.data.test.push_back(std::move(s)); break;
            }
        }
    }
    for (Split s : {Split::train, Split::val, Split::test}) {
        const auto path = root / detections_file(s);
        auto in = open_in(path);
        auto sets = read_detections_jsonl(in, header_for(a.world), path.string());
        const auto& scenes = a.data.split(s);
        if (sets.size() != scenes.size()) {
            throw Error(path.string() + ": " + std::to_string(sets.size()) + " detection records for " +
                        std::to_string(scenes.size()) + " scenes");
        }
        for (std::size_t i = 0; i < sets.size(); ++i) {
            if (sets[i].scene_id != scenes[i].scene_id) {
                throw Error(path.string() + ": record " + std::to_string(i + 1) + " has scene " +
                            std::to_string(sets[i].scene_id) + ", expected " + std::to_string(scenes[i].scene_id));
            }
        }
        switch (s) {
            case Split::train: a.det_train = std::move(sets); break;
            case Split::val: a.det_val = std::move(sets); break;
            case Split::test: a.det_test = std::move(sets); break;
        }
    }
    return a;
}

TrainResult train_captioner(const Artifacts& a, const RunConfig& cfg,
                            const std::function<void(const EpochStats&)>& on_epoch) {
    auto examples = build_training_examples(a.data.train, a.det_train, a.world, a.lexicon);
    auto dims = a.dims(cfg);
    auto init = init_params<float>(dims, derive_seed(cfg.seed, "init"));
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    log::info("training on " + std::to_string(examples.size()) + " captions, " + describe(dims));
    return train(examples, std::move(init), tc, a.lexicon.vocab, on_epoch);
}

EvalSetup make_eval_setup(const Artifacts& a, const CaptionerParams& params, Split split) {
    EvalSetup s;
    s.vocab = &a.lexicon.vocab;
    s.table = &a.world.embeddings;
    s.params = &params;
    s.scenes = a.data.split(split);
    s.detections = a.detections(split);
    s.class_names = a.world.class_names();
    s.novel = a.novel_words();
    return s;
}

} // namespace crn
