// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "crn/captioner.hpp"
#include "crn/config.hpp"
#include "crn/evalbench.hpp"
#include "crn/synthworld.hpp"

namespace crn {

/// Everything `gen` produces: world, scenes, lexicon and detector output.
struct Artifacts {
    World world;
    Dataset data;
    Lexicon lexicon;
    std::vector<DetectionSet> det_train, det_val, det_test;

    const std::vector<DetectionSet>& detections(Split s) const;
    std::vector<std::string> novel_words() const;
    CaptionerDims dims(const RunConfig& cfg) const;
};

/// Deterministic in cfg (world, data and detector streams of cfg.seed).
Artifacts build_artifacts(const RunConfig& cfg);

/// Files written by save_artifacts, relative to the output directory.
inline constexpr const char* kWorldFile = "world.json";
inline constexpr const char* kEmbeddingFile = "embeddings.tsv";
inline constexpr const char* kDatasetFile = "dataset.jsonl";
inline constexpr const char* kVocabFile = "vocab.json";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
std::string detections_file(Split s);

void save_artifacts(const Artifacts& a, const std::string& dir);
/// Reloads and cross-checks the files of save_artifacts.
Artifacts load_artifacts(const std::string& dir);

/// Training examples from the train split, fresh initialization from the
/// "init" stream of cfg.seed, then cfg.train.
TrainResult train_captioner(const Artifacts& a, const RunConfig& cfg,
                            const std::function<void(const EpochStats&)>& on_epoch = {});

/// Evaluation view over one split. The artifacts and params must outlive it.
EvalSetup make_eval_setup(const Artifacts& a, const CaptionerParams& params, Split split);

} // namespace crn
