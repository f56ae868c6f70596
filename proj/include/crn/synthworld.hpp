// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crn/matrix.hpp"
#include "crn/vocab_embed.hpp"

// Synthetic stand-in for the image / detector / word-vector stack: object
// classes grouped into categories, unit-norm visual prototypes, an embedding
// table whose geometry follows the categories, templated scenes and captions,
// and a noisy detector simulator.

namespace crn {

struct WorldConfig {
    std::size_t num_classes = 60;
    std::size_t num_categories = 12;
    std::size_t visual_dim = 64;   // D_v
    std::size_t embed_dim = 32;    // D_e
    std::size_t image_dim = 64;    // D_I
    // Norm of the class-specific offset added to a unit category direction.
    // Below 1/sqrt(2) every within-category cosine beats every cross-category one.
    double embed_spread = 0.6;
    double visual_spread = 0.5;
    // Per-coordinate Gaussian noise added to the projected image feature.
    double image_noise = 0.02;

    void validate() const;
};

struct ObjectClass {
    std::string name;
    std::vector<float> prototype;  // unit norm, length visual_dim
    std::size_t category = 0;
};

struct World {
    WorldConfig config;
    std::uint64_t seed = 0;
    std::vector<ObjectClass> classes;
    std::vector<std::string> function_words;  // caption fillers
    EmbeddingTable embeddings;
    Matrix<float> image_projection;  // image_dim x visual_dim

    std::size_t num_classes() const noexcept { return classes.size(); }
    std::vector<std::string> class_names() const;
    std::optional<std::size_t> class_id(std::string_view name) const;

    /// Lower bound on the cosine of two class words in the same category.
    double within_category_floor() const;
    /// Upper bound on the cosine of two words in different clusters (class
    /// categories or the function-word cluster).
    double cross_category_ceiling() const;
};

/// Deterministic in (config, seed). Throws when the config is inconsistent.
World gen_world(const WorldConfig& config, std::uint64_t seed);

/// Filler words used by the caption templates.
std::span<const std::string_view> template_fillers();

/// Caption templates; `{k}` marks object slot k.
struct CaptionTemplate {
    std::string_view text;
    std::size_t slots;
};
std::span<const CaptionTemplate> caption_templates();

enum class Split { train, val, test };
std::string_view split_name(Split s);
Split parse_split(std::string_view s);

struct Scene {
    std::uint64_t scene_id = 0;
    Split split = Split::train;
    std::vector<std::size_t> objects;  // class ids, distinct categories
    std::vector<float> image_feature;  // length image_dim, unit norm
    std::vector<std::vector<std::string>> captions;
};

struct DataConfig {
    std::size_t train_scenes = 5000;
    std::size_t val_scenes = 500;
    std::size_t test_scenes = 1000;
    std::size_t max_objects = 3;
    std::size_t captions_per_scene = 2;
    // Explicit class names; when empty the defaults below select classes.
    std::vector<std::string> held_out;
    std::vector<std::string> pseudo_sources;
    std::size_t num_held_out = 8;
    std::size_t num_pseudo_sources = 20;
};

/// Word inventory derived from a world and the held-out / pseudo-source choice.
struct Lexicon {
    Vocabulary vocab;
    PseudoMap pseudo;
};

/// Default held-out classes: the first class of categories 0..n-1.
std::vector<std::string> default_held_out(const World& world, std::size_t n);
/// Default pseudo sources: seen classes taken round-robin over the categories
/// holding a held-out class, then over the others. Every category keeps at
/// least one seen class out of the set to serve as its pseudo object.
std::vector<std::string> default_pseudo_sources(const World& world, const std::vector<std::string>& held_out,
                                                std::size_t n);

/// Vocabulary (specials, fillers, non-held-out classes in id order, then the
/// held-out classes as novel words) and the pseudo map over the world table.
Lexicon build_lexicon(const World& world, const std::vector<std::string>& held_out,
                      const std::vector<std::string>& pseudo_sources);

struct Dataset {
    DataConfig config;
    std::vector<std::string> held_out;
    std::vector<std::string> pseudo_sources;
    std::vector<Scene> train, val, test;

    const std::vector<Scene>& split(Split s) const;
};

/// Held-out classes never appear in train scenes; val/test draw from all classes.
Dataset gen_dataset(const World& world, const DataConfig& config, std::uint64_t seed);

struct TrainingToken {
    WordId word_id = 0;
    std::uint8_t novel_label = 0;
    WordId original_word_id = 0;

    bool operator==(const TrainingToken&) const = default;
};

/// Replaces pseudo-source words by their pseudo objects and sets the novel label.
std::vector<std::vector<TrainingToken>> apply_pseudo_substitution(
    std::span<const std::vector<WordId>> captions, const PseudoMap& pseudo, const Vocabulary& vocab);

struct DetectorNoise {
    double miss_rate = 0.0;
    double confusion_rate = 0.0;
    double feature_sigma = 0.0;

    void validate() const;
};

struct Detection {
    std::vector<float> feature;       // length visual_dim
    std::vector<float> class_scores;  // length num_classes, sums to 1
    std::size_t top_class = 0;
};

struct DetectionSet {
    std::uint64_t scene_id = 0;
    std::vector<Detection> detections;

    std::size_t size() const noexcept { return detections.size(); }
    bool empty() const noexcept { return detections.empty(); }
};

inline constexpr std::size_t kMaxDetections = 10;

/// Noisy detector over a scene's ground-truth objects. Deterministic in seed.
DetectionSet simulate_detector(const Scene& scene, const World& world, const DetectorNoise& noise,
                               std::uint64_t seed);

/// Detections for every scene of a list, each with its own derived seed.
std::vector<DetectionSet> simulate_detections(std::span<const Scene> scenes, const World& world,
                                              const DetectorNoise& noise, std::uint64_t seed);

// --- Serialization ----------------------------------------------------------

void write_dataset_jsonl(std::ostream& out, const Dataset& data, const World& world);
/// Reads scenes of one split (all splits when `only` is empty).
std::vector<Scene> read_dataset_jsonl(std::istream& in, const World& world, std::optional<Split> only,
                                      const std::string& source = "<stream>");

struct DetectionHeader {
    std::size_t visual_dim = 0;
    std::size_t num_classes = 0;
    std::vector<std::string> class_names;
};

/// First line is the header record, then one line per scene.
void write_detections_jsonl(std::ostream& out, const DetectionHeader& header, std::span<const DetectionSet> sets);
/// Validates the header against `expect` (dimensions and class names) and every record against it.
std::vector<DetectionSet> read_detections_jsonl(std::istream& in, const DetectionHeader& expect,
                                                const std::string& source = "<stream>");

void write_world_json(std::ostream& out, const World& world);
World read_world_json(std::istream& in, const EmbeddingTable& table, const std::string& source = "<stream>");

} // namespace crn
