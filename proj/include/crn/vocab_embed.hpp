// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace crn {

using WordId = std::uint32_t;

/// Word inventory. Ids are dense: the in-domain block (specials first) occupies
/// [0, in_domain_size()), novel words follow. The captioner's output layer
/// covers only the in-domain block, so novel words cannot be emitted by it.
class Vocabulary {
public:
    static constexpr std::string_view kStart = "<start>";
    static constexpr std::string_view kEnd = "<end>";
    static constexpr std::string_view kUnk = "<unk>";

    Vocabulary() = default;

    /// `in_domain` excludes the three specials, which are prepended.
    /// `pseudo_sources` must name in-domain words. Throws crn::Error on any
    /// invariant violation (duplicates, overlap, uppercase, empty tokens).
    Vocabulary(std::vector<std::string> in_domain, std::vector<std::string> novel,
               std::vector<std::string> pseudo_sources);

    std::size_t size() const noexcept { return words_.size(); }
    std::size_t in_domain_size() const noexcept { return in_domain_size_; }

    const std::string& word(WordId id) const;
    std::optional<WordId> find(std::string_view token) const;
    /// Like find(), but throws when absent.
    WordId id(std::string_view token) const;

    bool is_in_domain(WordId id) const noexcept { return id < in_domain_size_; }
    bool is_novel(WordId id) const noexcept { return id >= in_domain_size_ && id < words_.size(); }
    bool is_pseudo_source(WordId id) const noexcept { return id < is_source_.size() && is_source_[id]; }
    bool is_special(WordId id) const noexcept { return id < 3; }

    WordId start() const noexcept { return 0; }
    WordId end() const noexcept { return 1; }
    WordId unk() const noexcept { return 2; }

    std::span<const std::string> words() const noexcept { return words_; }
    std::vector<WordId> novel_ids() const;
    const std::vector<WordId>& pseudo_source_ids() const noexcept { return sources_; }

private:
    std::vector<std::string> words_;
    std::size_t in_domain_size_ = 0;
    std::vector<WordId> sources_;
    std::vector<bool> is_source_;
    std::unordered_map<std::string, WordId> index_;
};

/// Word vectors keyed by token, 32-bit floats, insertion-ordered.
class EmbeddingTable {
public:
    explicit EmbeddingTable(std::size_t dim = 0);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return tokens_.size(); }

    /// Throws on duplicate token, wrong length, non-finite or all-zero vector.
    void add(std::string token, std::span<const float> vec);

    bool contains(std::string_view token) const;
    /// Throws when absent.
    std::span<const float> vector(std::string_view token) const;
    std::optional<std::span<const float>> find(std::string_view token) const;
    std::span<const std::string> tokens() const noexcept { return tokens_; }

    /// `#dim <D>` header, then `token\tf1\t...\tfD` per line.
    static EmbeddingTable read_tsv(std::istream& in, const std::string& source = "<stream>");
    static EmbeddingTable load_tsv(const std::string& path);
    void write_tsv(std::ostream& out) const;
    void save_tsv(const std::string& path) const;

private:
    std::size_t dim_;
    std::vector<std::string> tokens_;
    std::vector<float> data_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Cosine similarity clamped to [-1, 1]. Throws on length mismatch or a
/// zero-norm input.
double cosine(std::span<const float> u, std::span<const float> v);

/// Vector for a possibly multi-token name: the mean of the token vectors.
/// Tokens missing from the table use the <unk> vector and append a warning to
/// `warnings` when given. Throws when no token is present in the table.
std::vector<float> embed_name(std::string_view name, const EmbeddingTable& table,
                              std::vector<std::string>* warnings = nullptr);

/// True when the two words count as the same stem: one is the other plus
/// "s"/"es", or one is a prefix of the other and the lengths differ by at most 2.
bool shares_stem(std::string_view a, std::string_view b);

struct PseudoPair {
    WordId source = 0;
    WordId pseudo = 0;
    double similarity = 0.0;
};

/// Most similar in-domain word to `word`, excluding itself, specials, pseudo
/// sources, novel words, stem relatives and words without a vector. Exact
/// ties go to the lower id. Throws when nothing is eligible, listing the
/// exclusions that applied.
PseudoPair nearest_in_domain(WordId word, const EmbeddingTable& table, const Vocabulary& vocab);

/// Pairing of every pseudo-source word with its pseudo object.
class PseudoMap {
public:
    PseudoMap() = default;
    explicit PseudoMap(std::vector<PseudoPair> pairs);

    std::size_t size() const noexcept { return pairs_.size(); }
    const std::vector<PseudoPair>& pairs() const noexcept { return pairs_; }
    std::optional<WordId> pseudo_of(WordId source) const;

private:
    std::vector<PseudoPair> pairs_;
    std::unordered_map<WordId, std::size_t> index_;
};

PseudoMap build_pseudo_map(const Vocabulary& vocab, const EmbeddingTable& table);

} // namespace crn
