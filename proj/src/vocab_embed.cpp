// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#include "crn/vocab_embed.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "crn/error.hpp"
#include "crn/log.hpp"

namespace crn {

namespace {

void check_token(const std::string& t) {
    if (t.empty()) throw Error("vocabulary: empty token");
    for (char c : t) {
        if (c >= 'A' && c <= 'Z') throw Error("vocabulary: token '" + t + "' is not lowercase");
        if (c == '\t' || c == '\n' || c == '\r') throw Error("vocabulary: token contains a control character");
    }
}

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> in_domain, std::vector<std::string> novel,
                       std::vector<std::string> pseudo_sources) {
    words_.reserve(3 + in_domain.size() + novel.size());
    words_.emplace_back(kStart);
    words_.emplace_back(kEnd);
    words_.emplace_back(kUnk);
    for (auto& w : in_domain) words_.push_back(std::move(w));
    in_domain_size_ = words_.size();
    for (auto& w : novel) words_.push_back(std::move(w));

    for (std::size_t i = 0; i < words_.size(); ++i) {
        check_token(words_[i]);
        auto [it, inserted] = index_.emplace(words_[i], static_cast<WordId>(i));
        if (!inserted) {
            bool novel_clash = i >= in_domain_size_ && it->second < in_domain_size_;
            throw Error("vocabulary: duplicate token '" + words_[i] + "'" +
                        (novel_clash ? " (novel word also listed as in-domain)" : ""));
        }
    }

    is_source_.assign(words_.size(), false);
    for (const auto& s : pseudo_sources) {
        auto id = find(s);
        if (!id) throw Error("vocabulary: pseudo source '" + s + "' is not in the vocabulary");
        if (!is_in_domain(*id)) throw Error("vocabulary: pseudo source '" + s + "' is a novel word");
        if (is_special(*id)) throw Error("vocabulary: special token cannot be a pseudo source");
        if (is_source_[*id]) throw Error("vocabulary: pseudo source '" + s + "' listed twice");
        is_source_[*id] = true;
        sources_.push_back(*id);
    }
}

const std::string& Vocabulary::word(WordId id) const {
    if (id >= words_.size()) throw Error("vocabulary: word id " + std::to_string(id) + " out of range");
    return words_[id];
}

std::optional<WordId> Vocabulary::find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

WordId Vocabulary::id(std::string_view token) const {
    auto r = find(token);
    if (!r) throw Error("vocabulary: unknown token '" + std::string(token) + "'");
    return *r;
}

std::vector<WordId> Vocabulary::novel_ids() const {
    std::vector<WordId> out;
    for (std::size_t i = in_domain_size_; i < words_.size(); ++i) out.push_back(static_cast<WordId>(i));
    return out;
}

// ---------------------------------------------------------------------------
// EmbeddingTable

EmbeddingTable::EmbeddingTable(std::size_t dim) : dim_(dim) {}

void EmbeddingTable::add(std::string token, std::span<const float> vec) {
    if (dim_ == 0) throw Error("embedding table: dimension must be positive");
    if (vec.size() != dim_) {
        throw DimensionError("embedding table: vector for '" + token + "' has length " +
                             std::to_string(vec.size()) + ", expected " + std::to_string(dim_));
    }
    bool nonzero = false;
    for (float x : vec) {
        if (!std::isfinite(x)) throw Error("embedding table: non-finite value in vector for '" + token + "'");
        nonzero = nonzero || x != 0.0f;
    }
    if (!nonzero) throw Error("embedding table: all-zero vector for '" + token + "'");
    if (index_.count(token)) throw Error("embedding table: duplicate token '" + token + "'");
    index_.emplace(token, tokens_.size());
    tokens_.push_back(std::move(token));
    data_.insert(data_.end(), vec.begin(), vec.end());
}

bool EmbeddingTable::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

std::optional<std::span<const float>> EmbeddingTable::find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return std::span<const float>(data_.data() + it->second * dim_, dim_);
}

std::span<const float> EmbeddingTable::vector(std::string_view token) const {
    auto v = find(token);
    if (!v) throw Error("embedding table: no vector for '" + std::string(token) + "'");
    return *v;
}

EmbeddingTable EmbeddingTable::read_tsv(std::istream& in, const std::string& source) {
    std::string line;
    std::size_t lineno = 0;
    std::optional<EmbeddingTable> table;
    std::vector<float> vec;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!table) {
            if (line.rfind("#dim ", 0) != 0) throw ParseError(source, lineno, "expected '#dim <D>' header");
            std::size_t dim = 0;
            auto body = std::string_view(line).substr(5);
            auto [p, ec] = std::from_chars(body.data(), body.data() + body.size(), dim);
            if (ec != std::errc() || p != body.data() + body.size() || dim == 0) {
                throw ParseError(source, lineno, "bad dimension in header");
            }
            table.emplace(dim);
            vec.resize(dim);
            continue;
        }
        if (line.empty()) continue;
        std::string_view rest(line);
        auto tab = rest.find('\t');
        if (tab == std::string_view::npos) throw ParseError(source, lineno, "expected tab-separated fields");
        std::string token(rest.substr(0, tab));
        rest.remove_prefix(tab + 1);
        std::size_t k = 0;
        while (true) {
            auto next = rest.find('\t');
            auto field = rest.substr(0, next);
            if (k >= vec.size()) throw ParseError(source, lineno, "too many values for '" + token + "'");
            auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), vec[k]);
            if (ec != std::errc() || p != field.data() + field.size()) {
                throw ParseError(source, lineno, "bad number '" + std::string(field) + "'");
            }
            ++k;
            if (next == std::string_view::npos) break;
            rest.remove_prefix(next + 1);
        }
        if (k != vec.size()) {
            throw ParseError(source, lineno,
                             "expected " + std::to_string(vec.size()) + " values, found " + std::to_string(k));
        }
        if (table->contains(token)) throw ParseError(source, lineno, "duplicate token '" + token + "'");
        try {
            table->add(std::move(token), vec);
        } catch (const Error& e) {
            throw ParseError(source, lineno, e.what());
        }
    }
    if (!table) throw ParseError(source, 0, "empty file");
    return std::move(*table);
}

EmbeddingTable EmbeddingTable::load_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return read_tsv(in, path);
}

void EmbeddingTable::write_tsv(std::ostream& out) const {
    out << "#dim " << dim_ << '\n';
    char buf[32];
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        out << tokens_[i];
        for (std::size_t k = 0; k < dim_; ++k) {
            auto [p, ec] = std::to_chars(buf, buf + sizeof buf, data_[i * dim_ + k]);
            out << '\t' << std::string_view(buf, static_cast<std::size_t>(p - buf));
        }
        out << '\n';
    }
}

void EmbeddingTable::save_tsv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    write_tsv(out);
}

// ---------------------------------------------------------------------------
// Similarity

double cosine(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size()) {
        throw DimensionError("cosine: length mismatch " + std::to_string(u.size()) + " vs " +
                             std::to_string(v.size()));
    }
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += static_cast<double>(u[i]) * v[i];
        nu += static_cast<double>(u[i]) * u[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw Error("cosine: zero-norm input");
    return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

std::vector<float> embed_name(std::string_view name, const EmbeddingTable& table, std::vector<std::string>* warnings) {
    auto parts = split_ws(name);
    if (parts.empty()) throw Error("embed_name: empty name");
    std::vector<double> acc(table.dim(), 0.0);
    std::size_t found = 0;
    for (auto part : parts) {
        auto v = table.find(part);
        if (v) {
            ++found;
        } else {
            v = table.find(Vocabulary::kUnk);
            if (!v) {
                throw Error("embed_name: token '" + std::string(part) + "' of '" + std::string(name) +
                            "' has no vector and the table has no <unk> entry");
            }
            std::string msg = "embed_name: '" + std::string(part) + "' of '" + std::string(name) + "' uses <unk>";
            log::debug(msg);
            if (warnings) warnings->push_back(std::move(msg));
        }
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += (*v)[k];
    }
    if (found == 0) throw Error("embed_name: no token of '" + std::string(name) + "' is in the table");
    std::vector<float> out(acc.size());
    for (std::size_t k = 0; k < acc.size(); ++k) out[k] = static_cast<float>(acc[k] / parts.size());
    return out;
}

bool shares_stem(std::string_view a, std::string_view b) {
    auto plural_of = [](std::string_view longer, std::string_view shorter) {
        if (longer.size() == shorter.size() + 1) return longer.substr(0, shorter.size()) == shorter && longer.back() == 's';
        if (longer.size() == shorter.size() + 2)
            return longer.substr(0, shorter.size()) == shorter && longer.substr(shorter.size()) == "es";
        return false;
    };
    if (plural_of(a, b) || plural_of(b, a)) return true;
    std::string_view shorter = a.size() <= b.size() ? a : b;
    std::string_view longer = a.size() <= b.size() ? b : a;
    return longer.size() - shorter.size() <= 2 && longer.substr(0, shorter.size()) == shorter;
}

PseudoPair nearest_in_domain(WordId word, const EmbeddingTable& table, const Vocabulary& vocab) {
    const std::string& w = vocab.word(word);
    auto wv = table.vector(w);

    std::size_t n_special = 0, n_source = 0, n_stem = 0, n_missing = 0;
    std::vector<std::string> stem_words;
    std::optional<PseudoPair> best;
    for (WordId c = 0; c < vocab.in_domain_size(); ++c) {
        if (c == word) continue;
        if (vocab.is_special(c)) {
            ++n_special;
            continue;
        }
        if (vocab.is_pseudo_source(c)) {
            ++n_source;
            continue;
        }
        const std::string& cw = vocab.word(c);
        if (shares_stem(w, cw)) {
            ++n_stem;
            stem_words.push_back(cw);
            continue;
        }
        auto cv = table.find(cw);
        if (!cv) {
            ++n_missing;
            continue;
        }
        double s = cosine(wv, *cv);
        if (!best || s > best->similarity) best = PseudoPair{word, c, s};
    }
    if (!best) {
        std::ostringstream msg;
        msg << "no eligible pseudo object for '" << w << "' (excluded: self, " << n_special << " special, "
            << n_source << " pseudo-source, " << (vocab.size() - vocab.in_domain_size()) << " novel, " << n_stem
            << " stem-related";
        for (const auto& s : stem_words) msg << " '" << s << "'";
        msg << ", " << n_missing << " without vectors)";
        throw Error(msg.str());
    }
    return *best;
}

// ---------------------------------------------------------------------------
// PseudoMap

PseudoMap::PseudoMap(std::vector<PseudoPair> pairs) : pairs_(std::move(pairs)) {
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
        if (pairs_[i].source == pairs_[i].pseudo) throw Error("pseudo map: word paired with itself");
        if (!index_.emplace(pairs_[i].source, i).second) throw Error("pseudo map: duplicate source");
    }
}

std::optional<WordId> PseudoMap::pseudo_of(WordId source) const {
    auto it = index_.find(source);
    if (it == index_.end()) return std::nullopt;
    return pairs_[it->second].pseudo;
}

PseudoMap build_pseudo_map(const Vocabulary& vocab, const EmbeddingTable& table) {
    const auto& sources = vocab.pseudo_source_ids();
    if (sources.empty()) throw Error("build_pseudo_map: the pseudo-source set is empty");
    std::vector<PseudoPair> pairs;
    pairs.reserve(sources.size());
    for (WordId s : sources) {
        try {
            pairs.push_back(nearest_in_domain(s, table, vocab));
        } catch (const Error& e) {
            throw Error("build_pseudo_map: source '" + vocab.word(s) + "': " + e.what());
        }
    }
    return PseudoMap(std::move(pairs));
}

} // namespace crn
