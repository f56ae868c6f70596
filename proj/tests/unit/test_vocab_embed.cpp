// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sstream>

#include "crn/error.hpp"
#include "crn/vocab_embed.hpp"
#include "helpers.hpp"

using namespace crn;
using crn::test::naive_cosine;

namespace {

std::vector<float> vec(std::initializer_list<float> xs) { return xs; }

EmbeddingTable fixture() { return EmbeddingTable::load_tsv(test::data_path("glove_tiny.tsv")); }

Vocabulary fixture_vocab(std::vector<std::string> sources) {
    return Vocabulary({"a", "zebra", "zebras", "horse", "cow", "umbrella", "umbrellas", "parasol", "rain", "sandwich",
                       "sandwiches", "burger", "bread", "hot", "dog"},
                      {}, std::move(sources));
}

} // namespace

TEST_SUITE("vocab_embed") {

TEST_CASE("cosine closed forms") {
    auto v = vec({0.3f, -1.2f, 2.0f});
    auto neg = vec({-0.3f, 1.2f, -2.0f});
    CHECK(cosine(v, v) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine(vec({1, 0}), vec({0, 1})) == 0.0);
    CHECK(cosine(v, neg) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("cosine rejects zero and mismatched inputs") {
    CHECK_THROWS_AS(cosine(vec({0, 0}), vec({1, 0})), Error);
    CHECK_THROWS_AS(cosine(vec({1, 0, 0}), vec({1, 0})), DimensionError);
}

TEST_CASE("cosine is symmetric, bounded and matches a double recomputation") {
    Rng rng(11);
    for (int i = 0; i < 500; ++i) {
        std::size_t n = 1 + rng.index(40);
        auto a = test::random_vector(rng, n);
        auto b = test::random_vector(rng, n);
        double ab = cosine(a, b);
        CHECK(ab == cosine(b, a));
        CHECK(ab >= -1.0);
        CHECK(ab <= 1.0);
        CHECK(ab == doctest::Approx(naive_cosine(a, b)).epsilon(1e-9));
    }
}

TEST_CASE("vocabulary layout and invariants") {
    Vocabulary v({"a", "dog", "cat"}, {"zebra"}, {"cat"});
    CHECK(v.size() == 7);
    CHECK(v.in_domain_size() == 6);
    CHECK(v.word(v.start()) == "<start>");
    CHECK(v.word(v.end()) == "<end>");
    CHECK(v.word(v.unk()) == "<unk>");
    CHECK(v.is_novel(v.id("zebra")));
    CHECK_FALSE(v.is_in_domain(v.id("zebra")));
    CHECK(v.is_pseudo_source(v.id("cat")));
    CHECK_FALSE(v.is_pseudo_source(v.id("dog")));
    CHECK(v.novel_ids() == std::vector<WordId>{6});

    CHECK_THROWS_AS(Vocabulary({"dog", "dog"}, {}, {}), Error);
    CHECK_THROWS_AS(Vocabulary({"dog"}, {"dog"}, {}), Error);
    CHECK_THROWS_AS(Vocabulary({"Dog"}, {}, {}), Error);
    CHECK_THROWS_AS(Vocabulary({""}, {}, {}), Error);
    CHECK_THROWS_AS(Vocabulary({"dog"}, {"zebra"}, {"zebra"}), Error);
    CHECK_THROWS_AS(Vocabulary({"dog"}, {}, {"cat"}), Error);
    CHECK_THROWS_AS(Vocabulary({"dog"}, {}, {"<start>"}), Error);
}

TEST_CASE("embed_name passthrough, mean and unk handling") {
    auto t = fixture();
    auto horse = embed_name("horse", t);
    auto hv = t.vector("horse");
    CHECK(std::equal(horse.begin(), horse.end(), hv.begin(), hv.end()));

    auto hotdog = embed_name("hot dog", t);
    auto hot = t.vector("hot");
    auto dog = t.vector("dog");
    for (std::size_t k = 0; k < t.dim(); ++k) CHECK(hotdog[k] == doctest::Approx((hot[k] + dog[k]) / 2.0));

    auto same = embed_name("horse horse", t);
    for (std::size_t k = 0; k < t.dim(); ++k) CHECK(same[k] == doctest::Approx(hv[k]));

    std::vector<std::string> warnings;
    auto partial = embed_name("hot pretzel", t, &warnings);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("pretzel") != std::string::npos);
    auto unk = t.vector("<unk>");
    for (std::size_t k = 0; k < t.dim(); ++k) CHECK(partial[k] == doctest::Approx((hot[k] + unk[k]) / 2.0));

    CHECK_THROWS_AS(embed_name("pretzel", t), Error);
    CHECK_THROWS_AS(embed_name("  ", t), Error);
}

TEST_CASE("shared-stem rule") {
    CHECK(shares_stem("sandwich", "sandwiches"));
    CHECK(shares_stem("zebras", "zebra"));
    CHECK(shares_stem("dog", "dogs"));
    CHECK(shares_stem("bus", "buses"));
    CHECK(shares_stem("car", "cart"));
    CHECK_FALSE(shares_stem("horse", "zebra"));
    CHECK_FALSE(shares_stem("car", "carpet"));
    CHECK_FALSE(shares_stem("sandwich", "burger"));
}

TEST_CASE("GloVe-like fixture gives the exemplar pairs and skips plurals") {
    auto t = fixture();
    auto v = fixture_vocab({"zebra", "umbrella", "sandwich"});
    auto map = build_pseudo_map(v, t);
    REQUIRE(map.size() == 3);
    CHECK(v.word(*map.pseudo_of(v.id("zebra"))) == "horse");
    CHECK(v.word(*map.pseudo_of(v.id("umbrella"))) == "parasol");
    CHECK(v.word(*map.pseudo_of(v.id("sandwich"))) == "burger");
    // The plural is the raw nearest neighbour.
    CHECK(cosine(t.vector("zebra"), t.vector("zebras")) > cosine(t.vector("zebra"), t.vector("horse")));
}

TEST_CASE("single-source map has one pair and empty source set is refused") {
    auto t = fixture();
    auto one = build_pseudo_map(fixture_vocab({"umbrella"}), t);
    CHECK(one.size() == 1);
    CHECK_THROWS_AS(build_pseudo_map(fixture_vocab({}), t), Error);
}

TEST_CASE("forced choice when one candidate remains") {
    EmbeddingTable t(2);
    t.add("<start>", vec({1, 0}));
    t.add("<end>", vec({1, 0}));
    t.add("<unk>", vec({1, 0}));
    t.add("cat", vec({1, 0}));
    t.add("cats", vec({1, 0.01f}));
    t.add("rock", vec({-1, 0.2f}));
    Vocabulary v({"cat", "cats", "rock"}, {}, {"cat"});
    auto p = nearest_in_domain(v.id("cat"), t, v);
    CHECK(v.word(p.pseudo) == "rock");
    CHECK(p.similarity < 0.0);
}

TEST_CASE("no eligible candidate names the exclusions") {
    EmbeddingTable t(2);
    for (auto w : {"<start>", "<end>", "<unk>", "cat", "cats"}) t.add(w, vec({1, 0.5f}));
    Vocabulary v({"cat", "cats"}, {"zebra"}, {"cat"});
    try {
        nearest_in_domain(v.id("cat"), t, v);
        FAIL("expected an error");
    } catch (const Error& e) {
        std::string msg = e.what();
        CHECK(msg.find("stem-related 'cats'") != std::string::npos);
        CHECK(msg.find("1 novel") != std::string::npos);
    }
}

TEST_CASE("nearest_in_domain equals an exhaustive scan on random tables") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = trial < 10 ? 5 : 200 + rng.index(800);
        const std::size_t dim = 2 + rng.index(6);
        std::vector<std::string> words;
        for (std::size_t i = 0; i < n; ++i) words.push_back("w" + std::to_string(i) + "x");
        std::vector<std::string> novel = {"novelone", "noveltwo"};
        std::vector<std::string> sources;
        for (std::size_t i = 0; i < n; i += 3) sources.push_back(words[i]);
        Vocabulary v(words, novel, sources);
        EmbeddingTable t(dim);
        for (auto w : v.words()) t.add(w, test::random_vector(rng, dim));

        for (WordId s : v.pseudo_source_ids()) {
            // Oracle: every pair scored, the eligible set filtered by hand.
            double best = -2.0;
            WordId arg = 0;
            for (WordId c = 0; c < v.size(); ++c) {
                const auto& cw = v.word(c);
                bool eligible = c != s && v.is_in_domain(c) && !v.is_special(c) && !v.is_pseudo_source(c) &&
                                !shares_stem(v.word(s), cw);
                if (!eligible) continue;
                double score = naive_cosine(t.vector(v.word(s)), t.vector(cw));
                if (score > best + 1e-12) {
                    best = score;
                    arg = c;
                }
            }
            auto got = nearest_in_domain(s, t, v);
            CHECK(got.pseudo == arg);
            CHECK(got.pseudo != s);
            CHECK_FALSE(v.is_novel(got.pseudo));
            CHECK(got.similarity == doctest::Approx(best).epsilon(1e-9));
        }
    }
}

TEST_CASE("exact ties go to the lower id") {
    EmbeddingTable t(2);
    for (auto w : {"<start>", "<end>", "<unk>"}) t.add(w, vec({-1, 0}));
    t.add("src", vec({1, 0}));
    t.add("first", vec({1, 1}));
    t.add("second", vec({1, 1}));
    Vocabulary v({"src", "second", "first"}, {}, {"src"});
    CHECK(v.word(nearest_in_domain(v.id("src"), t, v).pseudo) == "second");
}

TEST_CASE("build_pseudo_map is deterministic") {
    auto t = fixture();
    auto v = fixture_vocab({"zebra", "umbrella", "sandwich", "cow"});
    auto a = build_pseudo_map(v, t);
    auto b = build_pseudo_map(v, t);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.pairs()[i].source == b.pairs()[i].source);
        CHECK(a.pairs()[i].pseudo == b.pairs()[i].pseudo);
        CHECK(a.pairs()[i].similarity == b.pairs()[i].similarity);
    }
}

TEST_CASE("TSV round trip and load errors") {
    auto t = fixture();
    std::stringstream ss;
    t.write_tsv(ss);
    auto back = EmbeddingTable::read_tsv(ss);
    REQUIRE(back.size() == t.size());
    for (auto w : t.tokens()) {
        auto a = t.vector(w);
        auto b = back.vector(w);
        CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    }

    auto expect_line = [](const std::string& text, std::size_t line) {
        std::istringstream in(text);
        try {
            EmbeddingTable::read_tsv(in, "t.tsv");
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.line() == line);
        }
    };
    expect_line("#dim 2\ncat\t1\t0\ncat\t0\t1\n", 3);
    expect_line("#dim 2\ncat\t1\n", 2);
    expect_line("#dim 2\ncat\t1\t0\t3\n", 2);
    expect_line("#dim 2\ncat\t1\tx\n", 2);
    expect_line("cat\t1\t0\n", 1);
    expect_line("#dim 2\ncat\t0\t0\n", 2);

    std::istringstream dim300("#dim 3\nfoo\t1\t2\t3\n");
    CHECK(EmbeddingTable::read_tsv(dim300).dim() == 3);
}

} // TEST_SUITE
