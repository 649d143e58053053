// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "prompt_forge/metrics.hpp"

using namespace prompt_forge;

namespace {

// Word-level sequences for hand cases: each distinct word gets its own id.
struct Words {
    std::map<std::string, std::size_t> ids;
    TokenSequence operator()(const std::string& s) {
        TokenSequence t;
        std::istringstream in(s);
        std::string w;
        while (in >> w) t.ids.push_back(ids.emplace(w, ids.size()).first->second);
        return t;
    }
};

std::vector<TokenSequence> random_corpus(SeededRng& rng, std::size_t n, std::size_t vocab, std::size_t max_len) {
    std::vector<TokenSequence> out(n);
    for (auto& s : out) {
        const std::size_t len = rng.below(max_len + 1);
        for (std::size_t i = 0; i < len; ++i) s.ids.push_back(rng.below(vocab));
    }
    return out;
}

}  // namespace

TEST(MetricHandCases, Bleu) {
    Words w;
    EXPECT_DOUBLE_EQ(bleu_n({w("the cat")}, {w("the cat")}, 1), 1.0);
    EXPECT_DOUBLE_EQ(bleu_n({w("the the the")}, {w("the cat")}, 1), 1.0 / 3.0);
    // Disjoint: smoothed precision 1/(3+1); c = 3 > r = 2 so BP = 1.
    EXPECT_DOUBLE_EQ(bleu_n({w("x y z")}, {w("p q")}, 1), 0.25);
    // Same but r > c: BP = exp(1 - 4/3).
    EXPECT_DOUBLE_EQ(bleu_n({w("x y z")}, {w("p q r s")}, 1), 0.25 * std::exp(1.0 - 4.0 / 3.0));
}

TEST(MetricHandCases, BleuTwoOrders) {
    Words w;
    // hyp "a b c d", ref "a b d c": unigrams 4/4, bigrams {ab} 1/3; BP 1.
    EXPECT_NEAR(bleu_n({w("a b c d")}, {w("a b d c")}, 2), std::sqrt(1.0 / 3.0), 1e-15);
}

TEST(MetricHandCases, Rouge) {
    Words w;
    EXPECT_DOUBLE_EQ(rouge_n({w("a b c")}, {w("a b c")}, 1), 1.0);
    EXPECT_DOUBLE_EQ(rouge_n({w("a b")}, {w("c d")}, 1), 0.0);
    EXPECT_DOUBLE_EQ(rouge_l({w("a b c")}, {w("a b c")}), 1.0);
    EXPECT_NEAR(rouge_l({w("a b c")}, {w("a c")}), 0.8, 1e-15);
    EXPECT_DOUBLE_EQ(rouge_l({w("a b")}, {w("c d")}), 0.0);
    // ROUGE-2 of "a b c" vs "a b d": 1 shared bigram of 2 each -> F1 0.5.
    EXPECT_DOUBLE_EQ(rouge_n({w("a b c")}, {w("a b d")}, 2), 0.5);
    // Averaged over pairs.
    EXPECT_DOUBLE_EQ(rouge_n({w("a"), w("b")}, {w("a"), w("c")}, 1), 0.5);
    EXPECT_EQ(lcs_length(w("a b c b d a b"), w("b d c a b a")), 4u);
}

TEST(MetricHandCases, Distinct) {
    Words w;
    EXPECT_DOUBLE_EQ(distinct_n({w("a a b")}, 1), 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(distinct_n({w("a b c d")}, 1), 1.0);
    EXPECT_DOUBLE_EQ(distinct_n({w("a b"), w("a b")}, 2), 0.5);
    EXPECT_THROW(distinct_n({w("a")}, 2), InvalidArgument);
    EXPECT_THROW(distinct_n({TokenSequence{}}, 1), InvalidArgument);
}

TEST(MetricErrors, EmptyAndMismatched) {
    Words w;
    EXPECT_THROW(bleu_n({}, {}, 1), InvalidArgument);
    EXPECT_THROW(rouge_n({}, {}, 1), InvalidArgument);
    EXPECT_THROW(rouge_l({}, {}), InvalidArgument);
    EXPECT_THROW(bleu_n({w("a")}, {w("a"), w("b")}, 1), InvalidArgument);
    EXPECT_THROW(bleu_n({w("a")}, {w("a")}, 0), InvalidArgument);
}

TEST(MetricProperties, BoundedOnRandomCorpora) {
    SeededRng rng(1234);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.below(6);
        const auto hyps = random_corpus(rng, n, 2 + rng.below(8), 8);
        const auto refs = random_corpus(rng, n, 2 + rng.below(8), 8);
        const auto rep = evaluate_corpus(hyps, refs, 2);
        for (const auto& [k, v] : rep.scores) {
            ASSERT_GE(v, 0.0) << k;
            ASSERT_LE(v, 1.0) << k;
            ASSERT_TRUE(std::isfinite(v)) << k;
        }
    }
}

TEST(MetricProperties, IdentityCorpusScoresOne) {
    SeededRng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto c = random_corpus(rng, 5, 6, 7);
        for (auto& s : c)
            if (s.size() < 2) s.ids = {1, 2};
        for (std::size_t n = 1; n <= 2; ++n) {
            EXPECT_NEAR(bleu_n(c, c, n), 1.0, 1e-12);
            EXPECT_DOUBLE_EQ(rouge_n(c, c, n), 1.0);
        }
        EXPECT_DOUBLE_EQ(rouge_l(c, c), 1.0);
    }
}

TEST(MetricProperties, OrderFreeAggregation) {
    SeededRng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        auto h = random_corpus(rng, 6, 5, 6), r = random_corpus(rng, 6, 5, 6);
        std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5};
        rng.shuffle(perm);
        std::vector<TokenSequence> hp, rp;
        for (auto i : perm) {
            hp.push_back(h[i]);
            rp.push_back(r[i]);
        }
        EXPECT_DOUBLE_EQ(bleu_n(h, r, 2), bleu_n(hp, rp, 2));
        EXPECT_NEAR(rouge_n(h, r, 1), rouge_n(hp, rp, 1), 1e-15);
        EXPECT_NEAR(rouge_l(h, r), rouge_l(hp, rp), 1e-15);
    }
}

TEST(MetricProperties, DistinctDoesNotRiseUnderDuplication) {
    SeededRng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        auto h = random_corpus(rng, 4, 6, 6);
        h[0].ids = {1, 2, 3};
        auto dup = h;
        dup.insert(dup.end(), h.begin(), h.end());
        for (std::size_t n = 1; n <= 2; ++n) EXPECT_LE(distinct_n(dup, n), distinct_n(h, n) + 1e-15);
    }
}

TEST(EvalReportTest, FamiliesAndJson) {
    Words w;
    const auto rep = evaluate_corpus({w("a b c"), w("d e")}, {w("a b"), w("d f")}, 2);
    for (const char* k : {"bleu-1", "bleu-2", "rouge-1", "rouge-2", "rouge-l", "distinct-1", "distinct-2"})
        EXPECT_TRUE(rep.scores.count(k)) << k;
    EXPECT_EQ(rep.corpus_size, 2u);
    const nlohmann::json j = rep;
    const auto back = j.get<EvalReport>();
    EXPECT_EQ(back.scores, rep.scores);
    EXPECT_THROW(rep.at("meteor"), InvalidArgument);
    // Empty outputs leave Distinct undefined, so it is left out.
    const auto empty = evaluate_corpus({TokenSequence{}}, {w("a")}, 1);
    EXPECT_FALSE(empty.scores.count("distinct-1"));
}
