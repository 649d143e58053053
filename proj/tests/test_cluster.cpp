// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "prompt_forge/cluster.hpp"

using namespace prompt_forge;

namespace {

Matrix random_prompt(SeededRng& rng, std::size_t l, std::size_t e) {
    Matrix m(l, e);
    for (double& v : m.data) v = rng.normal();
    return m;
}

std::filesystem::path tmp(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / "pf_test_cluster";
    std::filesystem::create_directories(d);
    return d / name;
}

}  // namespace

TEST(Similarity, MatchesDoubleLoop) {
    SeededRng rng(1);
    for (int i = 0; i < 20; ++i) {
        const auto a = random_prompt(rng, 5, 8), b = random_prompt(rng, 5, 8);
        EXPECT_NEAR(prompt_similarity(a, b), pf_oracle::similarity(a, b), 1e-12);
    }
}

TEST(Similarity, HandCase) {
    // Rows {0,0},{3,4} vs {0,0},{0,0}: distances 0,0,5,5 -> mean 2.5.
    const Matrix a(2, 2, {0, 0, 3, 4}), b(2, 2);
    EXPECT_DOUBLE_EQ(prompt_similarity(a, b), 1.0 / 3.5);
    EXPECT_DOUBLE_EQ(prompt_similarity(a, a), 1.0 / (1.0 + 2.5));
}

TEST(Similarity, SymmetricBoundedAndRowOrderFree) {
    SeededRng rng(2);
    for (int i = 0; i < 50; ++i) {
        const auto a = random_prompt(rng, 4, 3), b = random_prompt(rng, 4, 3);
        const double w = prompt_similarity(a, b);
        EXPECT_GT(w, 0.0);
        EXPECT_LE(w, 1.0);
        EXPECT_EQ(w, prompt_similarity(b, a));
        Matrix shuffled = a;
        std::swap_ranges(shuffled.row(0).begin(), shuffled.row(0).end(), shuffled.row(3).begin());
        EXPECT_EQ(prompt_similarity(shuffled, b), w);
    }
    const Matrix single(1, 3, {1, 2, 3});
    EXPECT_DOUBLE_EQ(prompt_similarity(single, single), 1.0);
    EXPECT_THROW(prompt_similarity(Matrix(2, 3), Matrix(3, 3)), InvalidArgument);
}

TEST(Similarity, BuildMatrix) {
    SeededRng rng(3);
    PromptPool pool;
    for (int i = 0; i < 4; ++i) pool.prompts.push_back({"t" + std::to_string(i), random_prompt(rng, 3, 2), {}});
    const auto s = build_similarity(pool);
    EXPECT_EQ(s.task_ids, (std::vector<std::string>{"t0", "t1", "t2", "t3"}));
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(s.w(i, i), 1.0);
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(s.w(i, j), s.w(j, i));
    }
    PromptPool one;
    one.prompts.push_back(pool.prompts[0]);
    EXPECT_THROW(build_similarity(one), InvalidArgument);
}

TEST(MinMaxCut, ObjectiveMatchesOracle) {
    SeededRng rng(4);
    std::vector<int> truth;
    const Matrix w = pf_oracle::block_fixture(rng, 7, 3, truth);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::size_t> lab(7);
        std::vector<int> ilab(7);
        for (std::size_t i = 0; i < 7; ++i) ilab[i] = static_cast<int>(lab[i] = i < 3 ? i : rng.below(3));
        EXPECT_NEAR(min_max_cut_objective(w, lab, 3), pf_oracle::min_max_cut(w, ilab, 3), 1e-12);
    }
}

TEST(SpectralCluster, RecoversExhaustiveOptimumOnBlocks) {
    SeededRng rng(5);
    int hits = 0;
    for (int f = 0; f < 10; ++f) {
        const int m = 2 + static_cast<int>(rng.below(2));
        std::vector<int> truth;
        const Matrix w = pf_oracle::block_fixture(rng, 8, m, truth);
        const auto best = pf_oracle::brute_force_partition(w, m);
        const auto got = spectral_cluster(w, static_cast<std::size_t>(m), 1);
        hits += pf_oracle::same_partition(best, got.labels);
    }
    EXPECT_GE(hits, 9);
}

TEST(SpectralCluster, DeterministicAndLabelCanonical) {
    SeededRng rng(6);
    std::vector<int> truth;
    const Matrix w = pf_oracle::block_fixture(rng, 9, 3, truth);
    const auto a = spectral_cluster(w, 3, 7), b = spectral_cluster(w, 3, 7);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.labels.front(), 0u);
    EXPECT_EQ(a.labels, canonical_labels(a.labels));
    EXPECT_EQ(a.eigenvalues.size(), 4u);
    EXPECT_NEAR(a.eigenvalues[0], 0.0, 1e-10);
}

TEST(SpectralCluster, InvariantToNodeRelabeling) {
    SeededRng rng(7);
    std::vector<int> truth;
    const Matrix w = pf_oracle::block_fixture(rng, 8, 3, truth);
    std::vector<std::size_t> perm{3, 7, 0, 5, 1, 6, 2, 4};
    Matrix pw(8, 8);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) pw(i, j) = w(perm[i], perm[j]);
    const auto a = spectral_cluster(w, 3, 1), b = spectral_cluster(pw, 3, 1);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            EXPECT_EQ(a.labels[perm[i]] == a.labels[perm[j]], b.labels[i] == b.labels[j]);
}

TEST(SpectralCluster, EdgeCasesAndErrors) {
    const Matrix w = Matrix::identity(3);
    const auto one = spectral_cluster(w, 1, 1);
    EXPECT_EQ(one.labels, (std::vector<std::size_t>{0, 0, 0}));
    const auto all = spectral_cluster(w, 3, 1);
    EXPECT_EQ(all.labels, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_THROW(spectral_cluster(w, 0, 1), InvalidArgument);
    EXPECT_THROW(spectral_cluster(w, 4, 1), InvalidArgument);
    Matrix bad = w;
    bad(0, 1) = bad(1, 0) = std::nan("");
    EXPECT_THROW(spectral_cluster(bad, 2, 1), NumericError);
}

TEST(Heatmap, RoundTripAndOrdering) {
    SimilarityMatrix s;
    s.task_ids = {"b", "a", "c"};
    s.w = Matrix(3, 3, {1, 0.2, 0.7, 0.2, 1, 0.1, 0.7, 0.1, 1});
    ClusterAssignment asg;
    asg.m = 2;
    asg.labels = {0, 1, 0};
    export_heatmap(s, asg, tmp("heat.csv"));
    std::ifstream in(tmp("heat.csv"));
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "task_id,b,c,a");
    const auto back = load_heatmap(tmp("heat.csv"));
    EXPECT_EQ(back.task_ids, (std::vector<std::string>{"b", "c", "a"}));
    EXPECT_DOUBLE_EQ(back.w(0, 1), 0.7);
    EXPECT_DOUBLE_EQ(back.w(2, 0), 0.2);
    std::ofstream(tmp("bad.csv")) << "task_id,a\nb,1\n";
    EXPECT_THROW(load_heatmap(tmp("bad.csv")), FormatError);
}

TEST(Assignment, JsonRoundTripAndRangeCheck) {
    ClusterAssignment a{2, {0, 1, 1}, 0.5, {0.0, 0.1, 0.9}};
    const nlohmann::json j = a;
    EXPECT_EQ(j.get<ClusterAssignment>(), a);
    auto bad = j;
    bad["labels"] = {0, 2};
    EXPECT_THROW(bad.get<ClusterAssignment>(), FormatError);
}
