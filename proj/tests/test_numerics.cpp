// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "prompt_forge/numerics.hpp"

using namespace prompt_forge;

TEST(Rng, SameSeedSameStream) {
    SeededRng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        EXPECT_EQ(x, b.next_u64());
        differs |= x != c.next_u64();
    }
    EXPECT_TRUE(differs);
}

TEST(Rng, SplitMixReferenceValue) {
    // First output of SplitMix64 seeded with 0, computed from the published algorithm.
    SeededRng r(0);
    EXPECT_EQ(r.next_u64(), 0xE220A8397B1DCDAFULL);
}

TEST(Rng, UniformAndBelowRanges) {
    SeededRng r(7);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        ASSERT_LT(r.below(13), 13u);
    }
    EXPECT_THROW(r.below(0), InvalidArgument);
}

TEST(Rng, NormalMoments) {
    SeededRng r(3);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
    SeededRng r(5);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    r.shuffle(v);
    EXPECT_EQ(std::set<int>(v.begin(), v.end()).size(), 50u);
}

TEST(Rng, DerivedSeedsDiffer) {
    std::set<std::uint64_t> s;
    for (std::uint64_t t = 0; t < 1000; ++t) s.insert(derive_seed(1, t));
    EXPECT_EQ(s.size(), 1000u);
    EXPECT_EQ(derive_seed(9, 4), derive_seed(9, 4));
}

TEST(Hash, FnvReference) {
    // FNV-1a 64 of "a" is 0xaf63dc4c8601ec8c.
    Fnv1a h;
    h.bytes("a", 1);
    EXPECT_EQ(h.digest(), 0xAF63DC4C8601EC8CULL);
    EXPECT_EQ(hex64(0xABCULL), "0000000000000abc");
}

TEST(Hash, SensitiveToSingleBit) {
    std::vector<double> v{1.0, 2.0, 3.0};
    Fnv1a a, b;
    a.values(v);
    v[1] = std::nextafter(2.0, 3.0);
    b.values(v);
    EXPECT_NE(a.digest(), b.digest());
}

TEST(MatrixOps, MatmulVariantsAgree) {
    SeededRng r(1);
    Matrix a(3, 4), b(4, 5);
    for (double& x : a.data) x = r.normal();
    for (double& x : b.data) x = r.normal();
    const Matrix c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
            EXPECT_NEAR(c(i, j), s, 1e-12);
        }
    const Matrix bt = transpose(b);
    EXPECT_EQ(matmul_nt(a, bt), c);
    const Matrix at = transpose(a);
    const Matrix c2 = matmul_tn(at, b);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c2.data[i], c.data[i], 1e-12);
    EXPECT_THROW(matmul(a, a), InvalidArgument);
}

TEST(MatrixOps, SoftmaxAndLogSumExp) {
    const std::vector<double> v{1000.0, 1000.0, 999.0};
    const auto s = softmax(v);
    double sum = 0;
    for (double x : s) sum += x;
    EXPECT_NEAR(sum, 1.0, 1e-15);
    EXPECT_NEAR(s[0], s[1], 1e-15);
    EXPECT_NEAR(log_sum_exp(v), 1000.0 + std::log(2.0 + std::exp(-1.0)), 1e-12);
}

TEST(Adam, MatchesHandRecurrence) {
    const std::vector<double> grads{0.5, -1.0, 2.0, 0.0, 0.25, -0.75};
    const auto expect = pf_oracle::adam_trajectory(1.0, grads, 1e-2, 0.9, 0.98, 1e-6);
    AdamState st(1, 1e-2);
    std::vector<double> x{1.0};
    for (std::size_t i = 0; i < grads.size(); ++i) {
        std::vector<double> g{grads[i]};
        adam_step(x, g, st);
        EXPECT_DOUBLE_EQ(x[0], expect[i]) << "step " << i + 1;
    }
}

TEST(Adam, FirstStepMovesByLearningRate) {
    // With bias correction the first step is lr * g / (|g| + eps).
    AdamState st(2, 0.1);
    std::vector<double> x{0.0, 0.0}, g{3.0, -3.0};
    adam_step(x, g, st);
    EXPECT_NEAR(x[0], -0.1, 1e-6);
    EXPECT_NEAR(x[1], 0.1, 1e-6);
}

TEST(Adam, LengthMismatchThrows) {
    AdamState st(2, 0.1);
    std::vector<double> x{0.0, 0.0}, g{1.0};
    EXPECT_THROW(adam_step(x, g, st), InvalidArgument);
}

TEST(Eigen, DiagonalAndKnown2x2) {
    Matrix d(3, 3);
    d(0, 0) = 3;
    d(1, 1) = 1;
    d(2, 2) = 2;
    auto r = sym_eigen(d, 3);
    EXPECT_NEAR(r.values[0], 1, 1e-14);
    EXPECT_NEAR(r.values[1], 2, 1e-14);
    EXPECT_NEAR(r.values[2], 3, 1e-14);
    // [[2,1],[1,2]] has eigenvalues 1 and 3.
    Matrix m(2, 2, {2, 1, 1, 2});
    r = sym_eigen(m, 2);
    EXPECT_NEAR(r.values[0], 1, 1e-14);
    EXPECT_NEAR(r.values[1], 3, 1e-14);
    EXPECT_NEAR(std::abs(r.vectors(0, 0)), std::sqrt(0.5), 1e-12);
}

TEST(Eigen, RandomSymmetricReconstructs) {
    SeededRng rng(11);
    const std::size_t n = 12;
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) a(i, j) = a(j, i) = rng.normal();
    const auto r = sym_eigen(a, n);
    for (std::size_t c = 0; c < n; ++c) {
        if (c) {
            EXPECT_LE(r.values[c - 1], r.values[c]);
        }
        for (std::size_t i = 0; i < n; ++i) {
            double av = 0;
            for (std::size_t k = 0; k < n; ++k) av += a(i, k) * r.vectors(k, c);
            EXPECT_NEAR(av, r.values[c] * r.vectors(i, c), 1e-10);
        }
        for (std::size_t c2 = 0; c2 < n; ++c2) {
            double d = 0;
            for (std::size_t k = 0; k < n; ++k) d += r.vectors(k, c) * r.vectors(k, c2);
            EXPECT_NEAR(d, c == c2 ? 1.0 : 0.0, 1e-10);
        }
    }
}

TEST(Eigen, RejectsAsymmetric) {
    Matrix a(2, 2, {1, 2, 0, 1});
    EXPECT_THROW(sym_eigen(a, 1), InvalidArgument);
}

TEST(GradCheck, QuadraticIsExact) {
    auto f = [](std::span<const double> x) { return 3 * x[0] * x[0] + x[0] * x[1]; };
    std::vector<double> x{1.5, -2.0};
    std::vector<double> g{6 * 1.5 - 2.0, 1.5};
    EXPECT_LT(grad_check(f, x, g), 1e-8);
    g[1] = 1.6;
    EXPECT_GT(grad_check(f, x, g), 0.05);
}
