// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "prompt_forge/backbone.hpp"
#include "prompt_forge/prompt.hpp"

using namespace prompt_forge;

namespace {

TokenSequence seq(std::initializer_list<std::size_t> ids) { return TokenSequence{ids}; }

TokenSequence content_seq(std::initializer_list<std::size_t> ks) {
    TokenSequence s;
    for (auto k : ks) s.ids.push_back(Vocab::content(k));
    return s;
}

std::filesystem::path tmp(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "pf_test_backbone";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST(Backbone, InstanceEncoderMatchesLoopReference) {
    const BackboneModel model{BackboneConfig{}};
    for (const auto& x : {content_seq({0, 5, 9}), content_seq({3}), content_seq({10, 11, 12, 13, 14, 15, 16})}) {
        const auto got = model.instance_encode(x);
        const auto want = pf_oracle::encoder_mean(model.instance_weights(), "ins.", x.ids, model.config().instance_layers,
                                                  model.config().heads, true);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
}

TEST(Backbone, InstanceEncoderProjectsToRequestedWidth) {
    const BackboneModel model{BackboneConfig{}};
    const auto x = content_seq({1, 2, 3});
    EXPECT_EQ(model.instance_encode(x, 16).size(), 16u);
    EXPECT_EQ(model.instance_encode(x, 16), model.instance_encode(x, 16));
    EXPECT_EQ(model.instance_encode(x, 32), model.instance_encode(x));
}

TEST(Backbone, ParameterCountMatchesLayout) {
    const BackboneConfig c;
    const std::size_t e = c.embed_dim, f = c.ffn_dim, v = c.vocab_size, L = c.layers;
    const std::size_t attn = 4 * e * e + 4 * e, ln = 2 * e, ff = e * f + f + f * e + e;
    const std::size_t expect = v * e + L * (2 * ln + attn + ff) + ln + L * (3 * ln + 2 * attn + ff) + ln + e * v + v;
    const BackboneModel model{c};
    EXPECT_EQ(model.generator_param_count(), expect);
    EXPECT_EQ(expect, 47040u);
}

TEST(Backbone, SeededInitIsReproducible) {
    const BackboneModel a{BackboneConfig{}}, b{BackboneConfig{}};
    BackboneConfig other;
    other.seed = 5;
    EXPECT_EQ(a.generator_hash(), b.generator_hash());
    EXPECT_EQ(a.instance_hash(), b.instance_hash());
    EXPECT_NE(a.generator_hash(), BackboneModel(other).generator_hash());
    EXPECT_EQ(a.instance_hash(), BackboneModel(other).instance_hash());
}

TEST(Backbone, PromptGradientMatchesFiniteDifference) {
    const BackboneModel model{BackboneConfig{}};
    const Matrix prompt = init_prompt_values(3, 4, 32);
    const auto x = content_seq({1, 2, 3, 4});
    const auto y = content_seq({4, 3});
    const auto lg = model.loss_and_grads(&prompt, x, y, {.prompt = true, .backbone = false});
    ASSERT_TRUE(lg.prompt_grad.has_value());
    auto f = [&](std::span<const double> v) {
        Matrix p(4, 32, {v.begin(), v.end()});
        return model.nll(&p, x, y);
    };
    std::vector<std::size_t> coords;
    for (std::size_t i = 0; i < prompt.size(); i += 7) coords.push_back(i);
    EXPECT_LT(grad_check(f, prompt.data, lg.prompt_grad->data, 1e-5, coords), 1e-7);
}

TEST(Backbone, WeightGradientMatchesFiniteDifference) {
    BackboneModel model{BackboneConfig{}};
    const auto x = content_seq({5, 6, 7});
    const auto y = content_seq({7, 5});
    const auto lg = model.loss_and_grads(nullptr, x, y, {.prompt = false, .backbone = true});
    for (const std::string name : {"gen.enc.0.attn.wq", "gen.dec.1.cross.wv", "gen.dec.ln_f.g", "gen.out.b"}) {
        Matrix& w = model.mutable_generator_weights().at(name);
        const Matrix orig = w;
        auto f = [&](std::span<const double> v) {
            std::copy(v.begin(), v.end(), w.data.begin());
            return model.nll(nullptr, x, y);
        };
        std::vector<std::size_t> coords;
        for (std::size_t i = 0; i < w.size(); i += 11) coords.push_back(i);
        EXPECT_LT(grad_check(f, orig.data, lg.weight_grads.at(name).data, 1e-5, coords), 1e-7) << name;
        w = orig;
    }
}

TEST(Backbone, PromptChangesLossAndWidthIsChecked) {
    const BackboneModel model{BackboneConfig{}};
    const auto x = content_seq({1, 2}), y = content_seq({2});
    const Matrix p = init_prompt_values(1, 3, 32);
    EXPECT_NE(model.nll(&p, x, y), model.nll(nullptr, x, y));
    const Matrix bad(3, 16);
    EXPECT_THROW(model.nll(&bad, x, y), InvalidArgument);
}

TEST(Backbone, SequenceValidation) {
    const BackboneModel model{BackboneConfig{}};
    EXPECT_THROW(model.instance_encode(TokenSequence{}), InvalidArgument);
    EXPECT_THROW(model.instance_encode(seq({999})), InvalidArgument);
    TokenSequence longx;
    longx.ids.assign(65, Vocab::content(0));
    EXPECT_THROW(model.nll(nullptr, longx, content_seq({1})), InvalidArgument);
}

TEST(Backbone, GenerateIsDeterministicAndBansRepeats) {
    const BackboneModel model{BackboneConfig{}};
    const auto x = content_seq({1, 2, 3, 4, 5});
    DecodeOptions opt{.beam = 3, .no_repeat_ngram = 2, .max_out = 12};
    const auto a = model.generate(nullptr, x, opt);
    EXPECT_EQ(a, model.generate(nullptr, x, opt));
    EXPECT_LE(a.size(), 12u);
    for (std::size_t i = 0; i + 1 < a.size(); ++i)
        for (std::size_t j = i + 1; j + 1 < a.size(); ++j)
            EXPECT_FALSE(a.ids[i] == a.ids[j] && a.ids[i + 1] == a.ids[j + 1]) << "repeated bigram";
    for (std::size_t id : a.ids) EXPECT_NE(id, Vocab::kEos);
    EXPECT_THROW(model.generate(nullptr, x, {.beam = 0}), InvalidArgument);
}

TEST(Backbone, SaveLoadRoundTripIsBitwise) {
    BackboneModel model{BackboneConfig{}};
    model.freeze();
    const auto p = tmp("model.json");
    model.save(p);
    const auto back = BackboneModel::load(p);
    EXPECT_EQ(back.generator_hash(), model.generator_hash());
    EXPECT_EQ(back.instance_hash(), model.instance_hash());
    EXPECT_TRUE(back.frozen());
    EXPECT_EQ(back.config(), model.config());
}

TEST(Backbone, LoadRejectsBadFiles) {
    const auto p = tmp("bad.json");
    {
        std::ofstream(p) << "{\"format_version\": 9}";
    }
    EXPECT_THROW(BackboneModel::load(p), FormatError);
    {
        std::ofstream(p) << "not json";
    }
    EXPECT_THROW(BackboneModel::load(p), FormatError);
    EXPECT_THROW(BackboneModel::load(tmp("missing.json")), FileError);
    auto j = BackboneModel{BackboneConfig{}}.to_json();
    j["weights"].erase("gen.out.b");
    EXPECT_THROW(BackboneModel::from_json(j), FormatError);
}

TEST(Backbone, PretrainingLowersLossAndFreezes) {
    std::vector<TokenSequence> corpus;
    for (std::size_t k = 0; k < 20; ++k) corpus.push_back(content_seq({k, k + 1, k + 2, k + 3}));
    const BackboneModel init{BackboneConfig{}};
    DenoiseReport rep;
    const auto model = pretrain_denoise(init, corpus, {.steps = 40, .mask_rate = 0.3, .lr = 3e-3, .batch = 4, .seed = 1}, &rep);
    ASSERT_EQ(rep.loss_curve.size(), 40u);
    double first = 0, last = 0;
    for (int i = 0; i < 5; ++i) {
        first += rep.loss_curve[i];
        last += rep.loss_curve[35 + i];
    }
    EXPECT_LT(last, first);
    EXPECT_TRUE(model.frozen());
    EXPECT_NE(model.generator_hash(), init.generator_hash());
    EXPECT_EQ(model.instance_hash(), init.instance_hash());
    EXPECT_THROW(pretrain_denoise(init, {}, {}), InvalidArgument);
}

TEST(Backbone, MaskingAlwaysCorruptsSomething) {
    SeededRng rng(1);
    const auto x = content_seq({1, 2, 3});
    for (int i = 0; i < 100; ++i) {
        const auto [noisy, target] = mask_tokens(x, 0.0, rng);
        EXPECT_EQ(target, x);
        EXPECT_EQ(std::count(noisy.ids.begin(), noisy.ids.end(), Vocab::kMask), 1);
    }
}
