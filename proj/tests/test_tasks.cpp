// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "prompt_forge/tasks.hpp"

using namespace prompt_forge;

namespace {

TokenSequence enc(const std::string& s) { return Vocab::instance().encode(s); }

std::filesystem::path tmpdir() {
    auto d = std::filesystem::temp_directory_path() / "pf_test_tasks";
    std::filesystem::create_directories(d);
    return d;
}

void write_file(const std::filesystem::path& p, const std::string& body) { std::ofstream(p, std::ios::binary) << body; }

}  // namespace

TEST(Rules, HandCases) {
    TaskRule r;
    r.kind = TaskKind::salient;
    r.marker = Vocab::instance().id("*");
    EXPECT_EQ(apply_rule(r, enc("a * b c * d")), enc("b d"));
    EXPECT_EQ(extract_salient(enc("# x y # z"), Vocab::instance().id("#")), enc("x z"));

    r = {};
    r.kind = TaskKind::prefix;
    r.k = 3;
    EXPECT_EQ(apply_rule(r, enc("a b c d e")), enc("a b c"));
    EXPECT_EQ(apply_rule(r, enc("a b")), enc("a b"));

    r = {};
    r.kind = TaskKind::reorder;
    r.reorder_mode = 0;
    EXPECT_EQ(apply_rule(r, enc("a b c")), enc("c b a"));
    r.reorder_mode = 1;
    EXPECT_EQ(apply_rule(r, enc("a b c d e")), enc("b a d c e"));
    r.reorder_mode = 2;
    EXPECT_EQ(apply_rule(r, enc("a b c")), enc("b c a"));

    r = {};
    r.kind = TaskKind::expansion;
    r.open = Vocab::instance().id("@");
    r.sep = Vocab::instance().id("|");
    r.close = Vocab::instance().id("^");
    EXPECT_EQ(apply_rule(r, enc("a b")), enc("@ a | b ^"));

    r = {};
    r.kind = TaskKind::keyed;
    r.persona_templates = {{enc("q").ids[0], TaskRule::kFirstSlot}, {TaskRule::kLastSlot, enc("r").ids[0], enc("s").ids[0]},
                           {TaskRule::kFirstSlot}, {TaskRule::kLastSlot}};
    EXPECT_EQ(apply_rule(r, enc("P0 a b c")), enc("q a"));
    EXPECT_EQ(apply_rule(r, enc("P1 a b c")), enc("c r s"));
    EXPECT_THROW(apply_rule(r, enc("a b c")), InvalidArgument);
}

TEST(Rules, SubstitutionIsAnInvolution) {
    for (const auto& spec : default_source_specs()) {
        if (spec.kind != TaskKind::substitution) continue;
        const auto rule = derive_rule(spec);
        EXPECT_EQ(rule.substitution.size(), 8u);
        for (const auto& [a, b] : rule.substitution) {
            EXPECT_NE(a, b);
            EXPECT_EQ(rule.substitution.at(b), a);
        }
        const auto x = enc("a b c d e f g h");
        EXPECT_EQ(apply_rule(rule, apply_rule(rule, x)), x);
    }
}

TEST(Rules, DeriveRuleIsDeterministic) {
    for (const auto& spec : default_source_specs()) {
        const auto a = derive_rule(spec), b = derive_rule(spec);
        EXPECT_EQ(a.substitution, b.substitution);
        EXPECT_EQ(a.persona_templates, b.persona_templates);
        EXPECT_EQ(a.open, b.open);
        EXPECT_EQ(a.k, b.k);
    }
}

TEST(Registry, ShapeAndFamilies) {
    const auto src = default_source_specs();
    EXPECT_EQ(src.size(), 12u);
    std::map<Family, int> fam;
    std::set<std::string> ids;
    for (const auto& s : src) {
        ++fam[s.family()];
        ids.insert(s.task_id);
    }
    EXPECT_EQ(ids.size(), 12u);
    EXPECT_EQ(fam[Family::compression], 4);
    EXPECT_EQ(fam[Family::transduction], 4);
    EXPECT_EQ(fam[Family::creation], 4);
    EXPECT_EQ(find_spec(default_registry(), "target-mixed").kind, TaskKind::mixed);
    EXPECT_THROW(find_spec(src, "nope"), InvalidArgument);
}

TEST(Registry, EnumStringsRoundTrip) {
    for (auto k : {TaskKind::salient, TaskKind::prefix, TaskKind::substitution, TaskKind::reorder, TaskKind::expansion,
                   TaskKind::keyed, TaskKind::mixed})
        EXPECT_EQ(kind_from_string(to_string(k)), k);
    for (auto f : {Family::compression, Family::transduction, Family::creation}) EXPECT_EQ(family_from_string(to_string(f)), f);
    EXPECT_THROW(kind_from_string("poetry"), InvalidArgument);
}

TEST(Corpus, EveryRecordSolvesItsRule) {
    for (const auto& spec : default_registry()) {
        const auto c = generate_corpus(spec, 3);
        EXPECT_EQ(c.train.size(), spec.sizes.train);
        EXPECT_EQ(c.valid.size(), spec.sizes.valid);
        EXPECT_EQ(c.test.size(), spec.sizes.test);
        std::set<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> seen;
        for (const auto* split : {&c.train, &c.valid, &c.test})
            for (const auto& r : *split) {
                ASSERT_EQ(solve(spec, r.x), r.y) << spec.task_id;
                EXPECT_FALSE(r.y.empty());
                EXPECT_EQ(r.task_id, spec.task_id);
                EXPECT_TRUE(seen.insert({r.x.ids, r.y.ids}).second) << "duplicate pair in " << spec.task_id;
                if (spec.kind != TaskKind::mixed) {
                    EXPECT_EQ(r.family, spec.family());
                }
            }
    }
}

TEST(Corpus, PureFunctionOfSpecAndSeed) {
    const auto spec = find_spec(default_registry(), "subst-1");
    const auto a = generate_corpus(spec, 5), b = generate_corpus(spec, 5), c = generate_corpus(spec, 6);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.test, b.test);
    EXPECT_NE(a.train, c.train);
}

TEST(Corpus, MixedTargetRoutesEachInputToOneComponent) {
    const auto spec = find_spec(default_registry(), "target-mixed");
    const auto c = generate_corpus(spec, 1);
    std::map<Family, int> fam;
    for (const auto& r : c.train) {
        int accepted = 0;
        for (const auto& comp : spec.components) accepted += accepts_input(derive_rule(comp), r.x);
        EXPECT_EQ(accepted, 1);
        ++fam[r.family];
    }
    EXPECT_GT(fam[Family::compression], 100);
    EXPECT_GT(fam[Family::creation], 100);
}

TEST(Corpus, ImpossibleRequestThrows) {
    SourceTaskSpec s;
    s.task_id = "tiny";
    s.kind = TaskKind::prefix;
    s.alphabet = {Vocab::content(0), Vocab::content(1), Vocab::content(2)};
    s.min_len = 3;
    s.max_len = 3;
    s.sizes = {50, 0, 0};
    EXPECT_THROW(generate_corpus(s, 1), InvalidArgument);
    s.min_len = 0;
    EXPECT_THROW(generate_corpus(s, 1), InvalidArgument);
}

TEST(Jsonl, RoundTripIsExact) {
    const auto c = generate_corpus(find_spec(default_registry(), "keyed-2"), 4);
    write_corpus(tmpdir() / "keyed", c);
    const auto back = read_corpus(tmpdir() / "keyed");
    EXPECT_EQ(back.train, c.train);
    EXPECT_EQ(back.valid, c.valid);
    EXPECT_EQ(back.test, c.test);
    EXPECT_EQ(record_to_jsonl(c.train[0]).find('\n'), std::string::npos);
}

TEST(Jsonl, ErrorsNameTheLine) {
    const auto p = tmpdir() / "bad.jsonl";
    const std::string good = R"({"family":"compression","task_id":"t","x":"a b","y":"a"})";
    auto expect_error = [&](const std::string& body, const std::string& needle) {
        write_file(p, body);
        try {
            load_jsonl(p);
            ADD_FAILURE() << "no error for: " << body;
        } catch (const FormatError& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };
    expect_error(good + "\n{not json\n", ":2: malformed JSON");
    expect_error(good + "\n" + R"({"family":"compression","task_id":"t","x":"a zz","y":"a"})", "unknown token 'zz' in field 'x'");
    expect_error(R"({"family":"compression","task_id":"t","y":"a"})", ":1:");
    expect_error(R"({"family":"poetry","task_id":"t","x":"a","y":"a"})", ":1:");
    expect_error(R"({"family":"compression","task_id":"t","x":"","y":"a"})", "empty x");
    write_file(p, good + "\n");
    EXPECT_THROW(load_jsonl(p, 1), FormatError);
    EXPECT_EQ(load_jsonl(p).size(), 1u);
    EXPECT_THROW(load_jsonl(tmpdir() / "missing.jsonl"), FileError);
}

TEST(Jsonl, SpecJsonRoundTrip) {
    for (const auto& s : default_registry()) {
        const nlohmann::json j = s;
        const auto back = j.get<SourceTaskSpec>();
        EXPECT_EQ(back.task_id, s.task_id);
        EXPECT_EQ(back.kind, s.kind);
        EXPECT_EQ(back.alphabet, s.alphabet);
        EXPECT_EQ(back.components.size(), s.components.size());
        EXPECT_EQ(generate_corpus(back, 2).train, generate_corpus(s, 2).train);
    }
}
