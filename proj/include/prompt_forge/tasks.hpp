// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic seq2seq tasks. Six task kinds cover the
// compression / transduction / creation taxonomy; every instance has a
// unique answer reproducible by `apply_rule`.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prompt_forge/numerics.hpp"
#include "prompt_forge/vocab.hpp"

namespace prompt_forge {

enum class Family { compression, transduction, creation };

enum class TaskKind {
    salient,       // emit the tokens flagged by a marker
    prefix,        // first-k tokens
    substitution,  // swap a few token pairs, copy the rest
    reorder,       // fixed permutation of positions
    expansion,     // seed tokens wrapped in a template
    keyed,         // persona token selects a reply template
    mixed,         // union of input-distinguishable component tasks
};

inline std::string to_string(Family f) {
    switch (f) {
        case Family::compression: return "compression";
        case Family::transduction: return "transduction";
        case Family::creation: return "creation";
    }
    return "?";
}

inline Family family_from_string(const std::string& s) {
    if (s == "compression") return Family::compression;
    if (s == "transduction") return Family::transduction;
    if (s == "creation") return Family::creation;
    throw InvalidArgument("unknown family '" + s + "'");
}

inline std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::salient: return "salient";
        case TaskKind::prefix: return "prefix";
        case TaskKind::substitution: return "substitution";
        case TaskKind::reorder: return "reorder";
        case TaskKind::expansion: return "expansion";
        case TaskKind::keyed: return "keyed";
        case TaskKind::mixed: return "mixed";
    }
    return "?";
}

inline TaskKind kind_from_string(const std::string& s) {
    for (TaskKind k : {TaskKind::salient, TaskKind::prefix, TaskKind::substitution, TaskKind::reorder,
                       TaskKind::expansion, TaskKind::keyed, TaskKind::mixed})
        if (to_string(k) == s) return k;
    throw InvalidArgument("unknown task kind '" + s + "'");
}

inline Family family_of(TaskKind k) {
    switch (k) {
        case TaskKind::salient:
        case TaskKind::prefix: return Family::compression;
        case TaskKind::substitution:
        case TaskKind::reorder: return Family::transduction;
        default: return Family::creation;
    }
}

struct InstanceRecord {
    TokenSequence x;
    TokenSequence y;
    std::string task_id;
    Family family = Family::compression;

    friend bool operator==(const InstanceRecord&, const InstanceRecord&) = default;
};

struct SplitSizes {
    std::size_t train = 400;
    std::size_t valid = 40;
    std::size_t test = 40;
};

struct SourceTaskSpec {
    std::string task_id;
    TaskKind kind = TaskKind::salient;
    std::vector<std::size_t> alphabet;  // content token ids; empty = all 50
    std::size_t min_len = 5;            // content tokens in x
    std::size_t max_len = 9;
    std::uint64_t rule_seed = 0;
    SplitSizes sizes;
    std::vector<SourceTaskSpec> components;  // mixed only

    Family family() const { return family_of(kind); }

    std::vector<std::size_t> effective_alphabet() const {
        if (!alphabet.empty()) return alphabet;
        std::vector<std::size_t> a;
        for (std::size_t k = 0; k < Vocab::kContentCount; ++k) a.push_back(Vocab::content(k));
        return a;
    }
};

// ---------------------------------------------------------------- rules

/// Rule parameters derived from a spec's rule seed.
struct TaskRule {
    TaskKind kind = TaskKind::salient;
    std::size_t marker = 0;                            // salient
    std::size_t k = 0;                                 // prefix
    std::map<std::size_t, std::size_t> substitution;   // substitution (involution)
    int reorder_mode = 0;                              // 0 reverse, 1 swap pairs, 2 rotate left
    std::size_t open = 0, sep = 0, close = 0;          // expansion
    // keyed: per persona, template entries; values < 1000 are fixed token ids,
    // 1000 = first context token, 1001 = last context token.
    std::vector<std::vector<std::size_t>> persona_templates;

    static constexpr std::size_t kFirstSlot = 1000;
    static constexpr std::size_t kLastSlot = 1001;
};

inline std::size_t control_token(const char* s) { return Vocab::instance().id(s); }

inline std::vector<std::size_t> persona_tokens() {
    return {control_token("P0"), control_token("P1"), control_token("P2"), control_token("P3")};
}

inline TaskRule derive_rule(const SourceTaskSpec& spec) {
    TaskRule r;
    r.kind = spec.kind;
    SeededRng rng(derive_seed(spec.rule_seed, static_cast<std::uint64_t>(spec.kind) + 17));
    auto alpha = spec.effective_alphabet();
    switch (spec.kind) {
        case TaskKind::salient:
            r.marker = control_token(spec.rule_seed % 2 == 0 ? "*" : "#");
            break;
        case TaskKind::prefix:
            r.k = 2 + spec.rule_seed % 3;
            break;
        case TaskKind::substitution: {
            rng.shuffle(alpha);
            const std::size_t pairs = std::min<std::size_t>(4, alpha.size() / 2);
            for (std::size_t i = 0; i < pairs; ++i) {
                r.substitution[alpha[2 * i]] = alpha[2 * i + 1];
                r.substitution[alpha[2 * i + 1]] = alpha[2 * i];
            }
            break;
        }
        case TaskKind::reorder:
            r.reorder_mode = static_cast<int>(spec.rule_seed % 3);
            break;
        case TaskKind::expansion: {
            std::vector<std::size_t> ctl{control_token("@"), control_token("^"), control_token("~"), control_token("|")};
            rng.shuffle(ctl);
            r.open = ctl[0];
            r.sep = ctl[1];
            r.close = ctl[2];
            break;
        }
        case TaskKind::keyed: {
            rng.shuffle(alpha);
            std::size_t next = 0;
            for (std::size_t p = 0; p < 4; ++p) {
                std::vector<std::size_t> tpl;
                const std::size_t fixed = 2 + rng.below(2);
                for (std::size_t i = 0; i < fixed; ++i) tpl.push_back(alpha[next++ % alpha.size()]);
                const std::size_t slot_at = rng.below(tpl.size() + 1);
                tpl.insert(tpl.begin() + static_cast<std::ptrdiff_t>(slot_at),
                           rng.below(2) == 0 ? TaskRule::kFirstSlot : TaskRule::kLastSlot);
                r.persona_templates.push_back(std::move(tpl));
            }
            break;
        }
        case TaskKind::mixed:
            break;
    }
    return r;
}

/// Tokens a task reserves for its templates (kept out of sampled inputs).
inline std::set<std::size_t> reserved_tokens(const TaskRule& r) {
    std::set<std::size_t> s;
    for (const auto& tpl : r.persona_templates)
        for (std::size_t t : tpl)
            if (t < TaskRule::kFirstSlot) s.insert(t);
    return s;
}

inline TokenSequence apply_rule(const TaskRule& r, const TokenSequence& x) {
    TokenSequence y;
    const auto& in = x.ids;
    switch (r.kind) {
        case TaskKind::salient:
            for (std::size_t i = 0; i + 1 < in.size(); ++i)
                if (in[i] == r.marker && in[i + 1] != r.marker) y.ids.push_back(in[i + 1]);
            break;
        case TaskKind::prefix:
            y.ids.assign(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(std::min(r.k, in.size())));
            break;
        case TaskKind::substitution:
            for (std::size_t t : in) {
                auto it = r.substitution.find(t);
                y.ids.push_back(it == r.substitution.end() ? t : it->second);
            }
            break;
        case TaskKind::reorder:
            if (r.reorder_mode == 0) {
                y.ids.assign(in.rbegin(), in.rend());
            } else if (r.reorder_mode == 1) {
                y.ids = in;
                for (std::size_t i = 0; i + 1 < y.ids.size(); i += 2) std::swap(y.ids[i], y.ids[i + 1]);
            } else {
                y.ids = in;
                if (!y.ids.empty()) std::rotate(y.ids.begin(), y.ids.begin() + 1, y.ids.end());
            }
            break;
        case TaskKind::expansion:
            y.ids.push_back(r.open);
            for (std::size_t i = 0; i < in.size(); ++i) {
                if (i) y.ids.push_back(r.sep);
                y.ids.push_back(in[i]);
            }
            y.ids.push_back(r.close);
            break;
        case TaskKind::keyed: {
            const auto personas = persona_tokens();
            if (in.size() < 2) throw InvalidArgument("keyed rule: input too short");
            const auto it = std::find(personas.begin(), personas.end(), in[0]);
            if (it == personas.end()) throw InvalidArgument("keyed rule: missing persona token");
            for (std::size_t t : r.persona_templates[static_cast<std::size_t>(it - personas.begin())]) {
                if (t == TaskRule::kFirstSlot) y.ids.push_back(in[1]);
                else if (t == TaskRule::kLastSlot) y.ids.push_back(in.back());
                else y.ids.push_back(t);
            }
            break;
        }
        case TaskKind::mixed:
            throw InvalidArgument("apply_rule: mixed task needs component dispatch");
    }
    return y;
}

/// Salient-extraction rule for an arbitrary marker token.
inline TokenSequence extract_salient(const TokenSequence& x, std::size_t marker) {
    TaskRule r;
    r.kind = TaskKind::salient;
    r.marker = marker;
    return apply_rule(r, x);
}

/// Whether an input could have been produced by this component (used to
/// route mixed-task inputs to exactly one rule).
inline bool accepts_input(const TaskRule& r, const TokenSequence& x) {
    const auto personas = persona_tokens();
    const bool has_persona = !x.empty() && std::find(personas.begin(), personas.end(), x.ids[0]) != personas.end();
    const bool all_content = std::all_of(x.ids.begin(), x.ids.end(), [](std::size_t t) { return Vocab::is_content(t); });
    switch (r.kind) {
        case TaskKind::salient: return std::find(x.ids.begin(), x.ids.end(), r.marker) != x.ids.end();
        case TaskKind::keyed: return has_persona;
        case TaskKind::expansion: return all_content && x.size() <= 3;
        case TaskKind::prefix:
        case TaskKind::substitution:
        case TaskKind::reorder: return all_content && x.size() >= 4;
        case TaskKind::mixed: return false;
    }
    return false;
}

/// The oracle answer for x under a spec (mixed specs dispatch by input).
inline TokenSequence solve(const SourceTaskSpec& spec, const TokenSequence& x) {
    if (spec.kind != TaskKind::mixed) return apply_rule(derive_rule(spec), x);
    std::optional<TokenSequence> answer;
    for (const auto& c : spec.components) {
        const auto rule = derive_rule(c);
        if (!accepts_input(rule, x)) continue;
        if (answer) throw InvalidArgument("mixed task '" + spec.task_id + "': ambiguous input");
        answer = apply_rule(rule, x);
    }
    if (!answer) throw InvalidArgument("mixed task '" + spec.task_id + "': no component accepts input");
    return *answer;
}

// ---------------------------------------------------------------- generation

namespace detail {

inline std::vector<std::size_t> sample_distinct(SeededRng& rng, std::vector<std::size_t> pool, std::size_t n) {
    rng.shuffle(pool);
    pool.resize(std::min(n, pool.size()));
    return pool;
}

inline TokenSequence sample_input(const SourceTaskSpec& spec, const TaskRule& rule, SeededRng& rng) {
    auto alpha = spec.effective_alphabet();
    const auto reserved = reserved_tokens(rule);
    std::erase_if(alpha, [&](std::size_t t) { return reserved.count(t) > 0; });
    const std::size_t len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
    TokenSequence x;
    switch (spec.kind) {
        case TaskKind::salient: {
            const auto content = sample_distinct(rng, alpha, len);
            const std::size_t marked = 1 + rng.below(std::min<std::size_t>(3, content.size()));
            std::vector<std::size_t> idx(content.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            rng.shuffle(idx);
            std::set<std::size_t> flag(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(marked));
            for (std::size_t i = 0; i < content.size(); ++i) {
                if (flag.count(i)) x.ids.push_back(rule.marker);
                x.ids.push_back(content[i]);
            }
            break;
        }
        case TaskKind::substitution: {
            x.ids = sample_distinct(rng, alpha, len);
            bool hit = std::any_of(x.ids.begin(), x.ids.end(), [&](std::size_t t) { return rule.substitution.count(t) > 0; });
            if (!hit && !rule.substitution.empty()) {
                std::vector<std::size_t> keys;
                for (const auto& kv : rule.substitution)
                    if (std::find(x.ids.begin(), x.ids.end(), kv.first) == x.ids.end()) keys.push_back(kv.first);
                if (!keys.empty()) x.ids[rng.below(x.ids.size())] = keys[rng.below(keys.size())];
            }
            break;
        }
        case TaskKind::keyed: {
            const auto personas = persona_tokens();
            x.ids.push_back(personas[rng.below(personas.size())]);
            for (std::size_t t : sample_distinct(rng, alpha, len)) x.ids.push_back(t);
            break;
        }
        default:
            x.ids = sample_distinct(rng, alpha, len);
            break;
    }
    return x;
}

inline std::string pair_key(const TokenSequence& x, const TokenSequence& y) {
    std::ostringstream s;
    for (std::size_t t : x.ids) s << t << ',';
    s << '|';
    for (std::size_t t : y.ids) s << t << ',';
    return s.str();
}

}  // namespace detail

struct Corpus {
    std::vector<InstanceRecord> train, valid, test;
};

/// Pure function of (spec, seed): unique (x, y) pairs split train/valid/test.
inline Corpus generate_corpus(const SourceTaskSpec& spec, std::uint64_t seed) {
    if (spec.min_len == 0 || spec.max_len < spec.min_len)
        throw InvalidArgument("task '" + spec.task_id + "': bad length range");
    if (spec.kind == TaskKind::mixed && spec.components.empty())
        throw InvalidArgument("task '" + spec.task_id + "': mixed task without components");
    Fnv1a h;
    h.str(spec.task_id);
    SeededRng rng(derive_seed(seed, h.digest()));
    const std::size_t total = spec.sizes.train + spec.sizes.valid + spec.sizes.test;
    std::vector<InstanceRecord> all;
    std::set<std::string> seen;
    std::vector<TaskRule> rules;
    if (spec.kind == TaskKind::mixed)
        for (const auto& c : spec.components) rules.push_back(derive_rule(c));
    else
        rules.push_back(derive_rule(spec));
    std::size_t attempts = 0;
    while (all.size() < total) {
        if (++attempts > total * 50 + 1000)
            throw InvalidArgument("task '" + spec.task_id + "': cannot draw " + std::to_string(total) + " unique pairs");
        const std::size_t which = rules.size() == 1 ? 0 : rng.below(rules.size());
        const SourceTaskSpec& sub = spec.kind == TaskKind::mixed ? spec.components[which] : spec;
        InstanceRecord rec;
        rec.x = detail::sample_input(sub, rules[which], rng);
        rec.y = apply_rule(rules[which], rec.x);
        if (rec.y.empty()) continue;
        if (spec.kind == TaskKind::mixed) {
            std::size_t accepted = 0;
            for (const auto& r : rules) accepted += accepts_input(r, rec.x) ? 1 : 0;
            if (accepted != 1) continue;
        }
        if (!seen.insert(detail::pair_key(rec.x, rec.y)).second) continue;
        rec.task_id = spec.task_id;
        rec.family = sub.family();
        all.push_back(std::move(rec));
    }
    Corpus c;
    const auto t0 = all.begin();
    const auto t1 = t0 + static_cast<std::ptrdiff_t>(spec.sizes.train);
    const auto t2 = t1 + static_cast<std::ptrdiff_t>(spec.sizes.valid);
    c.train.assign(t0, t1);
    c.valid.assign(t1, t2);
    c.test.assign(t2, all.end());
    return c;
}

// ---------------------------------------------------------------- registry

/// Built-in task registry: two source datasets per task kind, plus held-out
/// target datasets used by the transfer experiments.
inline std::vector<SourceTaskSpec> default_source_specs() {
    // Each task kind draws content from its own 20-symbol window (windows
    // overlap), the way real datasets differ in vocabulary.
    auto make = [](std::string id, TaskKind kind, std::size_t lo, std::size_t hi, std::uint64_t rule) {
        SourceTaskSpec s;
        s.task_id = std::move(id);
        s.kind = kind;
        const std::size_t start = 6 * static_cast<std::size_t>(kind);
        for (std::size_t i = 0; i < 20; ++i) s.alphabet.push_back(Vocab::content(start + i));
        s.min_len = lo;
        s.max_len = hi;
        s.rule_seed = rule;
        return s;
    };
    return {
        make("salient-1", TaskKind::salient, 4, 7, 0),       make("salient-2", TaskKind::salient, 5, 8, 1),
        make("prefix-1", TaskKind::prefix, 5, 8, 0),         make("prefix-2", TaskKind::prefix, 5, 8, 1),
        make("subst-1", TaskKind::substitution, 4, 7, 11),   make("subst-2", TaskKind::substitution, 4, 7, 12),
        make("reorder-1", TaskKind::reorder, 4, 6, 0),       make("reorder-2", TaskKind::reorder, 4, 6, 1),
        make("expand-1", TaskKind::expansion, 2, 3, 5),      make("expand-2", TaskKind::expansion, 2, 3, 6),
        make("keyed-1", TaskKind::keyed, 3, 5, 21),          make("keyed-2", TaskKind::keyed, 3, 5, 22),
    };
}

/// Held-out targets: `target-keyed` keeps the keyed-1 persona templates but
/// draws longer contexts; `target-mixed` interleaves prefix and expansion
/// instances (compression and creation) that only per-input routing solves.
inline std::vector<SourceTaskSpec> default_target_specs() {
    const auto src = default_source_specs();
    auto find = [&](const std::string& id) {
        for (const auto& s : src)
            if (s.task_id == id) return s;
        throw InvalidArgument("registry: no task " + id);
    };
    SourceTaskSpec keyed = find("keyed-1");
    keyed.task_id = "target-keyed";
    keyed.min_len = 4;
    keyed.max_len = 6;
    keyed.sizes = {600, 60, 60};

    SourceTaskSpec mixed;
    mixed.task_id = "target-mixed";
    mixed.kind = TaskKind::mixed;
    mixed.components = {find("prefix-1"), find("expand-1")};
    mixed.sizes = {600, 60, 60};
    return {keyed, mixed};
}

inline std::vector<SourceTaskSpec> default_registry() {
    auto all = default_source_specs();
    for (auto& t : default_target_specs()) all.push_back(std::move(t));
    return all;
}

inline const SourceTaskSpec& find_spec(const std::vector<SourceTaskSpec>& reg, const std::string& id) {
    for (const auto& s : reg)
        if (s.task_id == id) return s;
    throw InvalidArgument("unknown task id '" + id + "'");
}

// ---------------------------------------------------------------- JSON / JSONL

inline void to_json(nlohmann::json& j, const SourceTaskSpec& s) {
    j = {{"task_id", s.task_id},
         {"kind", to_string(s.kind)},
         {"family", to_string(s.family())},
         {"alphabet", s.alphabet},
         {"min_len", s.min_len},
         {"max_len", s.max_len},
         {"rule_seed", s.rule_seed},
         {"sizes", {{"train", s.sizes.train}, {"valid", s.sizes.valid}, {"test", s.sizes.test}}}};
    if (!s.components.empty()) j["components"] = s.components;
}

inline void from_json(const nlohmann::json& j, SourceTaskSpec& s) {
    s.task_id = j.at("task_id").get<std::string>();
    s.kind = kind_from_string(j.at("kind").get<std::string>());
    s.alphabet = j.value("alphabet", std::vector<std::size_t>{});
    s.min_len = j.value("min_len", std::size_t{5});
    s.max_len = j.value("max_len", std::size_t{9});
    s.rule_seed = j.value("rule_seed", std::uint64_t{0});
    if (j.contains("sizes")) {
        const auto& z = j.at("sizes");
        s.sizes = {z.at("train").get<std::size_t>(), z.at("valid").get<std::size_t>(), z.at("test").get<std::size_t>()};
    }
    if (j.contains("components")) s.components = j.at("components").get<std::vector<SourceTaskSpec>>();
}

inline std::string record_to_jsonl(const InstanceRecord& r) {
    const auto& v = Vocab::instance();
    nlohmann::json j = {{"x", v.decode(r.x)}, {"y", v.decode(r.y)}, {"task_id", r.task_id}, {"family", to_string(r.family)}};
    return j.dump();
}

inline void save_jsonl(const std::filesystem::path& path, const std::vector<InstanceRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileError("cannot write " + path.string());
    for (const auto& r : records) out << record_to_jsonl(r) << '\n';
    if (!out) throw FileError("write failed for " + path.string());
}

/// Parses and validates one JSONL file. Errors name the 1-based line.
inline std::vector<InstanceRecord> load_jsonl(const std::filesystem::path& path, std::size_t max_len = 64) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot read " + path.string());
    const auto& vocab = Vocab::instance();
    std::vector<InstanceRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + ": malformed JSON (" + e.what() + ")");
        }
        InstanceRecord r;
        try {
            auto tokens = [&](const char* field) {
                TokenSequence seq;
                std::istringstream ts(j.at(field).get<std::string>());
                std::string tok;
                while (ts >> tok) {
                    auto id = vocab.find(tok);
                    if (!id) throw FormatError(where + ": unknown token '" + tok + "' in field '" + field + "'");
                    seq.ids.push_back(*id);
                }
                return seq;
            };
            r.x = tokens("x");
            r.y = tokens("y");
            r.task_id = j.at("task_id").get<std::string>();
            r.family = family_from_string(j.at("family").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + ": " + e.what());
        } catch (const InvalidArgument& e) {
            throw FormatError(where + ": " + e.what());
        }
        if (r.x.empty()) throw FormatError(where + ": empty x in record '" + r.task_id + "'");
        if (r.x.size() > max_len || r.y.size() + 1 > max_len)
            throw FormatError(where + ": record '" + r.task_id + "' exceeds max_len " + std::to_string(max_len));
        out.push_back(std::move(r));
    }
    return out;
}

inline void write_corpus(const std::filesystem::path& dir, const Corpus& c) {
    std::filesystem::create_directories(dir);
    save_jsonl(dir / "train.jsonl", c.train);
    save_jsonl(dir / "valid.jsonl", c.valid);
    save_jsonl(dir / "test.jsonl", c.test);
}

inline Corpus read_corpus(const std::filesystem::path& dir) {
    return {load_jsonl(dir / "train.jsonl"), load_jsonl(dir / "valid.jsonl"), load_jsonl(dir / "test.jsonl")};
}

}  // namespace prompt_forge
