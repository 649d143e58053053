// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-key memory over a clustered prompt pool. Each source prompt is
// addressed by the key of its cluster and by its own prompt key; a learned
// task query and a frozen instance query score the pool, and the softmax of
// those scores mixes the pool into one target prompt.
//
//   raw_t = mean_h [ lam * <P_h q_task, P_h kc_{z(t)}> + (1 - lam) * <P_h q_ins, P_h kp_t> ] / sqrt(d/H)
//   s     = softmax(raw)            over all T prompts
//   p~    = sum_t s_t * p_t
//
// P_h is the h-th (d/H)-column block of one d x d projection shared by
// queries and keys.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prompt_forge/autograd.hpp"
#include "prompt_forge/backbone.hpp"
#include "prompt_forge/cluster.hpp"
#include "prompt_forge/numerics.hpp"
#include "prompt_forge/prompt.hpp"

namespace prompt_forge {

/// How raw scores are formed. `full` is the two-term score above.
enum class ScoreMode {
    full,
    instance_only,  // cluster term dropped; raw = instance term with weight 1
    uniform,        // keys ignored; s = 1/T (p~ is the pool mean)
};

inline std::string to_string(ScoreMode m) {
    switch (m) {
        case ScoreMode::full: return "full";
        case ScoreMode::instance_only: return "instance_only";
        case ScoreMode::uniform: return "uniform";
    }
    return "?";
}

inline ScoreMode score_mode_from_string(const std::string& s) {
    for (ScoreMode m : {ScoreMode::full, ScoreMode::instance_only, ScoreMode::uniform})
        if (to_string(m) == s) return m;
    throw InvalidArgument("unknown score mode '" + s + "'");
}

/// The trainable part of the memory.
struct MemoryParams {
    Matrix cluster_keys;  // m x d
    Matrix prompt_keys;   // T x d
    Matrix task_query;    // 1 x d
    Matrix projection;    // d x d

    std::size_t count() const {
        return cluster_keys.size() + prompt_keys.size() + task_query.size() + projection.size();
    }

    /// Flattened in a fixed order (cluster, prompt, task, projection).
    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(count());
        for (const Matrix* m : {&cluster_keys, &prompt_keys, &task_query, &projection})
            out.insert(out.end(), m->data.begin(), m->data.end());
        return out;
    }

    void unflatten(std::span<const double> flat) {
        if (flat.size() != count()) throw InvalidArgument("MemoryParams::unflatten: size mismatch");
        std::size_t off = 0;
        for (Matrix* m : {&cluster_keys, &prompt_keys, &task_query, &projection}) {
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                      flat.begin() + static_cast<std::ptrdiff_t>(off + m->size()), m->data.begin());
            off += m->size();
        }
    }

    friend bool operator==(const MemoryParams&, const MemoryParams&) = default;
};

struct MemoryNetwork {
    std::size_t d = 32;
    std::size_t heads = 4;
    double lambda = 0.5;
    ScoreMode mode = ScoreMode::full;
    PromptPool pool;
    ClusterAssignment assignment;
    MemoryParams params;

    std::size_t size() const { return pool.size(); }
    std::size_t trainable_count() const { return params.count(); }

    void validate() const {
        if (heads == 0 || d == 0 || d % heads != 0)
            throw InvalidArgument("memory: d=" + std::to_string(d) + " not divisible by H=" + std::to_string(heads));
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("memory: lambda must lie in [0, 1]");
        const std::size_t t = pool.size();
        if (t == 0) throw InvalidArgument("memory: empty pool");
        if (assignment.labels.size() != t)
            throw InvalidArgument("memory: assignment has " + std::to_string(assignment.labels.size()) + " labels for " +
                                  std::to_string(t) + " prompts");
        for (std::size_t l : assignment.labels)
            if (l >= assignment.m) throw InvalidArgument("memory: cluster label out of range");
        if (params.cluster_keys.rows != assignment.m || params.cluster_keys.cols != d)
            throw InvalidArgument("memory: cluster keys have shape " + shape_str(params.cluster_keys));
        if (params.prompt_keys.rows != t || params.prompt_keys.cols != d)
            throw InvalidArgument("memory: prompt keys have shape " + shape_str(params.prompt_keys));
        if (params.task_query.rows != 1 || params.task_query.cols != d)
            throw InvalidArgument("memory: task query has shape " + shape_str(params.task_query));
        if (params.projection.rows != d || params.projection.cols != d)
            throw InvalidArgument("memory: projection has shape " + shape_str(params.projection));
    }

    /// Pool values stacked one prompt per row: T x (l*e).
    Matrix pool_matrix() const {
        const std::size_t le = pool.length() * pool.dim();
        Matrix m(pool.size(), le);
        for (std::size_t t = 0; t < pool.size(); ++t)
            std::copy(pool.prompts[t].values.data.begin(), pool.prompts[t].values.data.end(), m.data.begin() + static_cast<std::ptrdiff_t>(t * le));
        return m;
    }
};

/// Keys and task query ~ U[-0.5, 0.5]/sqrt(d); projection ~ N(0, 1/d).
inline MemoryNetwork init_memory(PromptPool pool, ClusterAssignment assignment, std::size_t d, std::size_t heads,
                                 double lambda, std::uint64_t seed) {
    if (heads == 0 || d % heads != 0)
        throw InvalidArgument("init_memory: d=" + std::to_string(d) + " not divisible by H=" + std::to_string(heads));
    MemoryNetwork mem;
    mem.d = d;
    mem.heads = heads;
    mem.lambda = lambda;
    mem.params.cluster_keys = init_prompt_values(derive_seed(seed, 1), assignment.m, d);
    mem.params.prompt_keys = init_prompt_values(derive_seed(seed, 2), pool.size(), d);
    mem.params.task_query = init_prompt_values(derive_seed(seed, 3), 1, d);
    SeededRng rng(derive_seed(seed, 4));
    mem.params.projection = Matrix(d, d);
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& v : mem.params.projection.data) v = rng.normal() * s;
    mem.pool = std::move(pool);
    mem.assignment = std::move(assignment);
    mem.validate();
    return mem;
}

// ---------------------------------------------------------------- tape API

struct MemoryVars {
    ad::Var cluster_keys, prompt_keys, task_query, projection, pool;
};

/// Binds the memory onto a tape. Pool values are a constant unless
/// `pool_grad` is set (used only by gradient checks).
inline MemoryVars bind_memory(ad::Tape& t, const MemoryNetwork& mem, bool trainable, bool pool_grad = false) {
    return {t.leaf(mem.params.cluster_keys, trainable), t.leaf(mem.params.prompt_keys, trainable),
            t.leaf(mem.params.task_query, trainable), t.leaf(mem.params.projection, trainable),
            t.leaf(mem.pool_matrix(), pool_grad)};
}

/// 1 x T raw scores for one instance query (1 x d).
inline ad::Var raw_scores_on_tape(ad::Tape& t, const MemoryNetwork& mem, const MemoryVars& v, ad::Var q_ins) {
    const std::size_t T = mem.size();
    if (mem.mode == ScoreMode::uniform) return t.constant(Matrix(1, T));
    const std::size_t dh = mem.d / mem.heads;
    const double scale = 1.0 / (static_cast<double>(mem.heads) * std::sqrt(static_cast<double>(dh)));
    const double lam = mem.mode == ScoreMode::instance_only ? 0.0 : mem.lambda;
    const double ins_w = mem.mode == ScoreMode::instance_only ? 1.0 : 1.0 - mem.lambda;
    const auto qi = t.matmul(q_ins, v.projection);
    const auto kp = t.matmul(v.prompt_keys, v.projection);
    ad::Var qt, kc;
    if (lam != 0.0) {
        qt = t.matmul(v.task_query, v.projection);
        kc = t.matmul(t.gather_rows(v.cluster_keys, mem.assignment.labels), v.projection);
    }
    ad::Var raw;
    for (std::size_t h = 0; h < mem.heads; ++h) {
        const std::size_t c0 = h * dh, c1 = (h + 1) * dh;
        ad::Var head;
        if (ins_w != 0.0) head = t.scale(t.matmul_nt(t.slice_cols(qi, c0, c1), t.slice_cols(kp, c0, c1)), ins_w);
        if (lam != 0.0) {
            const auto task = t.scale(t.matmul_nt(t.slice_cols(qt, c0, c1), t.slice_cols(kc, c0, c1)), lam);
            head = head.valid() ? t.add(head, task) : task;
        }
        if (!head.valid()) head = t.constant(Matrix(1, T));
        raw = raw.valid() ? t.add(raw, head) : head;
    }
    return t.scale(raw, scale);
}

inline ad::Var scores_on_tape(ad::Tape& t, const MemoryNetwork& mem, const MemoryVars& v, ad::Var q_ins) {
    return t.softmax_rows(raw_scores_on_tape(t, mem, v, q_ins));
}

/// l x e mixed prompt from 1 x T weights.
inline ad::Var mix_on_tape(ad::Tape& t, const MemoryNetwork& mem, const MemoryVars& v, ad::Var s) {
    return t.reshape(t.matmul(s, v.pool), mem.pool.length(), mem.pool.dim());
}

// ---------------------------------------------------------------- value API

inline std::vector<double> match_scores(const MemoryNetwork& mem, std::span<const double> q_ins) {
    if (q_ins.size() != mem.d)
        throw InvalidArgument("match_scores: q_ins has length " + std::to_string(q_ins.size()) + ", expected d=" +
                              std::to_string(mem.d));
    ad::Tape t;
    const auto v = bind_memory(t, mem, false);
    const auto& s = t.value(scores_on_tape(t, mem, v, t.constant(Matrix(1, mem.d, {q_ins.begin(), q_ins.end()}))));
    return {s.data.begin(), s.data.end()};
}

/// p~ = sum_t s_t p_t. Pool values are read only.
inline Matrix mix_prompt(const MemoryNetwork& mem, std::span<const double> s) {
    if (s.size() != mem.size())
        throw InvalidArgument("mix_prompt: weight vector has length " + std::to_string(s.size()) + ", expected T=" +
                              std::to_string(mem.size()));
    Matrix out(mem.pool.length(), mem.pool.dim());
    for (std::size_t t = 0; t < s.size(); ++t) {
        const auto& p = mem.pool.prompts[t].values.data;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += s[t] * p[i];
    }
    return out;
}

struct TargetPrompt {
    Matrix prompt;
    std::vector<double> scores;
};

inline TargetPrompt derive_target_prompt(const MemoryNetwork& mem, const TokenSequence& x, const BackboneModel& model) {
    const auto q = model.instance_encode(x, mem.d);
    auto s = match_scores(mem, q);
    auto p = mix_prompt(mem, s);
    return {std::move(p), std::move(s)};
}

// ---------------------------------------------------------------- persistence

inline constexpr int kMemoryFormatVersion = 1;

inline nlohmann::json memory_to_json(const MemoryNetwork& mem) {
    mem.validate();
    auto mat = [](const Matrix& m) { return nlohmann::json{{"shape", {m.rows, m.cols}}, {"data", m.data}}; };
    std::vector<std::string> ids;
    for (const auto& p : mem.pool.prompts) ids.push_back(p.task_id);
    return {{"format_version", kMemoryFormatVersion},
            {"d", mem.d},
            {"H", mem.heads},
            {"lambda", mem.lambda},
            {"mode", to_string(mem.mode)},
            {"task_ids", ids},
            {"assignment", mem.assignment},
            {"cluster_keys", mat(mem.params.cluster_keys)},
            {"prompt_keys", mat(mem.params.prompt_keys)},
            {"q_task", mat(mem.params.task_query)},
            {"projection", mat(mem.params.projection)},
            {"pool_hash", hex64(mem.pool.values_hash())}};
}

/// Rebuilds a memory from its file and the pool it was built on; the pool
/// must hash to the recorded value.
inline MemoryNetwork memory_from_json(const nlohmann::json& j, PromptPool pool) {
    auto field = [&](const char* name) -> const nlohmann::json& {
        if (!j.is_object() || !j.contains(name)) throw FormatError(std::string("memory file: missing field '") + name + "'");
        return j.at(name);
    };
    auto mat = [&](const char* name) {
        const auto& f = field(name);
        const auto shape = f.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2) throw FormatError(std::string("memory file: field '") + name + "' shape must be 2-D");
        return Matrix(shape[0], shape[1], f.at("data").get<std::vector<double>>());
    };
    MemoryNetwork mem;
    try {
        const int version = field("format_version").get<int>();
        if (version != kMemoryFormatVersion)
            throw FormatError("memory file: format_version " + std::to_string(version) + " unsupported");
        mem.d = field("d").get<std::size_t>();
        mem.heads = field("H").get<std::size_t>();
        mem.lambda = field("lambda").get<double>();
        mem.mode = score_mode_from_string(field("mode").get<std::string>());
        mem.assignment = field("assignment").get<ClusterAssignment>();
        mem.params.cluster_keys = mat("cluster_keys");
        mem.params.prompt_keys = mat("prompt_keys");
        mem.params.task_query = mat("q_task");
        mem.params.projection = mat("projection");
        const auto ids = field("task_ids").get<std::vector<std::string>>();
        const auto hash = field("pool_hash").get<std::string>();
        if (hash != hex64(pool.values_hash())) throw FormatError("memory file: pool_hash does not match the supplied pool");
        if (ids.size() != pool.size()) throw FormatError("memory file: task_ids do not match the pool");
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] != pool.prompts[i].task_id) throw FormatError("memory file: task_ids do not match the pool");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("memory file: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("memory file: ") + e.what());
    }
    mem.pool = std::move(pool);
    try {
        mem.validate();
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("memory file: ") + e.what());
    }
    return mem;
}

inline void memory_save(const MemoryNetwork& mem, const std::filesystem::path& path) {
    const auto j = memory_to_json(mem);
    std::ofstream out(path);
    if (!out) throw FileError("cannot write " + path.string());
    out << j.dump();
    if (!out) throw FileError("write failed for " + path.string());
}

inline MemoryNetwork memory_load(const std::filesystem::path& path, PromptPool pool) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("memory file " + path.string() + ": " + e.what());
    }
    return memory_from_json(j, std::move(pool));
}

}  // namespace prompt_forge
