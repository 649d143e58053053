// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Soft prompts, prompt-only training against a frozen backbone, and the
// persisted prompt pool.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prompt_forge/backbone.hpp"
#include "prompt_forge/numerics.hpp"
#include "prompt_forge/tasks.hpp"

namespace prompt_forge {

struct PromptProvenance {
    std::string family;
    std::size_t steps = 0;
    double final_nll = 0.0;  // mean per-token training nll over the last steps
    std::uint64_t seed = 0;
    double lr = 0.0;
    std::size_t batch = 0;

    friend bool operator==(const PromptProvenance&, const PromptProvenance&) = default;
};

struct SoftPrompt {
    std::string task_id;
    Matrix values;  // l x e
    PromptProvenance provenance;

    std::size_t length() const { return values.rows; }
    std::size_t dim() const { return values.cols; }
    friend bool operator==(const SoftPrompt&, const SoftPrompt&) = default;
};

/// Entries i.i.d. uniform in [-0.5, 0.5] / sqrt(e).
inline Matrix init_prompt_values(std::uint64_t seed, std::size_t l, std::size_t e) {
    if (l == 0 || e == 0) throw InvalidArgument("init_prompt: l and e must be positive");
    SeededRng rng(seed);
    Matrix m(l, e);
    const double s = 1.0 / std::sqrt(static_cast<double>(e));
    for (double& v : m.data) v = rng.uniform(-0.5, 0.5) * s;
    return m;
}

inline SoftPrompt init_prompt(std::uint64_t seed, std::size_t l, std::size_t e, std::string task_id = {}) {
    SoftPrompt p;
    p.task_id = std::move(task_id);
    p.values = init_prompt_values(seed, l, e);
    p.provenance.seed = seed;
    return p;
}

struct PromptTrainOptions {
    std::size_t steps = 2000;
    double lr = 1e-3;
    std::size_t batch = 16;
    std::uint64_t seed = 1;
    std::size_t length = 10;
};

/// Per-token mean nll of the records under a fixed prompt (nullptr = none).
inline double mean_token_nll(const BackboneModel& model, const Matrix* prompt, const std::vector<InstanceRecord>& data) {
    if (data.empty()) throw InvalidArgument("mean_token_nll: empty data");
    double loss = 0.0;
    std::size_t tokens = 0;
    for (const auto& r : data) {
        loss += model.nll(prompt, r.x, r.y);
        tokens += r.y.size() + 1;
    }
    return loss / static_cast<double>(tokens);
}

/// Adam on the prompt values only; the backbone is read, never written.
/// Each step draws `batch` records with replacement and follows the
/// per-token mean gradient. Returns the trained values.
inline Matrix train_prompt_values(const BackboneModel& model, Matrix values, const std::vector<InstanceRecord>& data,
                                  const PromptTrainOptions& opt, std::vector<double>* loss_curve = nullptr) {
    if (data.empty()) throw InvalidArgument("train_prompt: empty training data");
    if (values.cols != model.config().embed_dim)
        throw InvalidArgument("train_prompt: prompt width " + std::to_string(values.cols) + " != embed_dim " +
                              std::to_string(model.config().embed_dim));
    AdamState adam(values.size(), opt.lr);
    SeededRng rng(derive_seed(opt.seed, 0xB47C4ULL));
    std::vector<double> grad(values.size());
    for (std::size_t step = 0; step < opt.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        std::size_t tokens = 0;
        for (std::size_t b = 0; b < opt.batch; ++b) {
            const auto& r = data[rng.below(data.size())];
            const auto lg = model.loss_and_grads(&values, r.x, r.y, {.prompt = true, .backbone = false});
            loss += lg.nll;
            tokens += r.y.size() + 1;
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += lg.prompt_grad->data[i];
        }
        const double inv = 1.0 / static_cast<double>(tokens);
        if (!std::isfinite(loss)) throw NumericError("train_prompt: non-finite loss at step " + std::to_string(step));
        for (double& g : grad) g *= inv;
        adam_step(values.data, grad, adam);
        if (loss_curve) loss_curve->push_back(loss * inv);
    }
    return values;
}

inline std::uint64_t task_seed(std::uint64_t seed, const std::string& task_id) {
    Fnv1a h;
    h.str(task_id);
    return derive_seed(seed, h.digest());
}

/// Trains one independent source prompt. The init and batch seeds depend
/// only on (opt.seed, task_id), so training order never matters.
inline SoftPrompt train_source_prompt(const std::string& task_id, Family family, const std::vector<InstanceRecord>& train,
                                      const BackboneModel& model, const PromptTrainOptions& opt,
                                      std::vector<double>* loss_curve = nullptr) {
    if (!model.frozen()) throw InvalidArgument("train_source_prompt: backbone must be frozen");
    const std::uint64_t seed = task_seed(opt.seed, task_id);
    SoftPrompt p = init_prompt(seed, opt.length, model.config().embed_dim, task_id);
    std::vector<double> curve;
    PromptTrainOptions o = opt;
    o.seed = seed;
    p.values = train_prompt_values(model, p.values, train, o, &curve);
    const std::size_t tail = std::min<std::size_t>(curve.size(), 50);
    double final_nll = 0.0;
    for (std::size_t i = curve.size() - tail; i < curve.size(); ++i) final_nll += curve[i];
    p.provenance = {to_string(family), opt.steps, tail ? final_nll / static_cast<double>(tail) : 0.0, seed, opt.lr,
                    opt.batch};
    if (loss_curve) *loss_curve = std::move(curve);
    return p;
}

// ---------------------------------------------------------------- pool

struct PromptPool {
    std::vector<SoftPrompt> prompts;

    std::size_t size() const { return prompts.size(); }
    std::size_t length() const { return prompts.empty() ? 0 : prompts.front().length(); }
    std::size_t dim() const { return prompts.empty() ? 0 : prompts.front().dim(); }

    void validate() const {
        std::set<std::string> ids;
        for (const auto& p : prompts) {
            if (!ids.insert(p.task_id).second) throw InvalidArgument("prompt pool: duplicate task_id '" + p.task_id + "'");
            if (p.length() != length() || p.dim() != dim())
                throw InvalidArgument("prompt pool: prompt '" + p.task_id + "' has shape " + shape_str(p.values) +
                                      ", expected " + std::to_string(length()) + "x" + std::to_string(dim()));
            if (!p.values.all_finite()) throw NumericError("prompt pool: non-finite values in '" + p.task_id + "'");
        }
    }

    std::uint64_t values_hash() const {
        Fnv1a h;
        for (const auto& p : prompts) {
            h.str(p.task_id);
            h.values(p.values.data);
        }
        return h.digest();
    }

    std::size_t index_of(const std::string& task_id) const {
        for (std::size_t i = 0; i < prompts.size(); ++i)
            if (prompts[i].task_id == task_id) return i;
        throw InvalidArgument("prompt pool: no prompt for task '" + task_id + "'");
    }

    friend bool operator==(const PromptPool&, const PromptPool&) = default;
};

inline constexpr int kPoolFormatVersion = 1;

inline nlohmann::json pool_to_json(const PromptPool& pool) {
    pool.validate();
    nlohmann::json prompts = nlohmann::json::array();
    for (const auto& p : pool.prompts) {
        const auto& pv = p.provenance;
        prompts.push_back({{"task_id", p.task_id},
                           {"provenance",
                            {{"family", pv.family},
                             {"steps", pv.steps},
                             {"final_nll", pv.final_nll},
                             {"seed", pv.seed},
                             {"lr", pv.lr},
                             {"batch", pv.batch}}},
                           {"values", p.values.data}});
    }
    return {{"format_version", kPoolFormatVersion}, {"l", pool.length()}, {"e", pool.dim()}, {"prompts", prompts}};
}

inline PromptPool pool_from_json(const nlohmann::json& j) {
    auto field = [](const nlohmann::json& obj, const char* name) -> const nlohmann::json& {
        if (!obj.is_object() || !obj.contains(name)) throw FormatError(std::string("prompt pool: missing field '") + name + "'");
        return obj.at(name);
    };
    PromptPool pool;
    try {
        const int version = field(j, "format_version").get<int>();
        if (version != kPoolFormatVersion)
            throw FormatError("prompt pool: format_version " + std::to_string(version) + " unsupported");
        const auto l = field(j, "l").get<std::size_t>();
        const auto e = field(j, "e").get<std::size_t>();
        for (const auto& pj : field(j, "prompts")) {
            SoftPrompt p;
            p.task_id = field(pj, "task_id").get<std::string>();
            const auto& pv = field(pj, "provenance");
            p.provenance = {field(pv, "family").get<std::string>(), field(pv, "steps").get<std::size_t>(),
                            field(pv, "final_nll").get<double>(),   field(pv, "seed").get<std::uint64_t>(),
                            field(pv, "lr").get<double>(),          field(pv, "batch").get<std::size_t>()};
            auto data = field(pj, "values").get<std::vector<double>>();
            if (data.size() != l * e)
                throw FormatError("prompt pool: field 'values' of '" + p.task_id + "' has " + std::to_string(data.size()) +
                                  " entries, expected " + std::to_string(l * e));
            p.values = Matrix(l, e, std::move(data));
            pool.prompts.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(std::string("prompt pool: ") + ex.what());
    }
    try {
        pool.validate();
    } catch (const std::exception& ex) {
        throw FormatError(ex.what());
    }
    return pool;
}

inline void pool_save(const PromptPool& pool, const std::filesystem::path& path) {
    const auto j = pool_to_json(pool);  // validates before touching the file
    std::ofstream out(path);
    if (!out) throw FileError("cannot write " + path.string());
    out << j.dump();
    if (!out) throw FileError("write failed for " + path.string());
}

inline PromptPool pool_load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError("prompt pool " + path.string() + ": " + ex.what());
    }
    return pool_from_json(j);
}

}  // namespace prompt_forge
