// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// RunConfig: every knob of the pipeline with its default. JSON config files
// may set any subset; unknown keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "prompt_forge/backbone.hpp"
#include "prompt_forge/prompt.hpp"
#include "prompt_forge/transfer.hpp"

namespace prompt_forge {

struct PathConfig {
    std::string data = "data";
    std::string models = "models";
    std::string pools = "pools";
    std::string reports = "reports";
};

struct ClusterConfig {
    std::size_t m = 3;
};

struct MemoryConfig {
    std::size_t d = 32;
    std::size_t heads = 4;
    double lambda = 0.5;
};

struct RunConfig {
    PathConfig paths;
    BackboneConfig backbone;
    DenoiseOptions pretrain;
    PromptTrainOptions prompt;
    ClusterConfig cluster;
    MemoryConfig memory;
    TargetTrainConfig transfer;
    FewShotPlan few_shot;
    std::uint64_t seed = 1;

    void validate() const {
        backbone.validate();
        if (memory.heads == 0 || memory.d % memory.heads != 0)
            throw InvalidArgument("config: memory.d must be divisible by memory.heads");
        if (!(memory.lambda >= 0.0 && memory.lambda <= 1.0)) throw InvalidArgument("config: memory.lambda must lie in [0, 1]");
        if (prompt.length == 0 || prompt.batch == 0) throw InvalidArgument("config: prompt.length and prompt.batch must be positive");
        if (prompt.length + 1 > backbone.max_len) throw InvalidArgument("config: prompt.length leaves no room under max_len");
        if (pretrain.batch == 0) throw InvalidArgument("config: pretrain.batch must be positive");
        if (cluster.m == 0) throw InvalidArgument("config: cluster.m must be positive");
        transfer.validate();
        few_shot.validate();
    }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw FormatError("config: '" + where + "' must be an object");
    for (const auto& [k, _] : j.items())
        if (!allowed.count(k)) throw FormatError("config: unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <class T>
void take(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    return {
        {"seed", c.seed},
        {"paths", {{"data", c.paths.data}, {"models", c.paths.models}, {"pools", c.paths.pools}, {"reports", c.paths.reports}}},
        {"backbone", c.backbone},
        {"pretrain",
         {{"steps", c.pretrain.steps}, {"mask_rate", c.pretrain.mask_rate}, {"lr", c.pretrain.lr}, {"batch", c.pretrain.batch}}},
        {"prompt", {{"length", c.prompt.length}, {"steps", c.prompt.steps}, {"lr", c.prompt.lr}, {"batch", c.prompt.batch}}},
        {"cluster", {{"m", c.cluster.m}}},
        {"memory", {{"d", c.memory.d}, {"heads", c.memory.heads}, {"lambda", c.memory.lambda}}},
        {"transfer",
         {{"lr_keys", c.transfer.lr_keys},
          {"lr_backbone", c.transfer.lr_backbone},
          {"batch", c.transfer.batch},
          {"steps", c.transfer.steps},
          {"dev_limit", c.transfer.dev_limit},
          {"decode", c.transfer.decode}}},
        {"few_shot",
         {{"sizes", c.few_shot.sizes},
          {"datasets_per_size", c.few_shot.datasets_per_size},
          {"seeds_per_dataset", c.few_shot.seeds_per_dataset}}},
    };
}

/// Overlays a JSON document on the defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
    using detail::reject_unknown;
    using detail::take;
    try {
        reject_unknown(j, {"seed", "paths", "backbone", "pretrain", "prompt", "cluster", "memory", "transfer", "few_shot"}, "");
        take(j, "seed", c.seed);
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            reject_unknown(p, {"data", "models", "pools", "reports"}, "paths");
            take(p, "data", c.paths.data);
            take(p, "models", c.paths.models);
            take(p, "pools", c.paths.pools);
            take(p, "reports", c.paths.reports);
        }
        if (j.contains("backbone")) {
            const auto& b = j.at("backbone");
            reject_unknown(b, {"vocab_size", "embed_dim", "layers", "heads", "ffn_dim", "max_len", "seed", "instance_layers",
                               "instance_seed", "positional"},
                           "backbone");
            take(b, "vocab_size", c.backbone.vocab_size);
            take(b, "embed_dim", c.backbone.embed_dim);
            take(b, "layers", c.backbone.layers);
            take(b, "heads", c.backbone.heads);
            take(b, "ffn_dim", c.backbone.ffn_dim);
            take(b, "max_len", c.backbone.max_len);
            take(b, "seed", c.backbone.seed);
            take(b, "instance_layers", c.backbone.instance_layers);
            take(b, "instance_seed", c.backbone.instance_seed);
            take(b, "positional", c.backbone.positional);
        }
        if (j.contains("pretrain")) {
            const auto& p = j.at("pretrain");
            reject_unknown(p, {"steps", "mask_rate", "lr", "batch"}, "pretrain");
            take(p, "steps", c.pretrain.steps);
            take(p, "mask_rate", c.pretrain.mask_rate);
            take(p, "lr", c.pretrain.lr);
            take(p, "batch", c.pretrain.batch);
        }
        if (j.contains("prompt")) {
            const auto& p = j.at("prompt");
            reject_unknown(p, {"length", "steps", "lr", "batch"}, "prompt");
            take(p, "length", c.prompt.length);
            take(p, "steps", c.prompt.steps);
            take(p, "lr", c.prompt.lr);
            take(p, "batch", c.prompt.batch);
        }
        if (j.contains("cluster")) {
            reject_unknown(j.at("cluster"), {"m"}, "cluster");
            take(j.at("cluster"), "m", c.cluster.m);
        }
        if (j.contains("memory")) {
            const auto& m = j.at("memory");
            reject_unknown(m, {"d", "heads", "lambda"}, "memory");
            take(m, "d", c.memory.d);
            take(m, "heads", c.memory.heads);
            take(m, "lambda", c.memory.lambda);
        }
        if (j.contains("transfer")) {
            const auto& t = j.at("transfer");
            reject_unknown(t, {"lr_keys", "lr_backbone", "batch", "steps", "dev_limit", "decode"}, "transfer");
            take(t, "lr_keys", c.transfer.lr_keys);
            take(t, "lr_backbone", c.transfer.lr_backbone);
            take(t, "batch", c.transfer.batch);
            take(t, "steps", c.transfer.steps);
            take(t, "dev_limit", c.transfer.dev_limit);
            if (t.contains("decode")) {
                const auto& d = t.at("decode");
                reject_unknown(d, {"beam", "no_repeat_ngram", "max_out"}, "transfer.decode");
                take(d, "beam", c.transfer.decode.beam);
                take(d, "no_repeat_ngram", c.transfer.decode.no_repeat_ngram);
                take(d, "max_out", c.transfer.decode.max_out);
            }
        }
        if (j.contains("few_shot")) {
            const auto& f = j.at("few_shot");
            reject_unknown(f, {"sizes", "datasets_per_size", "seeds_per_dataset"}, "few_shot");
            take(f, "sizes", c.few_shot.sizes);
            take(f, "datasets_per_size", c.few_shot.datasets_per_size);
            take(f, "seeds_per_dataset", c.few_shot.seeds_per_dataset);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot read config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("config " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

/// Applies the global seed to every seeded stage.
inline void apply_seed(RunConfig& c, std::uint64_t seed) {
    c.seed = seed;
    c.pretrain.seed = derive_seed(seed, 0x9E7ULL);
    c.prompt.seed = derive_seed(seed, 0x960ULL);
    c.transfer.seed = derive_seed(seed, 0x7A6ULL);
    c.few_shot.seed = derive_seed(seed, 0xF5ULL);
}

}  // namespace prompt_forge
