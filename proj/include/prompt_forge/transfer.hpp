// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Target-task training through the memory, ablation variants, the
// random-prompt baseline and the few-shot protocol.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prompt_forge/backbone.hpp"
#include "prompt_forge/memory.hpp"
#include "prompt_forge/metrics.hpp"
#include "prompt_forge/prompt.hpp"
#include "prompt_forge/tasks.hpp"

namespace prompt_forge {

struct AblationFlags {
    bool no_pool = false;            // one shared prompt instead of the pool
    bool no_cluster = false;         // instance term only
    bool no_keys = false;            // pool mean
    bool no_instance_query = false;  // lambda forced to 1

    std::size_t count() const {
        return static_cast<std::size_t>(no_pool) + no_cluster + no_keys + no_instance_query;
    }

    std::string name() const {
        if (count() > 1) throw InvalidArgument("at most one ablation flag may be set");
        if (no_pool) return "no_pool";
        if (no_cluster) return "no_cluster";
        if (no_keys) return "no_keys";
        if (no_instance_query) return "no_instance_query";
        return "full";
    }

    static AblationFlags from_name(const std::string& n) {
        AblationFlags f;
        if (n == "no_pool") f.no_pool = true;
        else if (n == "no_cluster") f.no_cluster = true;
        else if (n == "no_keys") f.no_keys = true;
        else if (n == "no_instance_query") f.no_instance_query = true;
        else if (n != "full") throw InvalidArgument("unknown ablation '" + n + "'");
        return f;
    }

    friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct TargetTrainConfig {
    double lr_keys = 1e-3;
    double lr_backbone = 0.0;  // 0 keeps the backbone frozen
    std::size_t batch = 16;
    std::size_t steps = 300;
    double lambda = 0.5;
    std::uint64_t seed = 1;
    AblationFlags ablation;
    DecodeOptions decode;
    std::size_t dev_limit = 0;  // 0 = whole dev set

    void validate() const {
        if (lr_keys < 0.0 || lr_backbone < 0.0) throw InvalidArgument("target config: learning rates must be >= 0");
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("target config: lambda must lie in [0, 1]");
        if (batch == 0) throw InvalidArgument("target config: batch must be >= 1");
        (void)ablation.name();
    }
};

inline void to_json(nlohmann::json& j, const DecodeOptions& d) {
    j = {{"beam", d.beam}, {"no_repeat_ngram", d.no_repeat_ngram}, {"max_out", d.max_out}};
}

inline void from_json(const nlohmann::json& j, DecodeOptions& d) {
    d.beam = j.at("beam").get<std::size_t>();
    d.no_repeat_ngram = j.at("no_repeat_ngram").get<std::size_t>();
    d.max_out = j.at("max_out").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const TargetTrainConfig& c) {
    j = {{"lr_keys", c.lr_keys},     {"lr_backbone", c.lr_backbone},    {"batch", c.batch},
         {"steps", c.steps},         {"lambda", c.lambda},              {"seed", c.seed},
         {"ablation", c.ablation.name()}, {"decode", c.decode},         {"dev_limit", c.dev_limit}};
}

struct TargetReport {
    std::string run_id;
    std::string variant;
    nlohmann::json config;
    std::vector<double> loss_curve;
    EvalReport dev;
    std::optional<EvalReport> test;
    double dev_nll = 0.0;
    std::vector<std::string> prompt_ids;
    std::vector<double> attention_mean;  // mean s per source prompt over dev
};

inline void to_json(nlohmann::json& j, const TargetReport& r) {
    nlohmann::json attn = nlohmann::json::object();
    for (std::size_t i = 0; i < r.prompt_ids.size(); ++i) attn[r.prompt_ids[i]] = r.attention_mean[i];
    nlohmann::json metrics = {{"dev", r.dev}};
    metrics["dev"]["nll"] = r.dev_nll;
    if (r.test) metrics["test"] = *r.test;
    j = {{"run_id", r.run_id},       {"variant", r.variant}, {"config", r.config},
         {"loss_curve", r.loss_curve}, {"metrics", metrics},   {"attention_mean", attn}};
}

inline TargetReport report_from_json(const nlohmann::json& j) {
    try {
        TargetReport r;
        r.run_id = j.at("run_id").get<std::string>();
        r.variant = j.at("variant").get<std::string>();
        r.config = j.at("config");
        r.loss_curve = j.at("loss_curve").get<std::vector<double>>();
        r.dev = j.at("metrics").at("dev").get<EvalReport>();
        r.dev_nll = j.at("metrics").at("dev").at("nll").get<double>();
        if (j.at("metrics").contains("test")) r.test = j.at("metrics").at("test").get<EvalReport>();
        for (const auto& [k, v] : j.at("attention_mean").items()) {
            r.prompt_ids.push_back(k);
            r.attention_mean.push_back(v.get<double>());
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("report file: ") + e.what());
    }
}

namespace detail {

inline std::vector<InstanceRecord> limit(const std::vector<InstanceRecord>& v, std::size_t n) {
    if (n == 0 || n >= v.size()) return v;
    return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n)};
}

inline std::string run_id(const nlohmann::json& config, const std::vector<InstanceRecord>& train) {
    Fnv1a h;
    h.str(config.dump());
    for (const auto& r : train) {
        for (std::size_t t : r.x.ids) h.u64(t);
        h.u64(~0ULL);
        for (std::size_t t : r.y.ids) h.u64(t);
    }
    return hex64(h.digest());
}

inline Matrix as_row(const std::vector<double>& v) { return Matrix(1, v.size(), v); }

}  // namespace detail

struct MemoryEval {
    EvalReport metrics;
    double nll = 0.0;
    std::vector<double> attention_mean;
    std::vector<TokenSequence> outputs;
};

/// Decodes every record with its derived target prompt.
inline MemoryEval evaluate_memory(const MemoryNetwork& mem, const BackboneModel& model,
                                  const std::vector<InstanceRecord>& data, const DecodeOptions& decode) {
    if (data.empty()) throw InvalidArgument("evaluate: empty evaluation set");
    MemoryEval out;
    out.attention_mean.assign(mem.size(), 0.0);
    std::vector<TokenSequence> refs;
    double loss = 0.0;
    std::size_t tokens = 0;
    for (const auto& r : data) {
        const auto tp = derive_target_prompt(mem, r.x, model);
        for (std::size_t t = 0; t < mem.size(); ++t) out.attention_mean[t] += tp.scores[t];
        loss += model.nll(&tp.prompt, r.x, r.y);
        tokens += r.y.size() + 1;
        out.outputs.push_back(model.generate(&tp.prompt, r.x, decode));
        refs.push_back(r.y);
    }
    for (double& a : out.attention_mean) a /= static_cast<double>(data.size());
    out.nll = loss / static_cast<double>(tokens);
    out.metrics = evaluate_corpus(out.outputs, refs);
    return out;
}

/// Decodes every record with one fixed prompt.
inline MemoryEval evaluate_prompt(const Matrix& prompt, const BackboneModel& model,
                                  const std::vector<InstanceRecord>& data, const DecodeOptions& decode) {
    if (data.empty()) throw InvalidArgument("evaluate: empty evaluation set");
    MemoryEval out;
    std::vector<TokenSequence> refs;
    for (const auto& r : data) {
        out.outputs.push_back(model.generate(&prompt, r.x, decode));
        refs.push_back(r.y);
    }
    out.nll = mean_token_nll(model, &prompt, data);
    out.metrics = evaluate_corpus(out.outputs, refs);
    return out;
}

/// Memory configured for one ablation. `no_pool` needs the shared prompt.
inline MemoryNetwork apply_ablation(const MemoryNetwork& mem, const AblationFlags& flags, std::uint64_t seed,
                                    const SoftPrompt* shared = nullptr) {
    (void)flags.name();
    MemoryNetwork out = mem;
    if (flags.no_pool) {
        if (!shared) throw InvalidArgument("no_pool ablation requires a shared prompt");
        PromptPool pool;
        pool.prompts.push_back(*shared);
        ClusterAssignment one;
        one.m = 1;
        one.labels = {0};
        out = init_memory(std::move(pool), std::move(one), mem.d, mem.heads, mem.lambda, seed);
    }
    if (flags.no_cluster) out.mode = ScoreMode::instance_only;
    if (flags.no_keys) out.mode = ScoreMode::uniform;
    if (flags.no_instance_query) out.lambda = 1.0;
    return out;
}

struct TargetResult {
    MemoryNetwork memory;
    BackboneModel model;
    TargetReport report;
};

/// Trains keys, task query and projection (and the backbone when
/// lr_backbone > 0) on the target data. Pool values and the instance
/// encoder are never written.
inline TargetResult train_target(const std::vector<InstanceRecord>& train, const std::vector<InstanceRecord>& dev,
                                 const MemoryNetwork& mem_in, const BackboneModel& model_in,
                                 const TargetTrainConfig& cfg, const SoftPrompt* shared = nullptr,
                                 const std::vector<InstanceRecord>* test = nullptr) {
    cfg.validate();
    if (train.empty()) throw InvalidArgument("train_target: empty training set");
    if (cfg.lr_backbone == 0.0 && !model_in.frozen())
        throw InvalidArgument("train_target: backbone must be frozen when lr_backbone is 0");
    MemoryNetwork base = mem_in;
    base.lambda = cfg.lambda;
    TargetResult res{apply_ablation(base, cfg.ablation, derive_seed(cfg.seed, 0xAB1ULL), shared), model_in, {}};
    MemoryNetwork& mem = res.memory;
    BackboneModel& model = res.model;
    const bool tune_backbone = cfg.lr_backbone > 0.0;

    std::vector<Matrix> queries;
    queries.reserve(train.size());
    for (const auto& r : train) queries.push_back(detail::as_row(model.instance_encode(r.x, mem.d)));

    AdamState adam(mem.params.count(), cfg.lr_keys);
    std::vector<std::pair<std::string, std::size_t>> layout;
    std::size_t backbone_total = 0;
    for (const auto& [name, m] : model.generator_weights()) {
        layout.emplace_back(name, backbone_total);
        backbone_total += m.size();
    }
    AdamState adam_bb(tune_backbone ? backbone_total : 0, cfg.lr_backbone);
    SeededRng rng(derive_seed(cfg.seed, 0x7A46ULL));

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<double> grad(mem.params.count(), 0.0);
        std::vector<double> grad_bb(tune_backbone ? backbone_total : 0, 0.0);
        double loss = 0.0;
        std::size_t tokens = 0;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const std::size_t idx = rng.below(train.size());
            const auto& r = train[idx];
            ad::Tape t;
            const auto v = bind_memory(t, mem, true);
            const auto s = scores_on_tape(t, mem, v, t.constant(queries[idx]));
            const auto p = mix_on_tape(t, mem, v, s);
            BoundWeights w(t, model.generator_weights(), tune_backbone);
            const auto nll = model.nll_on_tape(t, w, p, r.x, r.y);
            const double value = t.value(nll)(0, 0);
            if (!std::isfinite(value)) {
                std::string sv;
                for (double x : t.value(s).data) sv += (sv.empty() ? "" : ",") + std::to_string(x);
                throw NumericError("train_target: non-finite loss at step " + std::to_string(step) + ", batch index " +
                                   std::to_string(b) + ", s=[" + sv + "]");
            }
            loss += value;
            tokens += r.y.size() + 1;
            t.backward(nll);
            std::size_t off = 0;
            for (ad::Var var : {v.cluster_keys, v.prompt_keys, v.task_query, v.projection}) {
                const Matrix g = t.grad(var);
                for (std::size_t i = 0; i < g.size(); ++i) grad[off + i] += g.data[i];
                off += g.size();
            }
            if (tune_backbone)
                for (const auto& [name, o] : layout) {
                    const Matrix g = t.grad(w[name]);
                    for (std::size_t i = 0; i < g.size(); ++i) grad_bb[o + i] += g.data[i];
                }
        }
        const double inv = 1.0 / static_cast<double>(tokens);
        for (double& g : grad) g *= inv;
        auto flat = mem.params.flatten();
        adam_step(flat, grad, adam);
        mem.params.unflatten(flat);
        if (tune_backbone) {
            for (double& g : grad_bb) g *= inv;
            auto& weights = model.mutable_generator_weights();
            std::vector<double> wf(backbone_total);
            for (const auto& [name, o] : layout)
                std::copy(weights[name].data.begin(), weights[name].data.end(), wf.begin() + static_cast<std::ptrdiff_t>(o));
            adam_step(wf, grad_bb, adam_bb);
            for (const auto& [name, o] : layout) {
                Matrix& m = weights[name];
                std::copy(wf.begin() + static_cast<std::ptrdiff_t>(o), wf.begin() + static_cast<std::ptrdiff_t>(o + m.size()),
                          m.data.begin());
            }
        }
        res.report.loss_curve.push_back(loss * inv);
    }

    auto& rep = res.report;
    rep.variant = cfg.ablation.name();
    rep.config = cfg;
    rep.run_id = detail::run_id(rep.config, train);
    const auto dev_eval = evaluate_memory(mem, model, detail::limit(dev, cfg.dev_limit), cfg.decode);
    rep.dev = dev_eval.metrics;
    rep.dev_nll = dev_eval.nll;
    rep.attention_mean = dev_eval.attention_mean;
    for (const auto& p : mem.pool.prompts) rep.prompt_ids.push_back(p.task_id);
    if (test) rep.test = evaluate_memory(mem, model, *test, cfg.decode).metrics;
    return res;
}

/// One ablation variant under the full model's training budget.
inline TargetResult run_ablation(const std::vector<InstanceRecord>& train, const std::vector<InstanceRecord>& dev,
                                 const MemoryNetwork& mem, const BackboneModel& model, const TargetTrainConfig& cfg,
                                 const SoftPrompt* shared = nullptr) {
    if (cfg.ablation.count() != 1)
        throw InvalidArgument("run_ablation: exactly one ablation flag must be set (got " +
                              std::to_string(cfg.ablation.count()) + ")");
    return train_target(train, dev, mem, model, cfg, shared);
}

/// Plain prompt tuning from a random prompt, same steps / batch / lr.
inline TargetReport train_prompt_baseline(const std::vector<InstanceRecord>& train, const std::vector<InstanceRecord>& dev,
                                          const BackboneModel& model, const TargetTrainConfig& cfg, std::size_t length) {
    cfg.validate();
    PromptTrainOptions opt{cfg.steps, cfg.lr_keys, cfg.batch, derive_seed(cfg.seed, 0xBA5EULL), length};
    TargetReport rep;
    const Matrix init = init_prompt_values(opt.seed, length, model.config().embed_dim);
    const Matrix trained = train_prompt_values(model, init, train, opt, &rep.loss_curve);
    rep.variant = "prompt_tuning";
    rep.config = cfg;
    rep.config["ablation"] = "prompt_tuning";
    rep.run_id = detail::run_id(rep.config, train);
    const auto ev = evaluate_prompt(trained, model, detail::limit(dev, cfg.dev_limit), cfg.decode);
    rep.dev = ev.metrics;
    rep.dev_nll = ev.nll;
    return rep;
}

// ---------------------------------------------------------------- few-shot

struct FewShotPlan {
    std::vector<std::size_t> sizes{50, 100, 200, 500};
    std::size_t datasets_per_size = 5;
    std::size_t seeds_per_dataset = 2;
    std::uint64_t seed = 1;

    void validate() const {
        if (sizes.empty()) throw InvalidArgument("few-shot plan: no sizes");
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            if (sizes[i] == 0) throw InvalidArgument("few-shot plan: sizes must be positive");
            if (i && sizes[i] <= sizes[i - 1]) throw InvalidArgument("few-shot plan: sizes must be ascending");
        }
        if (datasets_per_size == 0 || seeds_per_dataset == 0)
            throw InvalidArgument("few-shot plan: datasets and seeds per size must be positive");
    }
};

struct FewShotCell {
    std::size_t size = 0;
    std::vector<std::map<std::string, double>> runs;  // dev metrics + "nll" per run
    std::map<std::string, double> mean;
    std::map<std::string, double> stddev;
};

struct FewShotReport {
    FewShotPlan plan;
    std::vector<FewShotCell> cells;
};

/// Deterministic subsample without replacement.
inline std::vector<InstanceRecord> subsample(const std::vector<InstanceRecord>& data, std::size_t n, std::uint64_t seed) {
    if (n > data.size())
        throw InvalidArgument("subsample: size " + std::to_string(n) + " exceeds " + std::to_string(data.size()) +
                              " available records");
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    SeededRng rng(seed);
    rng.shuffle(idx);
    std::vector<InstanceRecord> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(data[idx[i]]);
    return out;
}

inline FewShotReport few_shot_run(const FewShotPlan& plan, const std::vector<InstanceRecord>& train,
                                  const std::vector<InstanceRecord>& dev, const MemoryNetwork& mem,
                                  const BackboneModel& model, const TargetTrainConfig& cfg,
                                  const SoftPrompt* shared = nullptr) {
    plan.validate();
    for (std::size_t n : plan.sizes)
        if (n > train.size())
            throw InvalidArgument("few-shot: size " + std::to_string(n) + " needs more than the " +
                                  std::to_string(train.size()) + " available training records");
    FewShotReport rep;
    rep.plan = plan;
    for (std::size_t n : plan.sizes) {
        FewShotCell cell;
        cell.size = n;
        for (std::size_t d = 0; d < plan.datasets_per_size; ++d) {
            const auto sub = subsample(train, n, derive_seed(plan.seed, n * 1000003ULL + d));
            for (std::size_t s = 0; s < plan.seeds_per_dataset; ++s) {
                TargetTrainConfig c = cfg;
                c.seed = derive_seed(derive_seed(plan.seed, n * 1000003ULL + d), s + 1);
                const auto r = train_target(sub, dev, mem, model, c, shared).report;
                auto row = r.dev.scores;
                row["nll"] = r.dev_nll;
                cell.runs.push_back(std::move(row));
            }
        }
        for (const auto& [k, _] : cell.runs.front()) {
            double sum = 0.0, sq = 0.0;
            std::size_t cnt = 0;
            for (const auto& run : cell.runs) {
                auto it = run.find(k);
                if (it == run.end()) continue;
                sum += it->second;
                ++cnt;
            }
            const double mean = sum / static_cast<double>(cnt);
            for (const auto& run : cell.runs) {
                auto it = run.find(k);
                if (it != run.end()) sq += (it->second - mean) * (it->second - mean);
            }
            cell.mean[k] = mean;
            cell.stddev[k] = cnt > 1 ? std::sqrt(sq / static_cast<double>(cnt - 1)) : 0.0;
        }
        rep.cells.push_back(std::move(cell));
    }
    return rep;
}

inline void to_json(nlohmann::json& j, const FewShotReport& r) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : r.cells)
        cells.push_back({{"size", c.size}, {"runs", c.runs}, {"mean", c.mean}, {"stddev", c.stddev}, {"run_count", c.runs.size()}});
    j = {{"plan",
          {{"sizes", r.plan.sizes},
           {"datasets_per_size", r.plan.datasets_per_size},
           {"seeds_per_dataset", r.plan.seeds_per_dataset},
           {"seed", r.plan.seed}}},
         {"cells", cells}};
}

}  // namespace prompt_forge
