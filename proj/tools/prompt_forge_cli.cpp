// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// prompt-forge command-line driver. Stages talk to each other only through
// files: corpora (JSONL), model, pool, assignment, memory and reports (JSON),
// heatmaps (CSV).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "prompt_forge/prompt_forge.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prompt_forge;

namespace {

// Usage-class failure: exit 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
};

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<std::string> default_source_ids() {
    std::vector<std::string> ids;
    for (const auto& s : default_source_specs()) ids.push_back(s.task_id);
    return ids;
}

// --seed, then the config file's own "seed", then PROMPT_FORGE_SEED, then 1.
RunConfig resolve_config(const Globals& g) {
    RunConfig cfg;
    bool file_seed = false;
    if (!g.config_path.empty()) {
        if (!fs::exists(g.config_path)) throw UsageError("missing input artifact: config file '" + g.config_path + "'");
        std::ifstream in(g.config_path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw FormatError("config " + g.config_path + ": " + e.what());
        }
        cfg = run_config_from_json(j);
        file_seed = j.contains("seed");
    }
    std::uint64_t seed = cfg.seed;
    if (g.seed) {
        seed = *g.seed;
    } else if (!file_seed) {
        if (const char* env = std::getenv("PROMPT_FORGE_SEED")) {
            try {
                std::size_t used = 0;
                seed = std::stoull(env, &used);
                if (used != std::string(env).size()) throw std::invalid_argument(env);
            } catch (const std::exception&) {
                throw UsageError(std::string("PROMPT_FORGE_SEED is not an unsigned integer: '") + env + "'");
            }
        }
    }
    apply_seed(cfg, seed);
    cfg.validate();
    return cfg;
}

// Empty flag -> file under the configured directory.
void default_path(std::string& flag, const std::string& dir, const std::string& file = {}) {
    if (flag.empty()) flag = file.empty() ? dir : (fs::path(dir) / file).string();
}

void require_input(const std::string& path, const std::string& what) {
    if (path.empty()) throw UsageError("missing input artifact: no " + what + " given");
    if (!fs::exists(path)) throw UsageError("missing input artifact: " + what + " '" + path + "'");
}

fs::path normalized(const std::string& p) { return fs::weakly_canonical(fs::absolute(p)); }

void check_outputs(const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
    for (const auto& o : outputs) {
        if (o.empty()) continue;
        for (const auto& i : inputs)
            if (!i.empty() && normalized(o) == normalized(i))
                throw UsageError("output '" + o + "' would overwrite input '" + i + "'");
    }
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_json(const fs::path& path, const json& j) {
    ensure_parent(path);
    std::ofstream out(path);
    if (!out) throw FileError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw FileError("write failed for " + path.string());
}

fs::path echo_path(const fs::path& out, bool is_dir) {
    return is_dir ? out / "config.echo.json" : fs::path(out.string() + ".config.json");
}

// Written next to the primary output of every run. No timestamps, so
// identical invocations produce identical bytes.
void write_echo(const fs::path& out, bool is_dir, const std::string& command, const RunConfig& cfg, const json& args) {
    write_json(echo_path(out, is_dir), {{"command", command}, {"args", args}, {"config", run_config_to_json(cfg)}});
}

std::vector<InstanceRecord> load_split(const fs::path& task_dir, const std::string& split, const RunConfig& cfg) {
    const fs::path p = task_dir / (split + ".jsonl");
    require_input(p.string(), split + " split");
    return load_jsonl(p, cfg.backbone.max_len);
}

BackboneModel load_model(const std::string& path) {
    require_input(path, "model file");
    return BackboneModel::load(path);
}

PromptPool load_pool(const std::string& path, const std::string& what = "prompt pool") {
    require_input(path, what);
    return pool_load(path);
}

std::optional<SoftPrompt> load_shared(const std::string& path) {
    if (path.empty()) return std::nullopt;
    auto p = load_pool(path, "shared prompt");
    if (p.prompts.size() != 1) throw FormatError("shared prompt file " + path + " must hold exactly one prompt");
    return p.prompts.front();
}

json metrics_json(const EvalReport& r, double nll) {
    json j = r;
    j["nll"] = nll;
    return j;
}

// ---------------------------------------------------------------- commands

struct GenDataArgs {
    std::string spec = "all";
    std::string out;
};

int run_gen_data(const Globals& g, GenDataArgs a) {
    const RunConfig cfg = resolve_config(g);
    default_path(a.out, cfg.paths.data);
    const auto reg = default_registry();
    std::vector<SourceTaskSpec> chosen;
    if (a.spec == "all") chosen = reg;
    else if (a.spec == "sources") chosen = default_source_specs();
    else if (a.spec == "targets") chosen = default_target_specs();
    else
        for (const auto& id : split_csv(a.spec)) {
            try {
                chosen.push_back(find_spec(reg, id));
            } catch (const InvalidArgument& e) {
                throw UsageError(e.what());
            }
        }
    const fs::path out(a.out);
    fs::create_directories(out);
    json specs = json::array();
    for (const auto& s : chosen) {
        write_corpus(out / s.task_id, generate_corpus(s, cfg.seed));
        specs.push_back(s);
    }
    write_json(out / "specs.json", specs);
    write_echo(out, true, "gen-data", cfg, {{"spec", a.spec}});
    std::cout << "wrote " << chosen.size() << " task corpora to " << out.string() << '\n';
    return 0;
}

struct PretrainArgs {
    std::string data;
    std::string tasks;
    std::string out;
    std::optional<std::size_t> steps;
};

int run_pretrain(const Globals& g, PretrainArgs a) {
    RunConfig cfg = resolve_config(g);
    default_path(a.data, cfg.paths.data);
    default_path(a.out, cfg.paths.models, "backbone.json");
    if (a.steps) cfg.pretrain.steps = *a.steps;
    require_input(a.data, "data directory");
    const auto ids = a.tasks.empty() ? default_source_ids() : split_csv(a.tasks);
    std::vector<TokenSequence> corpus;
    for (const auto& id : ids)
        for (const auto& r : load_split(fs::path(a.data) / id, "train", cfg)) {
            corpus.push_back(r.x);
            corpus.push_back(r.y);
        }
    DenoiseReport rep;
    const auto model = pretrain_denoise(BackboneModel(cfg.backbone), corpus, cfg.pretrain, &rep);
    ensure_parent(a.out);
    model.save(a.out);
    write_echo(a.out, false, "pretrain", cfg,
               {{"data", a.data}, {"tasks", ids}, {"out", a.out}, {"final_loss", rep.loss_curve.empty() ? 0.0 : rep.loss_curve.back()}});
    std::cout << "pretrained " << cfg.pretrain.steps << " steps, final loss "
              << (rep.loss_curve.empty() ? 0.0 : rep.loss_curve.back()) << '\n';
    return 0;
}

struct TrainSourceArgs {
    std::string data;
    std::string model;
    std::string tasks;
    std::string out;
    std::string shared_out;
    std::optional<std::size_t> steps;
    std::optional<double> lr;
};

int run_train_source(const Globals& g, TrainSourceArgs a) {
    RunConfig cfg = resolve_config(g);
    default_path(a.data, cfg.paths.data);
    default_path(a.out, cfg.paths.pools, "pool.json");
    if (a.steps) cfg.prompt.steps = *a.steps;
    if (a.lr) cfg.prompt.lr = *a.lr;
    require_input(a.data, "data directory");
    check_outputs({a.model}, {a.out, a.shared_out});
    if (!a.shared_out.empty() && normalized(a.shared_out) == normalized(a.out))
        throw UsageError("--shared-out must differ from --out");
    const auto model = load_model(a.model);
    const auto reg = default_registry();
    const auto ids = a.tasks.empty() ? default_source_ids() : split_csv(a.tasks);
    PromptPool pool;
    std::vector<InstanceRecord> all;
    for (const auto& id : ids) {
        const auto train = load_split(fs::path(a.data) / id, "train", cfg);
        const Family fam = train.front().family;
        pool.prompts.push_back(train_source_prompt(id, fam, train, model, cfg.prompt));
        std::cout << id << " final nll " << pool.prompts.back().provenance.final_nll << '\n';
        all.insert(all.end(), train.begin(), train.end());
    }
    ensure_parent(a.out);
    pool_save(pool, a.out);
    write_echo(a.out, false, "train-source", cfg, {{"data", a.data}, {"model", a.model}, {"tasks", ids}, {"out", a.out}});
    if (!a.shared_out.empty()) {
        PromptPool shared;
        shared.prompts.push_back(train_source_prompt("shared", all.front().family, all, model, cfg.prompt));
        ensure_parent(a.shared_out);
        pool_save(shared, a.shared_out);
        write_echo(a.shared_out, false, "train-source", cfg,
                   {{"data", a.data}, {"model", a.model}, {"tasks", ids}, {"out", a.shared_out}});
    }
    return 0;
}

struct ClusterArgs {
    std::string pool;
    std::string out;
    std::string heatmap;
    std::optional<std::size_t> m;
};

int run_cluster(const Globals& g, ClusterArgs a) {
    RunConfig cfg = resolve_config(g);
    default_path(a.out, cfg.paths.pools, "assignment.json");
    if (a.m) cfg.cluster.m = *a.m;
    check_outputs({a.pool}, {a.out, a.heatmap});
    const auto pool = load_pool(a.pool);
    const auto sim = build_similarity(pool);
    const auto asg = spectral_cluster(sim.w, cfg.cluster.m, derive_seed(cfg.seed, 0xC1ULL));
    json j = asg;
    j["task_ids"] = sim.task_ids;
    write_json(a.out, j);
    if (!a.heatmap.empty()) {
        ensure_parent(a.heatmap);
        export_heatmap(sim, asg, a.heatmap);
    }
    write_echo(a.out, false, "cluster", cfg, {{"pool", a.pool}, {"out", a.out}, {"heatmap", a.heatmap}});
    std::cout << "clusters:";
    for (std::size_t i = 0; i < sim.task_ids.size(); ++i) std::cout << ' ' << sim.task_ids[i] << '=' << asg.labels[i];
    std::cout << "\nmin-max-cut objective " << asg.objective << '\n';
    return 0;
}

ClusterAssignment load_assignment(const std::string& path, const PromptPool& pool) {
    require_input(path, "cluster assignment");
    std::ifstream in(path);
    json j;
    try {
        in >> j;
        auto asg = j.get<ClusterAssignment>();
        if (j.contains("task_ids")) {
            const auto ids = j.at("task_ids").get<std::vector<std::string>>();
            for (std::size_t i = 0; i < pool.size(); ++i)
                if (i >= ids.size() || ids[i] != pool.prompts[i].task_id)
                    throw FormatError("cluster assignment " + path + " was built for a different pool");
        }
        if (asg.labels.size() != pool.size())
            throw FormatError("cluster assignment " + path + " has " + std::to_string(asg.labels.size()) +
                              " labels for a pool of " + std::to_string(pool.size()));
        return asg;
    } catch (const json::exception& e) {
        throw FormatError("cluster assignment " + path + ": " + e.what());
    }
}

struct BuildMemoryArgs {
    std::string pool;
    std::string assignment;
    std::string out;
};

int run_build_memory(const Globals& g, BuildMemoryArgs a) {
    const RunConfig cfg = resolve_config(g);
    default_path(a.out, cfg.paths.models, "memory.json");
    check_outputs({a.pool, a.assignment}, {a.out});
    const auto pool = load_pool(a.pool);
    const auto asg = load_assignment(a.assignment, pool);
    const auto mem = init_memory(pool, asg, cfg.memory.d, cfg.memory.heads, cfg.memory.lambda, derive_seed(cfg.seed, 0x3E3ULL));
    ensure_parent(a.out);
    memory_save(mem, a.out);
    write_echo(a.out, false, "build-memory", cfg, {{"pool", a.pool}, {"assignment", a.assignment}, {"out", a.out}});
    std::cout << "memory: " << mem.size() << " prompts, " << mem.params.count() << " trainable values\n";
    return 0;
}

// Shared flags for the commands that train on a target task.
struct TargetArgs {
    std::string data;
    std::string model;
    std::string pool;
    std::string memory;
    std::string shared;
    std::string report;
    std::optional<std::size_t> steps;
    std::optional<double> lr;
    std::optional<std::size_t> train_limit;
    std::optional<std::size_t> dev_limit;
    bool eval_test = false;
};

void add_target_flags(CLI::App* c, TargetArgs& a) {
    c->add_option("--data", a.data, "target task directory (train/valid/test.jsonl)")->required();
    c->add_option("--model", a.model, "pretrained backbone file")->required();
    c->add_option("--pool", a.pool, "prompt pool file")->required();
    c->add_option("--memory", a.memory, "memory file from build-memory")->required();
    c->add_option("--shared", a.shared, "single shared prompt (needed by no_pool)");
    c->add_option("--report", a.report, "report JSON path (default: <paths.reports>/<command>.json)");
    c->add_option("--steps", a.steps, "training steps");
    c->add_option("--lr", a.lr, "learning rate for keys, task query and projection");
    c->add_option("--train-limit", a.train_limit, "subsample this many training records");
    c->add_option("--dev-limit", a.dev_limit, "evaluate on the first N dev records");
}

struct TargetInputs {
    RunConfig cfg;
    std::vector<InstanceRecord> train;
    std::vector<InstanceRecord> dev;
    std::vector<InstanceRecord> test;
    BackboneModel model;
    MemoryNetwork memory;
    std::optional<SoftPrompt> shared;
};

TargetInputs load_target_inputs(const Globals& g, TargetArgs& a, const std::string& report_file,
                                std::vector<std::string> outputs = {}) {
    TargetInputs in;
    in.cfg = resolve_config(g);
    default_path(a.report, in.cfg.paths.reports, report_file);
    outputs.push_back(a.report);
    if (a.steps) in.cfg.transfer.steps = *a.steps;
    if (a.lr) in.cfg.transfer.lr_keys = *a.lr;
    if (a.dev_limit) in.cfg.transfer.dev_limit = *a.dev_limit;
    require_input(a.data, "target data directory");
    require_input(a.model, "model file");
    require_input(a.pool, "prompt pool");
    require_input(a.memory, "memory file");
    if (!a.shared.empty()) require_input(a.shared, "shared prompt");
    check_outputs({a.data, a.model, a.pool, a.memory, a.shared}, outputs);
    in.train = load_split(a.data, "train", in.cfg);
    in.dev = load_split(a.data, "valid", in.cfg);
    if (a.eval_test) in.test = load_split(a.data, "test", in.cfg);
    if (a.train_limit) in.train = subsample(in.train, *a.train_limit, derive_seed(in.cfg.seed, 0x5AB5ULL));
    in.model = load_model(a.model);
    in.memory = memory_load(a.memory, load_pool(a.pool));
    in.memory.lambda = in.cfg.memory.lambda;
    in.cfg.transfer.lambda = in.cfg.memory.lambda;
    in.shared = load_shared(a.shared);
    return in;
}

json target_args_json(const TargetArgs& a) {
    return {{"data", a.data}, {"model", a.model}, {"pool", a.pool}, {"memory", a.memory}, {"shared", a.shared}, {"report", a.report}};
}

struct TrainTargetArgs {
    TargetArgs t;
    std::string out_memory;
    std::string ablation = "full";
};

int run_train_target(const Globals& g, TrainTargetArgs a) {
    a.t.eval_test = true;
    auto in = load_target_inputs(g, a.t, "target.json", {a.out_memory});
    try {
        in.cfg.transfer.ablation = AblationFlags::from_name(a.ablation);
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    if (in.cfg.transfer.ablation.no_pool && !in.shared) throw UsageError("missing input artifact: no_pool needs --shared");
    const auto res = train_target(in.train, in.dev, in.memory, in.model, in.cfg.transfer, in.shared ? &*in.shared : nullptr,
                                  &in.test);
    write_json(a.t.report, res.report);
    if (!a.out_memory.empty()) {
        ensure_parent(a.out_memory);
        memory_save(res.memory, a.out_memory);
    }
    auto args = target_args_json(a.t);
    args["out_memory"] = a.out_memory;
    args["ablation"] = a.ablation;
    write_echo(a.t.report, false, "train-target", in.cfg, args);
    std::cout << res.report.variant << " dev bleu-1 " << res.report.dev.at("bleu-1") << " rouge-l "
              << res.report.dev.at("rouge-l") << '\n';
    return 0;
}

struct AblateArgs {
    TargetArgs t;
    std::string variants = "full,no_pool,no_cluster,no_keys,no_instance_query";
};

int run_ablate(const Globals& g, AblateArgs a) {
    auto in = load_target_inputs(g, a.t, "ablation.json");
    std::vector<AblationFlags> flags;
    try {
        for (const auto& v : split_csv(a.variants)) flags.push_back(AblationFlags::from_name(v));
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    json runs = json::object();
    for (const auto& f : flags) {
        if (f.no_pool && !in.shared) throw UsageError("missing input artifact: no_pool needs --shared");
        auto c = in.cfg.transfer;
        c.ablation = f;
        const auto res = train_target(in.train, in.dev, in.memory, in.model, c, in.shared ? &*in.shared : nullptr);
        runs[f.name()] = res.report;
        std::cout << f.name() << " dev bleu-1 " << res.report.dev.at("bleu-1") << '\n';
    }
    write_json(a.t.report, {{"variants", runs}});
    auto args = target_args_json(a.t);
    args["variants"] = a.variants;
    write_echo(a.t.report, false, "ablate", in.cfg, args);
    return 0;
}

struct FewShotArgs {
    TargetArgs t;
    std::string sizes;
};

int run_few_shot(const Globals& g, FewShotArgs a) {
    auto in = load_target_inputs(g, a.t, "few_shot.json");
    if (!a.sizes.empty()) {
        in.cfg.few_shot.sizes.clear();
        for (const auto& s : split_csv(a.sizes)) {
            try {
                in.cfg.few_shot.sizes.push_back(std::stoul(s));
            } catch (const std::exception&) {
                throw UsageError("--sizes: '" + s + "' is not a size");
            }
        }
    }
    const auto rep =
        few_shot_run(in.cfg.few_shot, in.train, in.dev, in.memory, in.model, in.cfg.transfer, in.shared ? &*in.shared : nullptr);
    write_json(a.t.report, rep);
    write_echo(a.t.report, false, "few-shot", in.cfg, target_args_json(a.t));
    for (const auto& c : rep.cells)
        std::cout << "size " << c.size << ": " << c.runs.size() << " runs, bleu-1 " << c.mean.at("bleu-1") << " +- "
                  << c.stddev.at("bleu-1") << '\n';
    return 0;
}

struct EvalArgs {
    std::string data;
    std::string split = "test";
    std::string model;
    std::string pool;
    std::string memory;
    std::string report;
    std::optional<std::size_t> limit;
};

int run_eval(const Globals& g, EvalArgs a) {
    const RunConfig cfg = resolve_config(g);
    default_path(a.report, cfg.paths.reports, "eval.json");
    require_input(a.data, "data directory");
    require_input(a.model, "model file");
    require_input(a.pool, "prompt pool");
    require_input(a.memory, "memory file");
    check_outputs({a.data, a.model, a.pool, a.memory}, {a.report});
    auto data = load_split(a.data, a.split, cfg);
    if (a.limit && *a.limit < data.size()) data.resize(*a.limit);
    const auto model = load_model(a.model);
    const auto mem = memory_load(a.memory, load_pool(a.pool));
    const auto ev = evaluate_memory(mem, model, data, cfg.transfer.decode);
    json attn = json::object();
    for (std::size_t t = 0; t < mem.size(); ++t) attn[mem.pool.prompts[t].task_id] = ev.attention_mean[t];
    json outputs = json::array();
    for (std::size_t i = 0; i < data.size(); ++i)
        outputs.push_back({{"x", Vocab::instance().decode(data[i].x)}, {"y", Vocab::instance().decode(data[i].y)}, {"output", Vocab::instance().decode(ev.outputs[i])}});
    write_json(a.report, {{"split", a.split}, {"metrics", metrics_json(ev.metrics, ev.nll)}, {"attention_mean", attn},
                          {"outputs", outputs}});
    write_echo(a.report, false, "eval", cfg,
               {{"data", a.data}, {"split", a.split}, {"model", a.model}, {"pool", a.pool}, {"memory", a.memory}, {"report", a.report}});
    for (const auto& [k, v] : ev.metrics.scores) std::cout << k << ' ' << v << '\n';
    return 0;
}

struct SimilarityArgs {
    std::string pool;
    std::string assignment;
    std::string out;
};

int run_similarity(const Globals& g, SimilarityArgs a) {
    const RunConfig cfg = resolve_config(g);
    default_path(a.out, cfg.paths.reports, "similarity.csv");
    check_outputs({a.pool, a.assignment}, {a.out});
    const auto pool = load_pool(a.pool);
    const auto sim = build_similarity(pool);
    ClusterAssignment asg;
    if (a.assignment.empty()) {
        asg.m = 1;
        asg.labels.assign(pool.size(), 0);
    } else {
        asg = load_assignment(a.assignment, pool);
    }
    ensure_parent(a.out);
    export_heatmap(sim, asg, a.out);
    write_echo(a.out, false, "similarity", cfg, {{"pool", a.pool}, {"assignment", a.assignment}, {"out", a.out}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prompt-forge: prompt transfer for text generation"};
    app.require_subcommand(1);
    // Global options may also follow the subcommand name.
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "JSON RunConfig overlaying the defaults");
    app.add_option("--seed", g.seed, "global seed (fallback: PROMPT_FORGE_SEED)");

    GenDataArgs gen;
    auto* c_gen = app.add_subcommand("gen-data", "generate task corpora as JSONL");
    c_gen->add_option("--spec", gen.spec, "task id list, 'all', 'sources' or 'targets'");
    c_gen->add_option("--out", gen.out, "output directory (default: paths.data)");

    PretrainArgs pre;
    auto* c_pre = app.add_subcommand("pretrain", "denoising pretraining of the backbone");
    c_pre->add_option("--data", pre.data, "corpus directory from gen-data (default: paths.data)");
    c_pre->add_option("--tasks", pre.tasks, "comma-separated task ids (default: all sources)");
    c_pre->add_option("--out", pre.out, "model output file (default: <paths.models>/backbone.json)");
    c_pre->add_option("--steps", pre.steps, "pretraining steps");

    TrainSourceArgs src;
    auto* c_src = app.add_subcommand("train-source", "train one soft prompt per source task");
    c_src->add_option("--data", src.data, "corpus directory from gen-data (default: paths.data)");
    c_src->add_option("--model", src.model, "pretrained backbone file")->required();
    c_src->add_option("--tasks", src.tasks, "comma-separated task ids (default: all sources)");
    c_src->add_option("--out", src.out, "pool output file (default: <paths.pools>/pool.json)");
    c_src->add_option("--shared-out", src.shared_out, "also train one prompt on the union of tasks");
    c_src->add_option("--steps", src.steps, "steps per prompt");
    c_src->add_option("--lr", src.lr, "prompt learning rate");

    ClusterArgs clu;
    auto* c_clu = app.add_subcommand("cluster", "spectral clustering of the prompt pool");
    c_clu->add_option("--pool", clu.pool, "prompt pool file")->required();
    c_clu->add_option("--out", clu.out, "assignment output file (default: <paths.pools>/assignment.json)");
    c_clu->add_option("--heatmap", clu.heatmap, "also export the similarity heatmap (CSV)");
    c_clu->add_option("--m", clu.m, "number of clusters");

    BuildMemoryArgs mem;
    auto* c_mem = app.add_subcommand("build-memory", "initialize the multi-key memory");
    c_mem->add_option("--pool", mem.pool, "prompt pool file")->required();
    c_mem->add_option("--assignment", mem.assignment, "cluster assignment file")->required();
    c_mem->add_option("--out", mem.out, "memory output file (default: <paths.models>/memory.json)");

    TrainTargetArgs tt;
    auto* c_tt = app.add_subcommand("train-target", "train the memory on a target task");
    add_target_flags(c_tt, tt.t);
    c_tt->add_option("--out-memory", tt.out_memory, "trained memory output file");
    c_tt->add_option("--ablation", tt.ablation, "full, no_pool, no_cluster, no_keys or no_instance_query");

    AblateArgs abl;
    auto* c_abl = app.add_subcommand("ablate", "train every ablation variant under one budget");
    add_target_flags(c_abl, abl.t);
    c_abl->add_option("--variants", abl.variants, "comma-separated variants");

    FewShotArgs fs_args;
    auto* c_fs = app.add_subcommand("few-shot", "few-shot sweep over subsample sizes");
    add_target_flags(c_fs, fs_args.t);
    c_fs->add_option("--sizes", fs_args.sizes, "comma-separated ascending sizes");

    EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "decode a split with a memory and score it");
    c_ev->add_option("--data", ev.data, "task directory")->required();
    c_ev->add_option("--split", ev.split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
    c_ev->add_option("--model", ev.model, "backbone file")->required();
    c_ev->add_option("--pool", ev.pool, "prompt pool file")->required();
    c_ev->add_option("--memory", ev.memory, "memory file")->required();
    c_ev->add_option("--report", ev.report, "report JSON path (default: <paths.reports>/eval.json)");
    c_ev->add_option("--limit", ev.limit, "score only the first N records");

    SimilarityArgs sim;
    auto* c_sim = app.add_subcommand("similarity", "export the pairwise prompt similarity matrix (CSV)");
    c_sim->add_option("--pool", sim.pool, "prompt pool file")->required();
    c_sim->add_option("--assignment", sim.assignment, "order rows by this cluster assignment");
    c_sim->add_option("--out", sim.out, "CSV output file (default: <paths.reports>/similarity.csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*c_gen) return run_gen_data(g, gen);
        if (*c_pre) return run_pretrain(g, pre);
        if (*c_src) return run_train_source(g, src);
        if (*c_clu) return run_cluster(g, clu);
        if (*c_mem) return run_build_memory(g, mem);
        if (*c_tt) return run_train_target(g, tt);
        if (*c_abl) return run_ablate(g, abl);
        if (*c_fs) return run_few_shot(g, fs_args);
        if (*c_ev) return run_eval(g, ev);
        if (*c_sim) return run_similarity(g, sim);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
