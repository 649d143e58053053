// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Drives the prompt_forge_cli binary end to end.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "pf_test_cli";

struct Result {
    int code;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Result run(const std::string& args, const std::string& env = "") {
    const auto err = kRoot / "stderr.txt";
    const std::string cmd = "cd " + kRoot.string() + " && " + env + " \"" PF_CLI_PATH "\" " + args + " >/dev/null 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        fs::remove_all(kRoot);
        fs::create_directories(kRoot);
        std::ofstream(kRoot / "tiny.json") << R"({
          "pretrain": {"steps": 150, "batch": 4},
          "prompt": {"steps": 5, "length": 4},
          "cluster": {"m": 2},
          "transfer": {"steps": 3, "batch": 2, "dev_limit": 6, "decode": {"beam": 1, "max_out": 8}},
          "few_shot": {"sizes": [5, 10], "datasets_per_size": 1, "seeds_per_dataset": 1}
        })";
    }
};

}  // namespace

TEST_F(Cli, GenDataIsByteIdentical) {
    ASSERT_EQ(run("--seed 4 gen-data --spec prefix-1,keyed-1 --out a").code, 0);
    ASSERT_EQ(run("--seed 4 gen-data --spec prefix-1,keyed-1 --out b").code, 0);
    for (const char* f : {"prefix-1/train.jsonl", "keyed-1/test.jsonl", "specs.json", "config.echo.json"})
        EXPECT_EQ(slurp(kRoot / "a" / f), slurp(kRoot / "b" / f)) << f;
    EXPECT_FALSE(slurp(kRoot / "a/prefix-1/train.jsonl").empty());
    ASSERT_EQ(run("--seed 5 gen-data --spec prefix-1 --out c").code, 0);
    EXPECT_NE(slurp(kRoot / "a/prefix-1/train.jsonl"), slurp(kRoot / "c/prefix-1/train.jsonl"));
}

TEST_F(Cli, GenDataAllTwiceIsByteIdentical) {
    ASSERT_EQ(run("gen-data --spec all --seed 7 --out all1").code, 0);
    ASSERT_EQ(run("gen-data --spec all --seed 7 --out all2").code, 0);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(kRoot / "all1")) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), kRoot / "all1");
        EXPECT_EQ(slurp(e.path()), slurp(kRoot / "all2" / rel)) << rel;
        ++files;
    }
    EXPECT_EQ(files, 14u * 3 + 2);  // three splits per task plus specs and config echo
}

TEST_F(Cli, EnvSeedIsTheFallback) {
    ASSERT_EQ(run("gen-data --spec prefix-1 --out env", "PROMPT_FORGE_SEED=4").code, 0);
    ASSERT_EQ(run("--seed 4 gen-data --spec prefix-1 --out flag", "PROMPT_FORGE_SEED=9").code, 0);
    ASSERT_EQ(run("gen-data --spec prefix-1 --out flag9", "PROMPT_FORGE_SEED=9").code, 0);
    EXPECT_EQ(slurp(kRoot / "env/prefix-1/train.jsonl"), slurp(kRoot / "flag/prefix-1/train.jsonl"));
    EXPECT_NE(slurp(kRoot / "flag/prefix-1/train.jsonl"), slurp(kRoot / "flag9/prefix-1/train.jsonl"));
}

TEST_F(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(run("frobnicate").code, 1);
    EXPECT_EQ(run("gen-data --bogus 1").code, 1);
    EXPECT_EQ(run("gen-data --spec nope --out x").code, 1);
    EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, FullTinyPipeline) {
    const std::string cfg = "--config tiny.json --seed 3 ";
    ASSERT_EQ(run(cfg + "gen-data --spec prefix-1,prefix-2,keyed-1,subst-1,target-keyed --out data").code, 0);
    ASSERT_EQ(run(cfg + "pretrain --data data --tasks prefix-1,prefix-2,keyed-1,subst-1 --out model.json").code, 0);
    ASSERT_EQ(run(cfg + "train-source --data data --model model.json --tasks prefix-1,prefix-2,keyed-1,subst-1 --out pool.json "
                        "--shared-out shared.json")
                  .code,
              0);
    ASSERT_EQ(run(cfg + "cluster --pool pool.json --out asg.json --heatmap heat.csv").code, 0);
    ASSERT_EQ(run(cfg + "build-memory --pool pool.json --assignment asg.json --out mem.json").code, 0);
    // A missing memory file is a usage error naming the artifact.
    const auto missing = run(cfg + "train-target --data data/target-keyed --model model.json --pool pool.json --memory nope.json");
    EXPECT_EQ(missing.code, 1);
    EXPECT_NE(missing.err.find("memory"), std::string::npos) << missing.err;
    EXPECT_NE(missing.err.find("nope.json"), std::string::npos) << missing.err;
    // Writing over an input is refused.
    EXPECT_EQ(run(cfg + "build-memory --pool pool.json --assignment asg.json --out pool.json").code, 1);
    ASSERT_EQ(run(cfg + "train-target --data data/target-keyed --model model.json --pool pool.json --memory mem.json "
                        "--report tt.json --out-memory mem2.json")
                  .code,
              0);
    const auto rep = nlohmann::json::parse(slurp(kRoot / "tt.json"));
    for (const char* k : {"bleu-1", "rouge-1", "rouge-l", "distinct-1"})
        EXPECT_TRUE(rep["metrics"]["dev"]["scores"].contains(k)) << k << " missing from " << rep["metrics"]["dev"].dump();
    EXPECT_TRUE(rep["metrics"]["dev"].contains("nll"));
    EXPECT_TRUE(fs::exists(kRoot / "tt.json.config.json"));
    EXPECT_EQ(rep["attention_mean"].size(), 4u);

    ASSERT_EQ(run(cfg + "ablate --data data/target-keyed --model model.json --pool pool.json --memory mem.json "
                        "--shared shared.json --variants full,no_pool,no_keys --report abl.json")
                  .code,
              0);
    EXPECT_EQ(nlohmann::json::parse(slurp(kRoot / "abl.json"))["variants"].size(), 3u);
    ASSERT_EQ(run(cfg + "few-shot --data data/target-keyed --model model.json --pool pool.json --memory mem.json "
                        "--report fs.json")
                  .code,
              0);
    EXPECT_EQ(nlohmann::json::parse(slurp(kRoot / "fs.json"))["cells"].size(), 2u);
    ASSERT_EQ(run(cfg + "eval --data data/target-keyed --split test --model model.json --pool pool.json --memory mem2.json "
                        "--report ev.json --limit 4")
                  .code,
              0);
    ASSERT_EQ(run(cfg + "similarity --pool pool.json --assignment asg.json --out sim.csv").code, 0);
    EXPECT_EQ(slurp(kRoot / "sim.csv").substr(0, 8), "task_id,");

    // A memory built on a different pool is rejected.
    ASSERT_EQ(run(cfg + "train-source --data data --model model.json --tasks prefix-1,prefix-2,keyed-1,subst-1 --out pool2.json "
                        "--steps 1")
                  .code,
              0);
    const auto bad = run(cfg + "eval --data data/target-keyed --model model.json --pool pool2.json --memory mem.json "
                               "--report ev2.json");
    EXPECT_NE(bad.code, 0);
    EXPECT_NE(bad.err.find("pool_hash"), std::string::npos) << bad.err;
}
