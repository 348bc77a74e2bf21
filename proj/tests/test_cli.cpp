// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "cli_runner.hpp"
#include "test_util.hpp"

namespace capkv {
namespace {

using testing::run_cli;
using testing::slurp;

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir() = testing::scratch_dir("cli_test");
        ASSERT_EQ(run_cli("gen --n 256 --d-key 64 --d-value 64 --clusters 8 --seed 7 --out c.kvpk", dir()).exit_code,
                  0);
        ASSERT_EQ(run_cli("gen --n 16 --d-key 8 --d-value 8 --clusters 2 --seed 1 --out s.kvpk", dir()).exit_code, 0);
    }

    static std::filesystem::path& dir() {
        static std::filesystem::path d;
        return d;
    }

    static testing::CliResult run(const std::string& args) { return run_cli(args, dir()); }

    static void write(const std::string& name, const std::string& text) { std::ofstream(dir() / name) << text; }
};

TEST_F(Cli, GenWritesLoadableFileAndStableHash) {
    const KvpkFile f = load_cache(dir() / "c.kvpk");
    EXPECT_EQ(f.cache.size(), 256u);
    EXPECT_EQ(f.cache.d_key(), 64u);
    ASSERT_TRUE(f.queries.has_value());
    const auto a = run("gen --n 256 --clusters 8 --seed 7 --out c2.kvpk");
    const auto b = run("gen --n 256 --clusters 8 --seed 7 --out c3.kvpk");
    EXPECT_EQ(nlohmann::json::parse(a.out)["config_hash"], nlohmann::json::parse(b.out)["config_hash"]);
    EXPECT_EQ(slurp(dir() / "c2.kvpk"), slurp(dir() / "c.kvpk"));
}

TEST_F(Cli, GenValidationNamesFlag) {
    const auto r = run("gen --clusters 0 --out x.kvpk");
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.err.find("--clusters"), std::string::npos);
    EXPECT_EQ(run("gen --n 4 --clusters 2 --bogus 1 --out x.kvpk").exit_code, 2);
    EXPECT_EQ(run("gen --n 4 --clusters 2 --out /nonexistent_dir/x.kvpk").exit_code, 3);
}

TEST_F(Cli, EvictCapkvHalvesCache) {
    const auto r = run("evict --in c.kvpk --policy capkv --tau 5 --ratio 0.5");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["retained"].size(), 128u);
    EXPECT_EQ(j["scores"].size(), 256u);
    EXPECT_EQ(j["budget"], 128);
    EXPECT_EQ(j["weight_normalization"], "max_logit_shift");
    EXPECT_TRUE(j.contains("manifest"));
}

TEST_F(Cli, EvictValidationAndErrors) {
    EXPECT_EQ(run("evict --in c.kvpk --ratio 0.0").exit_code, 2);
    EXPECT_EQ(run("evict --in c.kvpk --ratio 1.5").exit_code, 2);
    EXPECT_EQ(run("evict --in c.kvpk --policy lru --ratio 0.5").exit_code, 2);
    EXPECT_EQ(run("evict --in missing.kvpk --ratio 0.5").exit_code, 3);
    EXPECT_EQ(run("evict --in c.kvpk --budget 300").exit_code, 4);
    write("garbage.kvpk", "not a cache at all");
    EXPECT_EQ(run("evict --in garbage.kvpk --ratio 0.5").exit_code, 3);
    // A file without stored queries cannot feed SnapKV.
    const KvpkFile f = load_cache(dir() / "s.kvpk");
    save_cache(f.cache, dir() / "noq.kvpk");
    EXPECT_EQ(run("evict --in noq.kvpk --policy snapkv --ratio 0.5").exit_code, 4);
    EXPECT_EQ(run("evict --in noq.kvpk --policy knorm --ratio 0.5").exit_code, 0);
}

TEST_F(Cli, EvictSinkPositions) {
    const auto r = run("evict --in s.kvpk --policy sink --sink-initial 2 --ratio 0.75");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(nlohmann::json::parse(r.out)["retained"], nlohmann::json::parse("[0,1,14,15]"));
}

TEST_F(Cli, CapacityAllDominatesSubsets) {
    const auto all = nlohmann::json::parse(run("capacity --in c.kvpk --all").out);
    write("sub.json", "[0, 5, 17, 200]");
    const auto sub = nlohmann::json::parse(run("capacity --in c.kvpk --indices sub.json").out);
    for (const char* k : {"k_capacity", "u_capacity", "ku_capacity"}) {
        EXPECT_GE(all[k].get<double>(), sub[k].get<double>()) << k;
    }
    EXPECT_TRUE(all["exact_capacity"].is_null());
    const auto exact = nlohmann::json::parse(run("capacity --in c.kvpk --all --query-cov identity").out);
    EXPECT_NEAR(exact["exact_capacity"].get<double>(), 0.5 * exact["ku_capacity"].get<double>(), 1e-8);
    EXPECT_EQ(run("capacity --in c.kvpk --all --query-cov empirical").exit_code, 0);
}

TEST_F(Cli, CapacityEdgeCases) {
    write("empty.json", "[]");
    const auto r = run("capacity --in c.kvpk --indices empty.json");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["k_capacity"], 0.0);
    EXPECT_EQ(j["u_capacity"], 0.0);
    EXPECT_EQ(j["ku_capacity"], 0.0);
    write("dup.json", "[1, 2, 2]");
    EXPECT_EQ(run("capacity --in c.kvpk --indices dup.json").exit_code, 4);
    write("oob.json", "[1, 256]");
    EXPECT_EQ(run("capacity --in c.kvpk --indices oob.json").exit_code, 4);
    EXPECT_EQ(run("capacity --in c.kvpk").exit_code, 2);
    // An evict result can be fed straight back in.
    ASSERT_EQ(run("evict --in c.kvpk --policy knorm --ratio 0.5 --out ev.json").exit_code, 0);
    EXPECT_EQ(run("capacity --in c.kvpk --indices ev.json").exit_code, 0);
}

TEST_F(Cli, SweepCorrelateRoundTrip) {
    const auto r = run(
        "sweep --seed 3 --ratios 0.25,0.5,0.75,0.9 --policies capkv,knorm,keydiff,sink,ea,snapkv --n 128 "
        "--out sweep.csv");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    std::istringstream in(slurp(dir() / "sweep.csv"));
    const auto table = harness::read_csv(in);
    EXPECT_EQ(table.rows.size(), 6u * 4u + 1u);
    const auto c = run("correlate --in sweep.csv");
    ASSERT_EQ(c.exit_code, 0) << c.err;
    const auto j = nlohmann::json::parse(c.out);
    EXPECT_EQ(j["ku_capacity"]["n_points"], 24);
    ASSERT_EQ(run("sweep --seed 3 --policies knorm,sink --n 64 --format jsonl --out sweep.jsonl").exit_code, 0);
    EXPECT_EQ(run("correlate --in sweep.jsonl").exit_code, 0);
}

TEST_F(Cli, SeedRequired) {
    EXPECT_EQ(run("sweep --policies knorm").exit_code, 2);
    EXPECT_EQ(run("stream --steps 10").exit_code, 2);
    EXPECT_EQ(run("oracle --n 6 --budget 2").exit_code, 2);
}

TEST_F(Cli, SweepValidation) {
    EXPECT_EQ(run("sweep --seed 1 --ratios 0,0.5").exit_code, 2);
    EXPECT_EQ(run("sweep --seed 1 --ratios abc").exit_code, 2);
    EXPECT_EQ(run("sweep --seed 1 --format xml").exit_code, 2);
}

TEST_F(Cli, TauSweepGrid) {
    const auto r = run("sweep --seed 2 --taus 0,1,5,7,10 --n 64 --replicates 2");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    std::istringstream in(r.out);
    const auto t = harness::read_csv(in);
    EXPECT_EQ(t.rows.size(), 5u * 4u);
    EXPECT_EQ(t.header[0], "tau");
}

TEST_F(Cli, StreamSchedule) {
    const auto r = run("stream --seed 1 --period 512 --budget 1024 --steps 2100 --policy knorm --d-key 8 --d-value 8");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    std::istringstream in(r.out);
    const auto t = harness::read_csv(in);
    std::vector<std::string> events;
    for (const auto& row : t.rows) {
        if (row[t.column("evicted")] == "1") {
            events.push_back(row[t.column("step")]);
            EXPECT_EQ(row[t.column("cache_size")], "1024");
        }
    }
    EXPECT_EQ(events, (std::vector<std::string>{"1024", "1536", "2048"}));
    EXPECT_EQ(run("stream --seed 1 --policy snapkv --steps 10").exit_code, 4);
}

TEST_F(Cli, OracleAndResourceCap) {
    const auto r = run("oracle --seed 1 --n 10 --budget 4");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const std::string last = r.out.substr(r.out.rfind('\n', r.out.size() - 2) + 1);
    EXPECT_GE(nlohmann::json::parse(last)["min_greedy_ratio"].get<double>(), 1.0 - 1.0 / std::exp(1.0));
    EXPECT_EQ(run("oracle --seed 1 --n 40 --budget 20").exit_code, 5);
    EXPECT_EQ(run("oracle --seed 1 --n 4 --budget 5").exit_code, 2);
}

TEST_F(Cli, BenchRuns) {
    const auto r = run("bench --sizes 64,128 --d 8 --repeats 3");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_NE(r.out.find("median_seconds"), std::string::npos);
    EXPECT_EQ(run("bench --repeats 1").exit_code, 2);
}

TEST_F(Cli, HelpListsDefaults) {
    const auto top = run("--help");
    EXPECT_EQ(top.exit_code, 0);
    for (const char* sub : {"gen", "evict", "capacity", "sweep", "correlate", "stream", "oracle", "bench"}) {
        EXPECT_NE(top.out.find(sub), std::string::npos) << sub;
    }
    const auto stream = run("stream --help");
    EXPECT_EQ(stream.exit_code, 0);
    for (const char* flag : {"--period", "--budget", "--steps", "--drift", "--seed", "--threads", "--config"}) {
        EXPECT_NE(stream.out.find(flag), std::string::npos) << flag;
    }
    EXPECT_NE(stream.out.find("512"), std::string::npos);
    EXPECT_NE(stream.out.find("1024"), std::string::npos);
    EXPECT_NE(stream.out.find("0.01"), std::string::npos);
    const auto evict = run("evict --help");
    EXPECT_NE(evict.out.find("--tau"), std::string::npos);
    EXPECT_NE(evict.out.find("--window"), std::string::npos);
    const auto sweep = run("sweep --help");
    EXPECT_NE(sweep.out.find("0.25,0.5,0.75,0.9"), std::string::npos);
    EXPECT_EQ(run("").exit_code, 2);
}

TEST_F(Cli, ConfigOverlayFlagsWin) {
    write("cfg.json", R"({"n": 32, "clusters": 4, "seed": 5, "out": "from_cfg.kvpk"})");
    ASSERT_EQ(run("gen --config cfg.json").exit_code, 0);
    EXPECT_EQ(load_cache(dir() / "from_cfg.kvpk").cache.size(), 32u);
    ASSERT_EQ(run("gen --config cfg.json --n 40 --out flag.kvpk").exit_code, 0);
    EXPECT_EQ(load_cache(dir() / "flag.kvpk").cache.size(), 40u);
    write("sweep_cfg.json", R"({"seed": 4, "ratios": [0.5, 0.9], "policies": ["knorm", "sink"], "n": 48})");
    const auto r = run("sweep --config sweep_cfg.json");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    std::istringstream in(r.out);
    EXPECT_EQ(harness::read_csv(in).rows.size(), 5u);
    EXPECT_EQ(run("gen --config missing.json").exit_code, 3);
}

}  // namespace
}  // namespace capkv
