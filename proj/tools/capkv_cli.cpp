// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

// capkv: command-line front end for cache generation, eviction, capacity
// diagnostics and the experiment harness.
//
// Exit codes: 0 success, 2 flag validation, 3 I/O, 4 domain error,
// 5 resource cap.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capkv/capkv.hpp"

namespace {

using nlohmann::ordered_json;
using namespace capkv;

enum ExitCode : int { kOk = 0, kFlags = 2, kIo = 3, kDomain = 4, kResource = 5 };

/// Raised for flag values that parse but fail validation.
struct FlagError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check_flag(bool ok, const std::string& flag, const std::string& what) {
    if (!ok) {
        throw FlagError(flag + ": " + what);
    }
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& flag) {
    std::vector<double> out;
    for (const auto& item : split_list(text)) {
        try {
            out.push_back(harness::parse_double(item));
        } catch (const Error&) {
            throw FlagError(flag + ": '" + item + "' is not a number");
        }
    }
    check_flag(!out.empty(), flag, "empty list");
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_output(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot open " + path + " for writing");
    out << text;
    require(static_cast<bool>(out), ErrorCode::IoFailure, "write failed for " + path);
}

ordered_json manifest(const std::string& subcommand, const ordered_json& config, std::uint64_t seed) {
    ordered_json hashed = {{"subcommand", subcommand}, {"config", config}, {"seed", seed},
                           {"tool_version", CAPKV_VERSION}};
    ordered_json m = hashed;
    m["config_hash"] = harness::config_hash(nlohmann::json::parse(hashed.dump()));
    return m;
}

// Shared policy flags.
struct PolicyFlags {
    std::string kind = "capkv";
    double tau = 5.0;
    std::size_t window = 32;
    std::size_t sink_initial = 4;
    std::optional<std::size_t> sink_recent;
    bool knorm_low = false;

    void add(CLI::App* app) {
        app->add_option("--policy", kind, "capkv|expected_attention (ea)|keydiff|knorm|snapkv|sink")
            ->capture_default_str();
        add_parameters(app);
    }

    void add_parameters(CLI::App* app) {
        app->add_option("--tau", tau, "CapKV query-alignment temperature")->capture_default_str();
        app->add_option("--window", window, "SnapKV observation window")->capture_default_str();
        app->add_option("--sink-initial", sink_initial, "Sink: retained initial positions")->capture_default_str();
        app->add_option("--sink-recent", sink_recent, "Sink: retained recent positions (default budget - initial)");
        app->add_flag("--knorm-low", knorm_low, "Knorm: retain LOW-norm keys instead of high-norm keys");
    }

    PolicyConfig make(const std::string& name) const {
        PolicyConfig cfg;
        try {
            cfg.kind = parse_policy_kind(name);
        } catch (const Error& e) {
            throw FlagError(std::string("--policy: ") + e.what());
        }
        check_flag(tau >= 0.0, "--tau", "must be >= 0");
        check_flag(window >= 1, "--window", "must be >= 1");
        cfg.tau = tau;
        cfg.window = window;
        cfg.sink_initial = sink_initial;
        cfg.sink_recent = sink_recent;
        return cfg;
    }

    PolicyConfig make() const { return make(kind); }
};

// Synthetic cache flags shared by gen and sweep.
struct SyntheticFlags {
    std::size_t n = 256;
    std::size_t d_key = 64;
    std::size_t d_value = 64;
    std::size_t clusters = 8;
    double spread = 0.5;
    std::size_t queries = 64;
    double query_scale = 3.0;
    double query_drift = 0.0;

    void add(CLI::App* app, bool with_queries) {
        app->add_option("--n", n, "Number of cached tokens")->capture_default_str();
        app->add_option("--d-key", d_key, "Key dimension")->capture_default_str();
        app->add_option("--d-value", d_value, "Value dimension")->capture_default_str();
        app->add_option("--clusters", clusters, "Number of mixture clusters")->capture_default_str();
        app->add_option("--spread", spread, "Within-cluster spread (relative to center norm)")->capture_default_str();
        if (with_queries) {
            app->add_option("--queries", queries, "Number of queries stored with the cache")->capture_default_str();
        }
        app->add_option("--query-scale", query_scale, "Query magnitude scale")->capture_default_str();
        app->add_option("--query-drift", query_drift, "Query mean drift per step")->capture_default_str();
    }

    SyntheticSpec make(std::uint64_t seed) const {
        check_flag(n >= 1, "--n", "must be >= 1");
        check_flag(d_key >= 1, "--d-key", "must be >= 1");
        check_flag(d_value >= 1, "--d-value", "must be >= 1");
        check_flag(clusters >= 1, "--clusters", "must be >= 1");
        check_flag(clusters <= n, "--clusters", "must not exceed --n");
        check_flag(spread > 0.0, "--spread", "must be > 0");
        check_flag(queries >= 1, "--queries", "must be >= 1");
        check_flag(query_scale >= 0.0, "--query-scale", "must be >= 0");
        SyntheticSpec spec;
        spec.n_tokens = n;
        spec.d_key = d_key;
        spec.d_value = d_value;
        spec.n_clusters = clusters;
        spec.cluster_spread = spread;
        spec.seed = seed;
        spec.n_queries = queries;
        spec.query_scale = query_scale;
        spec.query_drift = query_drift;
        return spec;
    }
};

ordered_json synthetic_json(const SyntheticSpec& s) {
    return {{"n_tokens", s.n_tokens},       {"d_key", s.d_key},
            {"d_value", s.d_value},         {"n_clusters", s.n_clusters},
            {"cluster_spread", s.cluster_spread}, {"seed", s.seed},
            {"n_queries", s.n_queries},     {"query_scale", s.query_scale},
            {"query_drift", s.query_drift}};
}

ordered_json report_json(const CapacityReport& r) {
    ordered_json j = {{"k_capacity", r.k_capacity}, {"u_capacity", r.u_capacity}, {"ku_capacity", r.ku_capacity}};
    j["exact_capacity"] = r.exact_capacity ? ordered_json(*r.exact_capacity) : ordered_json(nullptr);
    j["retained"] = r.retained;
    j["budget"] = r.budget;
    return j;
}

std::string render_table(const harness::Table& t, const std::string& format) {
    std::ostringstream out;
    if (format == "jsonl") {
        t.write_jsonl(out);
    } else {
        t.write_csv(out);
    }
    return out.str();
}

// ---------------------------------------------------------------------------

struct GenCmd {
    SyntheticFlags synth;
    std::uint64_t seed = 0;
    std::uint32_t layer = 0;
    std::uint32_t head = 0;
    std::string out;

    void add(CLI::App* app) {
        synth.add(app, true);
        app->add_option("--seed", seed, "Random seed")->capture_default_str();
        app->add_option("--layer", layer, "Layer index stored in the header")->capture_default_str();
        app->add_option("--head", head, "Head index stored in the header")->capture_default_str();
        app->add_option("--out", out, "Output KVPK file")->required();
    }

    int run() const {
        const SyntheticSpec spec = synth.make(seed);
        auto [cache, stream] = generate_synthetic(spec);
        cache.layer = layer;
        cache.head = head;
        save_cache(cache, out, stream.queries);
        ordered_json config = synthetic_json(spec);
        config["layer"] = layer;
        config["head"] = head;
        std::cout << manifest("gen", config, seed).dump(2) << '\n';
        return kOk;
    }
};

struct EvictCmd {
    std::string in;
    PolicyFlags policy;
    std::optional<double> ratio;
    std::optional<std::size_t> budget;
    std::string out;

    void add(CLI::App* app) {
        app->add_option("--in", in, "Input KVPK file")->required();
        policy.add(app);
        app->add_option("--ratio", ratio, "Compression ratio in (0, 1); budget = round((1 - ratio) N)");
        app->add_option("--budget", budget, "Explicit budget (alternative to --ratio)");
        app->add_option("--out", out, "Output JSON file (default: standard output)");
    }

    int run() const {
        check_flag(ratio.has_value() != budget.has_value(), "--ratio", "exactly one of --ratio or --budget is required");
        if (ratio) {
            check_flag(*ratio > 0.0 && *ratio < 1.0, "--ratio", "must be in the open interval (0, 1)");
        }
        if (budget) {
            check_flag(*budget >= 1, "--budget", "must be >= 1");
        }
        const PolicyConfig cfg = policy.make();
        const std::string bytes = read_file(in);
        const KvpkFile file = decode_kvpk(std::vector<char>(bytes.begin(), bytes.end()));
        const std::size_t n = file.cache.size();
        const std::size_t b = ratio ? budget_for_ratio(n, *ratio) : *budget;

        std::optional<QueryStats> stats;
        if (file.queries && file.queries->rows() >= 1) {
            stats = QueryStats::from_queries(*file.queries);
        }
        if (cfg.kind == PolicyKind::capkv || cfg.kind == PolicyKind::expected_attention) {
            require(stats.has_value(), ErrorCode::InvalidArgument,
                    std::string(to_string(cfg.kind)) + " needs queries stored in the cache file");
        }
        const ScoringInputs inputs{stats ? &*stats : nullptr, file.queries ? &*file.queries : nullptr,
                                   policy.knorm_low};
        const EvictionResult res = run_policy(cfg, file.cache, b, inputs);

        ordered_json config = {{"input_digest", harness::fnv1a_hex(bytes)}, {"policy", to_json(cfg)},
                               {"knorm_low", policy.knorm_low}};
        config["ratio"] = ratio ? ordered_json(*ratio) : ordered_json(nullptr);
        config["budget"] = b;
        ordered_json j;
        j["manifest"] = manifest("evict", config, 0);
        j["n"] = n;
        j["budget"] = b;
        j["policy"] = to_json(cfg);
        if (cfg.kind == PolicyKind::capkv) {
            j["weight_normalization"] = "max_logit_shift";
        }
        j["retained"] = res.retained;
        j["scores"] = res.scores;
        write_output(out, j.dump() + "\n");
        return kOk;
    }
};

struct CapacityCmd {
    std::string in;
    std::string indices;
    bool all = false;
    std::string query_cov;

    void add(CLI::App* app) {
        app->add_option("--in", in, "Input KVPK file")->required();
        auto* idx = app->add_option("--indices", indices, "JSON file: index array or an evict result");
        auto* a = app->add_flag("--all", all, "Use every cache entry");
        idx->excludes(a);
        app->add_option("--query-cov", query_cov,
                        "Adds the exact capacity: 'identity', 'empirical' or a JSON d_key x d_key matrix file");
    }

    int run() const {
        check_flag(all || !indices.empty(), "--indices", "either --indices or --all is required");
        const std::string bytes = read_file(in);
        const KvpkFile file = decode_kvpk(std::vector<char>(bytes.begin(), bytes.end()));
        const std::size_t n = file.cache.size();

        IndexSet idx;
        std::string indices_digest;
        if (all) {
            idx.resize(n);
            std::iota(idx.begin(), idx.end(), std::size_t{0});
        } else {
            const std::string text = read_file(indices);
            indices_digest = harness::fnv1a_hex(text);
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(text);
                if (j.is_object()) {
                    j = j.at("retained");
                }
                std::vector<long long> raw = j.get<std::vector<long long>>();
                for (long long v : raw) {
                    require(v >= 0, ErrorCode::InvalidArgument, "negative index " + std::to_string(v));
                    idx.push_back(static_cast<std::size_t>(v));
                }
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorCode::InvalidArgument, std::string("bad indices file: ") + e.what());
            }
            std::sort(idx.begin(), idx.end());
            require(std::adjacent_find(idx.begin(), idx.end()) == idx.end(), ErrorCode::InvalidArgument,
                    "duplicate index in list");
        }

        std::optional<Matrix> cov;
        std::string cov_digest;
        if (!query_cov.empty()) {
            if (query_cov == "identity") {
                cov = Matrix::identity(file.cache.d_key());
            } else if (query_cov == "empirical") {
                require(file.queries && file.queries->rows() >= 2, ErrorCode::InvalidArgument,
                        "empirical query covariance needs >= 2 stored queries");
                cov = QueryStats::from_queries(*file.queries).cov;
            } else {
                const std::string text = read_file(query_cov);
                cov_digest = harness::fnv1a_hex(text);
                try {
                    const auto rows = nlohmann::json::parse(text).get<std::vector<std::vector<double>>>();
                    cov = Matrix::from_rows(rows, file.cache.d_key());
                } catch (const nlohmann::json::exception& e) {
                    throw Error(ErrorCode::InvalidArgument, std::string("bad covariance file: ") + e.what());
                }
            }
        }
        const CapacityReport report = capacity_report(file.cache, idx, idx.size(), cov ? &*cov : nullptr);

        ordered_json config = {{"input_digest", harness::fnv1a_hex(bytes)},
                               {"all", all},
                               {"indices_digest", indices_digest},
                               {"query_cov", query_cov},
                               {"query_cov_digest", cov_digest}};
        ordered_json j = report_json(report);
        j["manifest"] = manifest("capacity", config, 0);
        std::cout << j.dump() << '\n';
        return kOk;
    }
};

std::vector<PolicyConfig> parse_policies(const std::string& list, const PolicyFlags& flags) {
    std::vector<PolicyConfig> out;
    for (const auto& name : split_list(list)) {
        out.push_back(flags.make(name));
    }
    check_flag(!out.empty(), "--policies", "empty list");
    return out;
}

struct SweepCmd {
    std::optional<std::uint64_t> seed;
    std::string in;
    SyntheticFlags synth;
    std::string ratios = "0.25,0.5,0.75,0.9";
    std::string policies = "capkv,expected_attention,keydiff,knorm,snapkv,sink";
    std::string taus;
    PolicyFlags params;
    std::size_t probes = 32;
    std::size_t observed = 32;
    std::size_t replicates = 1;
    std::string format = "csv";
    std::string out;
    unsigned threads = 1;

    void add(CLI::App* app) {
        app->add_option("--seed", seed, "Random seed (required)");
        app->add_option("--in", in, "Sweep a KVPK file (must hold queries) instead of synthetic caches");
        synth.add(app, false);
        app->add_option("--ratios", ratios, "Comma-separated compression ratios in (0, 1)")->capture_default_str();
        app->add_option("--policies", policies, "Comma-separated policies")->capture_default_str();
        app->add_option("--taus", taus, "Run the CapKV temperature sweep over these tau values (e.g. 0,1,5,7,10)");
        params.add_parameters(app);
        app->add_option("--probes", probes, "Held-out probe queries per cache")->capture_default_str();
        app->add_option("--observed", observed, "Observed queries per synthetic cache")->capture_default_str();
        app->add_option("--replicates", replicates, "Synthetic caches (seed-derived)")->capture_default_str();
        app->add_option("--format", format, "csv or jsonl")->capture_default_str()->check(CLI::IsMember({"csv", "jsonl"}));
        app->add_option("--out", out, "Output file (default: standard output)");
        app->add_option("--threads", threads, "Worker threads (output is identical for any value)")
            ->capture_default_str();
    }

    int run() const {
        check_flag(seed.has_value(), "--seed", "is required for sweep");
        check_flag(probes >= 1, "--probes", "must be >= 1");
        check_flag(observed >= 2, "--observed", "must be >= 2");
        check_flag(replicates >= 1, "--replicates", "must be >= 1");
        check_flag(threads >= 1, "--threads", "must be >= 1");
        harness::SweepConfig cfg;
        cfg.ratios = parse_double_list(ratios, "--ratios");
        for (double r : cfg.ratios) {
            check_flag(r > 0.0 && r < 1.0, "--ratios", "each ratio must be in the open interval (0, 1)");
        }
        cfg.policies = parse_policies(policies, params);
        cfg.probes_per_cache = probes;
        cfg.replicates = replicates;
        cfg.seed = *seed;

        std::vector<harness::SweepInstance> instances;
        ordered_json source;
        if (!in.empty()) {
            const std::string bytes = read_file(in);
            KvpkFile file = decode_kvpk(std::vector<char>(bytes.begin(), bytes.end()));
            require(file.queries && file.queries->rows() >= 3, ErrorCode::InvalidArgument,
                    "sweeping a file needs >= 3 stored queries");
            const QueryStream all{*file.queries};
            const std::size_t t = all.size();
            const std::size_t n_probe = std::min(probes, t - 2);
            instances.push_back({file.cache, all.slice(0, t - n_probe), all.slice(t - n_probe, t)});
            source = {{"input_digest", harness::fnv1a_hex(bytes)}};
            cfg.replicates = 1;
        } else {
            SyntheticFlags s = synth;
            s.queries = observed + probes;
            for (std::size_t r = 0; r < replicates; ++r) {
                auto [cache, stream] = generate_synthetic(s.make(derive_seed(*seed, r)));
                instances.push_back({std::move(cache), stream.slice(0, observed),
                                     stream.slice(observed, observed + probes)});
            }
            source = synthetic_json(s.make(*seed));
            source["observed"] = observed;
        }

        ordered_json config = {{"source", source}, {"sweep", to_json(cfg)}, {"knorm_low", params.knorm_low}};
        harness::Table table;
        if (!taus.empty()) {
            const std::vector<double> tau_list = parse_double_list(taus, "--taus");
            for (double tau : tau_list) {
                check_flag(tau >= 0.0, "--taus", "each tau must be >= 0");
            }
            config["taus"] = tau_list;
            const std::string hash = manifest("sweep", config, *seed)["config_hash"];
            table = harness::tau_table(harness::tau_sweep(instances, tau_list, cfg, threads), hash, *seed);
        } else {
            const std::string hash = manifest("sweep", config, *seed)["config_hash"];
            std::vector<std::vector<harness::SweepRow>> per(instances.size());
            harness::parallel_for(instances.size(), threads, [&](std::size_t i) {
                per[i] = harness::compression_sweep(instances[i], cfg, i, 1, params.knorm_low);
            });
            std::vector<harness::SweepRow> rows;
            for (auto& p : per) {
                rows.insert(rows.end(), p.begin(), p.end());
            }
            table = harness::sweep_table(rows, hash, *seed);
        }
        write_output(out, render_table(table, format));
        return kOk;
    }
};

struct CorrelateCmd {
    std::string in;
    bool exact = false;

    void add(CLI::App* app) {
        app->add_option("--in", in, "Sweep output (CSV or JSON lines)")->required();
        app->add_flag("--exact-p", exact, "Exact permutation p-values (n <= 9 only)");
    }

    int run() const {
        const std::string text = read_file(in);
        std::istringstream stream(text);
        const auto first = text.find_first_not_of(" \t\r\n");
        const harness::Table table = (first != std::string::npos && text[first] == '{') ? harness::read_jsonl(stream)
                                                                                         : harness::read_csv(stream);
        const auto result = harness::capacity_performance_correlation(harness::sweep_rows_from_table(table), exact);
        auto corr = [](const harness::CorrelationResult& c) {
            return ordered_json{{"rho", c.rho}, {"p_value", c.p_value}, {"n_points", c.n_points}};
        };
        ordered_json config = {{"input_digest", harness::fnv1a_hex(text)}, {"exact_p", exact}};
        ordered_json j;
        j["manifest"] = manifest("correlate", config, 0);
        j["k_capacity"] = corr(result.k);
        j["u_capacity"] = corr(result.u);
        j["ku_capacity"] = corr(result.ku);
        std::cout << j.dump() << '\n';
        return kOk;
    }
};

struct StreamCmd {
    std::optional<std::uint64_t> seed;
    std::size_t period = 512;
    std::size_t budget = 1024;
    std::size_t steps = 4096;
    PolicyFlags policy;
    std::size_t d_key = 64;
    std::size_t d_value = 64;
    std::size_t clusters = 8;
    double drift = 0.01;
    std::string format = "csv";
    std::string out;
    unsigned threads = 1;

    void add(CLI::App* app) {
        app->add_option("--seed", seed, "Random seed (required)");
        app->add_option("--period", period, "Eviction period in decoding steps")->capture_default_str();
        app->add_option("--budget", budget, "Reserved cache budget")->capture_default_str();
        app->add_option("--steps", steps, "Decoding steps to simulate")->capture_default_str();
        policy.add(app);
        app->add_option("--d-key", d_key, "Key dimension")->capture_default_str();
        app->add_option("--d-value", d_value, "Value dimension")->capture_default_str();
        app->add_option("--clusters", clusters, "Token mixture clusters")->capture_default_str();
        app->add_option("--drift", drift, "Per-step drift of the token distribution")->capture_default_str();
        app->add_option("--format", format, "csv or jsonl")->capture_default_str()->check(CLI::IsMember({"csv", "jsonl"}));
        app->add_option("--out", out, "Output file (default: standard output)");
        app->add_option("--threads", threads, "Worker threads (output is identical for any value)")
            ->capture_default_str();
    }

    int run() const {
        check_flag(seed.has_value(), "--seed", "is required for stream");
        check_flag(period >= 1, "--period", "must be >= 1");
        check_flag(budget >= 1, "--budget", "must be >= 1");
        check_flag(steps >= 1, "--steps", "must be >= 1");
        check_flag(d_key >= 1, "--d-key", "must be >= 1");
        check_flag(d_value >= 1, "--d-value", "must be >= 1");
        check_flag(clusters >= 1, "--clusters", "must be >= 1");
        check_flag(drift >= 0.0, "--drift", "must be >= 0");
        harness::StreamConfig cfg;
        cfg.eviction_period = period;
        cfg.budget = budget;
        cfg.total_steps = steps;
        cfg.policy = policy.make();
        cfg.d_key = d_key;
        cfg.d_value = d_value;
        cfg.n_clusters = clusters;
        cfg.drift = drift;
        cfg.seed = *seed;
        ordered_json config = to_json(cfg);
        config["knorm_low"] = policy.knorm_low;
        const std::string hash = manifest("stream", config, *seed)["config_hash"];
        const auto trace = harness::streaming_simulation(cfg, policy.knorm_low);
        write_output(out, render_table(harness::stream_table(trace, hash, *seed), format));
        return kOk;
    }
};

struct OracleCmd {
    std::optional<std::uint64_t> seed;
    std::size_t n = 10;
    std::size_t budget = 4;
    std::size_t d = 8;
    std::size_t instances = 1;
    double tau = 5.0;
    std::string out;
    unsigned threads = 1;

    void add(CLI::App* app) {
        app->add_option("--seed", seed, "Random seed (required)");
        app->add_option("--n", n, "Cache entries per instance")->capture_default_str();
        app->add_option("--budget", budget, "Retained entries")->capture_default_str();
        app->add_option("--d", d, "Key/value dimension")->capture_default_str();
        app->add_option("--instances", instances, "Random instances")->capture_default_str();
        app->add_option("--tau", tau, "Query-alignment temperature")->capture_default_str();
        app->add_option("--out", out, "Output JSON-lines file (default: standard output)");
        app->add_option("--threads", threads, "Worker threads (output is identical for any value)")
            ->capture_default_str();
    }

    int run() const {
        check_flag(seed.has_value(), "--seed", "is required for oracle");
        check_flag(n >= 1, "--n", "must be >= 1");
        check_flag(budget >= 1 && budget <= n, "--budget", "must be in [1, --n]");
        check_flag(d >= 1, "--d", "must be >= 1");
        check_flag(instances >= 1, "--instances", "must be >= 1");
        check_flag(tau >= 0.0, "--tau", "must be >= 0");
        check_flag(threads >= 1, "--threads", "must be >= 1");
        require(harness::binomial(n, budget) <= harness::kMaxSubsets, ErrorCode::CombinatorialExplosion,
                "C(" + std::to_string(n) + ", " + std::to_string(budget) + ") exceeds 1e6 subsets");
        ordered_json config = {{"n", n}, {"budget", budget}, {"d", d}, {"instances", instances}, {"tau", tau}};
        const ordered_json m = manifest("oracle", config, *seed);
        const std::string hash = m["config_hash"];

        std::vector<harness::OracleComparison> results(instances);
        harness::parallel_for(instances, threads, [&](std::size_t i) {
            auto [cache, stats] = harness::random_oracle_instance(n, d, derive_seed(*seed, i));
            results[i] = harness::compare_selectors(cache, stats, tau, budget);
        });

        std::ostringstream text;
        std::vector<double> ratios;
        double min_ratio = 1.0;
        for (std::size_t i = 0; i < instances; ++i) {
            const auto& r = results[i];
            ratios.push_back(r.greedy_ratio());
            min_ratio = std::min(min_ratio, r.greedy_ratio());
            ordered_json row = {{"instance", i},
                                {"exhaustive", r.exhaustive},
                                {"greedy", r.greedy},
                                {"one_shot", r.one_shot},
                                {"greedy_ratio", r.greedy_ratio()},
                                {"one_shot_vs_greedy", r.one_shot_vs_greedy()},
                                {"exhaustive_set", r.exhaustive_set},
                                {"greedy_set", r.greedy_set},
                                {"one_shot_set", r.one_shot_set},
                                {"config_hash", hash},
                                {"seed", *seed}};
            text << row.dump() << '\n';
        }
        std::sort(ratios.begin(), ratios.end());
        ordered_json summary = {{"summary", true},
                                {"min_greedy_ratio", min_ratio},
                                {"median_greedy_ratio", ratios[ratios.size() / 2]},
                                {"guarantee", 1.0 - 1.0 / std::exp(1.0)},
                                {"manifest", m}};
        text << summary.dump() << '\n';
        write_output(out, text.str());
        return kOk;
    }
};

struct BenchCmd {
    std::string sizes = "4096,8192";
    std::size_t d = 128;
    std::string policy = "capkv";
    PolicyFlags params;
    std::size_t repeats = 5;
    std::uint64_t seed = 0;
    std::string out;

    void add(CLI::App* app) {
        app->add_option("--sizes", sizes, "Comma-separated cache sizes")->capture_default_str();
        app->add_option("--d", d, "Key/value dimension")->capture_default_str();
        app->add_option("--policy", policy, "Policy to time")->capture_default_str();
        params.add_parameters(app);
        app->add_option("--repeats", repeats, "Timed runs after one warm-up")->capture_default_str();
        app->add_option("--seed", seed, "Random seed")->capture_default_str();
        app->add_option("--out", out, "Output CSV file (default: standard output)");
    }

    int run() const {
        check_flag(repeats >= 3, "--repeats", "must be >= 3");
        check_flag(d >= 1, "--d", "must be >= 1");
        std::vector<std::size_t> ns;
        for (double x : parse_double_list(sizes, "--sizes")) {
            check_flag(x >= 2 && x == std::floor(x), "--sizes", "sizes must be integers >= 2");
            ns.push_back(static_cast<std::size_t>(x));
        }
        const PolicyConfig cfg = params.make(policy);
        ordered_json config = {{"sizes", ns}, {"d", d}, {"policy", to_json(cfg)}, {"repeats", repeats}};
        const std::string hash = manifest("bench", config, seed)["config_hash"];
        const auto rows = harness::runtime_bench(ns, d, cfg, repeats, seed);
        std::ostringstream text;
        harness::bench_table(rows, std::string(to_string(cfg.kind)), hash, seed).write_csv(text);
        write_output(out, text.str());
        return kOk;
    }
};

/// Injects `--config` JSON entries ahead of the real flags; later (command-line) values win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> out;
    std::optional<std::string> config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
            ++i;
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        } else {
            out.push_back(args[i]);
        }
    }
    if (!config_path || out.size() < 2) {
        return out;
    }
    const nlohmann::json cfg = nlohmann::json::parse(read_file(*config_path));
    if (!cfg.is_object()) {
        throw FlagError("--config: file must hold a JSON object");
    }
    std::vector<std::string> injected;
    for (const auto& [key, value] : cfg.items()) {
        const std::string flag = "--" + key;
        if (value.is_boolean()) {
            if (value.get<bool>()) {
                injected.push_back(flag);
            }
            continue;
        }
        std::string text;
        if (value.is_string()) {
            text = value.get<std::string>();
        } else if (value.is_array()) {
            for (const auto& item : value) {
                if (!text.empty()) {
                    text += ',';
                }
                text += item.is_string() ? item.get<std::string>() : item.dump();
            }
        } else {
            text = value.dump();
        }
        injected.push_back(flag);
        injected.push_back(text);
    }
    // argv[0], subcommand, config values, then user flags.
    std::vector<std::string> merged(out.begin(), out.begin() + 2);
    merged.insert(merged.end(), injected.begin(), injected.end());
    merged.insert(merged.end(), out.begin() + 2, out.end());
    return merged;
}

int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::IoFailure:
    case ErrorCode::BadMagic:
    case ErrorCode::VersionUnsupported:
    case ErrorCode::TruncatedPayload:
    case ErrorCode::ShapeMismatch:
        return kIo;
    case ErrorCode::CombinatorialExplosion:
        return kResource;
    default:
        return kDomain;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"capkv: capacity-aware KV-cache eviction toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", CAPKV_VERSION);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    GenCmd gen;
    EvictCmd evict;
    CapacityCmd capacity;
    SweepCmd sweep;
    CorrelateCmd correlate;
    StreamCmd stream;
    OracleCmd oracle;
    BenchCmd bench;

    auto add_config_flag = [](CLI::App* sub) {
        sub->add_option("--config", "JSON object of flag values (without leading dashes); explicit flags win");
    };
    struct Entry {
        CLI::App* app;
        std::function<int()> run;
    };
    std::vector<Entry> entries;
    auto reg = [&](const char* name, const char* help, auto& cmd) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        cmd.add(sub);
        add_config_flag(sub);
        entries.push_back({sub, [&cmd] { return cmd.run(); }});
    };
    reg("gen", "Generate a synthetic KVPK cache with stored queries", gen);
    reg("evict", "Score a cache with one policy and evict to a budget", evict);
    reg("capacity", "K/U/KU capacity proxies of a retained subset", capacity);
    reg("sweep", "Compression sweep (or tau sweep) with capacity and distortion", sweep);
    reg("correlate", "Spearman correlation between capacity proxies and performance", correlate);
    reg("stream", "Decoding-phase streaming eviction simulation", stream);
    reg("oracle", "Greedy vs exhaustive vs one-shot log-det selection", oracle);
    reg("bench", "Runtime scaling benchmark", bench);

    try {
        std::vector<std::string> args(argv, argv + argc);
        args = expand_config(args);
        std::vector<char*> cargs;
        for (auto& a : args) {
            cargs.push_back(a.data());
        }
        try {
            app.parse(static_cast<int>(cargs.size()), cargs.data());
        } catch (const CLI::ParseError& e) {
            const int rc = app.exit(e);
            return rc == 0 ? kOk : kFlags;
        }
        for (const auto& e : entries) {
            if (e.app->parsed()) {
                return e.run();
            }
        }
        return kFlags;
    } catch (const FlagError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFlags;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFlags;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDomain;
    }
}
