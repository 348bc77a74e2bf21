// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capkv/cache.hpp"
#include "capkv/harness/correlation.hpp"
#include "capkv/harness/parallel.hpp"
#include "capkv/harness/tables.hpp"
#include "capkv/policies.hpp"
#include "capkv/proxies.hpp"

namespace capkv::harness {

struct SweepConfig {
    std::vector<double> ratios{0.25, 0.5, 0.75, 0.9};
    std::vector<PolicyConfig> policies;
    std::size_t probes_per_cache = 32;
    std::size_t replicates = 1;
    std::uint64_t seed = 0;

    void validate() const {
        require(!ratios.empty(), ErrorCode::InvalidArgument, "no compression ratios");
        for (double r : ratios) {
            require(r > 0.0 && r < 1.0, ErrorCode::InvalidArgument,
                    "ratio " + format_double(r) + " outside the open interval (0, 1)");
        }
        require(!policies.empty(), ErrorCode::InvalidArgument, "no policies");
        for (const auto& p : policies) {
            p.validate();
        }
        require(probes_per_cache >= 1, ErrorCode::InvalidArgument, "probes_per_cache must be >= 1");
        require(replicates >= 1, ErrorCode::InvalidArgument, "replicates must be >= 1");
    }
};

inline nlohmann::ordered_json to_json(const SweepConfig& cfg) {
    nlohmann::ordered_json j;
    j["ratios"] = cfg.ratios;
    j["policies"] = nlohmann::ordered_json::array();
    for (const auto& p : cfg.policies) {
        j["policies"].push_back(to_json(p));
    }
    j["probes_per_cache"] = cfg.probes_per_cache;
    j["replicates"] = cfg.replicates;
    j["seed"] = cfg.seed;
    return j;
}

/// Observed queries feed the policies; probes are held out for distortion.
struct SweepInstance {
    KvCache cache;
    QueryStream observed;
    QueryStream probes;
};

inline constexpr const char* kReferencePolicy = "full";

struct SweepRow {
    std::size_t replicate = 0;
    std::string policy;
    double ratio = 0.0;
    CapacityReport report;
    double distortion = 0.0;

    bool is_reference() const { return policy == kReferencePolicy; }
};

/**
 * @brief Scores, evicts and measures every (policy, ratio) cell on one cache.
 *
 * The first row is the full-cache reference (ratio 0, distortion 0); the
 * rest follow in (policy, ratio) configuration order. Each ratio recomputes
 * scores from scratch.
 */
inline std::vector<SweepRow> compression_sweep(const SweepInstance& inst, const SweepConfig& cfg,
                                               std::size_t replicate = 0, unsigned threads = 1,
                                               bool knorm_retain_low = false) {
    cfg.validate();
    inst.cache.validate();
    const std::size_t n = inst.cache.size();
    require(inst.probes.size() >= 1, ErrorCode::InvalidArgument, "no probe queries");
    const std::size_t n_probes = std::min(cfg.probes_per_cache, inst.probes.size());
    const QueryStream probes = inst.probes.slice(0, n_probes);
    const QueryStats stats = QueryStats::from_queries(inst.observed.queries);
    const ScoringInputs inputs{&stats, &inst.observed.queries, knorm_retain_low};

    std::vector<std::size_t> budgets;
    for (double r : cfg.ratios) {
        budgets.push_back(budget_for_ratio(n, r));
    }

    std::vector<SweepRow> rows(1 + cfg.policies.size() * cfg.ratios.size());
    IndexSet all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    rows[0] = SweepRow{replicate, kReferencePolicy, 0.0, capacity_report(inst.cache, all, n), 0.0};

    parallel_for(cfg.policies.size() * cfg.ratios.size(), threads, [&](std::size_t cell) {
        const std::size_t p = cell / cfg.ratios.size();
        const std::size_t r = cell % cfg.ratios.size();
        const PolicyConfig& policy = cfg.policies[p];
        const EvictionResult res = run_policy(policy, inst.cache, budgets[r], inputs);
        SweepRow row;
        row.replicate = replicate;
        row.policy = std::string(to_string(policy.kind));
        row.ratio = cfg.ratios[r];
        row.report = capacity_report(inst.cache, res.retained, budgets[r]);
        row.distortion = output_distortion(inst.cache, res.retained, probes.queries);
        rows[1 + cell] = std::move(row);
    });
    return rows;
}

inline Table sweep_table(const std::vector<SweepRow>& rows, const std::string& hash, std::uint64_t seed) {
    Table t;
    t.header = {"replicate", "policy", "ratio", "budget", "retained", "k_capacity", "u_capacity",
                "ku_capacity", "distortion", "config_hash", "seed"};
    for (const auto& r : rows) {
        t.rows.push_back({std::to_string(r.replicate), r.policy, format_double(r.ratio),
                          std::to_string(r.report.budget), std::to_string(r.report.retained),
                          format_double(r.report.k_capacity), format_double(r.report.u_capacity),
                          format_double(r.report.ku_capacity), format_double(r.distortion), hash,
                          std::to_string(seed)});
    }
    return t;
}

inline std::vector<SweepRow> sweep_rows_from_table(const Table& t) {
    const std::size_t c_rep = t.column("replicate"), c_pol = t.column("policy"), c_ratio = t.column("ratio"),
                      c_budget = t.column("budget"), c_ret = t.column("retained"), c_k = t.column("k_capacity"),
                      c_u = t.column("u_capacity"), c_ku = t.column("ku_capacity"), c_dist = t.column("distortion");
    std::vector<SweepRow> rows;
    for (const auto& r : t.rows) {
        SweepRow row;
        row.replicate = static_cast<std::size_t>(parse_double(r[c_rep]));
        row.policy = r[c_pol];
        row.ratio = parse_double(r[c_ratio]);
        row.report.budget = static_cast<std::size_t>(parse_double(r[c_budget]));
        row.report.retained = static_cast<std::size_t>(parse_double(r[c_ret]));
        row.report.k_capacity = parse_double(r[c_k]);
        row.report.u_capacity = parse_double(r[c_u]);
        row.report.ku_capacity = parse_double(r[c_ku]);
        row.distortion = parse_double(r[c_dist]);
        rows.push_back(std::move(row));
    }
    return rows;
}

struct ProxyCorrelations {
    CorrelationResult k;
    CorrelationResult u;
    CorrelationResult ku;
};

/**
 * @brief Spearman correlation of each proxy with performance = -distortion.
 *
 * Full-cache reference rows are excluded.
 */
inline ProxyCorrelations capacity_performance_correlation(const std::vector<SweepRow>& rows,
                                                          bool exact_pvalue = false) {
    Vector k, u, ku, perf;
    for (const auto& r : rows) {
        if (r.is_reference()) {
            continue;
        }
        k.push_back(r.report.k_capacity);
        u.push_back(r.report.u_capacity);
        ku.push_back(r.report.ku_capacity);
        perf.push_back(-r.distortion);
    }
    require(perf.size() >= 3, ErrorCode::InvalidArgument, "correlation needs at least 3 sweep rows");
    return {spearman(k, perf, exact_pvalue), spearman(u, perf, exact_pvalue), spearman(ku, perf, exact_pvalue)};
}

struct TauRow {
    double tau = 0.0;
    double ratio = 0.0;
    double mean_distortion = 0.0;
    double mean_ku_capacity = 0.0;
};

inline const std::vector<double> kDefaultTaus{0.0, 1.0, 5.0, 7.0, 10.0};

/**
 * @brief CapKV compression sweep at each temperature, averaged over instances.
 *
 * Rows come in (tau, ratio) order; tau = 0 is the query-agnostic variant.
 */
inline std::vector<TauRow> tau_sweep(const std::vector<SweepInstance>& instances, const std::vector<double>& taus,
                                     const SweepConfig& base, unsigned threads = 1) {
    require(!taus.empty(), ErrorCode::InvalidArgument, "no tau values");
    require(!instances.empty(), ErrorCode::InvalidArgument, "no caches");
    std::vector<TauRow> rows;
    for (double tau : taus) {
        require(tau >= 0.0, ErrorCode::InvalidArgument, "tau must be >= 0");
        SweepConfig cfg = base;
        PolicyConfig capkv;
        capkv.kind = PolicyKind::capkv;
        capkv.tau = tau;
        cfg.policies = {capkv};
        std::vector<std::vector<SweepRow>> per_instance(instances.size());
        parallel_for(instances.size(), threads,
                     [&](std::size_t i) { per_instance[i] = compression_sweep(instances[i], cfg, i); });
        for (std::size_t r = 0; r < cfg.ratios.size(); ++r) {
            TauRow row{tau, cfg.ratios[r], 0.0, 0.0};
            for (const auto& sweep : per_instance) {
                row.mean_distortion += sweep[1 + r].distortion;
                row.mean_ku_capacity += sweep[1 + r].report.ku_capacity;
            }
            row.mean_distortion /= static_cast<double>(instances.size());
            row.mean_ku_capacity /= static_cast<double>(instances.size());
            rows.push_back(row);
        }
    }
    return rows;
}

inline Table tau_table(const std::vector<TauRow>& rows, const std::string& hash, std::uint64_t seed) {
    Table t;
    t.header = {"tau", "ratio", "mean_distortion", "mean_ku_capacity", "config_hash", "seed"};
    for (const auto& r : rows) {
        t.rows.push_back({format_double(r.tau), format_double(r.ratio), format_double(r.mean_distortion),
                          format_double(r.mean_ku_capacity), hash, std::to_string(seed)});
    }
    return t;
}

}  // namespace capkv::harness
