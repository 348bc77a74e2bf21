// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "capkv/cache.hpp"
#include "capkv/harness/tables.hpp"
#include "capkv/policies.hpp"
#include "capkv/rng.hpp"

namespace capkv::harness {

struct BenchRow {
    std::size_t n = 0;
    std::size_t d = 0;
    double median_seconds = 0.0;
    std::optional<double> doubling_ratio;  // time(n) / time(n / 2) when n/2 was also measured
};

/// Gaussian cache of n entries with key and value dimension d.
inline std::pair<KvCache, Matrix> bench_instance(std::size_t n, std::size_t d, std::uint64_t seed) {
    CounterRng rng(seed, 31);
    KvCache cache;
    cache.keys = Matrix(n, d);
    cache.values = Matrix(n, d);
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& x : cache.keys.data()) {
        x = s * rng.normal();
    }
    for (double& x : cache.values.data()) {
        x = s * rng.normal();
    }
    cache.positions.resize(n);
    std::iota(cache.positions.begin(), cache.positions.end(), 0u);
    Matrix queries(32, d);
    for (double& x : queries.data()) {
        x = rng.normal();
    }
    return {std::move(cache), std::move(queries)};
}

/**
 * @brief Median wall time of scoring plus eviction (budget n/2) per size.
 *
 * One untimed warm-up run precedes `repeats` timed runs. Runs are strictly
 * sequential on the calling thread.
 */
inline std::vector<BenchRow> runtime_bench(const std::vector<std::size_t>& sizes, std::size_t d,
                                           const PolicyConfig& policy, std::size_t repeats = 5,
                                           std::uint64_t seed = 0) {
    require(repeats >= 3, ErrorCode::InvalidArgument, "runtime_bench needs at least 3 repeats");
    require(!sizes.empty(), ErrorCode::InvalidArgument, "no sizes");
    std::vector<BenchRow> rows;
    for (std::size_t n : sizes) {
        require(n >= 2, ErrorCode::InvalidArgument, "bench sizes must be >= 2");
        const auto [cache, queries] = bench_instance(n, d, derive_seed(seed, n));
        const QueryStats stats = QueryStats::from_queries(queries);
        const ScoringInputs inputs{&stats, &queries, false};
        const std::size_t budget = n / 2;
        auto run = [&] { return run_policy(policy, cache, budget, inputs).retained.size(); };

        volatile std::size_t sink = run();
        std::vector<double> times;
        for (std::size_t r = 0; r < repeats; ++r) {
            const auto start = std::chrono::steady_clock::now();
            sink = run();
            const auto stop = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double>(stop - start).count());
        }
        (void)sink;
        std::sort(times.begin(), times.end());
        const double median = times.size() % 2 == 1
                                  ? times[times.size() / 2]
                                  : 0.5 * (times[times.size() / 2 - 1] + times[times.size() / 2]);
        BenchRow row{n, d, median, std::nullopt};
        for (const auto& prev : rows) {
            if (prev.n * 2 == n && prev.median_seconds > 0.0) {
                row.doubling_ratio = median / prev.median_seconds;
            }
        }
        rows.push_back(row);
    }
    return rows;
}

inline Table bench_table(const std::vector<BenchRow>& rows, const std::string& policy, const std::string& hash,
                         std::uint64_t seed) {
    Table t;
    t.header = {"policy", "n", "d", "median_seconds", "doubling_ratio", "config_hash", "seed"};
    for (const auto& r : rows) {
        t.rows.push_back({policy, std::to_string(r.n), std::to_string(r.d), format_double(r.median_seconds),
                          r.doubling_ratio ? format_double(*r.doubling_ratio) : "", hash, std::to_string(seed)});
    }
    return t;
}

}  // namespace capkv::harness
