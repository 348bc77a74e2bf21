// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "capkv/cache.hpp"
#include "capkv/linalg.hpp"
#include "capkv/policies.hpp"
#include "capkv/rng.hpp"

namespace capkv::harness {

/// log det(I + sum_{i in subset} w_i v_i v_i^T), formed in the smaller orientation.
inline double logdet_objective(const Matrix& values, std::span<const double> weights,
                               std::span<const std::size_t> subset) {
    Matrix scaled(subset.size(), values.cols());
    for (std::size_t r = 0; r < subset.size(); ++r) {
        const double s = std::sqrt(weights[subset[r]]);
        auto src = values.row(subset[r]);
        auto dst = scaled.row(r);
        for (std::size_t j = 0; j < src.size(); ++j) {
            dst[j] = s * src[j];
        }
    }
    return logdet_identity_plus_gram(scaled);
}

/// The weights the selection oracles share with CapKV scoring.
inline Vector oracle_weights(const KvCache& cache, const QueryStats& stats, double tau) {
    return capkv_weights(cache.keys, stats.mean, tau);
}

/**
 * @brief Greedy D-optimal selection using the exact rank-one gain
 * log(1 + w v^T A^{-1} v) against the running matrix A.
 *
 * Ties go to the lowest index. Returned ascending.
 */
inline IndexSet greedy_logdet_select(const KvCache& cache, const QueryStats& stats, double tau, std::size_t budget) {
    require(budget <= cache.size(), ErrorCode::BudgetExceedsCache,
            "budget " + std::to_string(budget) + " > cache size " + std::to_string(cache.size()));
    const Vector w = oracle_weights(cache, stats, tau);
    const std::size_t d = cache.d_value();
    Matrix a = Matrix::identity(d);
    std::vector<bool> taken(cache.size(), false);
    IndexSet chosen;
    chosen.reserve(budget);
    for (std::size_t step = 0; step < budget; ++step) {
        const SpdFactor f = cholesky_factorize_robust(a);
        std::size_t best = cache.size();
        double best_gain = -1.0;
        for (std::size_t i = 0; i < cache.size(); ++i) {
            if (taken[i]) {
                continue;
            }
            const double gain = rank_one_logdet_gain(f, cache.values.row(i), w[i]);
            if (gain > best_gain) {
                best_gain = gain;
                best = i;
            }
        }
        taken[best] = true;
        chosen.push_back(best);
        auto v = cache.values.row(best);
        for (std::size_t r = 0; r < d; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                a(r, c) += w[best] * v[r] * v[c];
            }
        }
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

inline constexpr double kMaxSubsets = 1e6;

/// C(n, k) as a double (exact for the sizes the cap admits).
inline double binomial(std::size_t n, std::size_t k) {
    if (k > n) {
        return 0.0;
    }
    k = std::min(k, n - k);
    double c = 1.0;
    for (std::size_t i = 1; i <= k; ++i) {
        c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
    }
    return std::round(c);
}

/**
 * @brief Brute-force maximizer of the log-det objective over all size-budget subsets.
 *
 * Subsets are visited in lexicographic order and a later subset replaces the
 * incumbent only if it is better by more than a relative 1e-12, so exact
 * ties resolve to the lexicographically smallest set.
 */
inline IndexSet exhaustive_logdet_select(const KvCache& cache, const QueryStats& stats, double tau,
                                         std::size_t budget) {
    require(budget <= cache.size(), ErrorCode::BudgetExceedsCache, "budget exceeds cache size");
    require(binomial(cache.size(), budget) <= kMaxSubsets, ErrorCode::CombinatorialExplosion,
            "C(" + std::to_string(cache.size()) + ", " + std::to_string(budget) + ") exceeds 1e6 subsets");
    const Vector w = oracle_weights(cache, stats, tau);
    IndexSet current(budget);
    std::iota(current.begin(), current.end(), std::size_t{0});
    IndexSet best = current;
    double best_value = logdet_objective(cache.values, w, current);
    const std::size_t n = cache.size();
    while (true) {
        // Advance to the next combination.
        std::size_t i = budget;
        while (i > 0 && current[i - 1] == n - budget + (i - 1)) {
            --i;
        }
        if (i == 0) {
            break;
        }
        ++current[i - 1];
        for (std::size_t j = i; j < budget; ++j) {
            current[j] = current[j - 1] + 1;
        }
        const double value = logdet_objective(cache.values, w, current);
        if (value > best_value + 1e-12 * (1.0 + std::abs(best_value))) {
            best_value = value;
            best = current;
        }
    }
    return best;
}

/// Objective values of the three selectors on one instance.
struct OracleComparison {
    double exhaustive = 0.0;
    double greedy = 0.0;
    double one_shot = 0.0;
    IndexSet exhaustive_set;
    IndexSet greedy_set;
    IndexSet one_shot_set;

    double greedy_ratio() const { return exhaustive > 0.0 ? greedy / exhaustive : 1.0; }
    double one_shot_vs_greedy() const { return greedy > 0.0 ? one_shot / greedy : 1.0; }
};

inline OracleComparison compare_selectors(const KvCache& cache, const QueryStats& stats, double tau,
                                          std::size_t budget) {
    const Vector w = oracle_weights(cache, stats, tau);
    OracleComparison c;
    c.exhaustive_set = exhaustive_logdet_select(cache, stats, tau, budget);
    c.greedy_set = greedy_logdet_select(cache, stats, tau, budget);
    c.one_shot_set = top_k(score_capkv(cache, stats, tau), budget);
    c.exhaustive = logdet_objective(cache.values, w, c.exhaustive_set);
    c.greedy = logdet_objective(cache.values, w, c.greedy_set);
    c.one_shot = logdet_objective(cache.values, w, c.one_shot_set);
    return c;
}

/// Isotropic random instance for the oracle studies: Gaussian keys, values and queries.
inline std::pair<KvCache, QueryStats> random_oracle_instance(std::size_t n, std::size_t d, std::uint64_t seed) {
    CounterRng rng(seed, 11);
    KvCache cache;
    cache.keys = Matrix(n, d);
    cache.values = Matrix(n, d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& x : cache.keys.data()) {
        x = rng.normal() * scale;
    }
    for (double& x : cache.values.data()) {
        x = rng.normal();
    }
    cache.positions.resize(n);
    std::iota(cache.positions.begin(), cache.positions.end(), 0u);
    Matrix queries(8, d);
    for (double& x : queries.data()) {
        x = rng.normal();
    }
    return {std::move(cache), QueryStats::from_queries(queries)};
}

}  // namespace capkv::harness
