// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "capkv/error.hpp"
#include "capkv/linalg.hpp"

namespace capkv::harness {

struct CorrelationResult {
    double rho = 0.0;
    double p_value = 1.0;
    std::size_t n_points = 0;
};

/// 1-based ranks with ties sharing their average rank.
inline Vector average_ranks(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    Vector ranks(x.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) {
            ++j;
        }
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    return ranks;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    require(sxx > 0.0 && syy > 0.0, ErrorCode::DegenerateRanks, "constant variable in correlation");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Two-sided p-value of rho from t = rho sqrt((n-2)/(1-rho^2)) with n-2 degrees of freedom.
inline double spearman_t_pvalue(double rho, std::size_t n) {
    if (n < 3) {
        return 1.0;
    }
    if (std::abs(rho) >= 1.0) {
        return 0.0;
    }
    const double dof = static_cast<double>(n - 2);
    const double t = rho * std::sqrt(dof / (1.0 - rho * rho));
    boost::math::students_t dist(dof);
    return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))), 0.0, 1.0);
}

inline constexpr std::size_t kMaxExactPermutationN = 9;

/// Two-sided exact permutation p-value; only for n <= 9.
inline double spearman_exact_pvalue(std::span<const double> rank_x, std::span<const double> rank_y, double rho) {
    require(rank_x.size() <= kMaxExactPermutationN, ErrorCode::CombinatorialExplosion,
            "exact permutation p-value limited to n <= 9");
    std::vector<std::size_t> perm(rank_y.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Vector permuted(rank_y.size());
    std::size_t total = 0;
    std::size_t extreme = 0;
    do {
        for (std::size_t i = 0; i < perm.size(); ++i) {
            permuted[i] = rank_y[perm[i]];
        }
        const double r = pearson(rank_x, permuted);
        ++total;
        if (std::abs(r) >= std::abs(rho) - 1e-12) {
            ++extreme;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return static_cast<double>(extreme) / static_cast<double>(total);
}

/**
 * @brief Spearman rank correlation (Pearson on average ranks).
 *
 * Throws DegenerateRanks if either variable is constant.
 */
inline CorrelationResult spearman(std::span<const double> x, std::span<const double> y, bool exact_pvalue = false) {
    require(x.size() == y.size(), ErrorCode::DimensionMismatch, "correlation inputs differ in length");
    require(x.size() >= 3, ErrorCode::InvalidArgument, "correlation needs at least 3 points");
    const Vector rx = average_ranks(x);
    const Vector ry = average_ranks(y);
    CorrelationResult r;
    r.n_points = x.size();
    r.rho = pearson(rx, ry);
    r.p_value = exact_pvalue ? spearman_exact_pvalue(rx, ry, r.rho) : spearman_t_pvalue(r.rho, r.n_points);
    return r;
}

}  // namespace capkv::harness
