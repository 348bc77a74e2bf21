// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "capkv/cache.hpp"
#include "capkv/channel.hpp"
#include "capkv/linalg.hpp"

namespace capkv {

/// Capacity diagnostics of one retained subset, in nats.
struct CapacityReport {
    double k_capacity = 0.0;
    double u_capacity = 0.0;
    double ku_capacity = 0.0;
    std::optional<double> exact_capacity;
    std::size_t retained = 0;
    std::size_t budget = 0;
};

/// log det(I + K_C K_C^T) for retained keys stacked as rows.
inline double k_capacity(const Matrix& keys) { return logdet_identity_plus_gram(keys); }

/// log det(I + U_C U_C^T) for output directions stacked as columns (m x |C|).
inline double u_capacity(const Matrix& outputs) { return logdet_identity_plus_gram(outputs); }

/// log det(I + U_C K_C K_C^T U_C^T). Twice the isotropic exact capacity.
inline double ku_capacity(const Matrix& keys, const Matrix& outputs) {
    require(outputs.cols() == keys.rows(), ErrorCode::DimensionMismatch,
            "outputs has " + std::to_string(outputs.cols()) + " columns, keys has " + std::to_string(keys.rows()) +
                " rows");
    if (keys.rows() == 0) {
        return 0.0;
    }
    return logdet_identity_plus_gram(outputs * keys);
}

/**
 * @brief All three proxies for the retained entries of a cache, with u_i = v_i.
 *
 * When query_cov is given, the closed-form capacity with identity noise is
 * added as well.
 */
inline CapacityReport capacity_report(const KvCache& cache, std::span<const std::size_t> retained, std::size_t budget,
                                      const Matrix* query_cov = nullptr) {
    validate_index_set(retained, cache.size());
    const Matrix keys = cache.keys.select_rows(retained);
    const Matrix outputs = cache.values.select_rows(retained).transpose();
    CapacityReport report;
    report.k_capacity = k_capacity(keys);
    report.u_capacity = retained.empty() ? 0.0 : u_capacity(outputs);
    report.ku_capacity = retained.empty() ? 0.0 : ku_capacity(keys, outputs);
    if (query_cov != nullptr) {
        require(query_cov->rows() == cache.d_key() && query_cov->cols() == cache.d_key(),
                ErrorCode::DimensionMismatch, "query covariance must be d_key x d_key");
        ChannelSpec spec{keys, retained.empty() ? Matrix(cache.d_value(), 0) : outputs, *query_cov,
                         Matrix::identity(cache.d_value()), Vector(cache.d_key(), 0.0)};
        report.exact_capacity = exact_capacity(spec);
    }
    report.retained = retained.size();
    report.budget = budget;
    return report;
}

/// Field-wise mean over reports (one per layer for a given input).
inline CapacityReport aggregate_layers(std::span<const CapacityReport> reports) {
    require(!reports.empty(), ErrorCode::EmptySequence, "no reports to aggregate");
    CapacityReport out;
    double exact_sum = 0.0;
    bool all_exact = true;
    bool uniform = true;
    double retained_sum = 0.0;
    double budget_sum = 0.0;
    for (const auto& r : reports) {
        out.k_capacity += r.k_capacity;
        out.u_capacity += r.u_capacity;
        out.ku_capacity += r.ku_capacity;
        if (r.exact_capacity) {
            exact_sum += *r.exact_capacity;
        } else {
            all_exact = false;
        }
        uniform = uniform && r.retained == reports.front().retained && r.budget == reports.front().budget;
        retained_sum += static_cast<double>(r.retained);
        budget_sum += static_cast<double>(r.budget);
    }
    const double n = static_cast<double>(reports.size());
    out.k_capacity /= n;
    out.u_capacity /= n;
    out.ku_capacity /= n;
    if (all_exact) {
        out.exact_capacity = exact_sum / n;
    }
    if (uniform) {
        out.retained = reports.front().retained;
        out.budget = reports.front().budget;
    } else {
        // Non-uniform budgets: report the floor of the means.
        out.retained = static_cast<std::size_t>(std::floor(retained_sum / n));
        out.budget = static_cast<std::size_t>(std::floor(budget_sum / n));
    }
    return out;
}

struct HeadReport {
    std::uint32_t layer = 0;
    std::uint32_t head = 0;
    CapacityReport report;
};

/// Averages heads within each layer, then averages the layer means.
inline CapacityReport aggregate_heads_then_layers(std::span<const HeadReport> reports) {
    require(!reports.empty(), ErrorCode::EmptySequence, "no reports to aggregate");
    std::map<std::uint32_t, std::vector<CapacityReport>> by_layer;
    for (const auto& r : reports) {
        by_layer[r.layer].push_back(r.report);
    }
    std::vector<CapacityReport> layer_means;
    layer_means.reserve(by_layer.size());
    for (const auto& [layer, heads] : by_layer) {
        layer_means.push_back(aggregate_layers(heads));
    }
    return aggregate_layers(layer_means);
}

}  // namespace capkv
