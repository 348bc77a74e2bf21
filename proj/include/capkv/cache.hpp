// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "capkv/linalg.hpp"
#include "capkv/rng.hpp"

namespace capkv {

using IndexSet = std::vector<std::size_t>;

/**
 * @brief Snapshot of one (layer, head) KV cache: N keys, N values and the
 * token position each entry came from.
 */
struct KvCache {
    Matrix keys;    // N x d_key
    Matrix values;  // N x d_value
    std::vector<std::uint32_t> positions;
    std::uint32_t layer = 0;
    std::uint32_t head = 0;

    std::size_t size() const noexcept { return keys.rows(); }
    std::size_t d_key() const noexcept { return keys.cols(); }
    std::size_t d_value() const noexcept { return values.cols(); }

    void validate() const {
        require(keys.rows() == values.rows(), ErrorCode::ShapeMismatch, "keys and values differ in row count");
        require(positions.size() == keys.rows(), ErrorCode::ShapeMismatch, "positions length != N");
        for (std::size_t i = 1; i < positions.size(); ++i) {
            require(positions[i - 1] < positions[i], ErrorCode::InvalidArgument, "positions not strictly ascending");
        }
        require(keys.all_finite() && values.all_finite(), ErrorCode::InvalidArgument, "non-finite cache entries");
    }

    /// Entries at the given (ascending) indices.
    KvCache subset(std::span<const std::size_t> indices) const {
        KvCache out;
        out.keys = keys.select_rows(indices);
        out.values = values.select_rows(indices);
        out.positions.reserve(indices.size());
        for (std::size_t i : indices) {
            out.positions.push_back(positions[i]);
        }
        out.layer = layer;
        out.head = head;
        return out;
    }
};

/// Stacked query vectors, one per row (T x d_key).
struct QueryStream {
    Matrix queries;

    std::size_t size() const noexcept { return queries.rows(); }

    /// Rows [begin, end).
    QueryStream slice(std::size_t begin, std::size_t end) const {
        IndexSet idx(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        return {queries.select_rows(idx)};
    }
};

/**
 * @brief Parameters of the Gaussian-mixture cache generator.
 *
 * Key and value cluster centers are N(0, I / d); within-cluster noise has
 * per-coordinate standard deviation cluster_spread / sqrt(d), so the spread
 * is relative to a unit-norm center. Queries concentrate around a scaled
 * direction built from a random subset of key centers.
 */
struct SyntheticSpec {
    std::size_t n_tokens = 256;
    std::size_t d_key = 64;
    std::size_t d_value = 64;
    std::size_t n_clusters = 8;
    double cluster_spread = 0.5;
    std::uint64_t seed = 0;
    std::size_t n_queries = 64;
    double query_scale = 3.0;
    double query_drift = 0.0;

    void validate() const {
        require(n_tokens >= 1, ErrorCode::InvalidArgument, "n_tokens must be >= 1");
        require(d_key >= 1 && d_value >= 1, ErrorCode::InvalidArgument, "dimensions must be >= 1");
        require(n_clusters >= 1 && n_clusters <= n_tokens, ErrorCode::InvalidArgument,
                "n_clusters must be in [1, n_tokens]");
        require(cluster_spread > 0.0 && std::isfinite(cluster_spread), ErrorCode::InvalidArgument,
                "cluster_spread must be > 0");
        require(n_queries >= 1, ErrorCode::InvalidArgument, "n_queries must be >= 1");
        require(query_scale >= 0.0, ErrorCode::InvalidArgument, "query_scale must be >= 0");
    }
};

namespace detail {

inline double round_to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

inline void round_matrix_to_f32(Matrix& m) {
    for (double& x : m.data()) {
        x = round_to_f32(x);
    }
}

inline Matrix gaussian_rows(CounterRng& rng, std::size_t rows, std::size_t cols, double scale) {
    Matrix m(rows, cols);
    for (double& x : m.data()) {
        x = scale * rng.normal();
    }
    return m;
}

}  // namespace detail

/**
 * @brief Samples a clustered cache and a query stream.
 *
 * Entries are rounded to float32 so the result survives a KVPK round trip
 * bit for bit. Output depends only on the spec (including its seed).
 */
inline std::pair<KvCache, QueryStream> generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const double key_center_scale = 1.0 / std::sqrt(static_cast<double>(spec.d_key));
    const double value_center_scale = 1.0 / std::sqrt(static_cast<double>(spec.d_value));

    CounterRng center_rng(spec.seed, 1);
    Matrix key_centers = detail::gaussian_rows(center_rng, spec.n_clusters, spec.d_key, key_center_scale);
    Matrix value_centers = detail::gaussian_rows(center_rng, spec.n_clusters, spec.d_value, value_center_scale);
    // Per-cluster magnitude so norms differ between topics.
    Vector cluster_gain(spec.n_clusters);
    for (double& g : cluster_gain) {
        g = std::exp(0.5 * center_rng.normal());
    }

    // Balanced assignment, shuffled.
    std::vector<std::size_t> assignment(spec.n_tokens);
    for (std::size_t t = 0; t < spec.n_tokens; ++t) {
        assignment[t] = t % spec.n_clusters;
    }
    CounterRng shuffle_rng(spec.seed, 2);
    for (std::size_t i = spec.n_tokens; i > 1; --i) {
        std::swap(assignment[i - 1], assignment[shuffle_rng.below(i)]);
    }

    KvCache cache;
    cache.keys = Matrix(spec.n_tokens, spec.d_key);
    cache.values = Matrix(spec.n_tokens, spec.d_value);
    cache.positions.resize(spec.n_tokens);
    CounterRng token_rng(spec.seed, 3);
    const double key_noise = spec.cluster_spread * key_center_scale;
    const double value_noise = spec.cluster_spread * value_center_scale;
    for (std::size_t t = 0; t < spec.n_tokens; ++t) {
        const std::size_t c = assignment[t];
        auto k = cache.keys.row(t);
        auto v = cache.values.row(t);
        for (std::size_t j = 0; j < spec.d_key; ++j) {
            k[j] = cluster_gain[c] * key_centers(c, j) + key_noise * token_rng.normal();
        }
        for (std::size_t j = 0; j < spec.d_value; ++j) {
            v[j] = cluster_gain[c] * value_centers(c, j) + value_noise * token_rng.normal();
        }
        cache.positions[t] = static_cast<std::uint32_t>(t);
    }
    detail::round_matrix_to_f32(cache.keys);
    detail::round_matrix_to_f32(cache.values);

    // Query mean: scaled unit direction of a random subset of key centers.
    CounterRng query_rng(spec.seed, 4);
    const std::size_t focus = std::max<std::size_t>(1, spec.n_clusters / 4);
    Vector direction(spec.d_key, 0.0);
    for (std::size_t f = 0; f < focus; ++f) {
        const std::size_t c = query_rng.below(spec.n_clusters);
        for (std::size_t j = 0; j < spec.d_key; ++j) {
            direction[j] += key_centers(c, j);
        }
    }
    const double dir_norm = norm(direction);
    const double root_d = std::sqrt(static_cast<double>(spec.d_key));
    Vector drift_dir(spec.d_key);
    query_rng.fill_normal(drift_dir);
    QueryStream stream{Matrix(spec.n_queries, spec.d_key)};
    for (std::size_t t = 0; t < spec.n_queries; ++t) {
        auto q = stream.queries.row(t);
        for (std::size_t j = 0; j < spec.d_key; ++j) {
            const double mean = dir_norm > 0.0 ? spec.query_scale * root_d * direction[j] / dir_norm : 0.0;
            q[j] = mean + spec.query_drift * static_cast<double>(t) * drift_dir[j] / root_d +
                   spec.query_scale * query_rng.normal();
        }
    }
    detail::round_matrix_to_f32(stream.queries);
    return {std::move(cache), std::move(stream)};
}

/// Softmax attention weights softmax(q^T k_i / sqrt(d_key)).
inline Vector attention_weights(const KvCache& cache, std::span<const double> query) {
    require(cache.size() > 0, ErrorCode::EmptyCache, "attention over an empty cache");
    require(query.size() == cache.d_key(), ErrorCode::DimensionMismatch, "query dim != d_key");
    const double scale = 1.0 / std::sqrt(static_cast<double>(cache.d_key()));
    Vector logits(cache.size());
    for (std::size_t i = 0; i < cache.size(); ++i) {
        logits[i] = scale * dot(cache.keys.row(i), query);
    }
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double& l : logits) {
        l = std::exp(l - max_logit);
        total += l;
    }
    for (double& l : logits) {
        l /= total;
    }
    return logits;
}

/// Attention output sum_i a_i v_i (the output projection is taken as identity).
inline Vector attention_output(const KvCache& cache, std::span<const double> query) {
    const Vector a = attention_weights(cache, query);
    Vector out(cache.d_value(), 0.0);
    for (std::size_t i = 0; i < cache.size(); ++i) {
        auto v = cache.values.row(i);
        for (std::size_t j = 0; j < out.size(); ++j) {
            out[j] += a[i] * v[j];
        }
    }
    return out;
}

/// Checks that indices are unique, ascending and inside [0, n).
inline void validate_index_set(std::span<const std::size_t> indices, std::size_t n) {
    for (std::size_t i = 0; i < indices.size(); ++i) {
        require(indices[i] < n, ErrorCode::InvalidArgument,
                "index " + std::to_string(indices[i]) + " out of range for cache of " + std::to_string(n));
        require(i == 0 || indices[i - 1] < indices[i], ErrorCode::InvalidArgument,
                "indices must be unique and ascending");
    }
}

/**
 * @brief Mean relative output error of the retained cache over the probe queries:
 * ||Attn_full(q) - Attn_retained(q)|| / max(||Attn_full(q)||, 1e-12).
 */
inline double output_distortion(const KvCache& full, std::span<const std::size_t> retained, const Matrix& probes) {
    require(!retained.empty(), ErrorCode::EmptySubset, "retained subset is empty");
    require(probes.rows() > 0, ErrorCode::InvalidArgument, "no probe queries");
    validate_index_set(retained, full.size());
    if (retained.size() == full.size()) {
        return 0.0;
    }
    const KvCache kept = full.subset(retained);
    double total = 0.0;
    for (std::size_t p = 0; p < probes.rows(); ++p) {
        const Vector ref = attention_output(full, probes.row(p));
        const Vector got = attention_output(kept, probes.row(p));
        double diff = 0.0;
        for (std::size_t j = 0; j < ref.size(); ++j) {
            diff += (ref[j] - got[j]) * (ref[j] - got[j]);
        }
        total += std::sqrt(diff) / std::max(norm(ref), 1e-12);
    }
    return total / static_cast<double>(probes.rows());
}

}  // namespace capkv
