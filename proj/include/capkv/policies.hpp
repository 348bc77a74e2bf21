// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "capkv/cache.hpp"
#include "capkv/linalg.hpp"

namespace capkv {

using Scores = std::vector<double>;

enum class PolicyKind { capkv, expected_attention, keydiff, knorm, snapkv, sink };

inline constexpr std::string_view to_string(PolicyKind kind) {
    switch (kind) {
    case PolicyKind::capkv: return "capkv";
    case PolicyKind::expected_attention: return "expected_attention";
    case PolicyKind::keydiff: return "keydiff";
    case PolicyKind::knorm: return "knorm";
    case PolicyKind::snapkv: return "snapkv";
    case PolicyKind::sink: return "sink";
    }
    return "unknown";
}

/// Accepts the canonical names plus "ea" for expected attention.
inline PolicyKind parse_policy_kind(std::string_view name) {
    for (PolicyKind k : {PolicyKind::capkv, PolicyKind::expected_attention, PolicyKind::keydiff, PolicyKind::knorm,
                         PolicyKind::snapkv, PolicyKind::sink}) {
        if (name == to_string(k)) {
            return k;
        }
    }
    if (name == "ea") {
        return PolicyKind::expected_attention;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown policy '" + std::string(name) + "'");
}

struct PolicyConfig {
    PolicyKind kind = PolicyKind::capkv;
    double tau = 5.0;
    std::size_t window = 32;
    std::size_t sink_initial = 4;
    std::optional<std::size_t> sink_recent;  // defaults to budget - sink_initial

    void validate() const {
        require(tau >= 0.0 && std::isfinite(tau), ErrorCode::InvalidArgument, "tau must be >= 0");
        require(window >= 1, ErrorCode::InvalidArgument, "window must be >= 1");
    }

    friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

inline nlohmann::ordered_json to_json(const PolicyConfig& cfg) {
    nlohmann::ordered_json j;
    j["kind"] = std::string(to_string(cfg.kind));
    j["tau"] = cfg.tau;
    j["window"] = cfg.window;
    j["sink_initial"] = cfg.sink_initial;
    j["sink_recent"] = cfg.sink_recent ? nlohmann::ordered_json(*cfg.sink_recent) : nlohmann::ordered_json(nullptr);
    return j;
}

/// Missing fields keep their defaults; unknown fields are rejected.
inline PolicyConfig policy_from_json(const nlohmann::json& j) {
    require(j.is_object(), ErrorCode::InvalidArgument, "policy config must be a JSON object");
    static const std::set<std::string> known{"kind", "tau", "window", "sink_initial", "sink_recent"};
    for (const auto& [key, _] : j.items()) {
        require(known.contains(key), ErrorCode::InvalidArgument, "unknown policy field '" + key + "'");
    }
    PolicyConfig cfg;
    try {
        if (j.contains("kind")) {
            cfg.kind = parse_policy_kind(j.at("kind").get<std::string>());
        }
        if (j.contains("tau")) {
            cfg.tau = j.at("tau").get<double>();
        }
        if (j.contains("window")) {
            cfg.window = j.at("window").get<std::size_t>();
        }
        if (j.contains("sink_initial")) {
            cfg.sink_initial = j.at("sink_initial").get<std::size_t>();
        }
        if (j.contains("sink_recent") && !j.at("sink_recent").is_null()) {
            cfg.sink_recent = j.at("sink_recent").get<std::size_t>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("bad policy field: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

/**
 * @brief Empirical query statistics: mean and (unbiased) covariance.
 *
 * The covariance is only meaningful once count >= 2; with a single query
 * it is the zero matrix and has_cov() is false.
 */
struct QueryStats {
    Vector mean;
    Matrix cov;
    std::size_t count = 0;

    bool has_cov() const noexcept { return count >= 2; }

    static QueryStats from_queries(const Matrix& queries) {
        require(queries.rows() >= 1, ErrorCode::InvalidArgument, "query statistics need at least one query");
        const std::size_t d = queries.cols();
        QueryStats s;
        s.count = queries.rows();
        s.mean.assign(d, 0.0);
        for (std::size_t t = 0; t < queries.rows(); ++t) {
            for (std::size_t j = 0; j < d; ++j) {
                s.mean[j] += queries(t, j);
            }
        }
        for (double& x : s.mean) {
            x /= static_cast<double>(s.count);
        }
        s.cov = Matrix(d, d);
        if (s.count >= 2) {
            Vector c(d);
            for (std::size_t t = 0; t < queries.rows(); ++t) {
                for (std::size_t j = 0; j < d; ++j) {
                    c[j] = queries(t, j) - s.mean[j];
                }
                for (std::size_t a = 0; a < d; ++a) {
                    for (std::size_t b = 0; b <= a; ++b) {
                        s.cov(a, b) += c[a] * c[b];
                    }
                }
            }
            const double denom = static_cast<double>(s.count - 1);
            for (std::size_t a = 0; a < d; ++a) {
                for (std::size_t b = 0; b <= a; ++b) {
                    s.cov(a, b) /= denom;
                    s.cov(b, a) = s.cov(a, b);
                }
            }
        }
        return s;
    }
};

/// Welford accumulator used while streaming queries one at a time.
class RunningQueryStats {
public:
    explicit RunningQueryStats(std::size_t dim) : m_mean(dim, 0.0), m_scatter(dim, dim) {}

    void add(std::span<const double> q) {
        require(q.size() == m_mean.size(), ErrorCode::DimensionMismatch, "query dimension");
        ++m_count;
        const std::size_t d = m_mean.size();
        Vector delta(d);
        for (std::size_t j = 0; j < d; ++j) {
            delta[j] = q[j] - m_mean[j];
            m_mean[j] += delta[j] / static_cast<double>(m_count);
        }
        for (std::size_t a = 0; a < d; ++a) {
            const double after = q[a] - m_mean[a];
            for (std::size_t b = 0; b < d; ++b) {
                m_scatter(a, b) += after * delta[b];
            }
        }
    }

    std::size_t count() const noexcept { return m_count; }

    QueryStats snapshot() const {
        QueryStats s;
        s.mean = m_mean;
        s.count = m_count;
        s.cov = Matrix(m_mean.size(), m_mean.size());
        if (m_count >= 2) {
            for (std::size_t a = 0; a < s.cov.rows(); ++a) {
                for (std::size_t b = 0; b <= a; ++b) {
                    const double v = 0.5 * (m_scatter(a, b) + m_scatter(b, a)) / static_cast<double>(m_count - 1);
                    s.cov(a, b) = v;
                    s.cov(b, a) = v;
                }
            }
        }
        return s;
    }

private:
    Vector m_mean;
    Matrix m_scatter;
    std::size_t m_count = 0;
};

// ---------------------------------------------------------------------------
// CapKV
// ---------------------------------------------------------------------------

/**
 * Query-alignment weights w_i = exp(tau k_i^T mu - max_j tau k_j^T mu).
 * The max-logit shift keeps max_i w_i = 1 and is part of the definition.
 */
inline Vector capkv_weights(const Matrix& keys, std::span<const double> query_mean, double tau) {
    require(query_mean.size() == keys.cols(), ErrorCode::DimensionMismatch,
            "query mean dim " + std::to_string(query_mean.size()) + " != key dim " + std::to_string(keys.cols()));
    require(tau >= 0.0, ErrorCode::InvalidArgument, "tau must be >= 0");
    Vector logits(keys.rows());
    for (std::size_t i = 0; i < keys.rows(); ++i) {
        logits[i] = tau * dot(keys.row(i), query_mean);
    }
    if (logits.empty()) {
        return logits;
    }
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    for (double& l : logits) {
        l = std::exp(l - max_logit);
    }
    return logits;
}

/// A = I + sum_i w_i v_i v_i^T, accumulated in entry order.
inline Matrix capacity_matrix(const Matrix& values, std::span<const double> weights) {
    require(weights.size() == values.rows(), ErrorCode::DimensionMismatch, "one weight per value row");
    const std::size_t d = values.cols();
    Matrix a = Matrix::identity(d);
    for (std::size_t i = 0; i < values.rows(); ++i) {
        const double w = weights[i];
        if (w == 0.0) {
            continue;
        }
        auto v = values.row(i);
        for (std::size_t r = 0; r < d; ++r) {
            const double wr = w * v[r];
            auto ar = a.row(r);
            for (std::size_t c = 0; c <= r; ++c) {
                ar[c] += wr * v[c];
            }
        }
    }
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < r; ++c) {
            a(c, r) = a(r, c);
        }
    }
    return a;
}

/**
 * @brief CapKV leverage scores s_i = w_i v_i^T A^{-1} v_i over all N entries.
 *
 * Output directions are the value vectors themselves. Cost is O(N d^2 + d^3)
 * in the value dimension d.
 */
inline Scores score_capkv(const KvCache& cache, const QueryStats& stats, double tau) {
    require(cache.size() > 0, ErrorCode::EmptyCache, "CapKV needs a nonempty cache");
    const Vector w = capkv_weights(cache.keys, stats.mean, tau);
    const SpdFactor factor = cholesky_factorize_robust(capacity_matrix(cache.values, w));
    Scores s(cache.size());
    Vector y(cache.d_value());
    for (std::size_t i = 0; i < cache.size(); ++i) {
        auto v = cache.values.row(i);
        std::copy(v.begin(), v.end(), y.begin());
        factor.forward_solve(y);
        s[i] = w[i] * squared_norm(y);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Squared key norms. With retain_low the sign flips so small-norm keys rank first.
inline Scores score_knorm(const KvCache& cache, bool retain_low = false) {
    require(cache.size() > 0, ErrorCode::EmptyCache, "Knorm needs a nonempty cache");
    Scores s(cache.size());
    for (std::size_t i = 0; i < cache.size(); ++i) {
        const double n2 = squared_norm(cache.keys.row(i));
        s[i] = retain_low ? -n2 : n2;
    }
    return s;
}

/**
 * Negative cosine similarity to the mean key. Zero keys score 0. Throws
 * DegenerateAnchor when the mean key vanishes.
 */
inline Scores score_keydiff(const KvCache& cache) {
    require(cache.size() > 0, ErrorCode::EmptyCache, "KeyDiff needs a nonempty cache");
    Vector anchor(cache.d_key(), 0.0);
    for (std::size_t i = 0; i < cache.size(); ++i) {
        auto k = cache.keys.row(i);
        for (std::size_t j = 0; j < anchor.size(); ++j) {
            anchor[j] += k[j];
        }
    }
    for (double& x : anchor) {
        x /= static_cast<double>(cache.size());
    }
    const double anchor_norm = norm(anchor);
    require(anchor_norm > 0.0, ErrorCode::DegenerateAnchor, "mean key is zero");
    Scores s(cache.size());
    for (std::size_t i = 0; i < cache.size(); ++i) {
        const double kn = norm(cache.keys.row(i));
        s[i] = kn > 0.0 ? -dot(cache.keys.row(i), anchor) / (kn * anchor_norm) : 0.0;
    }
    return s;
}

/// Mean softmax attention over the trailing min(window, T) queries. Sums to 1.
inline Scores score_snapkv(const KvCache& cache, const Matrix& recent_queries, std::size_t window) {
    require(window >= 1 && recent_queries.rows() >= 1, ErrorCode::EmptyWindow, "SnapKV needs observed queries");
    require(recent_queries.cols() == cache.d_key(), ErrorCode::DimensionMismatch, "query dim != d_key");
    const std::size_t used = std::min(window, recent_queries.rows());
    Scores s(cache.size(), 0.0);
    for (std::size_t t = recent_queries.rows() - used; t < recent_queries.rows(); ++t) {
        const Vector a = attention_weights(cache, recent_queries.row(t));
        for (std::size_t i = 0; i < s.size(); ++i) {
            s[i] += a[i];
        }
    }
    for (double& x : s) {
        x /= static_cast<double>(used);
    }
    return s;
}

/// Log of the expected exponential attention, k^T mu + 1/2 k^T Lambda k.
inline Scores score_expected_attention(const KvCache& cache, const QueryStats& stats) {
    require(cache.size() > 0, ErrorCode::EmptyCache, "expected attention needs a nonempty cache");
    require(stats.mean.size() == cache.d_key() && stats.cov.rows() == cache.d_key() &&
                stats.cov.cols() == cache.d_key(),
            ErrorCode::DimensionMismatch, "query statistics do not match key dimension");
    Scores s(cache.size());
    for (std::size_t i = 0; i < cache.size(); ++i) {
        auto k = cache.keys.row(i);
        const Vector lk = stats.cov * k;
        s[i] = dot(k, stats.mean) + 0.5 * dot(k, lk);
    }
    return s;
}

/// 1 for the first min(sink_initial, budget) positions and the trailing remainder of the budget.
inline Scores score_sink(std::size_t n, std::size_t budget, std::size_t sink_initial) {
    require(budget <= n, ErrorCode::BudgetExceedsCache,
            "budget " + std::to_string(budget) + " > cache size " + std::to_string(n));
    const std::size_t initial = std::min(sink_initial, budget);
    const std::size_t recent = budget - initial;
    Scores s(n, 0.0);
    for (std::size_t i = 0; i < initial; ++i) {
        s[i] = 1.0;
    }
    for (std::size_t i = n - recent; i < n; ++i) {
        s[i] = 1.0;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

struct EvictionResult {
    IndexSet retained;
    Scores scores;
    PolicyConfig policy;
};

/// budget = round((1 - ratio) N) for ratio in the open interval (0, 1).
inline std::size_t budget_for_ratio(std::size_t n, double ratio) {
    require(ratio > 0.0 && ratio < 1.0, ErrorCode::InvalidArgument, "compression ratio must be in (0, 1)");
    const auto budget = static_cast<std::size_t>(std::llround((1.0 - ratio) * static_cast<double>(n)));
    require(budget >= 1, ErrorCode::InvalidArgument, "compression ratio leaves an empty budget");
    return budget;
}

/**
 * @brief Top-budget indices by score; ties go to the lower index.
 *
 * Returned in ascending positional order.
 */
inline IndexSet top_k(std::span<const double> scores, std::size_t budget) {
    require(budget >= 1, ErrorCode::InvalidArgument, "budget must be >= 1");
    require(budget <= scores.size(), ErrorCode::BudgetExceedsCache,
            "budget " + std::to_string(budget) + " > cache size " + std::to_string(scores.size()));
    for (double s : scores) {
        require(!std::isnan(s), ErrorCode::InvalidArgument, "NaN eviction score");
    }
    IndexSet order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto better = [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    };
    if (budget < order.size()) {
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(budget), order.end(), better);
        order.resize(budget);
    }
    std::sort(order.begin(), order.end());
    return order;
}

inline EvictionResult evict(const KvCache& cache, Scores scores, std::size_t budget, const PolicyConfig& policy = {}) {
    require(scores.size() == cache.size(), ErrorCode::DimensionMismatch, "one score per cache entry");
    EvictionResult r;
    r.retained = top_k(scores, budget);
    r.scores = std::move(scores);
    r.policy = policy;
    return r;
}

/// Side inputs a policy may consume.
struct ScoringInputs {
    const QueryStats* stats = nullptr;
    const Matrix* recent_queries = nullptr;
    bool knorm_retain_low = false;
};

/// Per-token scores of any policy. KeyDiff with a vanishing anchor falls back to all zeros.
inline Scores score_policy(const PolicyConfig& policy, const KvCache& cache, std::size_t budget,
                           const ScoringInputs& inputs) {
    policy.validate();
    switch (policy.kind) {
    case PolicyKind::capkv:
        require(inputs.stats != nullptr, ErrorCode::InvalidArgument, "CapKV needs query statistics");
        return score_capkv(cache, *inputs.stats, policy.tau);
    case PolicyKind::expected_attention:
        require(inputs.stats != nullptr && inputs.stats->has_cov(), ErrorCode::InvalidArgument,
                "expected attention needs query mean and covariance (>= 2 queries)");
        return score_expected_attention(cache, *inputs.stats);
    case PolicyKind::keydiff:
        try {
            return score_keydiff(cache);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::DegenerateAnchor) {
                throw;
            }
            return Scores(cache.size(), 0.0);
        }
    case PolicyKind::knorm:
        return score_knorm(cache, inputs.knorm_retain_low);
    case PolicyKind::snapkv:
        require(inputs.recent_queries != nullptr, ErrorCode::EmptyWindow, "SnapKV needs observed queries");
        return score_snapkv(cache, *inputs.recent_queries, policy.window);
    case PolicyKind::sink: {
        const std::size_t initial = std::min(policy.sink_initial, budget);
        require(!policy.sink_recent || *policy.sink_recent == budget - initial, ErrorCode::InvalidArgument,
                "sink_recent must equal budget - sink_initial");
        return score_sink(cache.size(), budget, policy.sink_initial);
    }
    }
    throw Error(ErrorCode::InvalidArgument, "unhandled policy");
}

/// Scores then evicts down to budget.
inline EvictionResult run_policy(const PolicyConfig& policy, const KvCache& cache, std::size_t budget,
                                 const ScoringInputs& inputs) {
    require(budget <= cache.size(), ErrorCode::BudgetExceedsCache,
            "budget " + std::to_string(budget) + " > cache size " + std::to_string(cache.size()));
    return evict(cache, score_policy(policy, cache, budget, inputs), budget, policy);
}

}  // namespace capkv
