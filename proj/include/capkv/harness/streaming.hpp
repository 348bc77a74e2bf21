// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capkv/cache.hpp"
#include "capkv/harness/tables.hpp"
#include "capkv/policies.hpp"
#include "capkv/rng.hpp"

namespace capkv::harness {

struct StreamConfig {
    std::size_t eviction_period = 512;
    std::size_t budget = 1024;
    std::size_t total_steps = 4096;
    PolicyConfig policy;
    std::size_t d_key = 64;
    std::size_t d_value = 64;
    std::size_t n_clusters = 8;
    double drift = 0.01;
    std::uint64_t seed = 0;

    void validate() const {
        require(eviction_period >= 1, ErrorCode::InvalidArgument, "eviction_period must be >= 1");
        require(budget >= 1, ErrorCode::InvalidArgument, "budget must be >= 1");
        require(total_steps >= 1, ErrorCode::InvalidArgument, "total_steps must be >= 1");
        require(d_key >= 1 && d_value >= 1 && n_clusters >= 1, ErrorCode::InvalidArgument,
                "dimensions and clusters must be >= 1");
        require(drift >= 0.0, ErrorCode::InvalidArgument, "drift must be >= 0");
        policy.validate();
    }
};

inline nlohmann::ordered_json to_json(const StreamConfig& cfg) {
    return {{"eviction_period", cfg.eviction_period}, {"budget", cfg.budget}, {"total_steps", cfg.total_steps},
            {"policy", to_json(cfg.policy)},         {"d_key", cfg.d_key},   {"d_value", cfg.d_value},
            {"n_clusters", cfg.n_clusters},          {"drift", cfg.drift},   {"seed", cfg.seed}};
}

/**
 * @brief Emits one synthetic (key, value, query) triple per decoding step.
 *
 * Tokens come from a Gaussian mixture whose shared offset random-walks with
 * standard deviation `drift` per step, so later tokens and queries wander
 * away from the prompt distribution.
 */
class TokenGenerator {
public:
    TokenGenerator(std::size_t d_key, std::size_t d_value, std::size_t n_clusters, double drift, std::uint64_t seed)
        : m_d_key(d_key), m_d_value(d_value), m_drift(drift), m_rng(seed, 21), m_offset(d_key, 0.0),
          m_query_dir(d_key, 0.0) {
        const double ks = 1.0 / std::sqrt(static_cast<double>(d_key));
        const double vs = 1.0 / std::sqrt(static_cast<double>(d_value));
        CounterRng init(seed, 20);
        m_key_centers = Matrix(n_clusters, d_key);
        m_value_centers = Matrix(n_clusters, d_value);
        for (double& x : m_key_centers.data()) {
            x = ks * init.normal();
        }
        for (double& x : m_value_centers.data()) {
            x = vs * init.normal();
        }
        const std::size_t focus = std::max<std::size_t>(1, n_clusters / 4);
        for (std::size_t f = 0; f < focus; ++f) {
            auto c = m_key_centers.row(init.below(n_clusters));
            for (std::size_t j = 0; j < d_key; ++j) {
                m_query_dir[j] += c[j];
            }
        }
        const double dn = norm(m_query_dir);
        for (double& x : m_query_dir) {
            x = dn > 0.0 ? x / dn : 0.0;
        }
    }

    struct Token {
        Vector key;
        Vector value;
        Vector query;
    };

    Token next() {
        const double ks = 1.0 / std::sqrt(static_cast<double>(m_d_key));
        const double vs = 1.0 / std::sqrt(static_cast<double>(m_d_value));
        for (double& x : m_offset) {
            x += m_drift * ks * m_rng.normal();
        }
        const std::size_t c = m_rng.below(m_key_centers.rows());
        Token t{Vector(m_d_key), Vector(m_d_value), Vector(m_d_key)};
        for (std::size_t j = 0; j < m_d_key; ++j) {
            t.key[j] = detail::round_to_f32(m_key_centers(c, j) + m_offset[j] + 0.5 * ks * m_rng.normal());
        }
        for (std::size_t j = 0; j < m_d_value; ++j) {
            t.value[j] = detail::round_to_f32(m_value_centers(c, j) + 0.5 * vs * m_rng.normal());
        }
        const double root_d = std::sqrt(static_cast<double>(m_d_key));
        for (std::size_t j = 0; j < m_d_key; ++j) {
            t.query[j] = detail::round_to_f32(3.0 * root_d * (m_query_dir[j] + m_offset[j]) + 3.0 * m_rng.normal());
        }
        return t;
    }

private:
    std::size_t m_d_key;
    std::size_t m_d_value;
    double m_drift;
    CounterRng m_rng;
    Matrix m_key_centers;
    Matrix m_value_centers;
    Vector m_offset;
    Vector m_query_dir;
};

struct StreamStep {
    std::size_t step = 0;
    std::size_t size_before = 0;  // after appending this step's token
    std::size_t cache_size = 0;   // at the end of the step
    bool evicted = false;
    std::optional<double> distortion;      // only on eviction events
    std::vector<std::uint32_t> retained;   // token positions, only on eviction events
};

/**
 * @brief Decoding-phase eviction: one token appended per step (0-based), and
 * at every step divisible by eviction_period the cache is re-scored and cut
 * back to budget if it has outgrown it.
 *
 * Query statistics are a running mean/covariance over every query observed
 * so far. Distortion on an event compares the retained cache with the
 * unevicted history under that step's query.
 */
inline std::vector<StreamStep> streaming_simulation(const StreamConfig& cfg, bool knorm_retain_low = false) {
    cfg.validate();
    require(cfg.policy.kind != PolicyKind::snapkv, ErrorCode::PolicyUnsupportedInStreaming,
            "SnapKV needs window attention statistics that decoding-phase eviction cannot build");

    TokenGenerator gen(cfg.d_key, cfg.d_value, cfg.n_clusters, cfg.drift, cfg.seed);
    RunningQueryStats running(cfg.d_key);

    std::vector<Vector> keys, values;
    std::vector<std::uint32_t> positions;
    std::vector<Vector> history_keys, history_values;

    std::vector<StreamStep> trace;
    trace.reserve(cfg.total_steps);
    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
        TokenGenerator::Token tok = gen.next();
        running.add(tok.query);
        keys.push_back(tok.key);
        values.push_back(tok.value);
        positions.push_back(static_cast<std::uint32_t>(step));
        history_keys.push_back(tok.key);
        history_values.push_back(tok.value);

        StreamStep row;
        row.step = step;
        row.size_before = keys.size();
        if (step % cfg.eviction_period == 0 && keys.size() > cfg.budget) {
            KvCache cache{Matrix::from_rows(keys), Matrix::from_rows(values), positions, 0, 0};
            const QueryStats stats = running.snapshot();
            const ScoringInputs inputs{&stats, nullptr, knorm_retain_low};
            const EvictionResult res = run_policy(cfg.policy, cache, cfg.budget, inputs);

            std::vector<Vector> kept_keys, kept_values;
            std::vector<std::uint32_t> kept_positions;
            for (std::size_t i : res.retained) {
                kept_keys.push_back(std::move(keys[i]));
                kept_values.push_back(std::move(values[i]));
                kept_positions.push_back(positions[i]);
            }
            keys = std::move(kept_keys);
            values = std::move(kept_values);
            positions = std::move(kept_positions);

            KvCache history{Matrix::from_rows(history_keys), Matrix::from_rows(history_values), {}, 0, 0};
            history.positions.resize(history_keys.size());
            std::iota(history.positions.begin(), history.positions.end(), 0u);
            IndexSet kept_idx(positions.begin(), positions.end());
            Matrix probe(1, cfg.d_key, tok.query);
            row.distortion = output_distortion(history, kept_idx, probe);
            row.evicted = true;
            row.retained = positions;
        }
        row.cache_size = keys.size();
        trace.push_back(std::move(row));
    }
    return trace;
}

inline Table stream_table(const std::vector<StreamStep>& trace, const std::string& hash, std::uint64_t seed) {
    Table t;
    t.header = {"step", "size_before", "cache_size", "evicted", "distortion", "retained", "config_hash", "seed"};
    for (const auto& s : trace) {
        std::string retained;
        for (std::size_t i = 0; i < s.retained.size(); ++i) {
            if (i > 0) {
                retained += ' ';
            }
            retained += std::to_string(s.retained[i]);
        }
        t.rows.push_back({std::to_string(s.step), std::to_string(s.size_before), std::to_string(s.cache_size),
                          s.evicted ? "1" : "0", s.distortion ? format_double(*s.distortion) : "", retained, hash,
                          std::to_string(seed)});
    }
    return t;
}

}  // namespace capkv::harness
