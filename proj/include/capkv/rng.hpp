// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

#include "capkv/linalg.hpp"

namespace capkv {

/**
 * @brief Counter-based generator: output i of stream s under seed k is a pure
 * hash of (k, s, i).
 *
 * Any partition of work over streams reproduces the same draws, which is what
 * lets Monte-Carlo estimates and synthetic data stay identical across thread
 * counts.
 */
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : m_key(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

    std::uint64_t next_u64() noexcept { return mix(m_key + (m_counter++) * 0x9e3779b97f4a7c15ULL); }

    /// Uniform in the open interval (0, 1).
    double uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; pairs are cached.
    double normal() noexcept {
        if (m_has_spare) {
            m_has_spare = false;
            return m_spare;
        }
        const double r = std::sqrt(-2.0 * std::log(uniform()));
        const double theta = 2.0 * std::numbers::pi * uniform();
        m_spare = r * std::sin(theta);
        m_has_spare = true;
        return r * std::cos(theta);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    void fill_normal(std::span<double> out) noexcept {
        for (double& x : out) {
            x = normal();
        }
    }

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t m_key;
    std::uint64_t m_counter = 0;
    double m_spare = 0.0;
    bool m_has_spare = false;
};

/// Derives an independent child seed; used to give replicates and partitions their own streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
    return CounterRng::mix(seed * 0xd1342543de82ef95ULL + CounterRng::mix(salt));
}

/**
 * @brief Draws from N(mean, L L^T) given the Cholesky factor of the covariance.
 */
inline Vector sample_gaussian(CounterRng& rng, std::span<const double> mean, const SpdFactor& cov_factor) {
    const std::size_t d = cov_factor.dim();
    Vector z(d);
    rng.fill_normal(z);
    Vector x(mean.begin(), mean.end());
    const Matrix& l = cov_factor.lower();
    for (std::size_t i = 0; i < d; ++i) {
        auto li = l.row(i);
        double acc = 0.0;
        for (std::size_t k = 0; k <= i; ++k) {
            acc += li[k] * z[k];
        }
        x[i] += acc;
    }
    return x;
}

}  // namespace capkv
