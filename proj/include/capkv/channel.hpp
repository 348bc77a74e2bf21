// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <thread>
#include <vector>

#include <boost/math/special_functions/trigamma.hpp>

#include "capkv/linalg.hpp"
#include "capkv/rng.hpp"

namespace capkv {

/**
 * @brief Linear-Gaussian surrogate channel Y = U_C K_C q + eps.
 *
 * q ~ N(query_mean, query_cov), eps ~ N(0, noise_cov). keys is |C| x d,
 * outputs is m x |C|. An empty retained set is expressed as a 0 x d key
 * matrix and an m x 0 output matrix.
 */
struct ChannelSpec {
    Matrix keys;
    Matrix outputs;
    Matrix query_cov;
    Matrix noise_cov;
    Vector query_mean;

    std::size_t key_dim() const noexcept { return query_cov.rows(); }
    std::size_t output_dim() const noexcept { return noise_cov.rows(); }
    std::size_t retained() const noexcept { return keys.rows(); }

    void validate() const {
        require(query_cov.square() && noise_cov.square(), ErrorCode::DimensionMismatch,
                "covariances must be square");
        require(keys.cols() == key_dim(), ErrorCode::DimensionMismatch, "keys width != query dim");
        require(outputs.rows() == output_dim(), ErrorCode::DimensionMismatch, "outputs height != noise dim");
        require(outputs.cols() == keys.rows(), ErrorCode::DimensionMismatch, "outputs width != retained count");
        require(query_mean.size() == key_dim(), ErrorCode::DimensionMismatch, "query mean dimension");
    }

    /// Effective channel matrix U_C K_C (m x d).
    Matrix effective_channel() const {
        if (keys.rows() == 0) {
            return Matrix(output_dim(), key_dim());
        }
        return outputs * keys;
    }
};

/// Isotropic spec: query_cov = sigma2 I, noise_cov = eps I, zero mean.
inline ChannelSpec isotropic_channel(Matrix keys, Matrix outputs, double query_var = 1.0, double noise_var = 1.0) {
    const std::size_t d = keys.cols();
    const std::size_t m = outputs.rows();
    ChannelSpec spec{std::move(keys), std::move(outputs), query_var * Matrix::identity(d),
                     noise_var * Matrix::identity(m), Vector(d, 0.0)};
    return spec;
}

struct McEstimate {
    double value = 0.0;
    double standard_error = 0.0;
    std::size_t samples = 0;
};

/// Entropy of a Gaussian with the factored covariance, in nats.
inline double gaussian_entropy(const SpdFactor& cov_factor) {
    const double d = static_cast<double>(cov_factor.dim());
    return 0.5 * (d * std::log(2.0 * std::numbers::pi * std::numbers::e) + log_det(cov_factor));
}

/// Covariance of Y: G Lambda G^T + Sigma_noise.
inline Matrix output_covariance(const ChannelSpec& spec) {
    spec.validate();
    const Matrix g = spec.effective_channel();
    Matrix cov = g * spec.query_cov * g.transpose() + spec.noise_cov;
    // Symmetrize away rounding.
    for (std::size_t i = 0; i < cov.rows(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            const double v = 0.5 * (cov(i, j) + cov(j, i));
            cov(i, j) = v;
            cov(j, i) = v;
        }
    }
    return cov;
}

/**
 * @brief Closed-form capacity, 1/2 log det(I + Sigma^{-1} G Lambda G^T), in nats.
 *
 * Evaluated through the whitened form I + L^{-1} G Lambda G^T L^{-T} with
 * Sigma = L L^T, which is symmetric and bounded below by I. The query mean
 * never enters.
 */
inline double exact_capacity(const ChannelSpec& spec) {
    spec.validate();
    const std::size_t m = spec.output_dim();
    if (spec.retained() == 0 || m == 0) {
        return 0.0;
    }
    const SpdFactor noise = cholesky_factorize_robust(spec.noise_cov);
    // H = L^{-1} G, column by column.
    Matrix h = spec.effective_channel();
    Vector col(m);
    for (std::size_t c = 0; c < h.cols(); ++c) {
        for (std::size_t r = 0; r < m; ++r) {
            col[r] = h(r, c);
        }
        noise.forward_solve(col);
        for (std::size_t r = 0; r < m; ++r) {
            h(r, c) = col[r];
        }
    }
    Matrix whitened = h * spec.query_cov * h.transpose();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            const double v = 0.5 * (whitened(i, j) + whitened(j, i));
            whitened(i, j) = v;
            whitened(j, i) = v;
        }
        whitened(i, i) += 1.0;
    }
    return 0.5 * log_det(cholesky_factorize_robust(whitened));
}

namespace detail {

/// Mean and centered scatter of one block of samples; blocks merge pairwise (Chan et al.).
struct MomentBlock {
    std::size_t count = 0;
    Vector mean;
    Matrix scatter;

    void merge(const MomentBlock& other) {
        if (other.count == 0) {
            return;
        }
        if (count == 0) {
            *this = other;
            return;
        }
        const double na = static_cast<double>(count);
        const double nb = static_cast<double>(other.count);
        const double n = na + nb;
        const std::size_t m = mean.size();
        Vector delta(m);
        for (std::size_t i = 0; i < m; ++i) {
            delta[i] = other.mean[i] - mean[i];
        }
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                scatter(i, j) += other.scatter(i, j) + delta[i] * delta[j] * na * nb / n;
            }
        }
        for (std::size_t i = 0; i < m; ++i) {
            mean[i] += delta[i] * nb / n;
        }
        count += other.count;
    }
};

inline constexpr std::size_t kMcBlock = 8192;

}  // namespace detail

/**
 * @brief Monte-Carlo plug-in estimate of I(q; Y).
 *
 * Sample j draws from its own counter stream, and moments are accumulated
 * in fixed-size blocks merged in block order, so the estimate is identical
 * for every thread count. The standard error is the exact Wishart spread of
 * the log-determinant of the sample covariance.
 */
inline McEstimate mc_capacity(const ChannelSpec& spec, std::size_t samples, std::uint64_t seed,
                              unsigned threads = 1) {
    spec.validate();
    require(samples >= 1000, ErrorCode::InvalidArgument, "mc_capacity needs at least 1000 samples");
    const std::size_t m = spec.output_dim();
    const std::size_t d = spec.key_dim();
    const Matrix g = spec.effective_channel();
    const SpdFactor query_factor = cholesky_factorize_robust(spec.query_cov);
    const SpdFactor noise_factor = cholesky_factorize_robust(spec.noise_cov);
    const Vector zero_m(m, 0.0);

    const std::size_t n_blocks = (samples + detail::kMcBlock - 1) / detail::kMcBlock;
    std::vector<detail::MomentBlock> blocks(n_blocks);

    auto run_block = [&](std::size_t b) {
        const std::size_t begin = b * detail::kMcBlock;
        const std::size_t end = std::min(samples, begin + detail::kMcBlock);
        Matrix ys(end - begin, m);
        for (std::size_t s = begin; s < end; ++s) {
            CounterRng rng(seed, s);
            const Vector q = sample_gaussian(rng, spec.query_mean, query_factor);
            const Vector eps = sample_gaussian(rng, zero_m, noise_factor);
            auto y = ys.row(s - begin);
            for (std::size_t i = 0; i < m; ++i) {
                double acc = eps[i];
                auto gi = g.row(i);
                for (std::size_t k = 0; k < d; ++k) {
                    acc += gi[k] * q[k];
                }
                y[i] = acc;
            }
        }
        detail::MomentBlock& blk = blocks[b];
        blk.count = end - begin;
        blk.mean.assign(m, 0.0);
        for (std::size_t r = 0; r < ys.rows(); ++r) {
            for (std::size_t i = 0; i < m; ++i) {
                blk.mean[i] += ys(r, i);
            }
        }
        for (double& x : blk.mean) {
            x /= static_cast<double>(blk.count);
        }
        blk.scatter = Matrix(m, m);
        Vector c(m);
        for (std::size_t r = 0; r < ys.rows(); ++r) {
            for (std::size_t i = 0; i < m; ++i) {
                c[i] = ys(r, i) - blk.mean[i];
            }
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j <= i; ++j) {
                    blk.scatter(i, j) += c[i] * c[j];
                }
            }
        }
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < i; ++j) {
                blk.scatter(j, i) = blk.scatter(i, j);
            }
        }
    };

    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n_blocks)));
    if (workers == 1) {
        for (std::size_t b = 0; b < n_blocks; ++b) {
            run_block(b);
        }
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t b = w; b < n_blocks; b += workers) {
                    run_block(b);
                }
            });
        }
    }

    detail::MomentBlock total;
    for (const auto& blk : blocks) {
        total.merge(blk);
    }
    Matrix cov = (1.0 / static_cast<double>(samples - 1)) * total.scatter;

    McEstimate est;
    est.samples = samples;
    if (m == 0) {
        return est;
    }
    const double logdet_y = log_det(cholesky_factorize(cov, 0.0));
    est.value = 0.5 * logdet_y - 0.5 * log_det(noise_factor);
    double var = 0.0;
    const double dof = static_cast<double>(samples - 1);
    for (std::size_t i = 0; i < m; ++i) {
        var += boost::math::trigamma((dof - static_cast<double>(i)) / 2.0);
    }
    est.standard_error = 0.5 * std::sqrt(var);
    return est;
}

/**
 * @brief Eigenvalue form of the isotropic capacity:
 * 1/2 sum_j log(1 + (sigma_q^2 / epsilon) lambda_j) over eigenvalues of a a^T.
 *
 * sigma_q is the query standard deviation, epsilon the noise variance.
 */
inline double small_noise_capacity(const Matrix& a, double sigma_q, double epsilon) {
    require(sigma_q > 0.0 && epsilon > 0.0, ErrorCode::InvalidArgument, "sigma_q and epsilon must be positive");
    if (a.rows() == 0 || a.cols() == 0) {
        return 0.0;
    }
    const double snr = sigma_q * sigma_q / epsilon;
    double acc = 0.0;
    for (double lambda : symmetric_eigenvalues(gram(a))) {
        if (lambda > 0.0) {
            acc += std::log1p(snr * lambda);
        }
    }
    return 0.5 * acc;
}

}  // namespace capkv
