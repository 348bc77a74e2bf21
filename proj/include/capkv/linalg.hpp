// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "capkv/error.hpp"

namespace capkv {

using Vector = std::vector<double>;

/**
 * @brief Dense row-major matrix of doubles.
 *
 * Holds stacked keys (|C| x d), value-induced output directions (m x |C|),
 * covariances and capacity matrices. Dimensions stay small (a few hundred),
 * so no blocking or sparse storage is attempted.
 */
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : m_rows(rows), m_cols(cols), m_data(std::move(data)) {
        require(m_data.size() == rows * cols, ErrorCode::DimensionMismatch,
                "matrix data length " + std::to_string(m_data.size()) + " != " +
                    std::to_string(rows) + "x" + std::to_string(cols));
    }

    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        m_rows = rows.size();
        m_cols = m_rows == 0 ? 0 : rows.begin()->size();
        m_data.reserve(m_rows * m_cols);
        for (const auto& row : rows) {
            require(row.size() == m_cols, ErrorCode::DimensionMismatch, "ragged matrix literal");
            m_data.insert(m_data.end(), row.begin(), row.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m(i, i) = 1.0;
        }
        return m;
    }

    static Matrix diagonal(std::span<const double> diag) {
        Matrix m(diag.size(), diag.size());
        for (std::size_t i = 0; i < diag.size(); ++i) {
            m(i, i) = diag[i];
        }
        return m;
    }

    /// Stacks the given vectors as rows. All vectors must share one length.
    static Matrix from_rows(const std::vector<Vector>& rows, std::size_t cols_if_empty = 0) {
        const std::size_t cols = rows.empty() ? cols_if_empty : rows.front().size();
        Matrix m(rows.size(), cols);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            require(rows[r].size() == cols, ErrorCode::DimensionMismatch, "ragged rows");
            std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
        }
        return m;
    }

    std::size_t rows() const noexcept { return m_rows; }
    std::size_t cols() const noexcept { return m_cols; }
    bool empty() const noexcept { return m_data.empty(); }
    bool square() const noexcept { return m_rows == m_cols; }

    double& operator()(std::size_t r, std::size_t c) { return m_data[r * m_cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return m_data[r * m_cols + c]; }

    std::span<double> row(std::size_t r) { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<const double> row(std::size_t r) const { return {m_data.data() + r * m_cols, m_cols}; }

    const std::vector<double>& data() const noexcept { return m_data; }
    std::vector<double>& data() noexcept { return m_data; }

    Matrix transpose() const {
        Matrix t(m_cols, m_rows);
        for (std::size_t r = 0; r < m_rows; ++r) {
            for (std::size_t c = 0; c < m_cols; ++c) {
                t(c, r) = (*this)(r, c);
            }
        }
        return t;
    }

    /// Rows selected by index, in the given order.
    Matrix select_rows(std::span<const std::size_t> indices) const {
        Matrix out(indices.size(), m_cols);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            require(indices[i] < m_rows, ErrorCode::InvalidArgument, "row index out of range");
            auto src = row(indices[i]);
            std::copy(src.begin(), src.end(), out.row(i).begin());
        }
        return out;
    }

    bool all_finite() const {
        return std::all_of(m_data.begin(), m_data.end(), [](double x) { return std::isfinite(x); });
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<double> m_data;
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), ErrorCode::DimensionMismatch,
            "matmul " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " * " +
                std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out_row = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) {
                continue;
            }
            auto b_row = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out_row[j] += aik * b_row[j];
            }
        }
    }
    return out;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::DimensionMismatch, "matrix sum");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data().size(); ++i) {
        out.data()[i] += b.data()[i];
    }
    return out;
}

inline Matrix operator*(double s, const Matrix& a) {
    Matrix out = a;
    for (double& x : out.data()) {
        x *= s;
    }
    return out;
}

inline Vector operator*(const Matrix& a, std::span<const double> x) {
    require(a.cols() == x.size(), ErrorCode::DimensionMismatch, "matrix-vector product");
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = a.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            acc += r[j] * x[j];
        }
        y[i] = acc;
    }
    return y;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorCode::DimensionMismatch, "dot product");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

inline double frobenius_norm(const Matrix& a) { return norm(a.data()); }

/// Largest |a_ij - a_ji| relative to the largest |a_ij|.
inline double asymmetry(const Matrix& a) {
    double scale = 0.0;
    double worst = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            scale = std::max(scale, std::abs(a(i, j)));
            if (j < i) {
                worst = std::max(worst, std::abs(a(i, j) - a(j, i)));
            }
        }
    }
    return scale == 0.0 ? 0.0 : worst / scale;
}

/// Returns m * m^T.
inline Matrix gram(const Matrix& m) {
    Matrix g(m.rows(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            const double v = dot(m.row(i), m.row(j));
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

/**
 * @brief Cholesky factor L of a symmetric positive-definite matrix, A = L L^T.
 *
 * The factor remembers the diagonal shift that was needed to make the
 * factorization succeed.
 */
class SpdFactor {
public:
    SpdFactor(Matrix lower, double jitter) : m_lower(std::move(lower)), m_jitter(jitter) {}

    std::size_t dim() const noexcept { return m_lower.rows(); }
    const Matrix& lower() const noexcept { return m_lower; }
    double jitter() const noexcept { return m_jitter; }

    /// Solves L y = b in place.
    void forward_solve(std::span<double> b) const {
        const std::size_t n = dim();
        for (std::size_t i = 0; i < n; ++i) {
            auto li = m_lower.row(i);
            double acc = b[i];
            for (std::size_t k = 0; k < i; ++k) {
                acc -= li[k] * b[k];
            }
            b[i] = acc / li[i];
        }
    }

    /// Solves L^T x = y in place.
    void backward_solve(std::span<double> y) const {
        const std::size_t n = dim();
        for (std::size_t ii = n; ii-- > 0;) {
            double acc = y[ii];
            for (std::size_t k = ii + 1; k < n; ++k) {
                acc -= m_lower(k, ii) * y[k];
            }
            y[ii] = acc / m_lower(ii, ii);
        }
    }

    Matrix reconstruct() const { return m_lower * m_lower.transpose(); }

private:
    Matrix m_lower;
    double m_jitter;
};

inline constexpr double kSymmetryTolerance = 1e-9;
inline constexpr double kDefaultJitter = 1e-9;
inline constexpr double kMaxJitter = 1e-3;

/// Factors (a + jitter I). Throws NotPositiveDefinite on a non-positive pivot.
inline SpdFactor cholesky_factorize(const Matrix& a, double jitter = 0.0) {
    require(a.square(), ErrorCode::DimensionMismatch, "cholesky of non-square matrix");
    require(jitter >= 0.0 && std::isfinite(jitter), ErrorCode::InvalidArgument, "jitter must be >= 0");
    require(a.all_finite(), ErrorCode::InvalidArgument, "matrix has non-finite entries");
    require(asymmetry(a) <= kSymmetryTolerance, ErrorCode::InvalidArgument, "matrix is not symmetric");

    const std::size_t n = a.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        auto lj = l.row(j);
        double pivot = a(j, j) + jitter;
        for (std::size_t k = 0; k < j; ++k) {
            pivot -= lj[k] * lj[k];
        }
        if (!(pivot > 0.0)) {
            throw Error(ErrorCode::NotPositiveDefinite,
                        "pivot " + std::to_string(j) + " = " + std::to_string(pivot) +
                            " with jitter " + std::to_string(jitter));
        }
        const double diag = std::sqrt(pivot);
        lj[j] = diag;
        for (std::size_t i = j + 1; i < n; ++i) {
            auto li = l.row(i);
            double acc = a(i, j);
            for (std::size_t k = 0; k < j; ++k) {
                acc -= li[k] * lj[k];
            }
            li[j] = acc / diag;
        }
    }
    return SpdFactor(std::move(l), jitter);
}

/**
 * Tries an exact factorization first, then escalates the diagonal shift from
 * kDefaultJitter by factors of 10 up to kMaxJitter.
 */
inline SpdFactor cholesky_factorize_robust(const Matrix& a) {
    try {
        return cholesky_factorize(a, 0.0);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NotPositiveDefinite) {
            throw;
        }
    }
    for (double jitter = kDefaultJitter; jitter <= kMaxJitter * 1.000001; jitter *= 10.0) {
        try {
            return cholesky_factorize(a, jitter);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NotPositiveDefinite) {
                throw;
            }
        }
    }
    throw Error(ErrorCode::NotPositiveDefinite, "matrix not positive definite up to jitter 1e-3");
}

/// Natural-log determinant, 2 * sum(log L_ii).
inline double log_det(const SpdFactor& f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < f.dim(); ++i) {
        acc += std::log(f.lower()(i, i));
    }
    return 2.0 * acc;
}

inline Vector spd_solve(const SpdFactor& f, std::span<const double> b) {
    require(b.size() == f.dim(), ErrorCode::DimensionMismatch,
            "solve rhs length " + std::to_string(b.size()) + " != " + std::to_string(f.dim()));
    Vector x(b.begin(), b.end());
    f.forward_solve(x);
    f.backward_solve(x);
    return x;
}

/// u^T A^{-1} u as ||L^{-1} u||^2.
inline double quadratic_form(const SpdFactor& f, std::span<const double> u) {
    require(u.size() == f.dim(), ErrorCode::DimensionMismatch, "quadratic form dimension");
    Vector y(u.begin(), u.end());
    f.forward_solve(y);
    return squared_norm(y);
}

/// Exact log det(A + w u u^T) - log det(A) = log(1 + w u^T A^{-1} u).
inline double rank_one_logdet_gain(const SpdFactor& f, std::span<const double> u, double w) {
    require(w >= 0.0, ErrorCode::InvalidArgument, "rank-one weight must be >= 0");
    if (w == 0.0) {
        require(u.size() == f.dim(), ErrorCode::DimensionMismatch, "rank-one update dimension");
        return 0.0;
    }
    return std::log1p(w * quadratic_form(f, u));
}

/**
 * @brief log det(I + m m^T), formed in the cheaper Gram orientation.
 *
 * det(I + m m^T) = det(I + m^T m), so the smaller of the rows x rows and
 * cols x cols systems is factored. An empty matrix yields 0.
 */
inline double logdet_identity_plus_gram(const Matrix& m) {
    if (m.rows() == 0 || m.cols() == 0) {
        return 0.0;
    }
    Matrix g = m.rows() <= m.cols() ? gram(m) : gram(m.transpose());
    for (std::size_t i = 0; i < g.rows(); ++i) {
        g(i, i) += 1.0;
    }
    return log_det(cholesky_factorize_robust(g));
}

/// Eigenvalues of a symmetric matrix in ascending order.
inline Vector symmetric_eigenvalues(const Matrix& a) {
    require(a.square(), ErrorCode::DimensionMismatch, "eigenvalues of non-square matrix");
    const auto n = static_cast<Eigen::Index>(a.rows());
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            m(i, j) = a(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
    const auto& ev = solver.eigenvalues();
    return Vector(ev.data(), ev.data() + ev.size());
}

}  // namespace capkv
