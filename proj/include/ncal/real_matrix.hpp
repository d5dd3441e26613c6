// SPDX-License-Identifier: Apache-2.0
//
// ncal: neural-calibrated beamforming and channel estimation for massive MIMO
// Copyright (C) 2026 The ncal authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncal {

/// Dense row-major matrix of doubles. The one numeric carrier in this
/// library; complex data is stored as a pair of these (see complex_matrix.hpp).
class RealMatrix {
  public:
    RealMatrix() = default;

    RealMatrix(int rows, int cols) : rows_(rows), cols_(cols), d_(static_cast<std::size_t>(rows) * cols, 0.0)
    {
        if (rows < 0 || cols < 0)
            throw std::invalid_argument("RealMatrix: negative dimension");
    }

    static RealMatrix identity(int n)
    {
        RealMatrix I(n, n);
        for (int i = 0; i < n; ++i)
            I(i, i) = 1.0;
        return I;
    }

    static RealMatrix filled(int rows, int cols, double v)
    {
        RealMatrix m(rows, cols);
        std::fill(m.d_.begin(), m.d_.end(), v);
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return d_.size(); }
    bool empty() const { return d_.empty(); }

    double &operator()(int i, int j) { return d_[static_cast<std::size_t>(i) * cols_ + j]; }
    double operator()(int i, int j) const { return d_[static_cast<std::size_t>(i) * cols_ + j]; }

    double *row(int i) { return d_.data() + static_cast<std::size_t>(i) * cols_; }
    const double *row(int i) const { return d_.data() + static_cast<std::size_t>(i) * cols_; }

    double *data() { return d_.data(); }
    const double *data() const { return d_.data(); }

    void set_zero() { std::fill(d_.begin(), d_.end(), 0.0); }

    bool same_shape(const RealMatrix &o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> d_;
};

/// Thrown when a matrix factorization meets a numerically singular pivot.
class SingularMatrixError : public std::runtime_error {
  public:
    SingularMatrixError(const std::string &what, double cond_estimate)
        : std::runtime_error(what), cond_estimate_(cond_estimate)
    {
    }
    double cond_estimate() const { return cond_estimate_; }

  private:
    double cond_estimate_;
};

inline void shape_check(const RealMatrix &a, const RealMatrix &b, const char *op)
{
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()) + ")");
}

/// C += A * B. The i-k-j loop keeps each output row's accumulation order
/// independent of every other row, so row-sliced results are bit-reproducible.
inline void matmul_accumulate(const RealMatrix &a, const RealMatrix &b, RealMatrix &c)
{
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimension mismatch (" + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " times " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()) + ")");
    if (c.rows() != a.rows() || c.cols() != b.cols())
        throw std::invalid_argument("matmul: output shape mismatch");
    const int n = a.rows(), kk = a.cols(), m = b.cols();
    for (int i = 0; i < n; ++i) {
        const double *arow = a.row(i);
        double *crow = c.row(i);
        for (int k = 0; k < kk; ++k) {
            const double aik = arow[k];
            if (aik == 0.0)
                continue;
            const double *brow = b.row(k);
            for (int j = 0; j < m; ++j)
                crow[j] += aik * brow[j];
        }
    }
}

inline RealMatrix matmul(const RealMatrix &a, const RealMatrix &b)
{
    RealMatrix c(a.rows(), b.cols());
    matmul_accumulate(a, b, c);
    return c;
}

inline RealMatrix transpose(const RealMatrix &a)
{
    RealMatrix t(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j)
            t(j, i) = a(i, j);
    return t;
}

inline RealMatrix add(const RealMatrix &a, const RealMatrix &b)
{
    shape_check(a, b, "add");
    RealMatrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < c.size(); ++i)
        c.data()[i] = a.data()[i] + b.data()[i];
    return c;
}

inline RealMatrix sub(const RealMatrix &a, const RealMatrix &b)
{
    shape_check(a, b, "sub");
    RealMatrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < c.size(); ++i)
        c.data()[i] = a.data()[i] - b.data()[i];
    return c;
}

inline RealMatrix neg(const RealMatrix &a)
{
    RealMatrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < c.size(); ++i)
        c.data()[i] = -a.data()[i];
    return c;
}

inline RealMatrix scale(const RealMatrix &a, double s)
{
    RealMatrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < c.size(); ++i)
        c.data()[i] = a.data()[i] * s;
    return c;
}

inline RealMatrix hadamard(const RealMatrix &a, const RealMatrix &b)
{
    shape_check(a, b, "hadamard");
    RealMatrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < c.size(); ++i)
        c.data()[i] = a.data()[i] * b.data()[i];
    return c;
}

inline double sum_all(const RealMatrix &a)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a.data()[i];
    return s;
}

inline double sum_squares(const RealMatrix &a)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a.data()[i] * a.data()[i];
    return s;
}

inline double max_abs(const RealMatrix &a)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s = std::max(s, std::abs(a.data()[i]));
    return s;
}

inline bool all_finite(const RealMatrix &a)
{
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a.data()[i]))
            return false;
    return true;
}

/// Max column sum of |entries| (the induced 1-norm).
inline double norm_1(const RealMatrix &a)
{
    double best = 0.0;
    for (int j = 0; j < a.cols(); ++j) {
        double s = 0.0;
        for (int i = 0; i < a.rows(); ++i)
            s += std::abs(a(i, j));
        best = std::max(best, s);
    }
    return best;
}

/// Inverse of a square real matrix by LU factorization with partial pivoting.
/// On success, optionally reports the 1-norm condition estimate
/// norm1(A) * norm1(inv(A)). Throws SingularMatrixError when a pivot falls
/// below n * eps * max|A|.
inline RealMatrix lu_inverse(const RealMatrix &a, double *cond_estimate = nullptr)
{
    if (a.rows() != a.cols())
        throw std::invalid_argument("lu_inverse: matrix not square (" + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + ")");
    const int n = a.rows();
    if (n == 0)
        return RealMatrix();

    RealMatrix lu = a;
    std::vector<int> piv(n);
    const double scale = max_abs(a);
    const double tiny = static_cast<double>(n) * std::numeric_limits<double>::epsilon() * scale;
    double min_pivot = std::numeric_limits<double>::infinity();

    for (int k = 0; k < n; ++k) {
        int p = k;
        double best = std::abs(lu(k, k));
        for (int i = k + 1; i < n; ++i) {
            const double v = std::abs(lu(i, k));
            if (v > best) {
                best = v;
                p = i;
            }
        }
        if (!(best > tiny) || !std::isfinite(best)) {
            const double cond = (best > 0.0) ? scale / best : std::numeric_limits<double>::infinity();
            throw SingularMatrixError("singular matrix (pivot " + std::to_string(k) + ")", cond);
        }
        min_pivot = std::min(min_pivot, best);
        if (p != k) {
            for (int j = 0; j < n; ++j)
                std::swap(lu(k, j), lu(p, j));
        }
        piv[k] = p;
        const double inv_piv = 1.0 / lu(k, k);
        for (int i = k + 1; i < n; ++i) {
            const double f = lu(i, k) * inv_piv;
            lu(i, k) = f;
            for (int j = k + 1; j < n; ++j)
                lu(i, j) -= f * lu(k, j);
        }
    }

    // Solve A * X = I column block by forward/back substitution.
    RealMatrix inv = RealMatrix::identity(n);
    for (int k = 0; k < n; ++k)
        if (piv[k] != k)
            for (int j = 0; j < n; ++j)
                std::swap(inv(k, j), inv(piv[k], j));
    for (int k = 0; k < n; ++k) {
        const double *krow = inv.row(k);
        for (int i = k + 1; i < n; ++i) {
            const double f = lu(i, k);
            if (f == 0.0)
                continue;
            double *irow = inv.row(i);
            for (int j = 0; j < n; ++j)
                irow[j] -= f * krow[j];
        }
    }
    for (int k = n - 1; k >= 0; --k) {
        const double inv_piv = 1.0 / lu(k, k);
        double *krow = inv.row(k);
        for (int j = 0; j < n; ++j)
            krow[j] *= inv_piv;
        for (int i = 0; i < k; ++i) {
            const double f = lu(i, k);
            if (f == 0.0)
                continue;
            double *irow = inv.row(i);
            for (int j = 0; j < n; ++j)
                irow[j] -= f * krow[j];
        }
    }

    if (!all_finite(inv))
        throw SingularMatrixError("singular matrix (non-finite inverse)", std::numeric_limits<double>::infinity());
    if (cond_estimate)
        *cond_estimate = norm_1(a) * norm_1(inv);
    return inv;
}

} // namespace ncal
