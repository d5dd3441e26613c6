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

#include <complex>
#include <string>

#include "real_matrix.hpp"

namespace ncal {

/// Complex matrix stored as two aligned real matrices. Every complex
/// operation below reduces to real matrix arithmetic, which keeps the
/// whole numeric stack (including the autodiff tape) real-valued.
struct ComplexMatrix {
    RealMatrix re;
    RealMatrix im;

    ComplexMatrix() = default;
    ComplexMatrix(int rows, int cols) : re(rows, cols), im(rows, cols) {}
    ComplexMatrix(RealMatrix real_part, RealMatrix imag_part) : re(std::move(real_part)), im(std::move(imag_part))
    {
        if (!re.same_shape(im))
            throw std::invalid_argument("ComplexMatrix: real/imag shape mismatch");
    }

    static ComplexMatrix identity(int n)
    {
        ComplexMatrix c(n, n);
        c.re = RealMatrix::identity(n);
        return c;
    }

    int rows() const { return re.rows(); }
    int cols() const { return re.cols(); }

    std::complex<double> operator()(int i, int j) const { return {re(i, j), im(i, j)}; }

    void set(int i, int j, std::complex<double> v)
    {
        re(i, j) = v.real();
        im(i, j) = v.imag();
    }
};

inline ComplexMatrix cadd(const ComplexMatrix &a, const ComplexMatrix &b)
{
    return {add(a.re, b.re), add(a.im, b.im)};
}

inline ComplexMatrix csub(const ComplexMatrix &a, const ComplexMatrix &b)
{
    return {sub(a.re, b.re), sub(a.im, b.im)};
}

inline ComplexMatrix cscale(const ComplexMatrix &a, double s)
{
    return {scale(a.re, s), scale(a.im, s)};
}

inline ComplexMatrix cscale(const ComplexMatrix &a, std::complex<double> s)
{
    ComplexMatrix c(a.rows(), a.cols());
    const double sr = s.real(), si = s.imag();
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) {
            c.re(i, j) = sr * a.re(i, j) - si * a.im(i, j);
            c.im(i, j) = si * a.re(i, j) + sr * a.im(i, j);
        }
    return c;
}

/// C = A * B through four real products:
///   Re{C} = Re{A}Re{B} - Im{A}Im{B},  Im{C} = Im{A}Re{B} + Re{A}Im{B}.
inline ComplexMatrix cmul(const ComplexMatrix &a, const ComplexMatrix &b)
{
    if (a.cols() != b.rows())
        throw std::invalid_argument("cmul: inner dimension mismatch (" + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " times " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()) + ")");
    return {sub(matmul(a.re, b.re), matmul(a.im, b.im)), add(matmul(a.im, b.re), matmul(a.re, b.im))};
}

/// Conjugate transpose.
inline ComplexMatrix hermitian(const ComplexMatrix &a)
{
    return {transpose(a.re), neg(transpose(a.im))};
}

inline ComplexMatrix conj(const ComplexMatrix &a)
{
    return {a.re, neg(a.im)};
}

inline ComplexMatrix ctranspose(const ComplexMatrix &a)
{
    return {transpose(a.re), transpose(a.im)};
}

inline double fro_norm_sq(const ComplexMatrix &a)
{
    return sum_squares(a.re) + sum_squares(a.im);
}

inline double fro_norm(const ComplexMatrix &a)
{
    return std::sqrt(fro_norm_sq(a));
}

inline double cmax_abs(const ComplexMatrix &a)
{
    double best = 0.0;
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j)
            best = std::max(best, std::abs(a(i, j)));
    return best;
}

inline bool call_finite(const ComplexMatrix &a)
{
    return all_finite(a.re) && all_finite(a.im);
}

inline std::complex<double> ctrace(const ComplexMatrix &a)
{
    if (a.rows() != a.cols())
        throw std::invalid_argument("ctrace: matrix not square");
    std::complex<double> t = 0.0;
    for (int i = 0; i < a.rows(); ++i)
        t += a(i, i);
    return t;
}

/// A + s*I for complex square A and real s.
inline ComplexMatrix add_scaled_identity(const ComplexMatrix &a, double s)
{
    if (a.rows() != a.cols())
        throw std::invalid_argument("add_scaled_identity: matrix not square");
    ComplexMatrix c = a;
    for (int i = 0; i < a.rows(); ++i)
        c.re(i, i) += s;
    return c;
}

namespace detail {

/// Stacked-block fallback inverse: embed D as [[Re, -Im], [Im, Re]] (2n x 2n
/// real), invert, and read the inverse's blocks back out. The embedding is a
/// ring homomorphism, so this succeeds exactly when D itself is invertible.
inline ComplexMatrix cinv_stacked(const ComplexMatrix &d, double *cond_estimate)
{
    const int n = d.rows();
    RealMatrix s(2 * n, 2 * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            s(i, j) = d.re(i, j);
            s(i, j + n) = -d.im(i, j);
            s(i + n, j) = d.im(i, j);
            s(i + n, j + n) = d.re(i, j);
        }
    RealMatrix sinv = lu_inverse(s, cond_estimate);
    ComplexMatrix e(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            e.re(i, j) = sinv(i, j);
            e.im(i, j) = sinv(i + n, j);
        }
    return e;
}

} // namespace detail

/// Inverse of a square complex matrix using only real inverses:
///   Re{E} = (Re{D} + Im{D} Re{D}^-1 Im{D})^-1
///   Im{E} = -Re{D}^-1 Im{D} Re{E}
/// When Re{D} is singular (the identity needs it invertible), falls back to
/// the 2n x 2n stacked-block inverse, which exists iff D is invertible.
inline ComplexMatrix cinv(const ComplexMatrix &d, double *cond_estimate = nullptr)
{
    if (d.rows() != d.cols())
        throw std::invalid_argument("cinv: matrix not square (" + std::to_string(d.rows()) + "x" +
                                    std::to_string(d.cols()) + ")");
    try {
        double cond_re = 0.0;
        RealMatrix re_inv = lu_inverse(d.re, &cond_re);
        RealMatrix t = add(d.re, matmul(d.im, matmul(re_inv, d.im)));
        double cond_t = 0.0;
        RealMatrix e_re = lu_inverse(t, &cond_t);
        RealMatrix e_im = neg(matmul(re_inv, matmul(d.im, e_re)));
        ComplexMatrix e{std::move(e_re), std::move(e_im)};
        if (!call_finite(e))
            throw SingularMatrixError("non-finite intermediate", std::max(cond_re, cond_t));
        if (cond_estimate)
            *cond_estimate = std::max(cond_re, cond_t);
        return e;
    } catch (const SingularMatrixError &) {
        return detail::cinv_stacked(d, cond_estimate);
    }
}

} // namespace ncal
