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

#include "complex_matrix.hpp"
#include "tape.hpp"

namespace ncal {

/// A complex matrix on the tape: two real nodes of identical shape.
struct CVar {
    Tape::Var re = -1;
    Tape::Var im = -1;
};

inline CVar c_input(Tape &t, const ComplexMatrix &m)
{
    return {t.input(m.re), t.input(m.im)};
}

inline CVar c_constant(Tape &t, const ComplexMatrix &m)
{
    return {t.constant(m.re), t.constant(m.im)};
}

inline ComplexMatrix c_value(const Tape &t, CVar v)
{
    return {t.value(v.re), t.value(v.im)};
}

inline CVar c_add(Tape &t, CVar a, CVar b)
{
    return {t.add(a.re, b.re), t.add(a.im, b.im)};
}

inline CVar c_sub(Tape &t, CVar a, CVar b)
{
    return {t.sub(a.re, b.re), t.sub(a.im, b.im)};
}

inline CVar c_scale(Tape &t, CVar a, double s)
{
    return {t.mul_scalar(a.re, s), t.mul_scalar(a.im, s)};
}

/// Same four-real-product expansion as the plain cmul.
inline CVar c_matmul(Tape &t, CVar a, CVar b)
{
    return {t.sub(t.matmul(a.re, b.re), t.matmul(a.im, b.im)),
            t.add(t.matmul(a.im, b.re), t.matmul(a.re, b.im))};
}

inline CVar c_hermitian(Tape &t, CVar a)
{
    return {t.transpose(a.re), t.neg(t.transpose(a.im))};
}

/// Complex inverse through the real-decomposition identity. Requires Re{D}
/// invertible, which holds whenever D is Hermitian positive definite (the
/// only way this library invokes it on the tape: Gram matrices X X^H).
inline CVar c_inv(Tape &t, CVar d)
{
    Tape::Var re_inv = t.inverse(d.re);
    Tape::Var schur = t.add(d.re, t.matmul(d.im, t.matmul(re_inv, d.im)));
    Tape::Var e_re = t.inverse(schur);
    Tape::Var e_im = t.neg(t.matmul(re_inv, t.matmul(d.im, e_re)));
    return {e_re, e_im};
}

/// ||A||_F^2 as a 1x1 node.
inline Tape::Var c_fro_sq(Tape &t, CVar a)
{
    return t.add(t.sum_all(t.mul_elem(a.re, a.re)), t.sum_all(t.mul_elem(a.im, a.im)));
}

inline CVar c_mul_scalar_node(Tape &t, CVar a, Tape::Var s)
{
    return {t.mul_scalar_node(a.re, s), t.mul_scalar_node(a.im, s)};
}

inline CVar c_row_slice(Tape &t, CVar a, int r0, int r1)
{
    return {t.row_slice(a.re, r0, r1), t.row_slice(a.im, r0, r1)};
}

/// Pack a complex node into real rows [Re | Im], the layout shared-MLP
/// stages consume.
inline Tape::Var c_pack_rows(Tape &t, CVar a)
{
    return t.hcat(a.re, a.im);
}

/// Inverse of c_pack_rows: split a (rows x 2w) node back into a complex node.
inline CVar c_unpack_rows(Tape &t, Tape::Var packed, int w)
{
    return {t.col_slice(packed, 0, w), t.col_slice(packed, w, 2 * w)};
}

/// Zero-forcing beamformer on the tape (same math as ncal::zf, minus the
/// condition-number guard, which is a training-time concern handled by the
/// caller catching SingularMatrixError from the inverse nodes).
inline CVar zf_tape(Tape &t, CVar x_rows, double p_dl)
{
    CVar xh = c_hermitian(t, x_rows);
    CVar gram = c_matmul(t, x_rows, xh);
    CVar gram_inv = c_inv(t, gram);
    CVar w = c_matmul(t, xh, gram_inv);
    Tape::Var n2 = c_fro_sq(t, w);
    Tape::Var gamma = t.mul_scalar(t.recip(t.sqrt_elem(n2)), std::sqrt(p_dl));
    return c_mul_scalar_node(t, w, gamma);
}

/// Downlink sum rate on the tape; x_rows is K x M (rows h_k^H), v is M x K.
/// Returns a 1x1 node in bit/s/Hz.
inline Tape::Var sum_rate_tape(Tape &t, CVar x_rows, CVar v, double sigma0_sq)
{
    const int K = t.value(x_rows.re).rows();
    CVar a = c_matmul(t, x_rows, v);
    Tape::Var pow_mat = t.add(t.mul_elem(a.re, a.re), t.mul_elem(a.im, a.im)); // K x K
    RealMatrix ones(K, 1);
    for (int i = 0; i < K; ++i)
        ones(i, 0) = 1.0;
    Tape::Var row_tot = t.matmul(pow_mat, t.constant(ones));                  // K x 1
    Tape::Var sig = t.matmul(t.mul_elem(pow_mat, t.constant(RealMatrix::identity(K))), t.constant(ones));
    Tape::Var denom = t.add_scalar(t.sub(row_tot, sig), sigma0_sq);
    Tape::Var ratio = t.mul_elem(sig, t.recip(denom));
    return t.mul_scalar(t.sum_all(t.log_elem(t.add_scalar(ratio, 1.0))), 1.0 / std::log(2.0));
}

} // namespace ncal
