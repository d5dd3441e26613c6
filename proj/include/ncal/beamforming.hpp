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

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "complex_matrix.hpp"

namespace ncal {

// Convention used throughout this header: the channel argument X is K x M
// with row k equal to h_k^H (user k's conjugated channel), so X * V is the
// K x K matrix of effective links. V is M x K with column k serving user k.

/// Thrown when a beamforming problem is numerically ill-posed (e.g. the
/// Gram matrix of the channel rows is close to singular).
class IllPosedError : public std::runtime_error {
  public:
    IllPosedError(const std::string &what, double cond_estimate)
        : std::runtime_error(what), cond_estimate_(cond_estimate)
    {
    }
    double cond_estimate() const { return cond_estimate_; }

  private:
    double cond_estimate_;
};

/// Condition estimate above which zf refuses to invert the Gram matrix.
constexpr double ZF_COND_LIMIT = 1e12;

inline void check_link_shapes(const ComplexMatrix &x, const ComplexMatrix &v)
{
    if (x.cols() != v.rows() || x.rows() != v.cols())
        throw std::invalid_argument("expected channel rows K x M and beamformer M x K, got " +
                                    std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + " and " +
                                    std::to_string(v.rows()) + "x" + std::to_string(v.cols()));
}

/// Downlink sum rate in bit/s/Hz:
///   sum_k log2(1 + |(XV)_kk|^2 / (sum_{j!=k} |(XV)_kj|^2 + sigma0_sq)).
inline double sum_rate(const ComplexMatrix &x, const ComplexMatrix &v, double sigma0_sq)
{
    check_link_shapes(x, v);
    if (!(sigma0_sq > 0.0))
        throw std::invalid_argument("sum_rate: sigma0_sq must be positive");
    const ComplexMatrix a = cmul(x, v);
    const int K = x.rows();
    double rate = 0.0;
    for (int k = 0; k < K; ++k) {
        double sig = 0.0, interf = 0.0;
        for (int j = 0; j < K; ++j) {
            const double p = a.re(k, j) * a.re(k, j) + a.im(k, j) * a.im(k, j);
            if (j == k)
                sig = p;
            else
                interf += p;
        }
        rate += std::log2(1.0 + sig / (interf + sigma0_sq));
    }
    return rate;
}

/// Maximum ratio transmission: V = gamma * X^H with gamma chosen so that
/// Tr(V V^H) equals p_dl exactly.
inline ComplexMatrix mrt(const ComplexMatrix &x, double p_dl)
{
    if (!(p_dl > 0.0))
        throw std::invalid_argument("mrt: p_dl must be positive");
    const double n = fro_norm(x);
    if (n == 0.0)
        throw std::invalid_argument("mrt: channel matrix is all-zero");
    return cscale(hermitian(x), std::sqrt(p_dl) / n);
}

/// Zero-forcing: V = gamma * X^H (X X^H)^-1, gamma = sqrt(p_dl) / ||X^H (X X^H)^-1||_F.
/// Throws IllPosedError when cond(X X^H) exceeds ZF_COND_LIMIT.
inline ComplexMatrix zf(const ComplexMatrix &x, double p_dl)
{
    if (!(p_dl > 0.0))
        throw std::invalid_argument("zf: p_dl must be positive");
    if (x.rows() > x.cols())
        throw std::invalid_argument("zf: needs users <= antennas, got " + std::to_string(x.rows()) + " > " +
                                    std::to_string(x.cols()));
    const ComplexMatrix gram = cmul(x, hermitian(x));
    double cond = 0.0;
    ComplexMatrix gram_inv;
    try {
        gram_inv = cinv(gram, &cond);
    } catch (const SingularMatrixError &e) {
        throw IllPosedError("zf: channel Gram matrix is singular", e.cond_estimate());
    }
    if (cond > ZF_COND_LIMIT)
        throw IllPosedError("zf: channel Gram matrix condition " + std::to_string(cond) + " exceeds limit", cond);
    const ComplexMatrix w = cmul(hermitian(x), gram_inv);
    const double n = fro_norm(w);
    if (!(n > 0.0) || !std::isfinite(n))
        throw IllPosedError("zf: pseudo-inverse norm is degenerate", cond);
    return cscale(w, std::sqrt(p_dl) / n);
}

/// Gradient of sum_rate with respect to the beamformer V, as the complex
/// matrix G with Re{G} = dR/dRe{V} and Im{G} = dR/dIm{V}:
///   G = (2/ln 2) * X^H B,  B_kk = A_kk / S_k,
///   B_jk = -|A_jj|^2 A_jk / (S_j I_j) for j != k,
/// where A = X V, S_j = sum_i |A_ji|^2 + sigma0_sq and I_j = S_j - |A_jj|^2.
inline ComplexMatrix grad_sum_rate_v(const ComplexMatrix &x, const ComplexMatrix &v, double sigma0_sq)
{
    check_link_shapes(x, v);
    if (!(sigma0_sq > 0.0))
        throw std::invalid_argument("grad_sum_rate_v: sigma0_sq must be positive");
    const int K = x.rows();
    const ComplexMatrix a = cmul(x, v);
    std::vector<double> s(K), interf(K), sig(K);
    for (int j = 0; j < K; ++j) {
        double tot = 0.0;
        for (int i = 0; i < K; ++i)
            tot += a.re(j, i) * a.re(j, i) + a.im(j, i) * a.im(j, i);
        sig[j] = a.re(j, j) * a.re(j, j) + a.im(j, j) * a.im(j, j);
        s[j] = tot + sigma0_sq;
        interf[j] = s[j] - sig[j];
    }
    ComplexMatrix b(K, K);
    for (int j = 0; j < K; ++j)
        for (int k = 0; k < K; ++k) {
            if (j == k) {
                b.re(j, k) = a.re(j, j) / s[j];
                b.im(j, k) = a.im(j, j) / s[j];
            } else {
                const double f = -sig[j] / (s[j] * interf[j]);
                b.re(j, k) = f * a.re(j, k);
                b.im(j, k) = f * a.im(j, k);
            }
        }
    return cscale(cmul(hermitian(x), b), 2.0 / std::log(2.0));
}

/// Gradient of the composition R(x) = sum_rate(h_rows, zf(x, p_dl), sigma0_sq)
/// with respect to the zero-forcing input x (K x M, row convention as above).
/// h_rows is the true channel used inside the rate; x is whatever feeds zf.
/// Returned as the complex matrix Gamma with Re/Im equal to the partials
/// with respect to Re{x}/Im{x}.
///
/// With A = x x^H, W = x^H A^-1, n2 = ||W||_F^2, gamma = sqrt(p_dl/n2),
/// V = gamma W and G = grad_sum_rate_v(h_rows, V):
///   Gamma = gamma * A^-1 G^H (I - W x)            (pseudo-inverse variation)
///         - gamma * X' G X'                       (with X' = A^-1 x)
///         + (gamma/n2) Re{Tr(G^H W)} * A^-1 X'    (power renormalization)
/// The last term comes from gamma's dependence on x; dropping it breaks the
/// K=1 invariant that the composed rate is scale-free in x.
inline ComplexMatrix grad_sum_rate_x(const ComplexMatrix &h_rows, const ComplexMatrix &x, double p_dl,
                                     double sigma0_sq)
{
    if (h_rows.rows() != x.rows() || h_rows.cols() != x.cols())
        throw std::invalid_argument("grad_sum_rate_x: channel and zf input must share shape");
    if (x.rows() > x.cols())
        throw std::invalid_argument("grad_sum_rate_x: needs users <= antennas");
    const ComplexMatrix gram = cmul(x, hermitian(x));
    double cond = 0.0;
    ComplexMatrix ainv;
    try {
        ainv = cinv(gram, &cond);
    } catch (const SingularMatrixError &e) {
        throw IllPosedError("grad_sum_rate_x: channel Gram matrix is singular", e.cond_estimate());
    }
    if (cond > ZF_COND_LIMIT)
        throw IllPosedError("grad_sum_rate_x: Gram condition " + std::to_string(cond) + " exceeds limit", cond);

    const ComplexMatrix w = cmul(hermitian(x), ainv); // M x K
    const double n2 = fro_norm_sq(w);
    const double gamma = std::sqrt(p_dl / n2);
    const ComplexMatrix v = cscale(w, gamma);
    const ComplexMatrix g = grad_sum_rate_v(h_rows, v, sigma0_sq); // M x K
    const ComplexMatrix gh = hermitian(g);                         // K x M

    // gamma * A^-1 G^H (I - W x)
    const ComplexMatrix wx = cmul(w, x); // M x M
    ComplexMatrix eye_minus_wx = cscale(wx, -1.0);
    for (int i = 0; i < eye_minus_wx.rows(); ++i)
        eye_minus_wx.re(i, i) += 1.0;
    const ComplexMatrix term1 = cscale(cmul(ainv, cmul(gh, eye_minus_wx)), gamma);

    // -gamma * X' G X', X' = A^-1 x = W^H
    const ComplexMatrix xprime = hermitian(w); // K x M
    const ComplexMatrix term2 = cscale(cmul(xprime, cmul(g, xprime)), -gamma);

    // (gamma/n2) * Re{Tr(G^H W)} * A^-1 X'
    double re_tr = 0.0;
    {
        const ComplexMatrix ghw = cmul(gh, w); // K x K
        for (int i = 0; i < ghw.rows(); ++i)
            re_tr += ghw.re(i, i);
    }
    const ComplexMatrix term3 = cscale(cmul(ainv, xprime), gamma / n2 * re_tr);

    return cadd(cadd(term1, term2), term3);
}

/// One analytic ascent step through the zero-forcing map, starting from the
/// true channel rows: X~ = H + step_rel * ||H||_F * Gamma / ||Gamma||_F.
/// Returns the sum rate of plain zf and of zf applied to the stepped input.
struct AscentProbe {
    double rate_plain;
    double rate_stepped;
};

inline AscentProbe zf_ascent_probe(const ComplexMatrix &h_rows, double p_dl, double sigma0_sq,
                                   double step_rel = 1e-3)
{
    AscentProbe out{};
    out.rate_plain = sum_rate(h_rows, zf(h_rows, p_dl), sigma0_sq);
    const ComplexMatrix gamma_mat = grad_sum_rate_x(h_rows, h_rows, p_dl, sigma0_sq);
    const double gn = fro_norm(gamma_mat);
    if (!(gn > 0.0)) {
        out.rate_stepped = out.rate_plain;
        return out;
    }
    const double step = step_rel * fro_norm(h_rows) / gn;
    const ComplexMatrix stepped = cadd(h_rows, cscale(gamma_mat, step));
    out.rate_stepped = sum_rate(h_rows, zf(stepped, p_dl), sigma0_sq);
    return out;
}

/// Iteratively reweighted MMSE sum-rate maximization (block-coordinate
/// updates of receive scalars u, MSE weights w and the beamformer V, with
/// bisection on the power multiplier mu). Classical algorithm; monotone in
/// the sum rate up to bisection tolerance.
struct WmmseResult {
    ComplexMatrix v;
    std::vector<double> rate_trace; // sum rate after each outer iteration
    int iterations = 0;
};

struct WmmseOptions {
    int max_iters = 100;
    double rate_tol = 1e-6;     // stop when the trace improves less than this
    double power_tol = 1e-10;   // bisection tolerance on ||V||_F^2 relative to p_dl
    int max_bisect = 200;
};

namespace detail {

/// Solve (J + mu I) V = C for the stacked columns; J Hermitian PSD.
inline ComplexMatrix wmmse_v_of_mu(const ComplexMatrix &j, const ComplexMatrix &c, double mu)
{
    return cmul(cinv(add_scaled_identity(j, mu)), c);
}

} // namespace detail

inline WmmseResult wmmse(const ComplexMatrix &x, double p_dl, double sigma0_sq, WmmseOptions opt = {})
{
    if (!(p_dl > 0.0) || !(sigma0_sq > 0.0))
        throw std::invalid_argument("wmmse: p_dl and sigma0_sq must be positive");
    const int K = x.rows(), M = x.cols();

    // Start from the better of the closed-form baselines.
    ComplexMatrix v = mrt(x, p_dl);
    double best = sum_rate(x, v, sigma0_sq);
    if (K <= M) {
        try {
            ComplexMatrix vz = zf(x, p_dl);
            const double rz = sum_rate(x, vz, sigma0_sq);
            if (rz > best) {
                v = std::move(vz);
                best = rz;
            }
        } catch (const IllPosedError &) {
            // fall back to the MRT start
        }
    }

    WmmseResult res;
    res.v = std::move(v);
    const ComplexMatrix xh = hermitian(x);

    for (int it = 0; it < opt.max_iters; ++it) {
        // Receive scalars and MSE weights for the current beamformer.
        const ComplexMatrix a = cmul(x, res.v);
        std::vector<std::complex<double>> u(K);
        std::vector<double> wgt(K);
        for (int k = 0; k < K; ++k) {
            double s = sigma0_sq;
            for (int i = 0; i < K; ++i)
                s += a.re(k, i) * a.re(k, i) + a.im(k, i) * a.im(k, i);
            const std::complex<double> akk{a.re(k, k), a.im(k, k)};
            u[k] = akk / s;
            const double e = 1.0 - std::norm(akk) / s;
            wgt[k] = 1.0 / e;
        }

        // V(mu) = (X^H diag(w |u|^2) X + mu I)^-1 X^H diag(w u); bisect mu
        // until the power constraint is met.
        ComplexMatrix j(M, M);
        {
            ComplexMatrix scaled_x = x; // rows scaled by w_k |u_k|^2
            for (int k = 0; k < K; ++k) {
                const double f = wgt[k] * std::norm(u[k]);
                for (int m = 0; m < M; ++m) {
                    scaled_x.re(k, m) *= f;
                    scaled_x.im(k, m) *= f;
                }
            }
            j = cmul(xh, scaled_x);
        }
        ComplexMatrix c = xh; // columns scaled by w_k u_k
        for (int k = 0; k < K; ++k) {
            const std::complex<double> f = wgt[k] * u[k];
            for (int m = 0; m < M; ++m) {
                const std::complex<double> val = std::complex<double>(c.re(m, k), c.im(m, k)) * f;
                c.re(m, k) = val.real();
                c.im(m, k) = val.imag();
            }
        }

        double trace_j = 0.0;
        for (int m = 0; m < M; ++m)
            trace_j += j.re(m, m);
        const double mu_floor = std::max(trace_j, sigma0_sq) * 1e-14 + 1e-300;

        ComplexMatrix v_new = detail::wmmse_v_of_mu(j, c, mu_floor);
        double p = fro_norm_sq(v_new);
        if (p > p_dl) {
            // Power too high even at negligible mu: bracket upward, then bisect.
            double lo = mu_floor, hi = std::max(mu_floor * 2.0, 1e-8);
            ComplexMatrix v_hi = detail::wmmse_v_of_mu(j, c, hi);
            int guard = 0;
            while (fro_norm_sq(v_hi) > p_dl) {
                lo = hi;
                hi *= 2.0;
                if (++guard > 200 || !std::isfinite(hi))
                    throw std::runtime_error("wmmse: bisection bracket failure, mu in [" + std::to_string(lo) +
                                             ", " + std::to_string(hi) + "], power " +
                                             std::to_string(fro_norm_sq(v_hi)) + " vs budget " +
                                             std::to_string(p_dl));
                v_hi = detail::wmmse_v_of_mu(j, c, hi);
            }
            ComplexMatrix v_feasible = std::move(v_hi); // power <= p_dl side
            for (int b = 0; b < opt.max_bisect; ++b) {
                const double mid = 0.5 * (lo + hi);
                ComplexMatrix v_mid = detail::wmmse_v_of_mu(j, c, mid);
                const double pm = fro_norm_sq(v_mid);
                if (pm > p_dl) {
                    lo = mid;
                } else {
                    hi = mid;
                    v_feasible = std::move(v_mid);
                    if (p_dl - pm <= opt.power_tol * p_dl)
                        break;
                }
                if (hi - lo <= 1e-16 * hi)
                    break;
            }
            v_new = std::move(v_feasible);
        }
        // else: constraint inactive at the floor multiplier, keep v_new.

        res.v = std::move(v_new);
        res.iterations = it + 1;
        const double rate = sum_rate(x, res.v, sigma0_sq);
        res.rate_trace.push_back(rate);
        if (res.rate_trace.size() >= 2) {
            const double prev = res.rate_trace[res.rate_trace.size() - 2];
            if (std::abs(rate - prev) < opt.rate_tol)
                break;
        }
    }
    return res;
}

} // namespace ncal
