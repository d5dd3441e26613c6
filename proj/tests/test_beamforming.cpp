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

#include <catch2/catch_amalgamated.hpp>

#include <ncal/beamforming.hpp>
#include <ncal/rng.hpp>

#include <cmath>
#include <complex>

using namespace ncal;

namespace {

ComplexMatrix random_rows(int k, int m, std::uint64_t sample, std::uint32_t lane = 0)
{
    ComplexMatrix x(k, m);
    Prng pr(77, RngDomain::eval_misc, sample, lane);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < m; ++j) {
            x.re(i, j) = pr.gaussian() / std::sqrt(2.0);
            x.im(i, j) = pr.gaussian() / std::sqrt(2.0);
        }
    return x;
}

// Term-by-term scalar oracle for the sum rate, written against std::complex
// with none of the library's matrix ops.
double sum_rate_oracle(const ComplexMatrix &x, const ComplexMatrix &v, double sigma_sq)
{
    const int k = x.rows(), m = x.cols();
    double rate = 0.0;
    for (int user = 0; user < k; ++user) {
        double signal = 0.0, interference = 0.0;
        for (int j = 0; j < k; ++j) {
            std::complex<double> a = 0.0;
            for (int t = 0; t < m; ++t)
                a += std::complex<double>(x.re(user, t), x.im(user, t)) *
                     std::complex<double>(v.re(t, j), v.im(t, j));
            const double p = std::norm(a);
            if (j == user)
                signal = p;
            else
                interference += p;
        }
        rate += std::log2(1.0 + signal / (interference + sigma_sq));
    }
    return rate;
}

double fd_rate_x(const ComplexMatrix &h, const ComplexMatrix &x, double p_dl, double s2, int i, int j, bool imag)
{
    const double eps = 1e-6;
    ComplexMatrix xp = x, xm = x;
    if (imag) {
        xp.im(i, j) += eps;
        xm.im(i, j) -= eps;
    } else {
        xp.re(i, j) += eps;
        xm.re(i, j) -= eps;
    }
    return (sum_rate(h, zf(xp, p_dl), s2) - sum_rate(h, zf(xm, p_dl), s2)) / (2.0 * eps);
}

} // namespace

TEST_CASE("sum_rate matches the scalar oracle", "[beamforming]")
{
    for (int trial = 0; trial < 20; ++trial) {
        ComplexMatrix x = random_rows(3, 6, trial, 0);
        ComplexMatrix v = random_rows(6, 3, trial, 1); // any matrix works as V
        const double s2 = 0.1 + 0.1 * trial;
        CHECK(sum_rate(x, v, s2) == Catch::Approx(sum_rate_oracle(x, v, s2)).margin(1e-12));
    }
}

TEST_CASE("equal-gain orthogonal users: MRT and ZF coincide", "[beamforming]")
{
    // Orthogonal rows of equal norm: both schemes point along the matched
    // filter and split power evenly, so the beamformers agree. (Unequal norms
    // would break this: MRT favors the strong user, ZF the weak one.)
    ComplexMatrix x(2, 4);
    x.set(0, 0, {3.0, 0.0});
    x.set(0, 1, {0.0, 3.0});
    x.set(1, 2, {3.0, 0.0});
    x.set(1, 3, {0.0, -3.0});
    const double p = 2.0, s2 = 0.3;
    CHECK(sum_rate(x, mrt(x, p), s2) == Catch::Approx(sum_rate(x, zf(x, p), s2)).margin(1e-9));
}

TEST_CASE("orthonormal rows give the closed-form ZF solution", "[beamforming]")
{
    // X X^H = I  =>  V = sqrt(P/K) X^H.
    ComplexMatrix x(2, 4);
    const double r = 1.0 / std::sqrt(2.0);
    x.set(0, 0, {r, 0.0});
    x.set(0, 1, {0.0, r});
    x.set(1, 2, {r, 0.0});
    x.set(1, 3, {0.0, -r});
    const double p = 3.0;
    ComplexMatrix v = zf(x, p);
    ComplexMatrix want = cscale(hermitian(x), std::sqrt(p / 2.0));
    CHECK(cmax_abs(csub(v, want)) < 1e-12);
}

TEST_CASE("ZF nulls interference and meets the power budget", "[beamforming]")
{
    Prng dim(7, RngDomain::eval_misc, 0, 9);
    for (int trial = 0; trial < 200; ++trial) {
        const int m = 8 + static_cast<int>(dim.uniform_index(25)); // 8..32
        const int k = 1 + static_cast<int>(dim.uniform_index(static_cast<std::uint64_t>(m / 2)));
        ComplexMatrix x = random_rows(k, m, 100 + trial);
        const double p = 1.6;
        ComplexMatrix v = zf(x, p);
        ComplexMatrix a = cmul(x, v);
        double min_diag = 1e300, max_off = 0.0;
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
                const double mag = std::hypot(a.re(i, j), a.im(i, j));
                if (i == j)
                    min_diag = std::min(min_diag, mag);
                else
                    max_off = std::max(max_off, mag);
            }
        REQUIRE(max_off < 1e-8 * min_diag);
        REQUIRE(std::abs(fro_norm_sq(v) - p) < 1e-10 * p);
    }
}

TEST_CASE("ZF rejects an ill-conditioned channel", "[beamforming]")
{
    ComplexMatrix x = random_rows(2, 6, 11);
    for (int j = 0; j < 6; ++j) { // duplicate user 0 into user 1
        x.re(1, j) = x.re(0, j);
        x.im(1, j) = x.im(0, j);
    }
    CHECK_THROWS_AS(zf(x, 1.0), IllPosedError);
}

TEST_CASE("MRT meets the power budget and aligns with the channel", "[beamforming]")
{
    ComplexMatrix x = random_rows(3, 8, 12);
    const double p = 2.5;
    ComplexMatrix v = mrt(x, p);
    CHECK(std::abs(fro_norm_sq(v) - p) < 1e-12 * p);
    // each column proportional to the conjugated channel row: all 2x2 minors
    // of (v[:,k], xh[:,k]) must vanish
    ComplexMatrix xh = hermitian(x);
    for (int k = 0; k < 3; ++k) {
        for (int m = 1; m < 8; ++m) {
            const std::complex<double> a(v.re(m, k), v.im(m, k));
            const std::complex<double> b(xh.re(m, k), xh.im(m, k));
            const std::complex<double> a0(v.re(0, k), v.im(0, k));
            const std::complex<double> b0(xh.re(0, k), xh.im(0, k));
            CHECK(std::abs(a * b0 - a0 * b) < 1e-12);
        }
    }
}

TEST_CASE("analytic V-gradient matches finite differences", "[beamforming][grad]")
{
    double worst = 0.0;
    for (int trial = 0; trial < 30; ++trial) {
        const int m = 8, k = 4;
        ComplexMatrix x = random_rows(k, m, 300 + trial, 0);
        ComplexMatrix v = random_rows(m, k, 300 + trial, 1);
        const double s2 = 0.25;
        ComplexMatrix g = grad_sum_rate_v(x, v, s2);
        const double eps = 1e-6;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j) {
                ComplexMatrix vp = v, vm = v;
                vp.re(i, j) += eps;
                vm.re(i, j) -= eps;
                const double fd = (sum_rate(x, vp, s2) - sum_rate(x, vm, s2)) / (2 * eps);
                worst = std::max(worst, std::abs(g.re(i, j) - fd) / std::max(1e-8, std::abs(fd)));
                vp = v;
                vm = v;
                vp.im(i, j) += eps;
                vm.im(i, j) -= eps;
                const double fdi = (sum_rate(x, vp, s2) - sum_rate(x, vm, s2)) / (2 * eps);
                worst = std::max(worst, std::abs(g.im(i, j) - fdi) / std::max(1e-8, std::abs(fdi)));
            }
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("single-user V-gradient matches the scalar derivative", "[beamforming][grad]")
{
    // K = 1: R = log2(1 + |h^H v|^2 / s2); d/dv* = (1/ln2) h h^H v / (|h^H v|^2 + s2)
    // so the packed real gradient is 2/ln2 * that, evaluated elementwise.
    ComplexMatrix x = random_rows(1, 5, 400);
    ComplexMatrix v = random_rows(5, 1, 401);
    const double s2 = 0.4;
    ComplexMatrix g = grad_sum_rate_v(x, v, s2);
    std::complex<double> hv = 0.0;
    for (int t = 0; t < 5; ++t)
        hv += std::complex<double>(x.re(0, t), x.im(0, t)) * std::complex<double>(v.re(t, 0), v.im(t, 0));
    const double denom = std::norm(hv) + s2;
    for (int t = 0; t < 5; ++t) {
        const std::complex<double> h_conj(x.re(0, t), -x.im(0, t));
        const std::complex<double> want = 2.0 / std::log(2.0) * h_conj * hv / denom;
        CHECK(g.re(t, 0) == Catch::Approx(want.real()).margin(1e-12));
        CHECK(g.im(t, 0) == Catch::Approx(want.imag()).margin(1e-12));
    }
}

TEST_CASE("analytic X-gradient of the ZF composition matches finite differences", "[beamforming][grad]")
{
    double worst = 0.0;
    for (int trial = 0; trial < 30; ++trial) {
        const int m = 8, k = 4;
        ComplexMatrix h = random_rows(k, m, 500 + trial, 0);
        ComplexMatrix x = trial % 2 == 0 ? h : random_rows(k, m, 500 + trial, 1);
        const double p = 1.0, s2 = 0.5;
        ComplexMatrix g = grad_sum_rate_x(h, x, p, s2);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < m; ++j) {
                const double fd_re = fd_rate_x(h, x, p, s2, i, j, false);
                const double fd_im = fd_rate_x(h, x, p, s2, i, j, true);
                worst = std::max(worst, std::abs(g.re(i, j) - fd_re) / std::max(1e-6, std::abs(fd_re)));
                worst = std::max(worst, std::abs(g.im(i, j) - fd_im) / std::max(1e-6, std::abs(fd_im)));
            }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("X-gradient is nonzero at the channel itself", "[beamforming][grad]")
{
    for (int trial = 0; trial < 100; ++trial) {
        ComplexMatrix h = random_rows(4, 8, 700 + trial);
        CHECK(fro_norm(grad_sum_rate_x(h, h, 1.0, 1.0)) > 1e-6);
    }
}

TEST_CASE("X-gradient decays as noise dominates", "[beamforming][grad]")
{
    // rate = sum log2(1 + S_k / (s2 + I_k)); once s2 dwarfs every signal
    // term the whole objective flattens like 1/s2, and the gradient must
    // follow. A million-fold noise increase should shed at least three
    // orders of magnitude.
    double hi = 0.0, lo = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        ComplexMatrix h = random_rows(4, 4, 800 + trial);
        hi += fro_norm(grad_sum_rate_x(h, h, 1.0, 1.0));
        lo += fro_norm(grad_sum_rate_x(h, h, 1.0, 1e6));
    }
    CHECK(lo < 1e-3 * hi);
    CHECK(lo > 0.0); // still a live gradient, not a degenerate zero
}

TEST_CASE("one ascent step on the ZF input improves the rate", "[beamforming]")
{
    int improved = 0;
    const int trials = 200;
    for (int trial = 0; trial < trials; ++trial) {
        ComplexMatrix h = random_rows(4, 8, 900 + trial);
        AscentProbe probe = zf_ascent_probe(h, 1.0, 1.0, 1e-3);
        if (probe.rate_stepped > probe.rate_plain)
            ++improved;
    }
    CHECK(improved >= trials * 95 / 100);
}
