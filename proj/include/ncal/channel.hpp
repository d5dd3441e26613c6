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
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "complex_matrix.hpp"
#include "rng.hpp"

namespace ncal {

/// Speed of light in m/s, used to turn path distances into delays.
constexpr double SPEED_OF_LIGHT = 299792458.0;

/// Frequency-division duplex system description. Uplink and downlink share
/// the multipath geometry but sit on different carriers, which is the whole
/// reason downlink channels cannot be read off uplink pilots directly.
struct SystemConfig {
    int antennas = 16;         // M, base station ULA size
    int users = 4;             // K, single-antenna users
    int pilot_len = 4;         // L, pilot symbols per user
    int paths = 5;             // Lp, multipath components per user
    double f_ul_hz = 2.4e9;    // uplink carrier
    double f_dl_hz = 2.5e9;    // downlink carrier
    double spacing_over_lambda = 0.5;
    double p_dl = 1.0;         // downlink power budget (linear W)
    double p_ul = 1.0;         // per-symbol uplink pilot power (linear W)
    double sigma0_sq = 1.0;    // downlink noise variance (linear W)
    double sigma_ul_sq = 1.0;  // uplink noise variance (linear W)
    double dist_min_m = 5.0;
    double dist_max_m = 50.0;
    bool shared_gains = false; // true: reuse uplink path gains on downlink
    std::uint64_t rng_seed = 1;
};

/// Throws std::invalid_argument naming the offending field.
inline void validate(const SystemConfig &cfg)
{
    auto fail = [](const std::string &field, const std::string &why) {
        throw std::invalid_argument("SystemConfig." + field + ": " + why);
    };
    if (cfg.antennas < 1)
        fail("antennas", "must be >= 1");
    if (cfg.users < 1)
        fail("users", "must be >= 1");
    if (cfg.pilot_len < cfg.users)
        fail("pilot_len", "must be >= users (" + std::to_string(cfg.pilot_len) + " < " + std::to_string(cfg.users) +
                              ")");
    if (cfg.paths < 1)
        fail("paths", "must be >= 1");
    if (!(cfg.f_ul_hz > 0.0))
        fail("f_ul_hz", "must be positive");
    if (!(cfg.f_dl_hz > 0.0))
        fail("f_dl_hz", "must be positive");
    if (!(cfg.spacing_over_lambda > 0.0))
        fail("spacing_over_lambda", "must be positive");
    if (!(cfg.p_dl > 0.0))
        fail("p_dl", "must be positive");
    if (!(cfg.p_ul > 0.0))
        fail("p_ul", "must be positive");
    if (!(cfg.sigma0_sq > 0.0))
        fail("sigma0_sq", "must be positive");
    if (!(cfg.sigma_ul_sq > 0.0))
        fail("sigma_ul_sq", "must be positive");
    if (!(cfg.dist_min_m > 0.0))
        fail("dist_min_m", "must be positive");
    if (!(cfg.dist_max_m > cfg.dist_min_m))
        fail("dist_max_m", "must exceed dist_min_m");
}

/// One multipath component of one user's link.
struct PathParams {
    double angle_rad;    // departure angle in (-pi/2, pi/2)
    double distance_m;   // path length, sets the delay
    std::complex<double> gain_ul;
    std::complex<double> gain_dl;
};

/// One Monte Carlo draw of the system: true uplink/downlink channels
/// (antennas x users), the path parameters that generated them, and
/// optionally the received pilot block.
struct ChannelSample {
    ComplexMatrix h_ul; // M x K
    ComplexMatrix h_dl; // M x K
    std::vector<std::vector<PathParams>> paths; // [user][path]
    ComplexMatrix y_pilots; // M x L, empty until transmit_pilots
    bool has_pilots = false;
};

/// Uniform linear array steering vector: entry m is
/// exp(j * 2*pi * spacing_over_lambda * m * sin(theta)), m = 0..M-1.
inline ComplexMatrix array_response(int antennas, double theta_rad, double spacing_over_lambda)
{
    if (antennas < 1)
        throw std::invalid_argument("array_response: antennas must be >= 1");
    ComplexMatrix a(antennas, 1);
    const double step = 2.0 * Prng::PI * spacing_over_lambda * std::sin(theta_rad);
    for (int m = 0; m < antennas; ++m) {
        a.re(m, 0) = std::cos(step * m);
        a.im(m, 0) = std::sin(step * m);
    }
    return a;
}

/// Draws path geometry and gains for every user of one sample, then sums
/// the narrowband rays on each carrier:
///   h_i,k = sum_l gain_i,l,k * exp(-j*2*pi*f_i*d_l,k/c) * a(theta_l,k).
/// Geometry (angles, distances) is shared between carriers; complex gains
/// are independent per carrier unless cfg.shared_gains is set. All draws are
/// keyed by (seed, domain, sample_index, user, path), so samples are
/// reproducible in isolation and independent of generation order.
inline ChannelSample generate_sample(const SystemConfig &cfg, std::uint64_t sample_index)
{
    const int M = cfg.antennas, K = cfg.users, LP = cfg.paths;
    ChannelSample s;
    s.h_ul = ComplexMatrix(M, K);
    s.h_dl = ComplexMatrix(M, K);
    s.paths.resize(K);
    const double gain_scale = 1.0 / std::sqrt(static_cast<double>(LP));

    for (int k = 0; k < K; ++k) {
        s.paths[k].resize(LP);
        for (int l = 0; l < LP; ++l) {
            const auto lane = rng_lane(k, l);
            Prng angle_rng(cfg.rng_seed, RngDomain::path_angle, sample_index, lane);
            Prng dist_rng(cfg.rng_seed, RngDomain::path_distance, sample_index, lane);
            Prng gul_rng(cfg.rng_seed, RngDomain::gain_ul, sample_index, lane);

            PathParams p;
            p.angle_rad = angle_rng.uniform_open(-0.5 * Prng::PI, 0.5 * Prng::PI);
            p.distance_m = dist_rng.uniform(cfg.dist_min_m, cfg.dist_max_m);
            auto [gur, gui] = gul_rng.gaussian_pair();
            p.gain_ul = {gur * gain_scale / std::sqrt(2.0), gui * gain_scale / std::sqrt(2.0)};
            if (cfg.shared_gains) {
                p.gain_dl = p.gain_ul;
            } else {
                Prng gdl_rng(cfg.rng_seed, RngDomain::gain_dl, sample_index, lane);
                auto [gdr, gdi] = gdl_rng.gaussian_pair();
                p.gain_dl = {gdr * gain_scale / std::sqrt(2.0), gdi * gain_scale / std::sqrt(2.0)};
            }
            s.paths[k][l] = p;

            const ComplexMatrix a = array_response(M, p.angle_rad, cfg.spacing_over_lambda);
            const double tau = p.distance_m / SPEED_OF_LIGHT;
            for (int carrier = 0; carrier < 2; ++carrier) {
                const double f = carrier == 0 ? cfg.f_ul_hz : cfg.f_dl_hz;
                const std::complex<double> g = carrier == 0 ? p.gain_ul : p.gain_dl;
                const double phase = -2.0 * Prng::PI * f * tau;
                const std::complex<double> coeff = g * std::complex<double>(std::cos(phase), std::sin(phase));
                ComplexMatrix &h = carrier == 0 ? s.h_ul : s.h_dl;
                for (int m = 0; m < M; ++m) {
                    const std::complex<double> am{a.re(m, 0), a.im(m, 0)};
                    const std::complex<double> v = coeff * am;
                    h.re(m, k) += v.real();
                    h.im(m, k) += v.imag();
                }
            }
        }
    }
    return s;
}

/// Default pilot book: row k of the K x L matrix is
///   p_k[l] = sqrt(p_ul) * exp(-j*2*pi*k*l/L),
/// i.e. the first K rows of the scaled L-point DFT matrix. Rows meet the
/// per-user budget ||p_k||^2 = p_ul * L with equality and are mutually
/// orthogonal: P P^H = (p_ul * L) I.
inline ComplexMatrix default_pilots(int users, int pilot_len, double p_ul)
{
    if (users < 1 || pilot_len < users)
        throw std::invalid_argument("default_pilots: need 1 <= users <= pilot_len");
    if (!(p_ul > 0.0))
        throw std::invalid_argument("default_pilots: p_ul must be positive");
    ComplexMatrix p(users, pilot_len);
    const double amp = std::sqrt(p_ul);
    for (int k = 0; k < users; ++k)
        for (int l = 0; l < pilot_len; ++l) {
            const double phase = -2.0 * Prng::PI * static_cast<double>(k) * static_cast<double>(l) /
                                 static_cast<double>(pilot_len);
            p.re(k, l) = amp * std::cos(phase);
            p.im(k, l) = amp * std::sin(phase);
        }
    return p;
}

/// Uplink pilot pass: Y = H_ul * P + N with N i.i.d. CN(0, sigma_ul_sq).
/// Enforces the per-user energy budget ||p_k||^2 <= p_ul * pilot_len
/// (small relative slack for rounding). Noise is keyed per
/// (sample, antenna, symbol), independent of the channel draws. Stores the
/// result in the sample and returns a reference to it.
inline const ComplexMatrix &transmit_pilots(ChannelSample &s, const ComplexMatrix &pilots, const SystemConfig &cfg,
                                            std::uint64_t sample_index)
{
    const int M = cfg.antennas, K = cfg.users, L = cfg.pilot_len;
    if (pilots.rows() != K || pilots.cols() != L)
        throw std::invalid_argument("transmit_pilots: pilot matrix must be " + std::to_string(K) + "x" +
                                    std::to_string(L) + ", got " + std::to_string(pilots.rows()) + "x" +
                                    std::to_string(pilots.cols()));
    if (s.h_ul.rows() != M || s.h_ul.cols() != K)
        throw std::invalid_argument("transmit_pilots: sample/config dimension mismatch");
    const double budget = cfg.p_ul * static_cast<double>(L);
    for (int k = 0; k < K; ++k) {
        double e = 0.0;
        for (int l = 0; l < L; ++l)
            e += pilots.re(k, l) * pilots.re(k, l) + pilots.im(k, l) * pilots.im(k, l);
        if (e > budget * (1.0 + 1e-12))
            throw std::invalid_argument("transmit_pilots: pilot energy for user " + std::to_string(k) + " is " +
                                        std::to_string(e) + ", exceeds budget " + std::to_string(budget));
    }

    s.y_pilots = cmul(s.h_ul, pilots);
    const double noise_amp = std::sqrt(cfg.sigma_ul_sq / 2.0);
    if (noise_amp > 0.0) {
        for (int m = 0; m < M; ++m)
            for (int l = 0; l < L; ++l) {
                Prng noise_rng(cfg.rng_seed, RngDomain::pilot_noise, sample_index, rng_lane(m, l));
                auto [nr, ni] = noise_rng.gaussian_pair();
                s.y_pilots.re(m, l) += noise_amp * nr;
                s.y_pilots.im(m, l) += noise_amp * ni;
            }
    }
    s.has_pilots = true;
    return s.y_pilots;
}

} // namespace ncal
