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

#include <ncal/channel.hpp>
#include <ncal/dataset_io.hpp>

#include <cmath>
#include <complex>
#include <cstdio>

using namespace ncal;

TEST_CASE("array response phases match the hand evaluation", "[channel]")
{
    // theta = pi/6, d/lambda = 0.5, M = 4: phase step 2*pi*0.5*sin(pi/6) = pi/2
    // -> entries (1, j, -1, -j).
    ComplexMatrix a = array_response(4, Prng::PI / 6.0, 0.5);
    CHECK(a.re(0, 0) == Catch::Approx(1.0).margin(1e-12));
    CHECK(a.im(0, 0) == Catch::Approx(0.0).margin(1e-12));
    CHECK(a.re(1, 0) == Catch::Approx(0.0).margin(1e-12));
    CHECK(a.im(1, 0) == Catch::Approx(1.0).margin(1e-12));
    CHECK(a.re(2, 0) == Catch::Approx(-1.0).margin(1e-12));
    CHECK(a.im(3, 0) == Catch::Approx(-1.0).margin(1e-12));
    // unit-modulus elements always
    for (int m = 0; m < 4; ++m)
        CHECK(a.re(m, 0) * a.re(m, 0) + a.im(m, 0) * a.im(m, 0) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("channel energy is normalized to the antenna count", "[channel]")
{
    SystemConfig cfg;
    cfg.antennas = 16;
    cfg.users = 2;
    cfg.pilot_len = 2;
    cfg.paths = 5;
    const int n = 10000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        ChannelSample s = generate_sample(cfg, static_cast<std::uint64_t>(i));
        acc += fro_norm_sq(s.h_dl) / cfg.users;
    }
    const double mean = acc / n;
    CHECK(std::abs(mean - cfg.antennas) < 0.03 * cfg.antennas);
}

TEST_CASE("stored path parameters reconstruct the stored channel", "[channel]")
{
    SystemConfig cfg;
    cfg.antennas = 8;
    cfg.users = 3;
    cfg.pilot_len = 3;
    cfg.paths = 4;
    ChannelSample s = generate_sample(cfg, 77);
    REQUIRE(s.paths.size() == static_cast<std::size_t>(cfg.users));

    // Independent reconstruction from the stored geometry/gains, using the
    // narrowband ray model: h_k = sum_l alpha_l * e^{-j 2 pi f tau_l} a(theta_l).
    for (int carrier = 0; carrier < 2; ++carrier) {
        const double f = carrier == 0 ? cfg.f_ul_hz : cfg.f_dl_hz;
        const ComplexMatrix &h = carrier == 0 ? s.h_ul : s.h_dl;
        for (int k = 0; k < cfg.users; ++k) {
            REQUIRE(s.paths[k].size() == static_cast<std::size_t>(cfg.paths));
            ComplexMatrix hk(cfg.antennas, 1);
            for (const PathParams &p : s.paths[k]) {
                const double tau = p.distance_m / SPEED_OF_LIGHT;
                const double rot = -2.0 * Prng::PI * f * tau;
                const std::complex<double> gain = carrier == 0 ? p.gain_ul : p.gain_dl;
                const std::complex<double> c = gain * std::complex<double>(std::cos(rot), std::sin(rot));
                ComplexMatrix a = array_response(cfg.antennas, p.angle_rad, cfg.spacing_over_lambda);
                for (int m = 0; m < cfg.antennas; ++m) {
                    const std::complex<double> am(a.re(m, 0), a.im(m, 0));
                    const std::complex<double> v = c * am;
                    hk.re(m, 0) += v.real();
                    hk.im(m, 0) += v.imag();
                }
            }
            for (int m = 0; m < cfg.antennas; ++m) {
                CHECK(std::abs(hk.re(m, 0) - h.re(m, k)) < 1e-10);
                CHECK(std::abs(hk.im(m, 0) - h.im(m, k)) < 1e-10);
            }
        }
    }
}

TEST_CASE("samples are deterministic in (config, index) and frozen", "[channel]")
{
    SystemConfig cfg; // defaults: M=16, K=4, seed 1
    ChannelSample a = generate_sample(cfg, 0);
    ChannelSample b = generate_sample(cfg, 0);
    CHECK(cmax_abs(csub(a.h_dl, b.h_dl)) == 0.0);
    CHECK(cmax_abs(csub(a.h_ul, b.h_ul)) == 0.0);
    ChannelSample c = generate_sample(cfg, 1);
    CHECK(cmax_abs(csub(a.h_dl, c.h_dl)) > 1e-6);

    // Frozen regression values for the default stream layout.
    CHECK(a.h_dl.re(0, 0) == Catch::Approx(-0.16501573024313498).epsilon(1e-14));
    CHECK(a.h_dl.im(0, 0) == Catch::Approx(-0.034432424126304428).epsilon(1e-14));
    CHECK(a.h_dl.re(15, 3) == Catch::Approx(-0.45205725215124415).epsilon(1e-14));
    CHECK(a.h_ul.re(0, 0) == Catch::Approx(-0.74160505837510537).epsilon(1e-14));
}

TEST_CASE("equal carriers with shared gains make both links identical", "[channel]")
{
    SystemConfig cfg;
    cfg.antennas = 8;
    cfg.users = 2;
    cfg.pilot_len = 2;
    cfg.f_ul_hz = 2.4e9;
    cfg.f_dl_hz = 2.4e9;
    cfg.shared_gains = true;
    ChannelSample s = generate_sample(cfg, 5);
    CHECK(cmax_abs(csub(s.h_ul, s.h_dl)) == 0.0);

    cfg.shared_gains = false;
    ChannelSample t = generate_sample(cfg, 5);
    CHECK(cmax_abs(csub(t.h_ul, t.h_dl)) > 1e-6); // independent gains differ
}

TEST_CASE("angles and distances respect their ranges", "[channel]")
{
    SystemConfig cfg;
    cfg.antennas = 4;
    cfg.users = 2;
    cfg.pilot_len = 2;
    cfg.paths = 6;
    for (int i = 0; i < 200; ++i) {
        ChannelSample s = generate_sample(cfg, 1000 + i);
        for (const auto &user_paths : s.paths)
            for (const PathParams &p : user_paths) {
                REQUIRE(p.angle_rad > -Prng::PI / 2.0);
                REQUIRE(p.angle_rad < Prng::PI / 2.0);
                REQUIRE(p.distance_m >= cfg.dist_min_m);
                REQUIRE(p.distance_m < cfg.dist_max_m);
            }
    }
}

TEST_CASE("default pilots satisfy the pinned power identities", "[channel]")
{
    // K = L = 1: single entry sqrt(P_UL * L).
    ComplexMatrix p1 = default_pilots(1, 1, 2.5);
    CHECK(p1.re(0, 0) == Catch::Approx(std::sqrt(2.5)).margin(1e-14));
    CHECK(p1.im(0, 0) == Catch::Approx(0.0).margin(1e-14));

    // K = L = 4: P P^H = (P_UL * L) I and per-user budget equality.
    const double p_ul = 1.7;
    ComplexMatrix p = default_pilots(4, 4, p_ul);
    ComplexMatrix g = cmul(p, hermitian(p));
    for (int i = 0; i < 4; ++i)
        g.re(i, i) -= p_ul * 4.0;
    CHECK(cmax_abs(g) < 1e-10);

    CHECK_THROWS_AS(default_pilots(4, 3, 1.0), std::invalid_argument); // L < K
}

TEST_CASE("pilot transmission is exact at zero noise and calibrated in variance", "[channel]")
{
    SystemConfig cfg;
    cfg.antennas = 8;
    cfg.users = 3;
    cfg.pilot_len = 4;
    cfg.p_ul = 2.0;

    ComplexMatrix p = default_pilots(cfg.users, cfg.pilot_len, cfg.p_ul);

    SECTION("zero noise: Y = H P exactly")
    {
        cfg.sigma_ul_sq = 0.0;
        ChannelSample s = generate_sample(cfg, 3);
        transmit_pilots(s, p, cfg, 3);
        CHECK(cmax_abs(csub(s.y_pilots, cmul(s.h_ul, p))) < 1e-13);
    }

    SECTION("noise variance matches sigma_ul_sq")
    {
        cfg.sigma_ul_sq = 0.5;
        double acc = 0.0;
        long cnt = 0;
        for (int i = 0; i < 2000; ++i) {
            ChannelSample s = generate_sample(cfg, 5000 + i);
            transmit_pilots(s, p, cfg, 5000 + i);
            ComplexMatrix noise = csub(s.y_pilots, cmul(s.h_ul, p));
            acc += fro_norm_sq(noise);
            cnt += static_cast<long>(noise.rows()) * noise.cols();
        }
        const double var = acc / static_cast<double>(cnt);
        CHECK(std::abs(var - cfg.sigma_ul_sq) < 0.05 * cfg.sigma_ul_sq);
    }

    SECTION("pilot books above the power budget are rejected by user")
    {
        ComplexMatrix hot = cscale(p, 1.5); // ||p_k||^2 now 2.25x the budget
        ChannelSample s = generate_sample(cfg, 3);
        try {
            transmit_pilots(s, hot, cfg, 3);
            FAIL("expected budget rejection");
        } catch (const std::invalid_argument &e) {
            CHECK(std::string(e.what()).find("user 0") != std::string::npos);
        }
    }
}

TEST_CASE("config validation names the offending field", "[channel]")
{
    SystemConfig cfg;
    cfg.users = 0;
    try {
        validate(cfg);
        FAIL("expected rejection");
    } catch (const std::invalid_argument &e) {
        CHECK(std::string(e.what()).find("users") != std::string::npos);
    }
    cfg = SystemConfig{};
    cfg.pilot_len = cfg.users - 1;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg = SystemConfig{};
    cfg.dist_min_m = 50.0;
    cfg.dist_max_m = 5.0;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
}

TEST_CASE("dataset files round-trip bit-exactly", "[dataset]")
{
    SystemConfig cfg;
    cfg.antennas = 6;
    cfg.users = 2;
    cfg.pilot_len = 3;
    ComplexMatrix pilots = default_pilots(cfg.users, cfg.pilot_len, cfg.p_ul);
    std::vector<ChannelSample> data = generate_dataset(cfg, pilots, 7);
    REQUIRE(data.size() == 7);

    const std::string path = "test_channel_ds.bin";
    save_dataset(path, data, cfg);
    DatasetHeader hdr;
    std::vector<ChannelSample> back = load_dataset(path, &hdr);
    std::remove(path.c_str());

    REQUIRE(back.size() == data.size());
    CHECK(hdr.antennas == cfg.antennas);
    CHECK(hdr.users == cfg.users);
    CHECK(hdr.pilot_len == cfg.pilot_len);
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(cmax_abs(csub(back[i].h_ul, data[i].h_ul)) == 0.0);
        CHECK(cmax_abs(csub(back[i].h_dl, data[i].h_dl)) == 0.0);
        CHECK(cmax_abs(csub(back[i].y_pilots, data[i].y_pilots)) == 0.0);
    }
}

TEST_CASE("dataset loader rejects corrupt headers", "[dataset]")
{
    const std::string path = "test_channel_bad.bin";
    {
        std::FILE *f = std::fopen(path.c_str(), "wb");
        REQUIRE(f != nullptr);
        std::fputs("NOTADATASET", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_dataset(path), std::runtime_error);
    std::remove(path.c_str());
}
