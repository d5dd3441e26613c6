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

#include <ncal/calibration.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

using namespace ncal;

namespace {

ComplexMatrix random_cmat(int r, int c, std::uint64_t sample, std::uint32_t lane = 0)
{
    ComplexMatrix m(r, c);
    Prng pr(123, RngDomain::eval_misc, sample, lane);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
            auto [re, im] = pr.gaussian_pair();
            m.set(i, j, {re, im});
        }
    return m;
}

std::vector<int> random_perm(int n, std::uint64_t sample)
{
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i)
        p[i] = i;
    Prng pr(321, RngDomain::eval_misc, sample, 9);
    for (int i = n; i > 1; --i)
        std::swap(p[i - 1], p[static_cast<int>(pr.uniform_index(static_cast<std::uint64_t>(i)))]);
    return p;
}

ComplexMatrix permute_rows(const ComplexMatrix &m, const std::vector<int> &p)
{
    ComplexMatrix out(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j)
            out.set(i, j, m(p[i], j));
    return out;
}

double cdiff(const ComplexMatrix &a, const ComplexMatrix &b)
{
    double worst = 0.0;
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j)
            worst = std::max(worst, std::abs(a(i, j) - b(i, j)));
    return worst;
}

std::string temp_path(const char *leaf)
{
    return (std::filesystem::temp_directory_path() / leaf).string();
}

// Small dataset with pilot observations attached.
std::vector<ChannelSample> make_dataset(const SystemConfig &cfg, const ComplexMatrix &pilots, std::size_t n,
                                        std::uint64_t offset = 0)
{
    std::vector<ChannelSample> samples;
    samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ChannelSample s = generate_sample(cfg, offset + i);
        transmit_pilots(s, pilots, cfg, offset + i);
        samples.push_back(std::move(s));
    }
    return samples;
}

} // namespace

TEST_CASE("packed-row layout is [Re | Im] and round-trips", "[calibration]")
{
    ComplexMatrix m(2, 3);
    m.set(0, 0, {1.0, -2.0});
    m.set(0, 1, {3.0, 4.0});
    m.set(0, 2, {-5.0, 6.0});
    m.set(1, 0, {0.5, 0.25});
    m.set(1, 1, {0.0, -1.0});
    m.set(1, 2, {7.0, 0.0});
    RealMatrix p = to_packed_rows(m);
    REQUIRE(p.rows() == 2);
    REQUIRE(p.cols() == 6);
    CHECK(p(0, 0) == 1.0);
    CHECK(p(0, 3) == -2.0); // imag block starts at column c
    CHECK(p(0, 1) == 3.0);
    CHECK(p(0, 4) == 4.0);
    CHECK(p(1, 2) == 7.0);
    CHECK(p(1, 5) == 0.0);
    CHECK(cdiff(from_packed_rows(p), m) == 0.0);
    CHECK_THROWS_AS(from_packed_rows(RealMatrix(2, 5)), std::invalid_argument);
}

TEST_CASE("least-squares estimation is exact without noise", "[calibration]")
{
    SystemConfig cfg;
    cfg.antennas = 8;
    cfg.users = 3;
    cfg.pilot_len = 4;
    cfg.sigma_ul_sq = 0.0;
    const ComplexMatrix pilots = default_pilots(cfg.users, cfg.pilot_len, cfg.p_ul);
    for (std::uint64_t i = 0; i < 5; ++i) {
        ChannelSample s = generate_sample(cfg, i);
        transmit_pilots(s, pilots, cfg, i);
        const ComplexMatrix h_hat = ls_estimate(s.y_pilots, pilots);
        CHECK(cdiff(h_hat, s.h_ul) < 1e-10);
    }
}

TEST_CASE("least-squares estimation error matches theory under noise", "[calibration]")
{
    // H_hat - H = N P^H (P P^H)^-1, so
    //   E ||H_hat - H||_F^2 = M sigma_ul^2 Tr((P P^H)^-1).
    SystemConfig cfg;
    cfg.antennas = 4;
    cfg.users = 2;
    cfg.pilot_len = 2;
    cfg.sigma_ul_sq = 0.5;
    cfg.p_ul = 2.0;
    const ComplexMatrix pilots = default_pilots(cfg.users, cfg.pilot_len, cfg.p_ul);
    const ComplexMatrix gram_inv = cinv(cmul(pilots, hermitian(pilots)));
    const double expect = cfg.antennas * cfg.sigma_ul_sq * ctrace(gram_inv).real();

    double acc = 0.0;
    const int trials = 4000;
    for (int i = 0; i < trials; ++i) {
        ChannelSample s = generate_sample(cfg, static_cast<std::uint64_t>(i));
        transmit_pilots(s, pilots, cfg, static_cast<std::uint64_t>(i));
        const ComplexMatrix err = csub(ls_estimate(s.y_pilots, pilots), s.h_ul);
        acc += fro_norm_sq(err);
    }
    acc /= trials;
    CHECK(std::abs(acc - expect) < 0.05 * expect);
}

TEST_CASE("least-squares estimation rejects bad pilot books", "[calibration]")
{
    ComplexMatrix y(4, 3);
    ComplexMatrix pilots_wrong(2, 4);
    CHECK_THROWS_AS(ls_estimate(y, pilots_wrong), std::invalid_argument);

    // duplicated pilot rows: rank-deficient Gram
    ComplexMatrix pilots_dup(2, 3);
    for (int j = 0; j < 3; ++j) {
        pilots_dup.set(0, j, {1.0, double(j)});
        pilots_dup.set(1, j, {1.0, double(j)});
    }
    CHECK_THROWS_AS(ls_estimate(random_cmat(4, 3, 0), pilots_dup), IllPosedError);
}

TEST_CASE("antenna calibration commutes with antenna permutations bit-exactly", "[calibration][equivariance]")
{
    const int M = 12, L = 4;
    const MlpParameters net = mlp_init(2 * L, {16, 16}, 2 * L, 77, 0, false);
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
        const ComplexMatrix y = random_cmat(M, L, trial);
        const std::vector<int> p = random_perm(M, trial);
        const ComplexMatrix lhs = antenna_calibrate(permute_rows(y, p), net);
        const ComplexMatrix rhs = permute_rows(antenna_calibrate(y, net), p);
        CHECK(cdiff(lhs, rhs) == 0.0); // same row bits, same arithmetic
    }
}

TEST_CASE("calibrated zero-forcing commutes with user permutations", "[calibration][equivariance]")
{
    const int M = 8, K = 4;
    CalibratedZfModel model;
    model.mlp = mlp_init(2 * M, {24, 24}, 2 * M, 55, 0, false);
    const double p_dl = 2.0;
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
        const ComplexMatrix x = random_cmat(K, M, trial, 1);
        const std::vector<int> p = random_perm(K, trial);
        const ComplexMatrix v = calibrated_zf_beamform(x, model, p_dl);
        const ComplexMatrix v_perm = calibrated_zf_beamform(permute_rows(x, p), model, p_dl);
        // permuting user rows permutes beamformer columns the same way
        double worst = 0.0;
        for (int i = 0; i < M; ++i)
            for (int k = 0; k < K; ++k)
                worst = std::max(worst, std::abs(v_perm(i, k) - v(i, p[k])));
        CHECK(worst < 1e-9);
    }
}

TEST_CASE("freshly initialized residual stages are exact identities", "[calibration]")
{
    const int M = 8, K = 3;
    CalibratedZfModel model;
    model.mlp = mlp_init(2 * M, {16}, 2 * M, 99, 0, /*zero_final=*/true);
    const ComplexMatrix x = random_cmat(K, M, 0, 2);
    CHECK(cdiff(user_calibrate(x, model.mlp), x) == 0.0);
    CHECK(cdiff(calibrated_zf_beamform(x, model, 1.5), zf(x, 1.5)) == 0.0);
}

TEST_CASE("implicit pipeline with identity stages recovers zero-forcing on a reciprocal channel",
          "[calibration]")
{
    SystemConfig cfg;
    cfg.antennas = 8;
    cfg.users = 3;
    cfg.pilot_len = 3;
    cfg.sigma_ul_sq = 0.0;  // noiseless pilots
    cfg.f_ul_hz = cfg.f_dl_hz; // same carrier
    cfg.shared_gains = true;   // same path gains: h_ul == h_dl
    const ComplexMatrix pilots = default_pilots(cfg.users, cfg.pilot_len, cfg.p_ul);

    ImplicitCsiModel model;
    model.antenna_mlp = mlp_init(2 * cfg.pilot_len, {8}, 2 * cfg.pilot_len, 5, 1, true);
    model.channel_map_mlp = mlp_init(2 * cfg.antennas, {8}, 2 * cfg.antennas, 5, 2, true);
    model.zf_calib_mlp = mlp_init(2 * cfg.antennas, {8}, 2 * cfg.antennas, 5, 3, true);
    model.pilots = pilots;

    for (std::uint64_t i = 0; i < 5; ++i) {
        ChannelSample s = generate_sample(cfg, i);
        transmit_pilots(s, pilots, cfg, i);
        REQUIRE(cdiff(s.h_ul, s.h_dl) < 1e-12);
        const ComplexMatrix rows = implicit_csi_rows(s.y_pilots, model);
        CHECK(cdiff(rows, hermitian(s.h_dl)) < 1e-9);
        CHECK(cdiff(implicit_beamform(s.y_pilots, model, cfg.p_dl), zf(hermitian(s.h_dl), cfg.p_dl)) < 1e-9);
        CHECK(cdiff(block_by_block_beamform(s.y_pilots, model.channel_map_mlp, pilots, cfg.p_dl),
                    zf(hermitian(s.h_dl), cfg.p_dl)) < 1e-9);
    }
}

TEST_CASE("relabeling users permutes the implicit beamformer's columns", "[calibration][equivariance]")
{
    // Permuting pilot rows (user labels) leaves the received block unchanged
    // but must permute the recovered per-user columns the same way.
    SystemConfig cfg;
    cfg.antennas = 8;
    cfg.users = 4;
    cfg.pilot_len = 4;
    const ComplexMatrix pilots = default_pilots(cfg.users, cfg.pilot_len, cfg.p_ul);

    ImplicitCsiModel model;
    model.antenna_mlp = mlp_init(2 * cfg.pilot_len, {12}, 2 * cfg.pilot_len, 7, 1, false);
    model.channel_map_mlp = mlp_init(2 * cfg.antennas, {12}, 2 * cfg.antennas, 7, 2, false);
    model.zf_calib_mlp = mlp_init(2 * cfg.antennas, {12}, 2 * cfg.antennas, 7, 3, false);
    model.pilots = pilots;

    ImplicitCsiModel perm_model = model;

    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        ChannelSample s = generate_sample(cfg, trial);
        transmit_pilots(s, pilots, cfg, trial);
        const std::vector<int> p = random_perm(cfg.users, trial);
        perm_model.pilots = permute_rows(pilots, p);

        const ComplexMatrix v = implicit_beamform(s.y_pilots, model, cfg.p_dl);
        const ComplexMatrix v_perm = implicit_beamform(s.y_pilots, perm_model, cfg.p_dl);
        double worst = 0.0;
        for (int i = 0; i < cfg.antennas; ++i)
            for (int k = 0; k < cfg.users; ++k)
                worst = std::max(worst, std::abs(v_perm(i, k) - v(i, p[k])));
        CHECK(worst < 1e-9);
    }
}

TEST_CASE("antenna permutations pass through estimation and identity user stages", "[calibration][equivariance]")
{
    // The per-antenna stage and the LS projection act row-by-row on the
    // observation, so permuting antennas permutes the estimated channel's
    // antenna axis. With identity user-side stages the zero-forcing output
    // then permutes its antenna rows. (A trained user-side network acts on
    // the antenna axis as features, so this only holds with identity user
    // stages; the per-antenna stage itself commutes for any weights.)
    SystemConfig cfg;
    cfg.antennas = 8;
    cfg.users = 3;
    cfg.pilot_len = 3;
    const ComplexMatrix pilots = default_pilots(cfg.users, cfg.pilot_len, cfg.p_ul);

    ImplicitCsiModel model;
    model.antenna_mlp = mlp_init(2 * cfg.pilot_len, {10}, 2 * cfg.pilot_len, 31, 1, false); // random weights
    model.channel_map_mlp = mlp_init(2 * cfg.antennas, {8}, 2 * cfg.antennas, 31, 2, true); // identity
    model.zf_calib_mlp = mlp_init(2 * cfg.antennas, {8}, 2 * cfg.antennas, 31, 3, true);    // identity
    model.pilots = pilots;

    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        ChannelSample s = generate_sample(cfg, trial);
        transmit_pilots(s, pilots, cfg, trial);
        const std::vector<int> p = random_perm(cfg.antennas, trial);

        // estimation stage: rows (antennas) permute
        const ComplexMatrix est = ls_estimate(antenna_calibrate(s.y_pilots, model.antenna_mlp), pilots);
        const ComplexMatrix est_perm =
            ls_estimate(antenna_calibrate(permute_rows(s.y_pilots, p), model.antenna_mlp), pilots);
        CHECK(cdiff(est_perm, permute_rows(est, p)) < 1e-10);

        // full pipeline: beamformer antenna rows permute
        const ComplexMatrix v = implicit_beamform(s.y_pilots, model, cfg.p_dl);
        const ComplexMatrix v_perm = implicit_beamform(permute_rows(s.y_pilots, p), model, cfg.p_dl);
        CHECK(cdiff(v_perm, permute_rows(v, p)) < 1e-9);
    }
}

TEST_CASE("perfect-CSI training is deterministic and moves the model", "[calibration][training]")
{
    SystemConfig cfg;
    cfg.antennas = 4;
    cfg.users = 2;
    cfg.pilot_len = 2;
    cfg.rng_seed = 11;
    const ComplexMatrix pilots = default_pilots(cfg.users, cfg.pilot_len, cfg.p_ul);
    const std::vector<ChannelSample> samples = make_dataset(cfg, pilots, 64);

    TrainHyper hyper;
    hyper.epochs = 5;
    hyper.batch = 16;
    hyper.lr = 1e-3;
    hyper.holdout_frac = 0.25;
    hyper.user_hidden = {16, 16};

    int callbacks = 0;
    PerfectCsiTraining a = train_perfect_csi(samples, cfg, hyper,
                                             [&](int, const EpochStats &) { ++callbacks; });
    CHECK(callbacks == hyper.epochs);
    REQUIRE(a.curve.size() == std::size_t(hyper.epochs));
    for (const EpochStats &st : a.curve) {
        CHECK(std::isfinite(st.train_objective));
        CHECK(std::isfinite(st.holdout_objective));
        CHECK(st.train_objective > 0.0);
    }
    // starts at the plain zero-forcing rate (zero-init residual) and must not
    // collapse; five epochs on this tiny problem should not lose ground
    CHECK(a.curve.back().train_objective > 0.9 * a.curve.front().train_objective);
    // gradient actually reached the network
    CHECK(max_abs(a.model.mlp.w.back()) > 0.0);

    PerfectCsiTraining b = train_perfect_csi(samples, cfg, hyper);
    REQUIRE(b.curve.size() == a.curve.size());
    for (std::size_t i = 0; i < a.curve.size(); ++i) {
        CHECK(a.curve[i].train_objective == b.curve[i].train_objective);
        CHECK(a.curve[i].holdout_objective == b.curve[i].holdout_objective);
    }
    for (std::size_t l = 0; l < a.model.mlp.w.size(); ++l)
        CHECK(max_abs(sub(a.model.mlp.w[l], b.model.mlp.w[l])) == 0.0);
}

TEST_CASE("training rejects ill-posed batches with a located error", "[calibration][training]")
{
    SystemConfig cfg;
    cfg.antennas = 4;
    cfg.users = 2;
    cfg.pilot_len = 2;
    const ComplexMatrix pilots = default_pilots(cfg.users, cfg.pilot_len, cfg.p_ul);
    std::vector<ChannelSample> samples = make_dataset(cfg, pilots, 8);
    // duplicate one user's channel so the zero-forcing Gram matrix is singular
    for (ChannelSample &s : samples)
        for (int i = 0; i < cfg.antennas; ++i)
            s.h_dl.set(i, 1, s.h_dl(i, 0));

    TrainHyper hyper;
    hyper.epochs = 1;
    hyper.batch = 8;
    hyper.holdout_frac = 0.0;
    hyper.user_hidden = {8};

    try {
        train_perfect_csi(samples, cfg, hyper);
        FAIL("expected divergence error");
    } catch (const std::runtime_error &e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch 0") != std::string::npos);
        CHECK(msg.find("batch") != std::string::npos);
    }
}

TEST_CASE("hyper-parameter validation names the offending field", "[calibration]")
{
    TrainHyper h;
    h.epochs = 0;
    CHECK_THROWS_WITH(validate(h), Catch::Matchers::ContainsSubstring("epochs"));
    h = TrainHyper{};
    h.lr = 0.0;
    CHECK_THROWS_WITH(validate(h), Catch::Matchers::ContainsSubstring("lr"));
    h = TrainHyper{};
    h.holdout_frac = 1.0;
    CHECK_THROWS_WITH(validate(h), Catch::Matchers::ContainsSubstring("holdout_frac"));
}

TEST_CASE("implicit training reaches all three networks deterministically", "[calibration][training]")
{
    SystemConfig cfg;
    cfg.antennas = 4;
    cfg.users = 2;
    cfg.pilot_len = 2;
    cfg.rng_seed = 13;
    const ComplexMatrix pilots = default_pilots(cfg.users, cfg.pilot_len, cfg.p_ul);
    const std::vector<ChannelSample> samples = make_dataset(cfg, pilots, 48);

    TrainHyper hyper;
    hyper.epochs = 3;
    hyper.batch = 16;
    hyper.lr = 1e-3;
    hyper.holdout_frac = 0.25;
    hyper.user_hidden = {12};
    hyper.antenna_hidden = {8};

    ImplicitTraining a = train_implicit(samples, pilots, cfg, hyper);
    REQUIRE(a.curve.size() == 3);
    for (const EpochStats &st : a.curve)
        CHECK(std::isfinite(st.train_objective));
    // all stages start zero-final; nonzero final weights prove the gradient
    // reached each of them
    CHECK(max_abs(a.model.antenna_mlp.w.back()) > 0.0);
    CHECK(max_abs(a.model.channel_map_mlp.w.back()) > 0.0);
    CHECK(max_abs(a.model.zf_calib_mlp.w.back()) > 0.0);
    CHECK(cdiff(a.model.pilots, pilots) == 0.0);

    ImplicitTraining b = train_implicit(samples, pilots, cfg, hyper);
    for (std::size_t i = 0; i < a.curve.size(); ++i)
        CHECK(a.curve[i].train_objective == b.curve[i].train_objective);
    CHECK(max_abs(sub(a.model.zf_calib_mlp.w.back(), b.model.zf_calib_mlp.w.back())) == 0.0);
}

TEST_CASE("estimate-then-map training reduces its regression error", "[calibration][training]")
{
    SystemConfig cfg;
    cfg.antennas = 4;
    cfg.users = 2;
    cfg.pilot_len = 2;
    cfg.rng_seed = 17;
    cfg.shared_gains = true;
    cfg.f_ul_hz = cfg.f_dl_hz;
    cfg.sigma_ul_sq = 0.01; // nearly clean estimates of an identical channel
    const ComplexMatrix pilots = default_pilots(cfg.users, cfg.pilot_len, cfg.p_ul);
    const std::vector<ChannelSample> samples = make_dataset(cfg, pilots, 64);

    TrainHyper hyper;
    hyper.epochs = 8;
    hyper.batch = 16;
    hyper.lr = 1e-3;
    hyper.holdout_frac = 0.25;
    hyper.user_hidden = {12};

    BlockByBlockTraining tr = train_block_by_block(samples, pilots, cfg, hyper);
    REQUIRE(tr.curve.size() == 8);
    for (const EpochStats &st : tr.curve) {
        CHECK(std::isfinite(st.train_objective));
        CHECK(st.train_objective >= 0.0); // mean squared error
    }
    CHECK(tr.curve.back().train_objective <= tr.curve.front().train_objective * 1.05);
    CHECK(max_abs(tr.channel_map_mlp.w.back()) > 0.0);
}

TEST_CASE("rate evaluation tallies ill-posed samples as failures", "[calibration]")
{
    SystemConfig cfg;
    cfg.antennas = 4;
    cfg.users = 2;
    cfg.pilot_len = 2;
    const std::vector<ChannelSample> samples = make_dataset(cfg, default_pilots(2, 2, 1.0), 4);
    int calls = 0;
    RateStats st = evaluate_rates(samples, cfg.sigma0_sq, [&](const ChannelSample &s) {
        if (calls++ == 0)
            throw IllPosedError("synthetic failure", 1e99);
        return mrt(hermitian(s.h_dl), cfg.p_dl);
    });
    CHECK(st.n == 4);
    CHECK(st.failures == 1);
    CHECK(st.mean > 0.0);

    RateStats empty = evaluate_rates({}, 1.0, [](const ChannelSample &) { return ComplexMatrix(1, 1); });
    CHECK(empty.n == 0);
}

TEST_CASE("mismatch evaluation compares against a matched model", "[calibration]")
{
    SystemConfig cfg;
    cfg.antennas = 6;
    cfg.users = 3;
    cfg.pilot_len = 3;
    CalibratedZfModel model;
    model.mlp = mlp_init(2 * cfg.antennas, {8}, 2 * cfg.antennas, 3, 0, true);

    MismatchRow row = evaluate_mismatch_point(model, cfg, /*users_test=*/2, &model, /*eval_count=*/5);
    CHECK(row.users_test == 2);
    CHECK(row.model.n == 5);
    CHECK(row.matched.n == 5);
    CHECK(row.model.mean == row.matched.mean); // same model on both sides
    CHECK(row.ratio_to_matched == Catch::Approx(1.0));

    MismatchRow solo = evaluate_mismatch_point(model, cfg, 4, nullptr, 3);
    CHECK(solo.matched.n == 0);
    CHECK(solo.ratio_to_matched == 0.0);

    CHECK_THROWS_AS(evaluate_mismatch_point(model, cfg, cfg.antennas + 1, nullptr, 2), std::invalid_argument);
    CHECK_THROWS_AS(evaluate_mismatch_point(model, cfg, 0, nullptr, 2), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip every model family", "[calibration][io]")
{
    const int M = 4, K = 2, L = 2;
    const ComplexMatrix pilots = default_pilots(K, L, 1.0);
    const ComplexMatrix x = random_cmat(K, M, 1, 7);

    SECTION("calibrated zero-forcing")
    {
        const std::string path = temp_path("ncal_test_zf.ckpt");
        CalibratedZfModel model;
        model.mlp = mlp_init(2 * M, {6}, 2 * M, 21, 0, false);
        save_calibrated_zf(path, model, "{\"note\":\"unit\"}");
        CHECK(peek_checkpoint_kind(path) == ModelKind::calibrated_zf);
        std::string manifest;
        CalibratedZfModel back = load_calibrated_zf(path, &manifest);
        CHECK(manifest == "{\"note\":\"unit\"}");
        CHECK(cdiff(calibrated_zf_beamform(x, back, 1.0), calibrated_zf_beamform(x, model, 1.0)) == 0.0);
        std::remove(path.c_str());
    }

    SECTION("implicit pipeline")
    {
        const std::string path = temp_path("ncal_test_implicit.ckpt");
        ImplicitCsiModel model;
        model.antenna_mlp = mlp_init(2 * L, {6}, 2 * L, 22, 1, false);
        model.channel_map_mlp = mlp_init(2 * M, {6}, 2 * M, 22, 2, false);
        model.zf_calib_mlp = mlp_init(2 * M, {6}, 2 * M, 22, 3, false);
        model.pilots = pilots;
        save_implicit_csi(path, model, "m");
        CHECK(peek_checkpoint_kind(path) == ModelKind::implicit_csi);
        ImplicitCsiModel back = load_implicit_csi(path);
        SystemConfig cfg;
        cfg.antennas = M;
        cfg.users = K;
        cfg.pilot_len = L;
        ChannelSample s = generate_sample(cfg, 0);
        transmit_pilots(s, pilots, cfg, 0);
        CHECK(cdiff(implicit_beamform(s.y_pilots, back, 1.0), implicit_beamform(s.y_pilots, model, 1.0)) == 0.0);
        CHECK(cdiff(back.pilots, pilots) == 0.0);

        // loading it as the wrong family must fail and name the file
        CHECK_THROWS_WITH(load_calibrated_zf(path), Catch::Matchers::ContainsSubstring("ncal_test_implicit"));
        std::remove(path.c_str());
    }

    SECTION("estimate-then-map baseline")
    {
        const std::string path = temp_path("ncal_test_bbb.ckpt");
        MlpParameters map = mlp_init(2 * M, {6}, 2 * M, 23, 0, false);
        save_block_by_block(path, map, pilots, "");
        CHECK(peek_checkpoint_kind(path) == ModelKind::block_by_block);
        auto [map_back, pilots_back] = load_block_by_block(path);
        CHECK(cdiff(pilots_back, pilots) == 0.0);
        CHECK(max_abs(sub(mlp_infer(map_back, to_packed_rows(x)), mlp_infer(map, to_packed_rows(x)))) == 0.0);
        std::remove(path.c_str());
    }

    SECTION("corrupt and missing files are rejected with the path in the message")
    {
        const std::string path = temp_path("ncal_test_corrupt.ckpt");
        {
            std::ofstream os(path, std::ios::binary);
            os << "this is not a checkpoint";
        }
        CHECK_THROWS_WITH(peek_checkpoint_kind(path), Catch::Matchers::ContainsSubstring("ncal_test_corrupt"));
        std::remove(path.c_str());
        CHECK_THROWS_AS(peek_checkpoint_kind(temp_path("ncal_test_missing.ckpt")), std::runtime_error);
    }
}

TEST_CASE("gradients flow through the calibrated pipeline", "[calibration][grad]")
{
    // Differentiate the achieved sum rate with respect to the calibration
    // network's parameters (eval mode, so batch norm is a fixed affine map)
    // and compare every coordinate against central differences.
    const int M = 4, K = 2;
    const double p_dl = 1.0, s2 = 1.0;
    SystemConfig cfg;
    cfg.antennas = M;
    cfg.users = K;
    const ComplexMatrix h = generate_sample(cfg, 3).h_dl;
    const ComplexMatrix x_rows = hermitian(h);
    const RealMatrix packed = to_packed_rows(x_rows);

    MlpParameters net = mlp_init(2 * M, {6}, 2 * M, 41, 0, false);

    Tape t;
    Tape::Var xin = t.constant(packed);
    MlpTapeBinding bind = mlp_forward_tape(t, net, xin, MlpMode::eval);
    Tape::Var calibrated = t.add(xin, bind.out);
    CVar rows = c_unpack_rows(t, calibrated, M);
    CVar v = zf_tape(t, rows, p_dl);
    Tape::Var rate = sum_rate_tape(t, c_constant(t, x_rows), v, s2);
    t.backward(rate);

    // forward value agrees with the non-tape pipeline
    CalibratedZfModel model{net};
    const double direct = sum_rate(x_rows, calibrated_zf_beamform(x_rows, model, p_dl), s2);
    CHECK(t.value(rate)(0, 0) == Catch::Approx(direct).epsilon(1e-10));

    std::vector<RealMatrix *> params = mlp_trainables(net);
    const double eps = 1e-6;
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const RealMatrix &g = t.grad(bind.params[pi]);
        for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) {
                auto eval_rate = [&](double delta) {
                    MlpParameters q = net;
                    (*mlp_trainables(q)[pi])(i, j) += delta;
                    CalibratedZfModel mq{q};
                    return sum_rate(x_rows, calibrated_zf_beamform(x_rows, mq, p_dl), s2);
                };
                const double fd = (eval_rate(eps) - eval_rate(-eps)) / (2 * eps);
                worst = std::max(worst, std::abs(g(i, j) - fd) / std::max(1e-4, std::abs(fd)));
            }
    }
    CHECK(worst < 1e-4);
}
