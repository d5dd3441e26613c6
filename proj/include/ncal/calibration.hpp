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
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "adam.hpp"
#include "beamforming.hpp"
#include "channel.hpp"
#include "mlp.hpp"
#include "tape_complex.hpp"

namespace ncal {

// --- packing between complex matrices and shared-MLP real rows ------------

/// Rows x 2c real matrix [Re | Im] from a rows x c complex matrix.
inline RealMatrix to_packed_rows(const ComplexMatrix &m)
{
    RealMatrix out(m.rows(), 2 * m.cols());
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) {
            out(i, j) = m.re(i, j);
            out(i, m.cols() + j) = m.im(i, j);
        }
    return out;
}

inline ComplexMatrix from_packed_rows(const RealMatrix &packed)
{
    if (packed.cols() % 2 != 0)
        throw std::invalid_argument("from_packed_rows: odd column count");
    const int c = packed.cols() / 2;
    ComplexMatrix m(packed.rows(), c);
    for (int i = 0; i < packed.rows(); ++i)
        for (int j = 0; j < c; ++j) {
            m.re(i, j) = packed(i, j);
            m.im(i, j) = packed(i, c + j);
        }
    return m;
}

// --- calibration stages ----------------------------------------------------

/// Residual shared-MLP stage applied independently to every row of a complex
/// matrix: out_row = in_row + mlp(in_row) in the [Re | Im] packing. One
/// parameter set is shared across rows, so the stage commutes with any row
/// permutation (eval mode).
inline ComplexMatrix row_calibrate(const ComplexMatrix &m, const MlpParameters &mlp)
{
    if (mlp.in_dim() != 2 * m.cols() || mlp.out_dim() != 2 * m.cols())
        throw std::invalid_argument("row_calibrate: network is " + std::to_string(mlp.in_dim()) + "->" +
                                    std::to_string(mlp.out_dim()) + ", rows have width " +
                                    std::to_string(2 * m.cols()));
    const RealMatrix packed = to_packed_rows(m);
    return from_packed_rows(add(packed, mlp_infer(mlp, packed)));
}

/// Per-antenna correction of a pilot observation block (rows = antennas).
inline ComplexMatrix antenna_calibrate(const ComplexMatrix &y_pilots, const MlpParameters &mlp)
{
    return row_calibrate(y_pilots, mlp);
}

/// Per-user correction of channel rows (rows = users, row k is h_k^H).
inline ComplexMatrix user_calibrate(const ComplexMatrix &x_rows, const MlpParameters &mlp)
{
    return row_calibrate(x_rows, mlp);
}

/// Least-squares channel estimate from a pilot block:
///   H_hat = Y P^H (P P^H)^-1   (antennas x users).
/// Throws IllPosedError when the pilot Gram matrix is effectively
/// rank-deficient.
inline ComplexMatrix ls_estimate(const ComplexMatrix &y_pilots, const ComplexMatrix &pilots)
{
    if (y_pilots.cols() != pilots.cols())
        throw std::invalid_argument("ls_estimate: observation has " + std::to_string(y_pilots.cols()) +
                                    " symbols, pilots have " + std::to_string(pilots.cols()));
    const ComplexMatrix ph = hermitian(pilots);
    double cond = 0.0;
    ComplexMatrix gram_inv;
    try {
        gram_inv = cinv(cmul(pilots, ph), &cond);
    } catch (const SingularMatrixError &e) {
        throw IllPosedError("ls_estimate: pilot matrix is rank-deficient", e.cond_estimate());
    }
    if (cond > ZF_COND_LIMIT)
        throw IllPosedError("ls_estimate: pilot Gram condition " + std::to_string(cond) + " exceeds limit", cond);
    return cmul(cmul(y_pilots, ph), gram_inv);
}

/// Perfect-CSI pipeline: one shared per-user network between the channel
/// rows and the zero-forcing beamformer.
struct CalibratedZfModel {
    MlpParameters mlp; // 2M -> 2M
};

inline ComplexMatrix calibrated_zf_beamform(const ComplexMatrix &x_rows, const CalibratedZfModel &model, double p_dl)
{
    return zf(user_calibrate(x_rows, model.mlp), p_dl);
}

/// Implicit-CSI pipeline: pilot observations in, downlink beamformer out.
/// The true downlink channel appears only in the training loss.
struct ImplicitCsiModel {
    MlpParameters antenna_mlp;     // 2L -> 2L, shared per antenna
    MlpParameters channel_map_mlp; // 2M -> 2M, shared per user
    MlpParameters zf_calib_mlp;    // 2M -> 2M, shared per user
    ComplexMatrix pilots;          // K x L pilot book used in training
};

inline ComplexMatrix implicit_csi_rows(const ComplexMatrix &y_pilots, const ImplicitCsiModel &model)
{
    const ComplexMatrix y_cal = antenna_calibrate(y_pilots, model.antenna_mlp);
    const ComplexMatrix h_ul_hat = ls_estimate(y_cal, model.pilots);
    const ComplexMatrix rows = hermitian(h_ul_hat); // K x M, row k = h_ul_hat_k^H
    const ComplexMatrix mapped = user_calibrate(rows, model.channel_map_mlp);
    return user_calibrate(mapped, model.zf_calib_mlp);
}

inline ComplexMatrix implicit_beamform(const ComplexMatrix &y_pilots, const ImplicitCsiModel &model, double p_dl)
{
    return zf(implicit_csi_rows(y_pilots, model), p_dl);
}

/// Estimate-then-map baseline: LS estimate, learned channel map, plain zf.
/// No antenna correction and no beamformer-side calibration; the map is
/// trained on a channel regression loss rather than the rate (see
/// train_block_by_block).
inline ComplexMatrix block_by_block_beamform(const ComplexMatrix &y_pilots, const MlpParameters &channel_map_mlp,
                                             const ComplexMatrix &pilots, double p_dl)
{
    const ComplexMatrix rows = hermitian(ls_estimate(y_pilots, pilots));
    return zf(user_calibrate(rows, channel_map_mlp), p_dl);
}

// --- training ---------------------------------------------------------------

struct TrainHyper {
    int epochs = 50;
    int batch = 256;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::vector<int> user_hidden{128, 512, 512};    // per-user stages (2M -> 2M)
    std::vector<int> antenna_hidden{64, 128, 128};  // per-antenna stage (2L -> 2L)
    double holdout_frac = 0.1;
};

inline void validate(const TrainHyper &h)
{
    if (h.epochs < 1)
        throw std::invalid_argument("TrainHyper.epochs: must be >= 1");
    if (h.batch < 1)
        throw std::invalid_argument("TrainHyper.batch: must be >= 1");
    if (!(h.lr > 0.0))
        throw std::invalid_argument("TrainHyper.lr: must be positive");
    if (!(h.holdout_frac >= 0.0) || h.holdout_frac >= 1.0)
        throw std::invalid_argument("TrainHyper.holdout_frac: must be in [0, 1)");
}

struct EpochStats {
    double train_objective;   // mean sum rate (or MSE for regression training)
    double holdout_objective;
};

using EpochCallback = std::function<void(int epoch, const EpochStats &)>;

namespace detail {

/// Deterministic Fisher-Yates shuffle on an index vector, keyed by
/// (seed, epoch, trainer lane).
inline void shuffle_indices(std::vector<std::size_t> &idx, std::uint64_t seed, int epoch, std::uint32_t lane)
{
    Prng rng(seed, RngDomain::shuffle, static_cast<std::uint64_t>(epoch), lane);
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = rng.uniform_index(i);
        std::swap(idx[i - 1], idx[j]);
    }
}

inline void check_training_inputs(const std::vector<ChannelSample> &samples, const SystemConfig &cfg,
                                  const TrainHyper &hyper, bool need_pilots)
{
    validate(hyper);
    if (samples.size() < 2)
        throw std::invalid_argument("training needs at least 2 samples, got " + std::to_string(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const ChannelSample &s = samples[i];
        if (s.h_dl.rows() != cfg.antennas || s.h_dl.cols() != cfg.users)
            throw std::invalid_argument("training sample " + std::to_string(i) + " has shape " +
                                        std::to_string(s.h_dl.rows()) + "x" + std::to_string(s.h_dl.cols()) +
                                        ", config says " + std::to_string(cfg.antennas) + "x" +
                                        std::to_string(cfg.users));
        if (need_pilots && (!s.has_pilots || s.y_pilots.cols() != cfg.pilot_len))
            throw std::invalid_argument("training sample " + std::to_string(i) +
                                        " is missing a pilot observation of the configured length");
    }
}

inline std::size_t holdout_count(std::size_t n, double frac)
{
    if (frac <= 0.0 || n < 2)
        return 0;
    std::size_t h = static_cast<std::size_t>(frac * static_cast<double>(n) + 0.5);
    if (h < 1)
        h = 1;
    if (h > n - 1)
        h = n - 1;
    return h;
}

inline void check_finite_loss(double loss, int epoch, std::size_t batch_start, const char *trainer)
{
    if (!std::isfinite(loss))
        throw std::runtime_error(std::string(trainer) + ": training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch) + ", batch starting at sample " +
                                 std::to_string(batch_start));
}

/// Mean sum rate of a per-sample beamformer over a sample range; samples on
/// which the beamformer throws (ill-posed zf and the like) count as rate 0.
template <typename Fn>
double mean_rate(const std::vector<ChannelSample> &samples, std::size_t lo, std::size_t hi, Fn &&rate_of)
{
    if (hi <= lo)
        return 0.0;
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
        try {
            acc += rate_of(samples[i]);
        } catch (const std::exception &) {
            // counted as zero rate
        }
    }
    return acc / static_cast<double>(hi - lo);
}

} // namespace detail

struct PerfectCsiTraining {
    CalibratedZfModel model;
    std::vector<EpochStats> curve; // objectives are mean sum rates (bit/s/Hz)
};

/// End-to-end training of the perfect-CSI calibrated zero-forcing pipeline:
/// minimize the mean negative sum rate of zf applied to calibrated channel
/// rows. The last holdout_frac of the dataset is held out and scored in eval
/// mode after every epoch. Throws std::runtime_error if the loss leaves the
/// finite range (divergence guard) naming the epoch and batch.
inline PerfectCsiTraining train_perfect_csi(const std::vector<ChannelSample> &samples, const SystemConfig &cfg,
                                            const TrainHyper &hyper, const EpochCallback &on_epoch = {})
{
    detail::check_training_inputs(samples, cfg, hyper, false);
    const int M = cfg.antennas, K = cfg.users;
    const std::size_t n = samples.size();
    const std::size_t n_hold = detail::holdout_count(n, hyper.holdout_frac);
    const std::size_t n_train = n - n_hold;
    constexpr std::uint32_t TRAINER_LANE = 0;

    // Precompute channel rows (K x M, row k = h_k^H) and their packings.
    std::vector<ComplexMatrix> x_rows(n);
    std::vector<RealMatrix> packed(n);
    for (std::size_t i = 0; i < n; ++i) {
        x_rows[i] = hermitian(samples[i].h_dl);
        packed[i] = to_packed_rows(x_rows[i]);
    }

    PerfectCsiTraining out;
    out.model.mlp = mlp_init(2 * M, hyper.user_hidden, 2 * M, cfg.rng_seed, /*net_tag=*/0, /*zero_final=*/true);
    std::vector<RealMatrix *> params = mlp_trainables(out.model.mlp);
    AdamState adam;
    adam.init(params);
    const AdamOptions aopt{hyper.lr, hyper.beta1, hyper.beta2, hyper.adam_eps};

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        detail::shuffle_indices(order, cfg.rng_seed, epoch, TRAINER_LANE);
        double rate_acc = 0.0;
        std::size_t rate_cnt = 0;

        for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(hyper.batch)) {
            const std::size_t bsz = std::min<std::size_t>(hyper.batch, n_train - start);
            RealMatrix big(static_cast<int>(bsz) * K, 2 * M);
            for (std::size_t bi = 0; bi < bsz; ++bi) {
                const RealMatrix &src = packed[order[start + bi]];
                for (int r = 0; r < K; ++r)
                    for (int c = 0; c < 2 * M; ++c)
                        big(static_cast<int>(bi) * K + r, c) = src(r, c);
            }

            Tape t;
            Tape::Var big_in = t.constant(std::move(big));
            MlpTapeBinding bind = mlp_forward_tape(t, out.model.mlp, big_in, MlpMode::train);
            Tape::Var calibrated = t.add(big_in, bind.out);

            Tape::Var total = -1;
            try {
                for (std::size_t bi = 0; bi < bsz; ++bi) {
                    CVar rows_i = c_unpack_rows(t, t.row_slice(calibrated, static_cast<int>(bi) * K,
                                                               static_cast<int>(bi + 1) * K), M);
                    CVar v = zf_tape(t, rows_i, cfg.p_dl);
                    Tape::Var rate = sum_rate_tape(t, c_constant(t, x_rows[order[start + bi]]), v, cfg.sigma0_sq);
                    total = (total < 0) ? rate : t.add(total, rate);
                }
            } catch (const SingularMatrixError &e) {
                throw std::runtime_error("train_perfect_csi: training diverged (singular Gram matrix: " +
                                         std::string(e.what()) + ") at epoch " + std::to_string(epoch) +
                                         ", batch starting at sample " + std::to_string(start));
            }
            Tape::Var loss = t.mul_scalar(total, -1.0 / static_cast<double>(bsz));
            detail::check_finite_loss(t.value(loss)(0, 0), epoch, start, "train_perfect_csi");
            rate_acc += t.value(total)(0, 0);
            rate_cnt += bsz;

            t.backward(loss);
            std::vector<const RealMatrix *> grads;
            grads.reserve(bind.params.size());
            for (Tape::Var pv : bind.params)
                grads.push_back(&t.grad(pv));
            adam_step(params, grads, adam, aopt);
        }

        EpochStats st;
        st.train_objective = rate_acc / static_cast<double>(rate_cnt);
        st.holdout_objective =
            n_hold > 0 ? detail::mean_rate(samples, n_train, n,
                                           [&](const ChannelSample &s) {
                                               return sum_rate(hermitian(s.h_dl),
                                                               calibrated_zf_beamform(hermitian(s.h_dl), out.model,
                                                                                      cfg.p_dl),
                                                               cfg.sigma0_sq);
                                           })
                       : st.train_objective;
        out.curve.push_back(st);
        if (on_epoch)
            on_epoch(epoch, st);
    }
    return out;
}

struct ImplicitTraining {
    ImplicitCsiModel model;
    std::vector<EpochStats> curve;
};

/// End-to-end training of the implicit-CSI pipeline (antenna correction,
/// LS, channel map, beamformer calibration, zf) against the true downlink
/// channel's sum rate. The true channel is used only inside the loss.
inline ImplicitTraining train_implicit(const std::vector<ChannelSample> &samples, const ComplexMatrix &pilots,
                                       const SystemConfig &cfg, const TrainHyper &hyper,
                                       const EpochCallback &on_epoch = {})
{
    detail::check_training_inputs(samples, cfg, hyper, true);
    const int M = cfg.antennas, K = cfg.users, L = cfg.pilot_len;
    if (pilots.rows() != K || pilots.cols() != L)
        throw std::invalid_argument("train_implicit: pilot book must be " + std::to_string(K) + "x" +
                                    std::to_string(L));
    const std::size_t n = samples.size();
    const std::size_t n_hold = detail::holdout_count(n, hyper.holdout_frac);
    const std::size_t n_train = n - n_hold;
    constexpr std::uint32_t TRAINER_LANE = 1;

    // LS projection Q = P^H (P P^H)^-1, fixed throughout training.
    const ComplexMatrix q = cmul(hermitian(pilots), cinv(cmul(pilots, hermitian(pilots))));

    std::vector<ComplexMatrix> x_rows(n);
    std::vector<RealMatrix> packed_y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x_rows[i] = hermitian(samples[i].h_dl);
        packed_y[i] = to_packed_rows(samples[i].y_pilots);
    }

    ImplicitTraining out;
    out.model.antenna_mlp = mlp_init(2 * L, hyper.antenna_hidden, 2 * L, cfg.rng_seed, 1, true);
    out.model.channel_map_mlp = mlp_init(2 * M, hyper.user_hidden, 2 * M, cfg.rng_seed, 2, true);
    out.model.zf_calib_mlp = mlp_init(2 * M, hyper.user_hidden, 2 * M, cfg.rng_seed, 3, true);
    out.model.pilots = pilots;

    std::vector<RealMatrix *> params = mlp_trainables(out.model.antenna_mlp);
    {
        auto p2 = mlp_trainables(out.model.channel_map_mlp);
        auto p3 = mlp_trainables(out.model.zf_calib_mlp);
        params.insert(params.end(), p2.begin(), p2.end());
        params.insert(params.end(), p3.begin(), p3.end());
    }
    AdamState adam;
    adam.init(params);
    const AdamOptions aopt{hyper.lr, hyper.beta1, hyper.beta2, hyper.adam_eps};

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        detail::shuffle_indices(order, cfg.rng_seed, epoch, TRAINER_LANE);
        double rate_acc = 0.0;
        std::size_t rate_cnt = 0;

        for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(hyper.batch)) {
            const std::size_t bsz = std::min<std::size_t>(hyper.batch, n_train - start);
            RealMatrix big_y(static_cast<int>(bsz) * M, 2 * L);
            for (std::size_t bi = 0; bi < bsz; ++bi) {
                const RealMatrix &src = packed_y[order[start + bi]];
                for (int r = 0; r < M; ++r)
                    for (int c = 0; c < 2 * L; ++c)
                        big_y(static_cast<int>(bi) * M + r, c) = src(r, c);
            }

            Tape t;
            Tape::Var y_in = t.constant(std::move(big_y));
            MlpTapeBinding bind_a = mlp_forward_tape(t, out.model.antenna_mlp, y_in, MlpMode::train);
            Tape::Var y_cal = t.add(y_in, bind_a.out);

            CVar q_const = c_constant(t, q);
            std::vector<Tape::Var> est_rows;
            est_rows.reserve(bsz);
            for (std::size_t bi = 0; bi < bsz; ++bi) {
                CVar y_i = c_unpack_rows(t, t.row_slice(y_cal, static_cast<int>(bi) * M,
                                                        static_cast<int>(bi + 1) * M), L);
                CVar h_hat = c_matmul(t, y_i, q_const);      // M x K
                CVar rows_i = c_hermitian(t, h_hat);         // K x M
                est_rows.push_back(c_pack_rows(t, rows_i));  // K x 2M
            }
            Tape::Var big_rows = t.vcat(est_rows);

            MlpTapeBinding bind_m = mlp_forward_tape(t, out.model.channel_map_mlp, big_rows, MlpMode::train);
            Tape::Var mapped = t.add(big_rows, bind_m.out);
            MlpTapeBinding bind_z = mlp_forward_tape(t, out.model.zf_calib_mlp, mapped, MlpMode::train);
            Tape::Var calibrated = t.add(mapped, bind_z.out);

            Tape::Var total = -1;
            try {
                for (std::size_t bi = 0; bi < bsz; ++bi) {
                    CVar rows_i = c_unpack_rows(t, t.row_slice(calibrated, static_cast<int>(bi) * K,
                                                               static_cast<int>(bi + 1) * K), M);
                    CVar v = zf_tape(t, rows_i, cfg.p_dl);
                    Tape::Var rate = sum_rate_tape(t, c_constant(t, x_rows[order[start + bi]]), v, cfg.sigma0_sq);
                    total = (total < 0) ? rate : t.add(total, rate);
                }
            } catch (const SingularMatrixError &e) {
                throw std::runtime_error("train_implicit: training diverged (singular Gram matrix: " +
                                         std::string(e.what()) + ") at epoch " + std::to_string(epoch) +
                                         ", batch starting at sample " + std::to_string(start));
            }
            Tape::Var loss = t.mul_scalar(total, -1.0 / static_cast<double>(bsz));
            detail::check_finite_loss(t.value(loss)(0, 0), epoch, start, "train_implicit");
            rate_acc += t.value(total)(0, 0);
            rate_cnt += bsz;

            t.backward(loss);
            std::vector<const RealMatrix *> grads;
            grads.reserve(params.size());
            for (Tape::Var pv : bind_a.params)
                grads.push_back(&t.grad(pv));
            for (Tape::Var pv : bind_m.params)
                grads.push_back(&t.grad(pv));
            for (Tape::Var pv : bind_z.params)
                grads.push_back(&t.grad(pv));
            adam_step(params, grads, adam, aopt);
        }

        EpochStats st;
        st.train_objective = rate_acc / static_cast<double>(rate_cnt);
        st.holdout_objective =
            n_hold > 0 ? detail::mean_rate(samples, n_train, n,
                                           [&](const ChannelSample &s) {
                                               return sum_rate(hermitian(s.h_dl),
                                                               implicit_beamform(s.y_pilots, out.model, cfg.p_dl),
                                                               cfg.sigma0_sq);
                                           })
                       : st.train_objective;
        out.curve.push_back(st);
        if (on_epoch)
            on_epoch(epoch, st);
    }
    return out;
}

struct BlockByBlockTraining {
    MlpParameters channel_map_mlp;
    std::vector<EpochStats> curve; // objectives are mean squared errors
};

/// Estimate-then-map baseline trainer: fit the channel map alone by mean
/// squared error between mapped LS rows and the true downlink rows, exactly
/// the block-wise decomposition an end-to-end rate loss avoids.
inline BlockByBlockTraining train_block_by_block(const std::vector<ChannelSample> &samples,
                                                 const ComplexMatrix &pilots, const SystemConfig &cfg,
                                                 const TrainHyper &hyper, const EpochCallback &on_epoch = {})
{
    detail::check_training_inputs(samples, cfg, hyper, true);
    const int M = cfg.antennas, K = cfg.users;
    const std::size_t n = samples.size();
    const std::size_t n_hold = detail::holdout_count(n, hyper.holdout_frac);
    const std::size_t n_train = n - n_hold;
    constexpr std::uint32_t TRAINER_LANE = 2;

    std::vector<RealMatrix> packed_in(n), packed_target(n);
    for (std::size_t i = 0; i < n; ++i) {
        packed_in[i] = to_packed_rows(hermitian(ls_estimate(samples[i].y_pilots, pilots)));
        packed_target[i] = to_packed_rows(hermitian(samples[i].h_dl));
    }

    BlockByBlockTraining out;
    out.channel_map_mlp = mlp_init(2 * M, hyper.user_hidden, 2 * M, cfg.rng_seed, 2, true);
    std::vector<RealMatrix *> params = mlp_trainables(out.channel_map_mlp);
    AdamState adam;
    adam.init(params);
    const AdamOptions aopt{hyper.lr, hyper.beta1, hyper.beta2, hyper.adam_eps};

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});

    auto holdout_mse = [&]() {
        if (n_hold == 0)
            return 0.0;
        double acc = 0.0;
        for (std::size_t i = n_train; i < n; ++i) {
            const RealMatrix pred = add(packed_in[i], mlp_infer(out.channel_map_mlp, packed_in[i]));
            const RealMatrix d = sub(pred, packed_target[i]);
            acc += sum_squares(d) / static_cast<double>(d.size());
        }
        return acc / static_cast<double>(n_hold);
    };

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        detail::shuffle_indices(order, cfg.rng_seed, epoch, TRAINER_LANE);
        double mse_acc = 0.0;
        std::size_t mse_cnt = 0;

        for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(hyper.batch)) {
            const std::size_t bsz = std::min<std::size_t>(hyper.batch, n_train - start);
            RealMatrix big(static_cast<int>(bsz) * K, 2 * M);
            RealMatrix target(static_cast<int>(bsz) * K, 2 * M);
            for (std::size_t bi = 0; bi < bsz; ++bi) {
                const RealMatrix &src = packed_in[order[start + bi]];
                const RealMatrix &tgt = packed_target[order[start + bi]];
                for (int r = 0; r < K; ++r)
                    for (int c = 0; c < 2 * M; ++c) {
                        big(static_cast<int>(bi) * K + r, c) = src(r, c);
                        target(static_cast<int>(bi) * K + r, c) = tgt(r, c);
                    }
            }
            const double denom = static_cast<double>(big.size());

            Tape t;
            Tape::Var big_in = t.constant(std::move(big));
            MlpTapeBinding bind = mlp_forward_tape(t, out.channel_map_mlp, big_in, MlpMode::train);
            Tape::Var pred = t.add(big_in, bind.out);
            Tape::Var diff = t.sub(pred, t.constant(std::move(target)));
            Tape::Var loss = t.mul_scalar(t.sum_all(t.mul_elem(diff, diff)), 1.0 / denom);
            detail::check_finite_loss(t.value(loss)(0, 0), epoch, start, "train_block_by_block");
            mse_acc += t.value(loss)(0, 0) * static_cast<double>(bsz);
            mse_cnt += bsz;

            t.backward(loss);
            std::vector<const RealMatrix *> grads;
            for (Tape::Var pv : bind.params)
                grads.push_back(&t.grad(pv));
            adam_step(params, grads, adam, aopt);
        }

        EpochStats st;
        st.train_objective = mse_acc / static_cast<double>(mse_cnt);
        st.holdout_objective = n_hold > 0 ? holdout_mse() : st.train_objective;
        out.curve.push_back(st);
        if (on_epoch)
            on_epoch(epoch, st);
    }
    return out;
}

// --- evaluation --------------------------------------------------------------

struct RateStats {
    double mean = 0.0;
    double stddev = 0.0;
    long n = 0;
    long failures = 0; // samples whose beamformer threw; scored as rate 0
};

/// Mean/stddev (sample standard deviation) of per-sample sum rates under an
/// arbitrary beamforming rule. Ill-posed samples count as rate 0 and are
/// tallied in failures.
template <typename Fn>
RateStats evaluate_rates(const std::vector<ChannelSample> &samples, double sigma0_sq, Fn &&beamform)
{
    RateStats st;
    std::vector<double> rates;
    rates.reserve(samples.size());
    for (const ChannelSample &s : samples) {
        double r = 0.0;
        try {
            const ComplexMatrix v = beamform(s);
            r = sum_rate(hermitian(s.h_dl), v, sigma0_sq);
        } catch (const std::exception &) {
            st.failures += 1;
        }
        rates.push_back(r);
    }
    st.n = static_cast<long>(rates.size());
    if (st.n == 0)
        return st;
    double mean = 0.0;
    for (double r : rates)
        mean += r;
    mean /= static_cast<double>(st.n);
    double var = 0.0;
    for (double r : rates)
        var += (r - mean) * (r - mean);
    st.mean = mean;
    st.stddev = st.n > 1 ? std::sqrt(var / static_cast<double>(st.n - 1)) : 0.0;
    return st;
}

/// User-count mismatch study: score one trained perfect-CSI model on fresh
/// draws with a different number of active users (the shared per-user
/// network accepts any row count), optionally against a matched-trained
/// model on the same draws.
struct MismatchRow {
    int users_test = 0;
    RateStats model;
    RateStats matched; // n == 0 when no matched model was supplied
    double ratio_to_matched = 0.0;
};

inline MismatchRow evaluate_mismatch_point(const CalibratedZfModel &model, const SystemConfig &cfg_train,
                                           int users_test, const CalibratedZfModel *matched,
                                           std::uint64_t eval_count, std::uint64_t sample_offset = 1u << 20)
{
    if (users_test < 1 || users_test > cfg_train.antennas)
        throw std::invalid_argument("evaluate_mismatch_point: users_test " + std::to_string(users_test) +
                                    " outside [1, antennas=" + std::to_string(cfg_train.antennas) + "]");
    SystemConfig cfg = cfg_train;
    cfg.users = users_test;
    if (cfg.pilot_len < cfg.users)
        cfg.pilot_len = cfg.users;

    std::vector<ChannelSample> samples;
    samples.reserve(eval_count);
    for (std::uint64_t i = 0; i < eval_count; ++i)
        samples.push_back(generate_sample(cfg, sample_offset + i));

    MismatchRow row;
    row.users_test = users_test;
    row.model = evaluate_rates(samples, cfg.sigma0_sq, [&](const ChannelSample &s) {
        return calibrated_zf_beamform(hermitian(s.h_dl), model, cfg.p_dl);
    });
    if (matched) {
        row.matched = evaluate_rates(samples, cfg.sigma0_sq, [&](const ChannelSample &s) {
            return calibrated_zf_beamform(hermitian(s.h_dl), *matched, cfg.p_dl);
        });
        row.ratio_to_matched = row.matched.mean > 0.0 ? row.model.mean / row.matched.mean : 0.0;
    }
    return row;
}

// --- checkpoints --------------------------------------------------------------

/// Model checkpoint container.
///
/// Layout: magic "NCALCP\0\0", u32 version (1), u32 model kind,
/// u64 manifest length + manifest bytes (free-form, typically JSON), then
/// kind-specific payload: the networks via write_mlp, plus the pilot book
/// for implicit models (and input dims for the flat baseline, which its
/// networks already encode).
enum class ModelKind : std::uint32_t {
    calibrated_zf = 1,
    implicit_csi = 2,
    block_by_block = 3,
    blackbox = 4,
};

namespace checkpoint_format {
constexpr char MAGIC[8] = {'N', 'C', 'A', 'L', 'C', 'P', '\0', '\0'};
constexpr std::uint32_t VERSION = 1;
} // namespace checkpoint_format

namespace detail {

inline void write_checkpoint_header(std::ostream &os, ModelKind kind, const std::string &manifest)
{
    os.write(checkpoint_format::MAGIC, sizeof checkpoint_format::MAGIC);
    const std::uint32_t version = checkpoint_format::VERSION;
    const std::uint32_t k = static_cast<std::uint32_t>(kind);
    os.write(reinterpret_cast<const char *>(&version), sizeof version);
    os.write(reinterpret_cast<const char *>(&k), sizeof k);
    const std::uint64_t mlen = manifest.size();
    os.write(reinterpret_cast<const char *>(&mlen), sizeof mlen);
    os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
}

inline ModelKind read_checkpoint_header(std::istream &is, const std::string &path, std::string *manifest_out)
{
    char magic[8] = {};
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, checkpoint_format::MAGIC, sizeof magic) != 0)
        throw std::runtime_error("checkpoint '" + path + "': bad magic");
    std::uint32_t version = 0, kind = 0;
    is.read(reinterpret_cast<char *>(&version), sizeof version);
    is.read(reinterpret_cast<char *>(&kind), sizeof kind);
    if (!is || version != checkpoint_format::VERSION)
        throw std::runtime_error("checkpoint '" + path + "': unsupported version");
    std::uint64_t mlen = 0;
    is.read(reinterpret_cast<char *>(&mlen), sizeof mlen);
    if (!is || mlen > (1u << 26))
        throw std::runtime_error("checkpoint '" + path + "': corrupt manifest length");
    std::string manifest(mlen, '\0');
    is.read(manifest.data(), static_cast<std::streamsize>(mlen));
    if (!is)
        throw std::runtime_error("checkpoint '" + path + "': truncated manifest");
    if (manifest_out)
        *manifest_out = std::move(manifest);
    return static_cast<ModelKind>(kind);
}

inline void write_cmat(std::ostream &os, const ComplexMatrix &m)
{
    write_mat_sized(os, m.re);
    write_mat_sized(os, m.im);
}

inline ComplexMatrix read_cmat(std::istream &is)
{
    RealMatrix re = read_mat_sized(is);
    RealMatrix im = read_mat_sized(is);
    return {std::move(re), std::move(im)};
}

inline std::ofstream open_checkpoint_out(const std::string &path)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot open checkpoint '" + path + "' for writing");
    return os;
}

inline std::ifstream open_checkpoint_in(const std::string &path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open checkpoint '" + path + "'");
    return is;
}

inline void expect_kind(ModelKind got, ModelKind want, const std::string &path)
{
    if (got != want)
        throw std::runtime_error("checkpoint '" + path + "' holds model kind " +
                                 std::to_string(static_cast<std::uint32_t>(got)) + ", expected " +
                                 std::to_string(static_cast<std::uint32_t>(want)));
}

} // namespace detail

inline ModelKind peek_checkpoint_kind(const std::string &path, std::string *manifest_out = nullptr)
{
    auto is = detail::open_checkpoint_in(path);
    return detail::read_checkpoint_header(is, path, manifest_out);
}

inline void save_calibrated_zf(const std::string &path, const CalibratedZfModel &model, const std::string &manifest)
{
    auto os = detail::open_checkpoint_out(path);
    detail::write_checkpoint_header(os, ModelKind::calibrated_zf, manifest);
    write_mlp(os, model.mlp);
    if (!os)
        throw std::runtime_error("short write to checkpoint '" + path + "'");
}

inline CalibratedZfModel load_calibrated_zf(const std::string &path, std::string *manifest_out = nullptr)
{
    auto is = detail::open_checkpoint_in(path);
    detail::expect_kind(detail::read_checkpoint_header(is, path, manifest_out), ModelKind::calibrated_zf, path);
    CalibratedZfModel m;
    m.mlp = read_mlp(is);
    return m;
}

inline void save_implicit_csi(const std::string &path, const ImplicitCsiModel &model, const std::string &manifest)
{
    auto os = detail::open_checkpoint_out(path);
    detail::write_checkpoint_header(os, ModelKind::implicit_csi, manifest);
    write_mlp(os, model.antenna_mlp);
    write_mlp(os, model.channel_map_mlp);
    write_mlp(os, model.zf_calib_mlp);
    detail::write_cmat(os, model.pilots);
    if (!os)
        throw std::runtime_error("short write to checkpoint '" + path + "'");
}

inline ImplicitCsiModel load_implicit_csi(const std::string &path, std::string *manifest_out = nullptr)
{
    auto is = detail::open_checkpoint_in(path);
    detail::expect_kind(detail::read_checkpoint_header(is, path, manifest_out), ModelKind::implicit_csi, path);
    ImplicitCsiModel m;
    m.antenna_mlp = read_mlp(is);
    m.channel_map_mlp = read_mlp(is);
    m.zf_calib_mlp = read_mlp(is);
    m.pilots = detail::read_cmat(is);
    return m;
}

inline void save_block_by_block(const std::string &path, const MlpParameters &map_mlp, const ComplexMatrix &pilots,
                                const std::string &manifest)
{
    auto os = detail::open_checkpoint_out(path);
    detail::write_checkpoint_header(os, ModelKind::block_by_block, manifest);
    write_mlp(os, map_mlp);
    detail::write_cmat(os, pilots);
    if (!os)
        throw std::runtime_error("short write to checkpoint '" + path + "'");
}

inline std::pair<MlpParameters, ComplexMatrix> load_block_by_block(const std::string &path,
                                                                   std::string *manifest_out = nullptr)
{
    auto is = detail::open_checkpoint_in(path);
    detail::expect_kind(detail::read_checkpoint_header(is, path, manifest_out), ModelKind::block_by_block, path);
    MlpParameters m = read_mlp(is);
    ComplexMatrix p = detail::read_cmat(is);
    return {std::move(m), std::move(p)};
}

} // namespace ncal
