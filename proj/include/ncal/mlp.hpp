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

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "real_matrix.hpp"
#include "rng.hpp"
#include "tape.hpp"

namespace ncal {

/// Fully connected network: Dense -> BatchNorm -> ReLU on every hidden
/// layer, linear output. Operates on batches laid out one example per row,
/// which makes the network permutation-equivariant across rows by
/// construction (eval mode; train-mode batch statistics couple rows).
struct MlpParameters {
    std::vector<RealMatrix> w;           // [layer], in x out
    std::vector<RealMatrix> b;           // [layer], 1 x out
    std::vector<RealMatrix> bn_gamma;    // hidden layers only, 1 x width
    std::vector<RealMatrix> bn_beta;
    std::vector<RealMatrix> bn_run_mean;
    std::vector<RealMatrix> bn_run_var;
    double bn_eps = 1e-5;
    double bn_momentum = 0.99; // running = momentum * running + (1 - momentum) * batch

    int in_dim() const { return w.empty() ? 0 : w.front().rows(); }
    int out_dim() const { return w.empty() ? 0 : w.back().cols(); }
    std::size_t hidden_count() const { return w.empty() ? 0 : w.size() - 1; }
};

enum class MlpMode { train, eval };

/// He-style uniform fan-in initialization. Weight draws are keyed by
/// (seed, net_tag, layer), so two networks built from the same seed but
/// different tags are independent and rebuilding one is order-free.
/// zero_final zeroes the output layer, which makes any residual wrapper
/// around the network start out as the exact identity.
inline MlpParameters mlp_init(int in, const std::vector<int> &hidden, int out, std::uint64_t seed,
                              std::uint32_t net_tag, bool zero_final)
{
    if (in < 1 || out < 1)
        throw std::invalid_argument("mlp_init: dimensions must be >= 1");
    for (int h : hidden)
        if (h < 1)
            throw std::invalid_argument("mlp_init: hidden widths must be >= 1");

    MlpParameters p;
    std::vector<int> dims;
    dims.push_back(in);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(out);

    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const int fan_in = dims[l], fan_out = dims[l + 1];
        RealMatrix w(fan_in, fan_out);
        const bool is_final = (l + 2 == dims.size());
        if (!(is_final && zero_final)) {
            Prng rng(seed, RngDomain::weight_init, net_tag, static_cast<std::uint32_t>(l));
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (int i = 0; i < fan_in; ++i)
                for (int j = 0; j < fan_out; ++j)
                    w(i, j) = (2.0 * rng.uniform01() - 1.0) * bound;
        }
        p.w.push_back(std::move(w));
        p.b.emplace_back(1, fan_out);
        if (!is_final) {
            p.bn_gamma.push_back(RealMatrix::filled(1, fan_out, 1.0));
            p.bn_beta.emplace_back(1, fan_out);
            p.bn_run_mean.emplace_back(1, fan_out);
            p.bn_run_var.push_back(RealMatrix::filled(1, fan_out, 1.0));
        }
    }
    return p;
}

/// All-zero network of the given shape (outputs zero in both modes); used
/// as the neutral element of residual calibration stages.
inline MlpParameters mlp_zero(int in, const std::vector<int> &hidden, int out)
{
    MlpParameters p = mlp_init(in, hidden, out, 0, 0, true);
    for (RealMatrix &w : p.w)
        w.set_zero();
    for (RealMatrix &g : p.bn_gamma)
        g = RealMatrix::filled(1, g.cols(), 1.0);
    return p;
}

/// Standalone batch normalization with batch statistics (biased variance):
/// returns (x - mean) / sqrt(var + eps) per column, then gamma/beta affine.
inline RealMatrix batch_norm_train(const RealMatrix &x, const RealMatrix &gamma, const RealMatrix &beta, double eps,
                                   RealMatrix *batch_mean_out = nullptr, RealMatrix *batch_var_out = nullptr)
{
    const int n = x.rows(), c = x.cols();
    if (n < 1)
        throw std::invalid_argument("batch_norm_train: empty batch");
    RealMatrix mean(1, c), var(1, c);
    for (int j = 0; j < c; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i)
            s += x(i, j);
        mean(0, j) = s / n;
    }
    for (int j = 0; j < c; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d = x(i, j) - mean(0, j);
            s += d * d;
        }
        var(0, j) = s / n;
    }
    RealMatrix y(n, c);
    for (int j = 0; j < c; ++j) {
        const double inv_std = 1.0 / std::sqrt(var(0, j) + eps);
        for (int i = 0; i < n; ++i)
            y(i, j) = (x(i, j) - mean(0, j)) * inv_std * gamma(0, j) + beta(0, j);
    }
    if (batch_mean_out)
        *batch_mean_out = mean;
    if (batch_var_out)
        *batch_var_out = var;
    return y;
}

namespace detail {

inline void bn_update_running(MlpParameters &p, std::size_t layer, const RealMatrix &mean, const RealMatrix &var)
{
    RealMatrix &rm = p.bn_run_mean[layer];
    RealMatrix &rv = p.bn_run_var[layer];
    const double m = p.bn_momentum;
    for (int j = 0; j < rm.cols(); ++j) {
        rm(0, j) = m * rm(0, j) + (1.0 - m) * mean(0, j);
        rv(0, j) = m * rv(0, j) + (1.0 - m) * var(0, j);
    }
}

} // namespace detail

/// Eval-mode forward pass: running statistics only, nothing is modified,
/// and each output row depends on its own input row alone.
inline RealMatrix mlp_infer(const MlpParameters &p, const RealMatrix &x)
{
    if (x.cols() != p.in_dim())
        throw std::invalid_argument("mlp_infer: input has " + std::to_string(x.cols()) + " features, expected " +
                                    std::to_string(p.in_dim()));
    RealMatrix h = x;
    for (std::size_t l = 0; l < p.w.size(); ++l) {
        RealMatrix z = matmul(h, p.w[l]);
        for (int i = 0; i < z.rows(); ++i)
            for (int j = 0; j < z.cols(); ++j)
                z(i, j) += p.b[l](0, j);
        if (l + 1 == p.w.size()) {
            h = std::move(z);
            break;
        }
        for (int j = 0; j < z.cols(); ++j) {
            const double inv_std = 1.0 / std::sqrt(p.bn_run_var[l](0, j) + p.bn_eps);
            const double mu = p.bn_run_mean[l](0, j);
            const double g = p.bn_gamma[l](0, j), be = p.bn_beta[l](0, j);
            for (int i = 0; i < z.rows(); ++i)
                z(i, j) = (z(i, j) - mu) * inv_std * g + be;
        }
        for (int i = 0; i < z.rows(); ++i)
            for (int j = 0; j < z.cols(); ++j)
                if (z(i, j) < 0.0)
                    z(i, j) = 0.0;
        h = std::move(z);
    }
    return h;
}

/// Plain (tape-free) forward pass over a batch of rows. Train mode uses
/// batch statistics and updates the running ones; eval mode defers to
/// mlp_infer.
inline RealMatrix mlp_forward(MlpParameters &p, const RealMatrix &x, MlpMode mode)
{
    if (mode == MlpMode::eval)
        return mlp_infer(p, x);
    if (x.cols() != p.in_dim())
        throw std::invalid_argument("mlp_forward: input has " + std::to_string(x.cols()) + " features, expected " +
                                    std::to_string(p.in_dim()));
    RealMatrix h = x;
    for (std::size_t l = 0; l < p.w.size(); ++l) {
        RealMatrix z = matmul(h, p.w[l]);
        for (int i = 0; i < z.rows(); ++i)
            for (int j = 0; j < z.cols(); ++j)
                z(i, j) += p.b[l](0, j);
        if (l + 1 == p.w.size()) {
            h = std::move(z);
            break;
        }
        RealMatrix mean, var;
        z = batch_norm_train(z, p.bn_gamma[l], p.bn_beta[l], p.bn_eps, &mean, &var);
        detail::bn_update_running(p, l, mean, var);
        for (int i = 0; i < z.rows(); ++i)
            for (int j = 0; j < z.cols(); ++j)
                if (z(i, j) < 0.0)
                    z(i, j) = 0.0;
        h = std::move(z);
    }
    return h;
}

/// Tape handles for one network's trainable parameters, in the fixed order
/// produced by mlp_trainables(); aligned with Adam state slots.
struct MlpTapeBinding {
    std::vector<Tape::Var> params;
    Tape::Var out = -1;
};

/// Trainable parameter list (weights, biases, BN gains and shifts; running
/// statistics are not trained). Order: per layer w, b, then gamma, beta for
/// hidden layers.
inline std::vector<RealMatrix *> mlp_trainables(MlpParameters &p)
{
    std::vector<RealMatrix *> out;
    for (std::size_t l = 0; l < p.w.size(); ++l) {
        out.push_back(&p.w[l]);
        out.push_back(&p.b[l]);
        if (l < p.hidden_count()) {
            out.push_back(&p.bn_gamma[l]);
            out.push_back(&p.bn_beta[l]);
        }
    }
    return out;
}

/// Forward pass recorded on the tape. Parameters enter the tape as input
/// nodes (copies of the current values); their Vars are returned in the
/// binding so the caller can read gradients after backward(). Train mode
/// also refreshes the running statistics as a side effect, exactly as the
/// plain forward does.
inline MlpTapeBinding mlp_forward_tape(Tape &t, MlpParameters &p, Tape::Var x, MlpMode mode)
{
    if (t.value(x).cols() != p.in_dim())
        throw std::invalid_argument("mlp_forward_tape: input width mismatch");
    MlpTapeBinding bind;
    Tape::Var h = x;
    const int batch = t.value(x).rows();
    RealMatrix ones_row(1, batch);
    for (int i = 0; i < batch; ++i)
        ones_row(0, i) = 1.0;
    Tape::Var ones = -1; // lazily created; only train-mode BN needs it

    for (std::size_t l = 0; l < p.w.size(); ++l) {
        Tape::Var w = t.input(p.w[l]);
        Tape::Var b = t.input(p.b[l]);
        bind.params.push_back(w);
        bind.params.push_back(b);
        Tape::Var z = t.add_broadcast_row(t.matmul(h, w), b);
        if (l + 1 == p.w.size()) {
            h = z;
            break;
        }
        Tape::Var gamma = t.input(p.bn_gamma[l]);
        Tape::Var beta = t.input(p.bn_beta[l]);
        bind.params.push_back(gamma);
        bind.params.push_back(beta);
        if (mode == MlpMode::train) {
            if (ones < 0)
                ones = t.constant(ones_row);
            const double inv_n = 1.0 / static_cast<double>(batch);
            Tape::Var mean = t.mul_scalar(t.matmul(ones, z), inv_n);
            Tape::Var centered = t.add_broadcast_row(z, t.neg(mean));
            Tape::Var var = t.mul_scalar(t.matmul(ones, t.mul_elem(centered, centered)), inv_n);
            Tape::Var inv_std = t.recip(t.sqrt_elem(t.add_scalar(var, p.bn_eps)));
            Tape::Var xhat = t.mul_broadcast_row(centered, inv_std);
            z = t.add_broadcast_row(t.mul_broadcast_row(xhat, gamma), beta);
            detail::bn_update_running(p, l, t.value(mean), t.value(var));
        } else {
            RealMatrix neg_mu = neg(p.bn_run_mean[l]);
            RealMatrix inv_std(1, p.bn_run_var[l].cols());
            for (int j = 0; j < inv_std.cols(); ++j)
                inv_std(0, j) = 1.0 / std::sqrt(p.bn_run_var[l](0, j) + p.bn_eps);
            Tape::Var xhat = t.mul_broadcast_row(t.add_broadcast_row(z, t.constant(neg_mu)), t.constant(inv_std));
            z = t.add_broadcast_row(t.mul_broadcast_row(xhat, gamma), beta);
        }
        h = t.relu(z);
    }
    bind.out = h;
    return bind;
}

// --- serialization -------------------------------------------------------

namespace detail {

inline void write_mat_sized(std::ostream &os, const RealMatrix &m)
{
    const std::uint32_t r = static_cast<std::uint32_t>(m.rows()), c = static_cast<std::uint32_t>(m.cols());
    os.write(reinterpret_cast<const char *>(&r), sizeof r);
    os.write(reinterpret_cast<const char *>(&c), sizeof c);
    os.write(reinterpret_cast<const char *>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

inline RealMatrix read_mat_sized(std::istream &is)
{
    std::uint32_t r = 0, c = 0;
    is.read(reinterpret_cast<char *>(&r), sizeof r);
    is.read(reinterpret_cast<char *>(&c), sizeof c);
    if (!is || r > (1u << 24) || c > (1u << 24))
        throw std::runtime_error("mlp read: corrupt matrix header");
    RealMatrix m(static_cast<int>(r), static_cast<int>(c));
    is.read(reinterpret_cast<char *>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!is)
        throw std::runtime_error("mlp read: truncated matrix payload");
    return m;
}

} // namespace detail

inline void write_mlp(std::ostream &os, const MlpParameters &p)
{
    const std::uint32_t layers = static_cast<std::uint32_t>(p.w.size());
    os.write(reinterpret_cast<const char *>(&layers), sizeof layers);
    os.write(reinterpret_cast<const char *>(&p.bn_eps), sizeof p.bn_eps);
    os.write(reinterpret_cast<const char *>(&p.bn_momentum), sizeof p.bn_momentum);
    for (std::size_t l = 0; l < p.w.size(); ++l) {
        detail::write_mat_sized(os, p.w[l]);
        detail::write_mat_sized(os, p.b[l]);
        if (l < p.hidden_count()) {
            detail::write_mat_sized(os, p.bn_gamma[l]);
            detail::write_mat_sized(os, p.bn_beta[l]);
            detail::write_mat_sized(os, p.bn_run_mean[l]);
            detail::write_mat_sized(os, p.bn_run_var[l]);
        }
    }
}

inline MlpParameters read_mlp(std::istream &is)
{
    std::uint32_t layers = 0;
    is.read(reinterpret_cast<char *>(&layers), sizeof layers);
    if (!is || layers == 0 || layers > 1024)
        throw std::runtime_error("mlp read: corrupt layer count");
    MlpParameters p;
    is.read(reinterpret_cast<char *>(&p.bn_eps), sizeof p.bn_eps);
    is.read(reinterpret_cast<char *>(&p.bn_momentum), sizeof p.bn_momentum);
    for (std::uint32_t l = 0; l < layers; ++l) {
        p.w.push_back(detail::read_mat_sized(is));
        p.b.push_back(detail::read_mat_sized(is));
        if (l + 1 < layers) {
            p.bn_gamma.push_back(detail::read_mat_sized(is));
            p.bn_beta.push_back(detail::read_mat_sized(is));
            p.bn_run_mean.push_back(detail::read_mat_sized(is));
            p.bn_run_var.push_back(detail::read_mat_sized(is));
        }
    }
    return p;
}

} // namespace ncal
