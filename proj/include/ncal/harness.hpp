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

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "calibration.hpp"
#include "dataset_io.hpp"

namespace ncal {

constexpr const char *NCAL_VERSION = "0.1.0";

// --- unit conversions --------------------------------------------------------

inline double dbm_to_watts(double dbm)
{
    return std::pow(10.0, (dbm - 30.0) / 10.0);
}

inline double watts_to_dbm(double watts)
{
    if (!(watts > 0.0))
        throw std::invalid_argument("watts_to_dbm: power must be positive");
    return 10.0 * std::log10(watts) + 30.0;
}

// --- methods -------------------------------------------------------------------

enum class Method {
    zf,
    mrt,
    wmmse,
    neural_calibration,
    implicit_neural_calibration,
    block_by_block,
    blackbox,
};

inline const std::vector<std::pair<Method, const char *>> &method_names()
{
    static const std::vector<std::pair<Method, const char *>> names = {
        {Method::zf, "zf"},
        {Method::mrt, "mrt"},
        {Method::wmmse, "wmmse"},
        {Method::neural_calibration, "neural_calibration"},
        {Method::implicit_neural_calibration, "implicit_neural_calibration"},
        {Method::block_by_block, "block_by_block"},
        {Method::blackbox, "blackbox"},
    };
    return names;
}

inline const char *to_string(Method m)
{
    for (const auto &[method, name] : method_names())
        if (method == m)
            return name;
    throw std::logic_error("to_string: unknown method");
}

inline Method method_from_string(const std::string &s)
{
    std::string all;
    for (const auto &[method, name] : method_names()) {
        if (s == name)
            return method;
        all += all.empty() ? name : std::string(", ") + name;
    }
    throw std::invalid_argument("unknown method '" + s + "' (known: " + all + ")");
}

inline bool method_is_learned(Method m)
{
    return m == Method::neural_calibration || m == Method::implicit_neural_calibration ||
           m == Method::block_by_block || m == Method::blackbox;
}

inline bool method_needs_pilots(Method m)
{
    return m == Method::implicit_neural_calibration || m == Method::block_by_block;
}

// --- flat channels-in, beamformer-out baseline --------------------------------

/// The no-structure baseline: one network mapping the flattened channel
/// matrix straight to a flattened beamformer, power-normalized after the
/// fact. Exists to quantify what the shared per-row architecture buys.
struct BlackboxModel {
    MlpParameters mlp; // 2*M*K -> 2*M*K
    int antennas = 0;
    int users = 0;
};

/// Flatten K x M channel rows into 1 x 2MK as [vec(Re) | vec(Im)].
inline RealMatrix flatten_rows(const ComplexMatrix &x_rows)
{
    const int k = x_rows.rows(), m = x_rows.cols();
    RealMatrix f(1, 2 * k * m);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < m; ++j) {
            f(0, i * m + j) = x_rows.re(i, j);
            f(0, k * m + i * m + j) = x_rows.im(i, j);
        }
    return f;
}

inline ComplexMatrix unflatten_rows(const RealMatrix &flat, int k, int m)
{
    if (flat.rows() != 1 || flat.cols() != 2 * k * m)
        throw std::invalid_argument("unflatten_rows: expected 1x" + std::to_string(2 * k * m));
    ComplexMatrix x(k, m);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < m; ++j) {
            x.re(i, j) = flat(0, i * m + j);
            x.im(i, j) = flat(0, k * m + i * m + j);
        }
    return x;
}

inline ComplexMatrix blackbox_beamform(const ComplexMatrix &x_rows, const BlackboxModel &model, double p_dl)
{
    if (x_rows.rows() != model.users || x_rows.cols() != model.antennas)
        throw std::invalid_argument("blackbox_beamform: model trained for " + std::to_string(model.users) + "x" +
                                    std::to_string(model.antennas) + " channel rows, got " +
                                    std::to_string(x_rows.rows()) + "x" + std::to_string(x_rows.cols()));
    const RealMatrix out = mlp_infer(model.mlp, flatten_rows(x_rows));
    const ComplexMatrix v_rows = unflatten_rows(out, model.users, model.antennas); // row k = v_k^H
    ComplexMatrix v = hermitian(v_rows);
    const double n2 = fro_norm_sq(v) + 1e-30; // guard: an all-zero net yields the zero beamformer
    return cscale(v, std::sqrt(p_dl / n2));
}

struct BlackboxTraining {
    BlackboxModel model;
    std::vector<EpochStats> curve;
};

/// Rate-loss training of the flat baseline. The output layer is NOT
/// zero-initialized: the zero beamformer is a stationary point of the sum
/// rate, so a residual-style start would never move.
inline BlackboxTraining train_blackbox(const std::vector<ChannelSample> &samples, const SystemConfig &cfg,
                                       const TrainHyper &hyper, const EpochCallback &on_epoch = {})
{
    detail::check_training_inputs(samples, cfg, hyper, false);
    const int M = cfg.antennas, K = cfg.users;
    const int flat = 2 * M * K;
    const std::size_t n = samples.size();
    const std::size_t n_hold = detail::holdout_count(n, hyper.holdout_frac);
    const std::size_t n_train = n - n_hold;
    constexpr std::uint32_t TRAINER_LANE = 3;

    std::vector<ComplexMatrix> x_rows(n);
    std::vector<RealMatrix> flats(n);
    for (std::size_t i = 0; i < n; ++i) {
        x_rows[i] = hermitian(samples[i].h_dl);
        flats[i] = flatten_rows(x_rows[i]);
    }

    BlackboxTraining out;
    out.model.antennas = M;
    out.model.users = K;
    out.model.mlp = mlp_init(flat, hyper.user_hidden, flat, cfg.rng_seed, /*net_tag=*/4, /*zero_final=*/false);
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
            RealMatrix big(static_cast<int>(bsz), flat);
            for (std::size_t bi = 0; bi < bsz; ++bi) {
                const RealMatrix &src = flats[order[start + bi]];
                for (int c = 0; c < flat; ++c)
                    big(static_cast<int>(bi), c) = src(0, c);
            }

            Tape t;
            Tape::Var big_in = t.constant(std::move(big));
            MlpTapeBinding bind = mlp_forward_tape(t, out.model.mlp, big_in, MlpMode::train);

            Tape::Var total = -1;
            for (std::size_t bi = 0; bi < bsz; ++bi) {
                Tape::Var row = t.row_slice(bind.out, static_cast<int>(bi), static_cast<int>(bi) + 1);
                CVar v_rows{t.reshape(t.col_slice(row, 0, M * K), K, M),
                            t.reshape(t.col_slice(row, M * K, 2 * M * K), K, M)};
                CVar v = c_hermitian(t, v_rows);
                Tape::Var n2 = t.add_scalar(c_fro_sq(t, v), 1e-30);
                Tape::Var scale_node = t.mul_scalar(t.recip(t.sqrt_elem(n2)), std::sqrt(cfg.p_dl));
                CVar v_scaled = c_mul_scalar_node(t, v, scale_node);
                Tape::Var rate = sum_rate_tape(t, c_constant(t, x_rows[order[start + bi]]), v_scaled, cfg.sigma0_sq);
                total = (total < 0) ? rate : t.add(total, rate);
            }
            Tape::Var loss = t.mul_scalar(total, -1.0 / static_cast<double>(bsz));
            detail::check_finite_loss(t.value(loss)(0, 0), epoch, start, "train_blackbox");
            rate_acc += t.value(total)(0, 0);
            rate_cnt += bsz;

            t.backward(loss);
            std::vector<const RealMatrix *> grads;
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
                                                               blackbox_beamform(hermitian(s.h_dl), out.model,
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

inline void save_blackbox(const std::string &path, const BlackboxModel &model, const std::string &manifest)
{
    auto os = detail::open_checkpoint_out(path);
    detail::write_checkpoint_header(os, ModelKind::blackbox, manifest);
    const std::uint32_t m = static_cast<std::uint32_t>(model.antennas), k = static_cast<std::uint32_t>(model.users);
    os.write(reinterpret_cast<const char *>(&m), sizeof m);
    os.write(reinterpret_cast<const char *>(&k), sizeof k);
    write_mlp(os, model.mlp);
    if (!os)
        throw std::runtime_error("short write to checkpoint '" + path + "'");
}

inline BlackboxModel load_blackbox(const std::string &path, std::string *manifest_out = nullptr)
{
    auto is = detail::open_checkpoint_in(path);
    detail::expect_kind(detail::read_checkpoint_header(is, path, manifest_out), ModelKind::blackbox, path);
    BlackboxModel model;
    std::uint32_t m = 0, k = 0;
    is.read(reinterpret_cast<char *>(&m), sizeof m);
    is.read(reinterpret_cast<char *>(&k), sizeof k);
    model.antennas = static_cast<int>(m);
    model.users = static_cast<int>(k);
    model.mlp = read_mlp(is);
    return model;
}

// --- experiment configuration ---------------------------------------------------

struct SweepSpec {
    enum class Kind { none, antennas, users, p_dl_dbm, p_ul_dbm };
    Kind kind = Kind::none;
    std::vector<double> values;
};

struct DatasetSpec {
    std::uint64_t train_count = 2000;
    std::uint64_t test_count = 500;
    std::uint64_t seed = 1;
};

struct ExperimentConfig {
    SystemConfig system; // linear powers; JSON speaks dBm
    SweepSpec sweep;
    std::vector<Method> methods;
    DatasetSpec dataset;
    TrainHyper hyper;
    std::string output_path = "results.csv";
    bool measure_time = false;
    int time_repeats = 20;
};

namespace detail {

using nlohmann::json;

inline const json &require_object(const json &j, const std::string &path)
{
    if (!j.is_object())
        throw std::invalid_argument("config." + path + ": expected an object");
    return j;
}

inline double get_num(const json &j, const std::string &path, const char *key, double fallback)
{
    if (!j.contains(key))
        return fallback;
    if (!j[key].is_number())
        throw std::invalid_argument("config." + path + "." + key + ": expected a number");
    return j[key].get<double>();
}

inline int get_int(const json &j, const std::string &path, const char *key, int fallback)
{
    if (!j.contains(key))
        return fallback;
    if (!j[key].is_number_integer())
        throw std::invalid_argument("config." + path + "." + key + ": expected an integer");
    return j[key].get<int>();
}

inline std::uint64_t get_u64(const json &j, const std::string &path, const char *key, std::uint64_t fallback)
{
    if (!j.contains(key))
        return fallback;
    if (!j[key].is_number_integer() || j[key].get<long long>() < 0)
        throw std::invalid_argument("config." + path + "." + key + ": expected a non-negative integer");
    return j[key].get<std::uint64_t>();
}

inline bool get_bool(const json &j, const std::string &path, const char *key, bool fallback)
{
    if (!j.contains(key))
        return fallback;
    if (!j[key].is_boolean())
        throw std::invalid_argument("config." + path + "." + key + ": expected a boolean");
    return j[key].get<bool>();
}

inline std::string get_str(const json &j, const std::string &path, const char *key, const std::string &fallback)
{
    if (!j.contains(key))
        return fallback;
    if (!j[key].is_string())
        throw std::invalid_argument("config." + path + "." + key + ": expected a string");
    return j[key].get<std::string>();
}

inline std::vector<int> get_int_list(const json &j, const std::string &path, const char *key,
                                     const std::vector<int> &fallback)
{
    if (!j.contains(key))
        return fallback;
    if (!j[key].is_array())
        throw std::invalid_argument("config." + path + "." + key + ": expected an array of integers");
    std::vector<int> out;
    for (const auto &v : j[key]) {
        if (!v.is_number_integer())
            throw std::invalid_argument("config." + path + "." + key + ": expected an array of integers");
        out.push_back(v.get<int>());
    }
    return out;
}

} // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json &root)
{
    using detail::get_bool;
    using detail::get_int;
    using detail::get_int_list;
    using detail::get_num;
    using detail::get_str;
    using detail::get_u64;

    if (!root.is_object())
        throw std::invalid_argument("config: top level must be an object");
    ExperimentConfig cfg;

    if (root.contains("system")) {
        const auto &s = detail::require_object(root["system"], "system");
        SystemConfig &sys = cfg.system;
        sys.antennas = get_int(s, "system", "antennas", sys.antennas);
        sys.users = get_int(s, "system", "users", sys.users);
        sys.pilot_len = get_int(s, "system", "pilot_len", sys.pilot_len);
        sys.paths = get_int(s, "system", "paths", sys.paths);
        sys.f_ul_hz = get_num(s, "system", "f_ul_hz", sys.f_ul_hz);
        sys.f_dl_hz = get_num(s, "system", "f_dl_hz", sys.f_dl_hz);
        sys.spacing_over_lambda = get_num(s, "system", "spacing_over_lambda", sys.spacing_over_lambda);
        sys.p_dl = dbm_to_watts(get_num(s, "system", "p_dl_dbm", watts_to_dbm(sys.p_dl)));
        sys.p_ul = dbm_to_watts(get_num(s, "system", "p_ul_dbm", watts_to_dbm(sys.p_ul)));
        sys.sigma0_sq = dbm_to_watts(get_num(s, "system", "noise_dl_dbm", watts_to_dbm(sys.sigma0_sq)));
        sys.sigma_ul_sq = dbm_to_watts(get_num(s, "system", "noise_ul_dbm", watts_to_dbm(sys.sigma_ul_sq)));
        sys.dist_min_m = get_num(s, "system", "dist_min_m", sys.dist_min_m);
        sys.dist_max_m = get_num(s, "system", "dist_max_m", sys.dist_max_m);
        sys.shared_gains = get_bool(s, "system", "shared_gains", sys.shared_gains);
    }

    if (root.contains("sweep")) {
        const auto &s = detail::require_object(root["sweep"], "sweep");
        const std::string param = get_str(s, "sweep", "parameter", "");
        if (param == "antennas")
            cfg.sweep.kind = SweepSpec::Kind::antennas;
        else if (param == "users")
            cfg.sweep.kind = SweepSpec::Kind::users;
        else if (param == "p_dl_dbm")
            cfg.sweep.kind = SweepSpec::Kind::p_dl_dbm;
        else if (param == "p_ul_dbm")
            cfg.sweep.kind = SweepSpec::Kind::p_ul_dbm;
        else
            throw std::invalid_argument("config.sweep.parameter: '" + param +
                                        "' is not one of antennas, users, p_dl_dbm, p_ul_dbm");
        if (!s.contains("values") || !s["values"].is_array() || s["values"].empty())
            throw std::invalid_argument("config.sweep.values: expected a non-empty array of numbers");
        for (const auto &v : s["values"]) {
            if (!v.is_number())
                throw std::invalid_argument("config.sweep.values: expected numbers");
            cfg.sweep.values.push_back(v.get<double>());
        }
    }

    if (root.contains("methods")) {
        if (!root["methods"].is_array() || root["methods"].empty())
            throw std::invalid_argument("config.methods: expected a non-empty array of method names");
        for (const auto &v : root["methods"]) {
            if (!v.is_string())
                throw std::invalid_argument("config.methods: expected strings");
            cfg.methods.push_back(method_from_string(v.get<std::string>()));
        }
    } else {
        cfg.methods = {Method::zf, Method::mrt};
    }

    if (root.contains("dataset")) {
        const auto &d = detail::require_object(root["dataset"], "dataset");
        cfg.dataset.train_count = get_u64(d, "dataset", "train_count", cfg.dataset.train_count);
        cfg.dataset.test_count = get_u64(d, "dataset", "test_count", cfg.dataset.test_count);
        cfg.dataset.seed = get_u64(d, "dataset", "seed", cfg.dataset.seed);
    }

    if (root.contains("hyper")) {
        const auto &h = detail::require_object(root["hyper"], "hyper");
        cfg.hyper.epochs = get_int(h, "hyper", "epochs", cfg.hyper.epochs);
        cfg.hyper.batch = get_int(h, "hyper", "batch", cfg.hyper.batch);
        cfg.hyper.lr = get_num(h, "hyper", "lr", cfg.hyper.lr);
        cfg.hyper.user_hidden = get_int_list(h, "hyper", "user_hidden", cfg.hyper.user_hidden);
        cfg.hyper.antenna_hidden = get_int_list(h, "hyper", "antenna_hidden", cfg.hyper.antenna_hidden);
        cfg.hyper.holdout_frac = get_num(h, "hyper", "holdout_frac", cfg.hyper.holdout_frac);
    }

    cfg.output_path = detail::get_str(root, "", "output_path", cfg.output_path);
    cfg.measure_time = get_bool(root, "", "measure_time", cfg.measure_time);
    cfg.time_repeats = get_int(root, "", "time_repeats", cfg.time_repeats);

    try {
        validate(cfg.system);
    } catch (const std::exception &e) {
        throw std::invalid_argument("config.system: " + std::string(e.what()));
    }
    try {
        validate(cfg.hyper);
    } catch (const std::exception &e) {
        throw std::invalid_argument("config.hyper: " + std::string(e.what()));
    }
    if (cfg.time_repeats < 1)
        throw std::invalid_argument("config.time_repeats: expected a positive integer");
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string &path)
{
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::parse_error &e) {
        throw std::runtime_error("config '" + path + "': " + e.what());
    }
    return parse_experiment_config(j);
}

/// Materialize the sweep: one SystemConfig per point (a single point when no
/// sweep is configured). Every point is validated up front so a bad value
/// fails before any work starts.
inline std::vector<SystemConfig> expand_sweep(const ExperimentConfig &cfg)
{
    std::vector<SystemConfig> points;
    if (cfg.sweep.kind == SweepSpec::Kind::none) {
        points.push_back(cfg.system);
    } else {
        for (double v : cfg.sweep.values) {
            SystemConfig s = cfg.system;
            switch (cfg.sweep.kind) {
            case SweepSpec::Kind::antennas:
                s.antennas = static_cast<int>(std::lround(v));
                break;
            case SweepSpec::Kind::users:
                s.users = static_cast<int>(std::lround(v));
                if (s.pilot_len < s.users) // keep the pilot book square-or-wider per point
                    s.pilot_len = s.users;
                break;
            case SweepSpec::Kind::p_dl_dbm:
                s.p_dl = dbm_to_watts(v);
                break;
            case SweepSpec::Kind::p_ul_dbm:
                s.p_ul = dbm_to_watts(v);
                break;
            case SweepSpec::Kind::none:
                break;
            }
            points.push_back(s);
        }
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
        SystemConfig &s = points[i];
        s.rng_seed = cfg.dataset.seed;
        try {
            validate(s);
            if (s.users > s.antennas)
                throw std::invalid_argument("users (" + std::to_string(s.users) + ") exceeds antennas (" +
                                            std::to_string(s.antennas) + "); zero-forcing needs users <= antennas");
        } catch (const std::invalid_argument &e) {
            throw std::invalid_argument("sweep point " + std::to_string(i) + ": " + e.what());
        }
    }
    return points;
}

// --- results table -------------------------------------------------------------

constexpr const char *CSV_HEADER = "method,M,K,P_dl_dbm,P_ul_dbm,mean_sum_rate_bps_hz,std,n_samples,mean_inference_ms";

struct EvalRow {
    std::string method;
    int antennas = 0;
    int users = 0;
    double p_dl_dbm = 0.0;
    double p_ul_dbm = 0.0;
    double mean_rate = 0.0;
    double stddev = 0.0;
    long n_samples = 0;
    double mean_inference_ms = 0.0;
};

inline std::string to_csv(const std::vector<EvalRow> &rows)
{
    std::string out = CSV_HEADER;
    out += '\n';
    char buf[256];
    for (const EvalRow &r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%.6f,%.6f,%.6f,%.6f,%ld,%.6f\n", r.method.c_str(), r.antennas,
                      r.users, r.p_dl_dbm, r.p_ul_dbm, r.mean_rate, r.stddev, r.n_samples, r.mean_inference_ms);
        out += buf;
    }
    return out;
}

inline void write_csv(const std::string &path, const std::vector<EvalRow> &rows)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    os << to_csv(rows);
    if (!os)
        throw std::runtime_error("short write to '" + path + "'");
}

// --- per-sample beamforming dispatch and timing ---------------------------------

using BeamformFn = std::function<ComplexMatrix(const ChannelSample &)>;

/// All trained models an experiment point may hold.
struct TrainedModels {
    CalibratedZfModel neural;
    bool has_neural = false;
    ImplicitCsiModel implicit_model;
    bool has_implicit = false;
    MlpParameters block_map;
    ComplexMatrix block_pilots;
    bool has_block = false;
    BlackboxModel blackbox;
    bool has_blackbox = false;
};

inline BeamformFn make_beamformer(Method m, const SystemConfig &cfg, const TrainedModels &models)
{
    switch (m) {
    case Method::zf:
        return [&cfg](const ChannelSample &s) { return zf(hermitian(s.h_dl), cfg.p_dl); };
    case Method::mrt:
        return [&cfg](const ChannelSample &s) { return mrt(hermitian(s.h_dl), cfg.p_dl); };
    case Method::wmmse:
        return [&cfg](const ChannelSample &s) { return wmmse(hermitian(s.h_dl), cfg.p_dl, cfg.sigma0_sq).v; };
    case Method::neural_calibration:
        if (!models.has_neural)
            throw std::logic_error("neural_calibration model not available");
        return [&cfg, &models](const ChannelSample &s) {
            return calibrated_zf_beamform(hermitian(s.h_dl), models.neural, cfg.p_dl);
        };
    case Method::implicit_neural_calibration:
        if (!models.has_implicit)
            throw std::logic_error("implicit_neural_calibration model not available");
        return [&cfg, &models](const ChannelSample &s) {
            if (!s.has_pilots)
                throw std::invalid_argument("implicit beamforming needs pilot observations in the sample");
            return implicit_beamform(s.y_pilots, models.implicit_model, cfg.p_dl);
        };
    case Method::block_by_block:
        if (!models.has_block)
            throw std::logic_error("block_by_block model not available");
        return [&cfg, &models](const ChannelSample &s) {
            if (!s.has_pilots)
                throw std::invalid_argument("block-by-block beamforming needs pilot observations in the sample");
            return block_by_block_beamform(s.y_pilots, models.block_map, models.block_pilots, cfg.p_dl);
        };
    case Method::blackbox:
        if (!models.has_blackbox)
            throw std::logic_error("blackbox model not available");
        return [&cfg, &models](const ChannelSample &s) {
            return blackbox_beamform(hermitian(s.h_dl), models.blackbox, cfg.p_dl);
        };
    }
    throw std::logic_error("make_beamformer: unknown method");
}

/// Mean wall-clock milliseconds per beamforming call over the given samples
/// (one warmup pass, then `repeats` timed passes).
inline double time_beamformer_ms(const BeamformFn &fn, const std::vector<ChannelSample> &samples, int repeats)
{
    if (samples.empty() || repeats < 1)
        return 0.0;
    for (const ChannelSample &s : samples)
        (void)fn(s); // warmup
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < repeats; ++r)
        for (const ChannelSample &s : samples)
            (void)fn(s);
    const auto t1 = std::chrono::steady_clock::now();
    const double total_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    return total_ms / (static_cast<double>(repeats) * static_cast<double>(samples.size()));
}

/// Standalone per-method timing entry point: builds whatever model the
/// method needs with freshly initialized weights (timing does not depend on
/// the weight values), generates a small probe set and times inference.
inline double time_method_ms(Method m, const ExperimentConfig &cfg, int n_repeats)
{
    SystemConfig sys = cfg.system;
    sys.rng_seed = cfg.dataset.seed;
    validate(sys);
    const ComplexMatrix pilots = default_pilots(sys.users, sys.pilot_len, sys.p_ul);
    const std::uint64_t probe = 16;
    std::vector<ChannelSample> samples = generate_dataset(sys, pilots, probe, /*first_sample_index=*/1u << 24);

    TrainedModels models;
    const int m2 = 2 * sys.antennas, l2 = 2 * sys.pilot_len;
    switch (m) {
    case Method::neural_calibration:
        models.neural.mlp = mlp_init(m2, cfg.hyper.user_hidden, m2, sys.rng_seed, 0, false);
        models.has_neural = true;
        break;
    case Method::implicit_neural_calibration:
        models.implicit_model.antenna_mlp = mlp_init(l2, cfg.hyper.antenna_hidden, l2, sys.rng_seed, 1, false);
        models.implicit_model.channel_map_mlp = mlp_init(m2, cfg.hyper.user_hidden, m2, sys.rng_seed, 2, false);
        models.implicit_model.zf_calib_mlp = mlp_init(m2, cfg.hyper.user_hidden, m2, sys.rng_seed, 3, false);
        models.implicit_model.pilots = pilots;
        models.has_implicit = true;
        break;
    case Method::block_by_block:
        models.block_map = mlp_init(m2, cfg.hyper.user_hidden, m2, sys.rng_seed, 2, false);
        models.block_pilots = pilots;
        models.has_block = true;
        break;
    case Method::blackbox:
        models.blackbox.mlp = mlp_init(2 * sys.antennas * sys.users, cfg.hyper.user_hidden,
                                       2 * sys.antennas * sys.users, sys.rng_seed, 4, false);
        models.blackbox.antennas = sys.antennas;
        models.blackbox.users = sys.users;
        models.has_blackbox = true;
        break;
    default:
        break;
    }
    return time_beamformer_ms(make_beamformer(m, sys, models), samples, n_repeats);
}

// --- experiment driver -----------------------------------------------------------

/// Offset separating test-set sample indices from training ones; the two
/// ranges never overlap for any practical dataset size.
constexpr std::uint64_t TEST_SAMPLE_OFFSET = 1ull << 31;

struct ExperimentResult {
    std::vector<EvalRow> rows;
};

/// Run the configured experiment: for every sweep point, generate data,
/// train whatever learned methods are requested, evaluate everything on the
/// shared test set, optionally time inference, and write one CSV. A learned
/// method whose training diverges contributes a marker row (mean/std nan,
/// n_samples 0) instead of aborting the sweep.
inline ExperimentResult run_experiment(const ExperimentConfig &cfg, std::ostream *log = nullptr)
{
    const std::vector<SystemConfig> points = expand_sweep(cfg);
    if (cfg.methods.empty())
        throw std::invalid_argument("config.methods: no methods requested");
    if (cfg.dataset.test_count < 1)
        throw std::invalid_argument("config.dataset.test_count: must be >= 1");

    bool any_learned = false;
    for (Method m : cfg.methods)
        any_learned = any_learned || method_is_learned(m);
    if (any_learned && cfg.dataset.train_count < 2)
        throw std::invalid_argument("config.dataset.train_count: must be >= 2 to train the requested methods");

    ExperimentResult result;
    for (std::size_t pi = 0; pi < points.size(); ++pi) {
        const SystemConfig &sys = points[pi];
        if (log)
            (*log) << "point " << pi << ": M=" << sys.antennas << " K=" << sys.users << " P_dl="
                   << watts_to_dbm(sys.p_dl) << " dBm\n";
        const ComplexMatrix pilots = default_pilots(sys.users, sys.pilot_len, sys.p_ul);
        const std::vector<ChannelSample> test = generate_dataset(sys, pilots, cfg.dataset.test_count,
                                                                 TEST_SAMPLE_OFFSET);
        std::vector<ChannelSample> train;
        if (any_learned)
            train = generate_dataset(sys, pilots, cfg.dataset.train_count, 0);

        TrainedModels models;
        for (Method m : cfg.methods) {
            EvalRow row;
            row.method = to_string(m);
            row.antennas = sys.antennas;
            row.users = sys.users;
            row.p_dl_dbm = watts_to_dbm(sys.p_dl);
            row.p_ul_dbm = watts_to_dbm(sys.p_ul);

            bool trained_ok = true;
            try {
                switch (m) {
                case Method::neural_calibration:
                    models.neural = train_perfect_csi(train, sys, cfg.hyper).model;
                    models.has_neural = true;
                    break;
                case Method::implicit_neural_calibration:
                    models.implicit_model = train_implicit(train, pilots, sys, cfg.hyper).model;
                    models.has_implicit = true;
                    break;
                case Method::block_by_block:
                    models.block_map = train_block_by_block(train, pilots, sys, cfg.hyper).channel_map_mlp;
                    models.block_pilots = pilots;
                    models.has_block = true;
                    break;
                case Method::blackbox:
                    models.blackbox = train_blackbox(train, sys, cfg.hyper).model;
                    models.has_blackbox = true;
                    break;
                default:
                    break;
                }
            } catch (const std::runtime_error &e) {
                trained_ok = false;
                if (log)
                    (*log) << "  " << row.method << ": " << e.what() << "\n";
                row.mean_rate = std::nan("");
                row.stddev = std::nan("");
                row.n_samples = 0;
            }

            if (trained_ok) {
                const BeamformFn fn = make_beamformer(m, sys, models);
                const RateStats st = evaluate_rates(test, sys.sigma0_sq, [&fn](const ChannelSample &s) {
                    return fn(s);
                });
                row.mean_rate = st.mean;
                row.stddev = st.stddev;
                row.n_samples = st.n;
                if (cfg.measure_time) {
                    const std::size_t probe = std::min<std::size_t>(test.size(), 16);
                    const std::vector<ChannelSample> subset(test.begin(),
                                                            test.begin() + static_cast<std::ptrdiff_t>(probe));
                    row.mean_inference_ms = time_beamformer_ms(fn, subset, cfg.time_repeats);
                }
                if (log)
                    (*log) << "  " << row.method << ": mean rate " << st.mean << " bit/s/Hz over " << st.n
                           << " samples (" << st.failures << " ill-posed)\n";
            }
            result.rows.push_back(std::move(row));
        }
    }
    write_csv(cfg.output_path, result.rows);
    return result;
}

} // namespace ncal
