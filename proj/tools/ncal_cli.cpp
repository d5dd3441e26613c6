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

// Command-line front end over the ncal library:
//   ncal gen-data  --config c.json --out data.bin [--count N] [--seed S] [--test]
//   ncal train     --config c.json --method NAME --out model.ckpt [--data data.bin]
//   ncal evaluate  --config c.json (--method NAME | --checkpoint model.ckpt)
//                  [--data data.bin] [--out rows.csv]
//   ncal bench     --config c.json [--methods a,b,c] [--repeats R]
//   ncal sweep     --config c.json [--out results.csv]

#include <CLI11.hpp>

#include <ncal/harness.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace ncal;

// Resolved-run manifest embedded in checkpoints and optional JSON reports.
std::string make_manifest(const ExperimentConfig &cfg, const std::string &method)
{
    nlohmann::json j;
    j["library_version"] = NCAL_VERSION;
    j["method"] = method;
    j["system"] = {
        {"antennas", cfg.system.antennas},
        {"users", cfg.system.users},
        {"pilot_len", cfg.system.pilot_len},
        {"paths", cfg.system.paths},
        {"f_ul_hz", cfg.system.f_ul_hz},
        {"f_dl_hz", cfg.system.f_dl_hz},
        {"p_dl_dbm", watts_to_dbm(cfg.system.p_dl)},
        {"p_ul_dbm", watts_to_dbm(cfg.system.p_ul)},
        {"noise_dl_dbm", watts_to_dbm(cfg.system.sigma0_sq)},
        {"noise_ul_dbm", watts_to_dbm(cfg.system.sigma_ul_sq)},
        {"shared_gains", cfg.system.shared_gains},
    };
    j["dataset"] = {{"train_count", cfg.dataset.train_count},
                    {"test_count", cfg.dataset.test_count},
                    {"seed", cfg.dataset.seed}};
    j["hyper"] = {{"epochs", cfg.hyper.epochs}, {"batch", cfg.hyper.batch},       {"lr", cfg.hyper.lr},
                  {"user_hidden", cfg.hyper.user_hidden}, {"antenna_hidden", cfg.hyper.antenna_hidden},
                  {"holdout_frac", cfg.hyper.holdout_frac}};
    return j.dump();
}

ExperimentConfig load_config(const std::string &path, std::optional<std::uint64_t> seed_override)
{
    ExperimentConfig cfg = load_experiment_config(path);
    if (seed_override) {
        cfg.dataset.seed = *seed_override;
        cfg.system.rng_seed = *seed_override;
    } else {
        cfg.system.rng_seed = cfg.dataset.seed;
    }
    return cfg;
}

// Dataset loaded from disk must match the shape the config promises; a
// mismatch means the config and dataset belong to different runs.
std::vector<ChannelSample> load_matching_dataset(const std::string &path, const SystemConfig &sys)
{
    DatasetHeader hdr;
    std::vector<ChannelSample> samples = load_dataset(path, &hdr);
    if (hdr.antennas != sys.antennas || hdr.users != sys.users)
        throw std::runtime_error("dataset '" + path + "' holds M=" + std::to_string(hdr.antennas) +
                                 ", K=" + std::to_string(hdr.users) + " but the config expects M=" +
                                 std::to_string(sys.antennas) + ", K=" + std::to_string(sys.users));
    return samples;
}

EpochCallback progress_printer(const char *objective_name)
{
    return [objective_name](int epoch, const EpochStats &st) {
        std::printf("  epoch %3d  train %-10s %12.6f   holdout %12.6f\n", epoch, objective_name,
                    st.train_objective, st.holdout_objective);
        std::fflush(stdout);
    };
}

int cmd_gen_data(const std::string &config_path, const std::string &out_path, std::uint64_t count_override,
                 std::optional<std::uint64_t> seed, bool test_split)
{
    const ExperimentConfig cfg = load_config(config_path, seed);
    SystemConfig sys = cfg.system;
    const std::uint64_t count =
        count_override ? count_override : (test_split ? cfg.dataset.test_count : cfg.dataset.train_count);
    const std::uint64_t offset = test_split ? TEST_SAMPLE_OFFSET : 0;
    const ComplexMatrix pilots = default_pilots(sys.users, sys.pilot_len, sys.p_ul);
    const std::vector<ChannelSample> samples = generate_dataset(sys, pilots, count, offset);
    save_dataset(out_path, samples, sys);
    std::printf("wrote %llu %s samples (M=%d, K=%d, L=%d, seed=%llu) to %s\n",
                static_cast<unsigned long long>(count), test_split ? "test" : "training", sys.antennas, sys.users,
                sys.pilot_len, static_cast<unsigned long long>(sys.rng_seed), out_path.c_str());
    return 0;
}

int cmd_train(const std::string &config_path, const std::string &method_name, const std::string &out_path,
              const std::string &data_path, std::optional<std::uint64_t> seed)
{
    const ExperimentConfig cfg = load_config(config_path, seed);
    const SystemConfig &sys = cfg.system;
    const Method method = method_from_string(method_name);
    if (!method_is_learned(method))
        throw std::runtime_error("method '" + method_name + "' has nothing to train");

    const ComplexMatrix pilots = default_pilots(sys.users, sys.pilot_len, sys.p_ul);
    std::vector<ChannelSample> samples;
    if (!data_path.empty())
        samples = load_matching_dataset(data_path, sys);
    else
        samples = generate_dataset(sys, pilots, cfg.dataset.train_count, 0);
    std::printf("training %s on %zu samples (M=%d, K=%d)\n", method_name.c_str(), samples.size(), sys.antennas,
                sys.users);

    const std::string manifest = make_manifest(cfg, method_name);
    switch (method) {
    case Method::neural_calibration: {
        PerfectCsiTraining tr = train_perfect_csi(samples, sys, cfg.hyper, progress_printer("rate"));
        save_calibrated_zf(out_path, tr.model, manifest);
        break;
    }
    case Method::implicit_neural_calibration: {
        ImplicitTraining tr = train_implicit(samples, pilots, sys, cfg.hyper, progress_printer("rate"));
        save_implicit_csi(out_path, tr.model, manifest);
        break;
    }
    case Method::block_by_block: {
        BlockByBlockTraining tr = train_block_by_block(samples, pilots, sys, cfg.hyper, progress_printer("mse"));
        save_block_by_block(out_path, tr.channel_map_mlp, pilots, manifest);
        break;
    }
    case Method::blackbox: {
        BlackboxTraining tr = train_blackbox(samples, sys, cfg.hyper, progress_printer("rate"));
        save_blackbox(out_path, tr.model, manifest);
        break;
    }
    default:
        throw std::logic_error("unhandled learned method");
    }
    std::printf("saved %s checkpoint to %s\n", method_name.c_str(), out_path.c_str());
    return 0;
}

int cmd_evaluate(const std::string &config_path, std::string method_name, const std::string &checkpoint_path,
                 const std::string &data_path, const std::string &out_path, bool time_it,
                 std::optional<std::uint64_t> seed)
{
    ExperimentConfig cfg = load_config(config_path, seed);
    if (time_it)
        cfg.measure_time = true;
    const SystemConfig &sys = cfg.system;

    TrainedModels models;
    if (!checkpoint_path.empty()) {
        switch (peek_checkpoint_kind(checkpoint_path)) {
        case ModelKind::calibrated_zf:
            models.neural = load_calibrated_zf(checkpoint_path);
            models.has_neural = true;
            method_name = "neural_calibration";
            break;
        case ModelKind::implicit_csi:
            models.implicit_model = load_implicit_csi(checkpoint_path);
            models.has_implicit = true;
            method_name = "implicit_neural_calibration";
            break;
        case ModelKind::block_by_block:
            std::tie(models.block_map, models.block_pilots) = load_block_by_block(checkpoint_path);
            models.has_block = true;
            method_name = "block_by_block";
            break;
        case ModelKind::blackbox:
            models.blackbox = load_blackbox(checkpoint_path);
            models.has_blackbox = true;
            method_name = "blackbox";
            break;
        }
    } else if (method_name.empty()) {
        throw std::runtime_error("evaluate needs --method or --checkpoint");
    }
    const Method method = method_from_string(method_name);
    if (method_is_learned(method) && checkpoint_path.empty())
        throw std::runtime_error("method '" + method_name + "' needs --checkpoint");

    std::vector<ChannelSample> test;
    if (!data_path.empty()) {
        test = load_matching_dataset(data_path, sys);
    } else {
        const ComplexMatrix pilots = default_pilots(sys.users, sys.pilot_len, sys.p_ul);
        test = generate_dataset(sys, pilots, cfg.dataset.test_count, TEST_SAMPLE_OFFSET);
    }

    const BeamformFn fn = make_beamformer(method, sys, models);
    const RateStats st = evaluate_rates(test, sys.sigma0_sq, [&fn](const ChannelSample &s) { return fn(s); });
    std::printf("%s: mean sum rate %.6f bit/s/Hz (std %.6f) over %ld samples, %ld ill-posed\n",
                method_name.c_str(), st.mean, st.stddev, st.n, st.failures);

    if (!out_path.empty()) {
        EvalRow row;
        row.method = method_name;
        row.antennas = sys.antennas;
        row.users = sys.users;
        row.p_dl_dbm = watts_to_dbm(sys.p_dl);
        row.p_ul_dbm = watts_to_dbm(sys.p_ul);
        row.mean_rate = st.mean;
        row.stddev = st.stddev;
        row.n_samples = st.n;
        if (cfg.measure_time)
            row.mean_inference_ms = time_beamformer_ms(
                fn, std::vector<ChannelSample>(test.begin(), test.begin() + std::min<std::size_t>(test.size(), 16)),
                cfg.time_repeats);
        write_csv(out_path, {row});
        std::printf("wrote %s\n", out_path.c_str());
    }
    return 0;
}

int cmd_bench(const std::string &config_path, const std::string &methods_csv, int repeats,
              std::optional<std::uint64_t> seed)
{
    ExperimentConfig cfg = load_config(config_path, seed);
    if (repeats > 0)
        cfg.time_repeats = repeats;

    std::vector<Method> methods;
    std::stringstream ss(methods_csv);
    for (std::string tok; std::getline(ss, tok, ',');)
        if (!tok.empty())
            methods.push_back(method_from_string(tok));
    if (methods.empty())
        throw std::runtime_error("bench: no methods requested");

    std::printf("per-sample inference time, M=%d K=%d (%d repeats over 16 samples)\n", cfg.system.antennas,
                cfg.system.users, cfg.time_repeats);
    double wmmse_ms = 0.0;
    std::vector<std::pair<std::string, double>> rows;
    for (Method m : methods) {
        const double ms = time_method_ms(m, cfg, cfg.time_repeats);
        rows.emplace_back(to_string(m), ms);
        if (m == Method::wmmse)
            wmmse_ms = ms;
    }
    for (const auto &[name, ms] : rows) {
        if (wmmse_ms > 0.0 && ms > 0.0)
            std::printf("  %-28s %12.4f ms   (%.1fx vs wmmse)\n", name.c_str(), ms, wmmse_ms / ms);
        else
            std::printf("  %-28s %12.4f ms\n", name.c_str(), ms);
    }
    return 0;
}

int cmd_sweep(const std::string &config_path, const std::string &out_override, std::optional<std::uint64_t> seed)
{
    ExperimentConfig cfg = load_config(config_path, seed);
    if (!out_override.empty())
        cfg.output_path = out_override;
    const ExperimentResult res = run_experiment(cfg, &std::cerr);
    std::fputs(to_csv(res.rows).c_str(), stdout);
    std::fprintf(stderr, "wrote %zu rows to %s\n", res.rows.size(), cfg.output_path.c_str());
    return 0;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"massive-MIMO downlink beamforming: data synthesis, neural calibration, evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(ncal::NCAL_VERSION));

    std::string config_path, out_path, data_path, checkpoint_path, method_name;
    std::string methods_csv = "zf,mrt,wmmse,neural_calibration";
    std::uint64_t count = 0;
    int repeats = 0;
    bool test_split = false;
    bool time_it = false;
    std::optional<std::uint64_t> seed;

    auto add_config = [&](CLI::App *sub) {
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--seed", seed, "override the dataset seed");
    };

    CLI::App *gen = app.add_subcommand("gen-data", "synthesize a channel/pilot dataset and save it");
    add_config(gen);
    gen->add_option("--out", out_path, "output dataset file")->required();
    gen->add_option("--count", count, "sample count (default: dataset.train_count or test_count)");
    gen->add_flag("--test", test_split, "draw from the held-out index range");

    CLI::App *train = app.add_subcommand("train", "train a learned beamforming method");
    add_config(train);
    train->add_option("--method", method_name, "neural_calibration | implicit_neural_calibration | block_by_block | blackbox")
        ->required();
    train->add_option("--out", out_path, "output checkpoint file")->required();
    train->add_option("--data", data_path, "training dataset (default: synthesized from the config)");

    CLI::App *eval = app.add_subcommand("evaluate", "score a method on a test set");
    add_config(eval);
    eval->add_option("--method", method_name, "closed-form method to score (zf, mrt, wmmse)");
    eval->add_option("--checkpoint", checkpoint_path, "trained model to score");
    eval->add_option("--data", data_path, "test dataset (default: synthesized from the config)");
    eval->add_option("--out", out_path, "optional single-row CSV");
    eval->add_flag("--time", time_it, "measure per-sample inference time for the CSV row");

    CLI::App *bench = app.add_subcommand("bench", "time per-sample inference of each method");
    add_config(bench);
    bench->add_option("--methods", methods_csv, "comma-separated method list");
    bench->add_option("--repeats", repeats, "timing repeats (default: config time_repeats)");

    CLI::App *sweep = app.add_subcommand("sweep", "run the full configured experiment and write the CSV");
    add_config(sweep);
    sweep->add_option("--out", out_path, "override the config's output_path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen_data(config_path, out_path, count, seed, test_split);
        if (train->parsed())
            return cmd_train(config_path, method_name, out_path, data_path, seed);
        if (eval->parsed())
            return cmd_evaluate(config_path, method_name, checkpoint_path, data_path, out_path, time_it, seed);
        if (bench->parsed())
            return cmd_bench(config_path, methods_csv, repeats, seed);
        if (sweep->parsed())
            return cmd_sweep(config_path, out_path, seed);
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
