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

// Minimal end-to-end walkthrough: synthesize a small FDD downlink scenario,
// score the closed-form beamformers, train a per-user calibration network
// for a few epochs, and compare. Runs in seconds on a laptop.

#include <ncal/harness.hpp>

#include <cstdio>

using namespace ncal;

int main()
{
    SystemConfig sys;
    sys.antennas = 8;
    sys.users = 2;
    sys.pilot_len = 2;
    sys.rng_seed = 7;

    const ComplexMatrix pilots = default_pilots(sys.users, sys.pilot_len, sys.p_ul);
    const std::vector<ChannelSample> train = generate_dataset(sys, pilots, 512, 0);
    const std::vector<ChannelSample> test = generate_dataset(sys, pilots, 128, TEST_SAMPLE_OFFSET);
    std::printf("scenario: M=%d antennas, K=%d users, %zu train / %zu test samples\n\n", sys.antennas, sys.users,
                train.size(), test.size());

    const RateStats mrt_stats = evaluate_rates(test, sys.sigma0_sq, [&](const ChannelSample &s) {
        return mrt(hermitian(s.h_dl), sys.p_dl);
    });
    const RateStats zf_stats = evaluate_rates(test, sys.sigma0_sq, [&](const ChannelSample &s) {
        return zf(hermitian(s.h_dl), sys.p_dl);
    });
    const RateStats wmmse_stats = evaluate_rates(test, sys.sigma0_sq, [&](const ChannelSample &s) {
        return wmmse(hermitian(s.h_dl), sys.p_dl, sys.sigma0_sq).v;
    });

    TrainHyper hyper;
    hyper.epochs = 8;
    hyper.batch = 64;
    hyper.lr = 1e-3;
    hyper.user_hidden = {32, 64};
    hyper.holdout_frac = 0.1;

    std::printf("training the per-user calibration network (%d epochs)...\n", hyper.epochs);
    const PerfectCsiTraining tr =
        train_perfect_csi(train, sys, hyper, [](int epoch, const EpochStats &st) {
            std::printf("  epoch %d: train rate %.4f, holdout rate %.4f\n", epoch, st.train_objective,
                        st.holdout_objective);
        });

    const RateStats cal_stats = evaluate_rates(test, sys.sigma0_sq, [&](const ChannelSample &s) {
        return calibrated_zf_beamform(hermitian(s.h_dl), tr.model, sys.p_dl);
    });

    std::printf("\nmean sum rate on %ld held-out samples (bit/s/Hz):\n", zf_stats.n);
    std::printf("  %-22s %8.4f\n", "mrt", mrt_stats.mean);
    std::printf("  %-22s %8.4f\n", "zf", zf_stats.mean);
    std::printf("  %-22s %8.4f\n", "wmmse", wmmse_stats.mean);
    std::printf("  %-22s %8.4f   (%.2f%% over zf)\n", "neural calibration", cal_stats.mean,
                100.0 * (cal_stats.mean / zf_stats.mean - 1.0));
    return 0;
}
