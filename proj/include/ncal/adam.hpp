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
#include <stdexcept>
#include <vector>

#include "real_matrix.hpp"

namespace ncal {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment estimates, one slot per parameter matrix. The slot
/// order is fixed by whoever owns the parameter list (see mlp_trainables).
struct AdamState {
    std::vector<RealMatrix> m;
    std::vector<RealMatrix> v;
    long step_count = 0;

    void init(const std::vector<RealMatrix *> &params)
    {
        m.clear();
        v.clear();
        for (const RealMatrix *p : params) {
            m.emplace_back(p->rows(), p->cols());
            v.emplace_back(p->rows(), p->cols());
        }
        step_count = 0;
    }
};

/// One bias-corrected Adam update:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
inline void adam_step(const std::vector<RealMatrix *> &params, const std::vector<const RealMatrix *> &grads,
                      AdamState &state, const AdamOptions &opt = {})
{
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        RealMatrix &p = *params[i];
        const RealMatrix &g = *grads[i];
        if (!p.same_shape(g) || !p.same_shape(state.m[i]))
            throw std::invalid_argument("adam_step: shape mismatch at slot " + std::to_string(i));
        RealMatrix &m = state.m[i];
        RealMatrix &v = state.v[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g.data()[k];
            m.data()[k] = opt.beta1 * m.data()[k] + (1.0 - opt.beta1) * gk;
            v.data()[k] = opt.beta2 * v.data()[k] + (1.0 - opt.beta2) * gk * gk;
            const double mhat = m.data()[k] / bc1;
            const double vhat = v.data()[k] / bc2;
            p.data()[k] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

} // namespace ncal
