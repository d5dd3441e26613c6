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

#include <array>
#include <cmath>
#include <cstdint>
#include <utility>

namespace ncal {

/// Philox 4x32-10 counter block cipher (Salmon et al. round constants).
/// Stateless: each 128-bit counter + 64-bit key pair maps to 128 random
/// bits, which makes sub-streams trivially independent and replayable.
struct Philox4x32 {
    static constexpr std::uint32_t MUL_A = 0xD2511F53u;
    static constexpr std::uint32_t MUL_B = 0xCD9E8D57u;
    static constexpr std::uint32_t WEYL_A = 0x9E3779B9u;
    static constexpr std::uint32_t WEYL_B = 0xBB67AE85u;

    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key)
    {
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(MUL_A) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(MUL_B) * ctr[2];
            const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
            const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += WEYL_A;
            key[1] += WEYL_B;
        }
        return ctr;
    }
};

/// Purpose tags for independent random streams. Each tagged stream is keyed
/// by (seed, domain, sample, lane): different coordinates never collide, so
/// any quantity can be regenerated in isolation and in any order.
enum class RngDomain : std::uint32_t {
    path_angle = 1,
    path_distance = 2,
    gain_ul = 3,
    gain_dl = 4,
    pilot_noise = 5,
    weight_init = 6,
    shuffle = 7,
    eval_misc = 8,
};

/// Sequential view over one (seed, domain, sample, lane) Philox stream.
/// Draw index advances one 128-bit block at a time; a block yields two
/// doubles or one Gaussian pair.
class Prng {
  public:
    Prng(std::uint64_t seed, RngDomain domain, std::uint64_t sample, std::uint32_t lane)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          base_{0u, static_cast<std::uint32_t>(domain),
                static_cast<std::uint32_t>(sample) ^ (static_cast<std::uint32_t>(sample >> 32) * 0x85EBCA6Bu), lane}
    {
    }

    /// Raw 128-bit block for the current draw index (advances it).
    std::array<std::uint32_t, 4> next_block()
    {
        auto ctr = base_;
        ctr[0] = draw_++;
        return Philox4x32::block(ctr, key_);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01()
    {
        if (!have_spare_) {
            const auto b = next_block();
            spare_ = to_unit(b[2], b[3]);
            have_spare_ = true;
            return to_unit(b[0], b[1]);
        }
        have_spare_ = false;
        return spare_;
    }

    /// Uniform double in (lo, hi), endpoints excluded.
    double uniform_open(double lo, double hi)
    {
        double u;
        do {
            u = uniform01();
        } while (u == 0.0);
        return lo + u * (hi - lo);
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + uniform01() * (hi - lo); }

    /// Standard normal pair via Box-Muller; u1 is mapped into (0, 1] so the
    /// logarithm is always finite.
    std::pair<double, double> gaussian_pair()
    {
        const auto b = next_block();
        const double u1 = (static_cast<double>(combine(b[0], b[1]) >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(combine(b[2], b[3]) >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double phi = 2.0 * PI * u2;
        return {r * std::cos(phi), r * std::sin(phi)};
    }

    double gaussian()
    {
        if (have_gauss_) {
            have_gauss_ = false;
            return gauss_spare_;
        }
        auto [z0, z1] = gaussian_pair();
        gauss_spare_ = z1;
        have_gauss_ = true;
        return z0;
    }

    /// Uniform integer in [0, n). Uses the 53-bit uniform; the modulo-free
    /// floor map keeps the draw deterministic and the bias below 2^-53.
    std::uint64_t uniform_index(std::uint64_t n)
    {
        const double u = uniform01();
        auto v = static_cast<std::uint64_t>(u * static_cast<double>(n));
        return v >= n ? n - 1 : v;
    }

    static constexpr double PI = 3.14159265358979323846;

  private:
    static std::uint64_t combine(std::uint32_t lo, std::uint32_t hi)
    {
        return (static_cast<std::uint64_t>(hi) << 32) | lo;
    }

    static double to_unit(std::uint32_t lo, std::uint32_t hi)
    {
        return static_cast<double>(combine(lo, hi) >> 11) * 0x1.0p-53;
    }

    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> base_;
    std::uint32_t draw_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
    bool have_gauss_ = false;
    double gauss_spare_ = 0.0;
};

/// Lane packing helper for per-(row, column) streams: row in the high half,
/// column in the low half. Both must fit in 16 bits.
inline std::uint32_t rng_lane(int hi, int lo)
{
    return (static_cast<std::uint32_t>(hi) << 16) | (static_cast<std::uint32_t>(lo) & 0xFFFFu);
}

} // namespace ncal
