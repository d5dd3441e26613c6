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

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "channel.hpp"

namespace ncal {

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian; big-endian hosts are not supported");

/// Binary channel dataset.
///
/// Layout (all integers and doubles little-endian):
///   bytes 0..7   magic "NCALDS\0\0"
///   bytes 8..11  format version (u32, currently 1)
///   bytes 12..15 reserved (u32, zero)
///   u64 antennas, u64 users, u64 pilot_len, u64 count
///   then per sample, row-major doubles:
///     Re{H_ul}, Im{H_ul}   (antennas x users)
///     Re{H_dl}, Im{H_dl}   (antennas x users)
///     Re{Y_p},  Im{Y_p}    (antennas x pilot_len)
///
/// Path parameters are not stored; loaded samples carry channels and pilot
/// observations only.
namespace dataset_format {
constexpr char MAGIC[8] = {'N', 'C', 'A', 'L', 'D', 'S', '\0', '\0'};
constexpr std::uint32_t VERSION = 1;
} // namespace dataset_format

namespace detail {

inline void write_u32(std::ostream &os, std::uint32_t v)
{
    os.write(reinterpret_cast<const char *>(&v), sizeof v);
}

inline void write_u64(std::ostream &os, std::uint64_t v)
{
    os.write(reinterpret_cast<const char *>(&v), sizeof v);
}

inline std::uint32_t read_u32(std::istream &is)
{
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char *>(&v), sizeof v);
    return v;
}

inline std::uint64_t read_u64(std::istream &is)
{
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char *>(&v), sizeof v);
    return v;
}

inline void write_mat(std::ostream &os, const RealMatrix &m)
{
    os.write(reinterpret_cast<const char *>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

inline void read_mat(std::istream &is, RealMatrix &m)
{
    is.read(reinterpret_cast<char *>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

} // namespace detail

inline void save_dataset(const std::string &path, const std::vector<ChannelSample> &samples, const SystemConfig &cfg)
{
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const ChannelSample &s = samples[i];
        if (s.h_ul.rows() != cfg.antennas || s.h_ul.cols() != cfg.users || !s.h_ul.re.same_shape(s.h_dl.re))
            throw std::invalid_argument("save_dataset: sample " + std::to_string(i) + " has wrong channel shape");
        if (!s.has_pilots || s.y_pilots.rows() != cfg.antennas || s.y_pilots.cols() != cfg.pilot_len)
            throw std::invalid_argument("save_dataset: sample " + std::to_string(i) +
                                        " is missing a pilot observation of the configured shape");
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw std::runtime_error("save_dataset: cannot open '" + path + "' for writing");
    os.write(dataset_format::MAGIC, sizeof dataset_format::MAGIC);
    detail::write_u32(os, dataset_format::VERSION);
    detail::write_u32(os, 0u);
    detail::write_u64(os, static_cast<std::uint64_t>(cfg.antennas));
    detail::write_u64(os, static_cast<std::uint64_t>(cfg.users));
    detail::write_u64(os, static_cast<std::uint64_t>(cfg.pilot_len));
    detail::write_u64(os, samples.size());
    for (const ChannelSample &s : samples) {
        detail::write_mat(os, s.h_ul.re);
        detail::write_mat(os, s.h_ul.im);
        detail::write_mat(os, s.h_dl.re);
        detail::write_mat(os, s.h_dl.im);
        detail::write_mat(os, s.y_pilots.re);
        detail::write_mat(os, s.y_pilots.im);
    }
    if (!os)
        throw std::runtime_error("save_dataset: short write to '" + path + "'");
}

struct DatasetHeader {
    int antennas = 0;
    int users = 0;
    int pilot_len = 0;
    std::uint64_t count = 0;
};

inline std::vector<ChannelSample> load_dataset(const std::string &path, DatasetHeader *header_out = nullptr)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("load_dataset: cannot open '" + path + "'");
    char magic[8] = {};
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, dataset_format::MAGIC, sizeof magic) != 0)
        throw std::runtime_error("load_dataset: '" + path + "' is not a channel dataset (bad magic)");
    const std::uint32_t version = detail::read_u32(is);
    if (version != dataset_format::VERSION)
        throw std::runtime_error("load_dataset: unsupported dataset version " + std::to_string(version));
    detail::read_u32(is); // reserved
    DatasetHeader h;
    h.antennas = static_cast<int>(detail::read_u64(is));
    h.users = static_cast<int>(detail::read_u64(is));
    h.pilot_len = static_cast<int>(detail::read_u64(is));
    h.count = detail::read_u64(is);
    if (!is || h.antennas < 1 || h.users < 1 || h.pilot_len < 1)
        throw std::runtime_error("load_dataset: corrupt header in '" + path + "'");

    std::vector<ChannelSample> samples;
    samples.reserve(h.count);
    for (std::uint64_t i = 0; i < h.count; ++i) {
        ChannelSample s;
        s.h_ul = ComplexMatrix(h.antennas, h.users);
        s.h_dl = ComplexMatrix(h.antennas, h.users);
        s.y_pilots = ComplexMatrix(h.antennas, h.pilot_len);
        detail::read_mat(is, s.h_ul.re);
        detail::read_mat(is, s.h_ul.im);
        detail::read_mat(is, s.h_dl.re);
        detail::read_mat(is, s.h_dl.im);
        detail::read_mat(is, s.y_pilots.re);
        detail::read_mat(is, s.y_pilots.im);
        s.has_pilots = true;
        if (!is)
            throw std::runtime_error("load_dataset: '" + path + "' truncated at sample " + std::to_string(i));
        samples.push_back(std::move(s));
    }
    if (header_out)
        *header_out = h;
    return samples;
}

/// Convenience: draw `count` samples from the configured distribution and
/// run the pilot pass on each with the given pilot book.
inline std::vector<ChannelSample> generate_dataset(const SystemConfig &cfg, const ComplexMatrix &pilots,
                                                   std::uint64_t count, std::uint64_t first_sample_index = 0)
{
    std::vector<ChannelSample> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        ChannelSample s = generate_sample(cfg, first_sample_index + i);
        transmit_pilots(s, pilots, cfg, first_sample_index + i);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace ncal
