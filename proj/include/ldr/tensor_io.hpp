// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ldr/tensor.hpp"

namespace ldr {

// LDRT: "LDRT", u32 version (1), u32 rank, rank × u64 dims, then row-major
// little-endian float32 values.
inline constexpr std::uint32_t kTensorFormatVersion = 1;
// LDRC: "LDRC", u32 version, u32 entry count, then per entry a u32 name
// length, the UTF-8 name and an embedded LDRT tensor.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

void write_ldrt(std::ostream& out, const Tensor<float>& t);
Tensor<float> read_ldrt(std::istream& in);

void save_ldrt(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load_ldrt(const std::filesystem::path& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace ldr
