// SPDX-License-Identifier: Apache-2.0
#include "ldr/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace ldr {

namespace {

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw IoError("unexpected end of tensor stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

void expect_magic(std::istream& in, const char* magic) {
  char got[4];
  in.read(got, 4);
  if (!in || std::memcmp(got, magic, 4) != 0) {
    throw IoError(std::string("bad magic, expected ") + magic);
  }
}

}  // namespace

void write_ldrt(std::ostream& out, const Tensor<float>& t) {
  out.write("LDRT", 4);
  put_le<std::uint32_t>(out, kTensorFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
  for (float v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
}

Tensor<float> read_ldrt(std::istream& in) {
  expect_magic(in, "LDRT");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kTensorFormatVersion) {
    throw IoError("unsupported LDRT version " + std::to_string(version));
  }
  const auto rank = get_le<std::uint32_t>(in);
  if (rank > 16) throw IoError("implausible LDRT rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
  const std::size_t count = numel(shape);
  if (count > (std::size_t{1} << 32)) throw IoError("implausible LDRT size " + to_string(shape));
  std::vector<float> data(count);
  for (auto& v : data) v = std::bit_cast<float>(get_le<std::uint32_t>(in));
  return Tensor<float>(std::move(shape), std::move(data));
}

void save_ldrt(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_ldrt(out, t);
  if (!out) throw IoError("write failed: " + path.string());
}

Tensor<float> load_ldrt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_ldrt(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries) {
  std::unordered_set<std::string> seen;
  for (const auto& [name, t] : entries) {
    if (!seen.insert(name).second) throw ContractError("duplicate checkpoint entry " + name);
  }
  // Write to a sibling temp file first so a crash never leaves a torn checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write("LDRC", 4);
    put_le<std::uint32_t>(out, kCheckpointFormatVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_ldrt(out, t);
    }
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  try {
    expect_magic(in, "LDRC");
    const auto version = get_le<std::uint32_t>(in);
    if (version != kCheckpointFormatVersion) {
      throw IoError("unsupported LDRC version " + std::to_string(version));
    }
    const auto count = get_le<std::uint32_t>(in);
    NamedTensors entries;
    entries.reserve(count);
    for (std::uint32_t e = 0; e < count; ++e) {
      const auto len = get_le<std::uint32_t>(in);
      if (len > 4096) throw IoError("implausible entry name length");
      std::string name(len, '\0');
      in.read(name.data(), len);
      if (!in) throw IoError("truncated entry name");
      entries.emplace_back(std::move(name), read_ldrt(in));
    }
    return entries;
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace ldr
