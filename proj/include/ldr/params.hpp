// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ldr/autodiff.hpp"

namespace ldr {

/// Ordered, uniquely named collection of trainable leaves. Insertion order is
/// the canonical order for checkpoints and optimizer state.
template <typename T>
class ParameterSet {
 public:
  /// Creates a parameter initialised uniformly in ±1/√fan_in from a stream
  /// seeded by (seed, name). fan_in == 0 creates a zero tensor.
  Var<T> create(const std::string& name, Shape shape, std::size_t fan_in, std::uint64_t seed);

  Var<T> find(const std::string& name) const;
  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }
  std::size_t count() const;  // total scalar parameters
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
};

std::uint64_t hash_name(const std::string& name);

}  // namespace ldr
