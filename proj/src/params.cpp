// SPDX-License-Identifier: Apache-2.0
#include "ldr/params.hpp"

#include <cmath>

#include "ldr/rng.hpp"

namespace ldr {

std::uint64_t hash_name(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
Var<T> ParameterSet<T>::create(const std::string& name, Shape shape, std::size_t fan_in,
                               std::uint64_t seed) {
  for (const auto& [existing, v] : entries_) {
    if (existing == name) throw ContractError("parameter name reused: " + name);
  }
  Tensor<T> value(std::move(shape));
  if (fan_in > 0) {
    Rng rng(mix_seed(seed, hash_name(name)));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : value.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
  }
  auto leaf = make_leaf(std::move(value), true);
  entries_.emplace_back(name, leaf);
  return leaf;
}

template <typename T>
Var<T> ParameterSet<T>::find(const std::string& name) const {
  for (const auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  return nullptr;
}

template <typename T>
std::size_t ParameterSet<T>::count() const {
  std::size_t total = 0;
  for (const auto& [n, v] : entries_) total += v->value.size();
  return total;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& [n, v] : entries_) v->zero_grad();
}

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace ldr
