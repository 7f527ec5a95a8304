// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "ldr/tensor.hpp"

// Serial reference implementations. Plain nested loops in the most literal
// index order, kept as oracles for the parallel kernels and for benchmarking.
namespace ldr::reference {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Zero-padded convolution: x is H×W×Cin, filter k×k×Cin×Cout.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& filter, std::size_t stride = 1);

/// Response of expert `n` at pixel (i, j): Σ_{Δi,Δj} X(i+Δi, j+Δj) · F_n(Δi, Δj).
/// bank is N×k×k×C×C.
template <typename T>
std::vector<T> expert_response(const Tensor<T>& x, const Tensor<T>& bank, std::size_t n,
                               std::size_t i, std::size_t j);

/// Σ_k weights(p,k) · E(p, indices(p,k)); indices and weights are H×W×K.
template <typename T>
Tensor<T> expert_sparse(const Tensor<T>& x, const Tensor<T>& bank,
                        const std::vector<std::int32_t>& indices, const Tensor<T>& weights);

/// Σ_n scores(p,n) · E(p,n) over every expert; scores is H×W×N.
template <typename T>
Tensor<T> expert_dense(const Tensor<T>& x, const Tensor<T>& bank, const Tensor<T>& scores);

}  // namespace ldr::reference
