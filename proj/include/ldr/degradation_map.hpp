// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ldr/autodiff.hpp"
#include "ldr/params.hpp"

namespace ldr {

/// Query/key/value projections (C×C, no bias) of the degradation-map
/// cross-attention.
template <typename T>
struct DmmParams {
  Var<T> wq, wk, wv;

  static DmmParams create(ParameterSet<T>& params, const std::string& prefix, std::size_t channels,
                          std::uint64_t seed);
};

template <typename T>
struct DegradationMap {
  Var<T> map;        // H×W×C
  Var<T> attention;  // HW×L, rows sum to one
};

/// Cross-attends image features x (H×W×C) against the prior embedding
/// (L×C): M = softmax(x·Wq (p·Wk)ᵀ) · p·Wv, single head. Logits are unscaled
/// unless `scale_logits`, which divides them by √C.
template <typename T>
DegradationMap<T> measure_degradation_map(Tape<T>& tape, const Var<T>& x, const Var<T>& prior,
                                          const DmmParams<T>& params, bool scale_logits = false);

}  // namespace ldr
