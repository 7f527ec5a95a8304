// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ldr/autodiff.hpp"
#include "ldr/params.hpp"

namespace ldr {

/// Largest token count (H·W at the aggregation block) the default
/// configuration may reach. Attention cost grows as (H·W)²·C.
inline constexpr std::size_t kMaxAggregationTokens = 4096;

/// Projections for the aggregation cross-attention plus the convolutional
/// feed-forward refinement conv3×3(C→2C) · relu · conv3×3(2C→C).
template <typename T>
struct RfaParams {
  Var<T> wq, wk, wv;
  Var<T> ffn_f1, ffn_b1, ffn_f2, ffn_b2;

  static RfaParams create(ParameterSet<T>& params, const std::string& prefix, std::size_t channels,
                          std::uint64_t seed);
};

template <typename T>
struct Aggregation {
  Var<T> output;     // X̂, H×W×C
  Var<T> attended;   // attention output before the feed-forward network
  Var<T> attention;  // HW×HW
};

/// Queries come from the degradation map, keys and values from the
/// intermediate restoration features, over all H·W tokens. With `residual`
/// the output is FFN(A) + A, otherwise FFN(A).
template <typename T>
Aggregation<T> aggregate(Tape<T>& tape, const Var<T>& m, const Var<T>& x_int,
                         const RfaParams<T>& params, bool residual = true,
                         bool scale_logits = false);

}  // namespace ldr
