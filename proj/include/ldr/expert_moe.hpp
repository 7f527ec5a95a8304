// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ldr/autodiff.hpp"
#include "ldr/params.hpp"

namespace ldr {

/// Pixel: every pixel picks its own Top-K experts. Image: one expert set for
/// the whole image, chosen from the spatially pooled degradation map.
enum class Routing { pixel, image };

std::string_view to_string(Routing r);
Routing parse_routing(std::string_view s);

/// Scoring network (C → C relu → N, per pixel) and the bank of N bias-free
/// k×k×C×C expert filters, stored as one N×k×k×C×C tensor.
template <typename T>
struct ExpertParams {
  Var<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Var<T> bank;

  std::size_t experts() const { return bank->value.dim(0); }
  std::size_t kernel() const { return bank->value.dim(1); }

  static ExpertParams create(ParameterSet<T>& params, const std::string& prefix,
                             std::size_t channels, std::size_t experts, std::size_t kernel,
                             std::uint64_t seed);
};

/// S = softmax over experts of FFN(M); M is H×W×C, S is H×W×N.
template <typename T>
Var<T> score_map(Tape<T>& tape, const Var<T>& m, const ExpertParams<T>& params);

/// Top-K routing decision. weights carries gradient back to the scores; the
/// index set itself is not differentiable.
template <typename T>
struct Selection {
  std::size_t height = 0, width = 0, k = 0;
  std::vector<std::int32_t> indices;  // H·W·K, per pixel descending score
  Var<T> weights;                     // H×W×K raw scores (or renormalized)
};

/// Per-pixel Top-K of S with lowest-index tie-break. Weights are the raw
/// scores unless `renormalize`, which rescales each pixel's K weights to sum
/// to one.
template <typename T>
Selection<T> select_topk(Tape<T>& tape, const Var<T>& scores, std::size_t k,
                         bool renormalize = false);

/// Whole-image routing: scores the mean of M over all pixels, picks one
/// Top-K set and shares it (with its weights) across every pixel. `pooled`
/// receives the 1×N score vector when non-null.
template <typename T>
Selection<T> select_topk_image(Tape<T>& tape, const Var<T>& m, const ExpertParams<T>& params,
                               std::size_t k, bool renormalize = false, Var<T>* pooled = nullptr);

/// X̂int(p) = Σ_k w(p,k) · (x ⋆ F_{ρ(k)})(p), evaluated sparsely.
template <typename T>
Var<T> expert_convolve(Tape<T>& tape, const Var<T>& x, const Var<T>& bank,
                       const Selection<T>& selection);

struct FlopReport {
  std::uint64_t sparse_macs = 0;
  std::uint64_t dense_macs = 0;
  double ratio = 0.0;  // sparse / dense
};

/// Multiply-accumulates of the sparse dispatch for this selection against a
/// dense mixture over all N experts.
FlopReport count_expert_flops(std::size_t height, std::size_t width, std::size_t channels,
                              std::size_t experts, std::size_t k, std::size_t kernel);

template <typename T>
FlopReport count_expert_flops(const Selection<T>& selection, const Tensor<T>& bank) {
  return count_expert_flops(selection.height, selection.width, bank.dim(3), bank.dim(0),
                            selection.k, bank.dim(1));
}

}  // namespace ldr
