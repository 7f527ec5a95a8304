// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace ldr::kernels {

// OpenMP data-parallel kernels. Every parallel loop partitions the *output*
// index space and keeps each reduction inside a single iteration, so results
// are bitwise identical for any thread count. Serial oracles live in
// ldr/reference.hpp.

/// Geometry of a zero-padded "same" convolution over an H×W×Cin image with a
/// k×k×Cin×Cout filter. Output is ceil(H/stride)×ceil(W/stride)×Cout.
struct ConvGeometry {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;

  std::size_t pad() const { return kernel / 2; }
  std::size_t out_height() const { return (height + 2 * pad() - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad() - kernel) / stride + 1; }
  std::size_t filter_size() const { return kernel * kernel * in_channels * out_channels; }
  /// Multiply-accumulates of one forward pass.
  std::uint64_t macs() const {
    return static_cast<std::uint64_t>(out_height()) * out_width() * kernel * kernel * in_channels *
           out_channels;
  }
};

/// C (m×n) = op(A) · op(B), where op(A) is m×k and op(B) is k×n. With
/// `accumulate` the product is added to C.
template <typename T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
          std::size_t n, bool trans_a, bool trans_b, bool accumulate);

template <typename T>
void conv2d_forward(std::span<const T> x, std::span<const T> filter, std::span<T> out,
                    const ConvGeometry& g);

/// gx += conv2dᵀ(gout)
template <typename T>
void conv2d_backward_input(std::span<const T> gout, std::span<const T> filter, std::span<T> gx,
                           const ConvGeometry& g);

/// gfilter += x ⋆ gout
template <typename T>
void conv2d_backward_filter(std::span<const T> x, std::span<const T> gout, std::span<T> gfilter,
                            const ConvGeometry& g);

/// Shape of a per-pixel expert dispatch: an H×W×C feature, a bank of N
/// k×k×C×C filters stored contiguously, and K selected experts per pixel.
struct ExpertGeometry {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t experts = 0;
  std::size_t top_k = 0;
  std::size_t kernel = 3;

  std::size_t pixels() const { return height * width; }
  std::size_t filter_size() const { return kernel * kernel * channels * channels; }
  ConvGeometry conv() const { return {height, width, channels, channels, kernel, 1}; }
};

/// Sparse dispatch: out(p) = Σ_k weights(p,k) · E(p, indices(p,k)), where E is
/// the same-padded convolution with one expert filter evaluated at pixel p.
/// Only the K selected filters are touched per pixel. `responses`, when
/// non-empty (H·W·K·C), receives E(p, indices(p,k)) for the backward pass.
template <typename T>
void expert_dispatch_forward(std::span<const T> x, std::span<const T> bank,
                             std::span<const std::int32_t> indices, std::span<const T> weights,
                             std::span<T> out, std::span<T> responses, const ExpertGeometry& g);

/// Backward of expert_dispatch_forward. Accumulates into gx, gbank (only the
/// selected filters receive gradient) and gweights.
template <typename T>
void expert_dispatch_backward(std::span<const T> x, std::span<const T> bank,
                              std::span<const std::int32_t> indices, std::span<const T> weights,
                              std::span<const T> responses, std::span<const T> gout,
                              std::span<T> gx, std::span<T> gbank, std::span<T> gweights,
                              const ExpertGeometry& g);

/// Dense mixture out(p) = Σ_n weights(p,n) · E(p,n) over all N experts
/// (weights is H·W×N). The cost baseline the sparse path is measured against.
template <typename T>
void expert_dense_forward(std::span<const T> x, std::span<const T> bank, std::span<const T> weights,
                          std::span<T> out, const ExpertGeometry& g);

}  // namespace ldr::kernels
