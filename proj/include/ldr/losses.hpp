// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ldr/autodiff.hpp"

namespace ldr {

inline constexpr double kCharbonnierEps = 1e-4;
inline constexpr double kEdgeLossWeight = 0.05;  // λ
inline constexpr double kPsnrCap = 99.0;

/// per_pixel: mean over elements of √(d² + ε²).
/// global:    √(‖d‖² + ε²) over the whole tensor.
enum class CharbonnierMode { per_pixel, global };

template <typename T>
Var<T> charbonnier(Tape<T>& tape, const Var<T>& pred, const Var<T>& target,
                   T eps = T(kCharbonnierEps), CharbonnierMode mode = CharbonnierMode::per_pixel);

/// Per-channel 4-neighbour Laplacian [[0,1,0],[1,-4,1],[0,1,0]], zero padded.
template <typename T>
Var<T> laplacian(Tape<T>& tape, const Var<T>& image);

/// Charbonnier distance between the Laplacians of prediction and target.
template <typename T>
Var<T> edge_loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& target,
                 T eps = T(kCharbonnierEps), CharbonnierMode mode = CharbonnierMode::per_pixel);

struct LossReport {
  double charbonnier = 0;
  double edge = 0;
  double total = 0;
  double lambda = kEdgeLossWeight;
};

template <typename T>
struct TotalLoss {
  Var<T> total;
  LossReport report;
};

/// char + λ·edge. The target is treated as a constant.
template <typename T>
TotalLoss<T> total_loss(Tape<T>& tape, const Var<T>& pred, const Tensor<T>& target,
                        T lambda = T(kEdgeLossWeight), T eps = T(kCharbonnierEps),
                        CharbonnierMode mode = CharbonnierMode::per_pixel);

/// 10·log10(1/MSE) for images in [0,1]; identical images give the 99 dB cap.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b);

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5) over valid positions,
/// K1 = 0.01, K2 = 0.03, dynamic range 1, averaged over channels and
/// positions.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace ldr
