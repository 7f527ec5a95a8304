// SPDX-License-Identifier: Apache-2.0
#include "ldr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ldr {

template <typename T>
Var<T> charbonnier(Tape<T>& tape, const Var<T>& pred, const Var<T>& target, T eps,
                   CharbonnierMode mode) {
  if (pred->value.shape() != target->value.shape()) {
    throw DimensionError("charbonnier: prediction " + to_string(pred->value.shape()) +
                         " vs target " + to_string(target->value.shape()));
  }
  auto sq = tape.square(tape.sub(pred, target));
  if (mode == CharbonnierMode::global) return tape.sqrt(tape.add_scalar(tape.sum(sq), eps * eps));
  return tape.mean(tape.sqrt(tape.add_scalar(sq, eps * eps)));
}

template <typename T>
Var<T> laplacian(Tape<T>& tape, const Var<T>& image) {
  const auto& v = image->value;
  if (v.rank() != 3) throw DimensionError("laplacian: expected H×W×C, got " + to_string(v.shape()));
  const std::size_t c = v.dim(2);
  static constexpr double kStencil[3][3] = {{0, 1, 0}, {1, -4, 1}, {0, 1, 0}};
  Tensor<T> filter({3, 3, c, c});
  for (std::size_t di = 0; di < 3; ++di)
    for (std::size_t dj = 0; dj < 3; ++dj)
      for (std::size_t ch = 0; ch < c; ++ch) {
        filter[((di * 3 + dj) * c + ch) * c + ch] = static_cast<T>(kStencil[di][dj]);
      }
  return tape.conv2d(image, tape.constant(std::move(filter)));
}

template <typename T>
Var<T> edge_loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& target, T eps,
                 CharbonnierMode mode) {
  if (pred->value.shape() != target->value.shape()) {
    throw DimensionError("edge_loss: prediction " + to_string(pred->value.shape()) +
                         " vs target " + to_string(target->value.shape()));
  }
  return charbonnier(tape, laplacian(tape, pred), laplacian(tape, target), eps, mode);
}

template <typename T>
TotalLoss<T> total_loss(Tape<T>& tape, const Var<T>& pred, const Tensor<T>& target, T lambda,
                        T eps, CharbonnierMode mode) {
  auto tgt = tape.constant(target);
  auto lc = charbonnier(tape, pred, tgt, eps, mode);
  auto le = edge_loss(tape, pred, tgt, eps, mode);
  auto total = tape.add(lc, tape.scalar_mul(le, lambda));
  TotalLoss<T> out;
  out.total = total;
  out.report.charbonnier = static_cast<double>(lc->value[0]);
  out.report.edge = static_cast<double>(le->value[0]);
  out.report.total = static_cast<double>(total->value[0]);
  out.report.lambda = static_cast<double>(lambda);
  return out;
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("psnr: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double sse = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

std::vector<double> gaussian_taps() {
  std::vector<double> g(kSsimWindow);
  double total = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    total += (g[i] = std::exp(-x * x / (2 * kSsimSigma * kSsimSigma)));
  }
  for (auto& v : g) v /= total;
  return g;
}

// Separable "valid" Gaussian filtering of one H×W plane.
std::vector<double> blur_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                               const std::vector<double>& g) {
  const std::size_t ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> rows(h * ow), out(oh * ow);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0;
      for (int t = 0; t < kSsimWindow; ++t) s += g[t] * plane[i * w + j + t];
      rows[i * ow + j] = s;
    }
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0;
      for (int t = 0; t < kSsimWindow; ++t) s += g[t] * rows[(i + t) * ow + j];
      out[i * ow + j] = s;
    }
  return out;
}

}  // namespace

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.rank() != 3) {
    throw DimensionError("ssim: expected matching H×W×C images, got " + to_string(a.shape()) +
                         " and " + to_string(b.shape()));
  }
  const std::size_t h = a.dim(0), w = a.dim(1), c = a.dim(2);
  if (h < static_cast<std::size_t>(kSsimWindow) || w < static_cast<std::size_t>(kSsimWindow)) {
    throw DimensionError("ssim: image " + to_string(a.shape()) + " smaller than the 11x11 window");
  }
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  const auto g = gaussian_taps();
  double total = 0;
  std::size_t count = 0;
  std::vector<double> pa(h * w), pb(h * w), paa(h * w), pbb(h * w), pab(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < h * w; ++p) {
      pa[p] = static_cast<double>(a[p * c + ch]);
      pb[p] = static_cast<double>(b[p * c + ch]);
      paa[p] = pa[p] * pa[p];
      pbb[p] = pb[p] * pb[p];
      pab[p] = pa[p] * pb[p];
    }
    const auto mu_a = blur_valid(pa, h, w, g), mu_b = blur_valid(pb, h, w, g);
    const auto e_aa = blur_valid(paa, h, w, g), e_bb = blur_valid(pbb, h, w, g);
    const auto e_ab = blur_valid(pab, h, w, g);
    for (std::size_t p = 0; p < mu_a.size(); ++p) {
      const double ma = mu_a[p], mb = mu_b[p];
      const double va = e_aa[p] - ma * ma, vb = e_bb[p] - mb * mb, cov = e_ab[p] - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

#define LDR_INSTANTIATE(T)                                                                        \
  template Var<T> charbonnier(Tape<T>&, const Var<T>&, const Var<T>&, T, CharbonnierMode);         \
  template Var<T> laplacian(Tape<T>&, const Var<T>&);                                              \
  template Var<T> edge_loss(Tape<T>&, const Var<T>&, const Var<T>&, T, CharbonnierMode);           \
  template TotalLoss<T> total_loss(Tape<T>&, const Var<T>&, const Tensor<T>&, T, T,                \
                                   CharbonnierMode);                                               \
  template double psnr(const Tensor<T>&, const Tensor<T>&);                                        \
  template double ssim(const Tensor<T>&, const Tensor<T>&);

LDR_INSTANTIATE(float)
LDR_INSTANTIATE(double)

}  // namespace ldr
