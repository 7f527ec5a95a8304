// SPDX-License-Identifier: Apache-2.0
#include "ldr/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

#include "ldr/errors.hpp"

namespace ldr::kernels {

namespace {

using Index = std::ptrdiff_t;

void check_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": buffer holds " + std::to_string(got) +
                         " values, expected " + std::to_string(want));
  }
}

// Reorders a [tap][ci][co] filter into [tap][co][ci] so the input-gradient
// loops run contiguously over input channels.
template <typename T>
std::vector<T> transpose_taps(std::span<const T> filter, std::size_t taps, std::size_t cin,
                              std::size_t cout) {
  std::vector<T> t(filter.size());
  for (std::size_t tap = 0; tap < taps; ++tap) {
    const T* src = filter.data() + tap * cin * cout;
    T* dst = t.data() + tap * cin * cout;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t co = 0; co < cout; ++co) dst[co * cin + ci] = src[ci * cout + co];
    }
  }
  return t;
}

// One output pixel of a stride-1 same convolution: r = Σ_tap x(p+tap)·F(tap).
template <typename T>
inline void convolve_pixel(const T* x, const T* filter, T* r, Index i, Index j, Index h, Index w,
                           std::size_t c, std::size_t k, Index pad) {
  std::fill(r, r + c, T(0));
  for (Index di = 0; di < static_cast<Index>(k); ++di) {
    const Index y = i + di - pad;
    if (y < 0 || y >= h) continue;
    for (Index dj = 0; dj < static_cast<Index>(k); ++dj) {
      const Index xx = j + dj - pad;
      if (xx < 0 || xx >= w) continue;
      const T* xp = x + (y * w + xx) * static_cast<Index>(c);
      const T* fp = filter + (di * static_cast<Index>(k) + dj) * static_cast<Index>(c * c);
      for (std::size_t ci = 0; ci < c; ++ci) {
        const T xv = xp[ci];
        const T* fr = fp + ci * c;
        for (std::size_t co = 0; co < c; ++co) r[co] += xv * fr[co];
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
          std::size_t n, bool trans_a, bool trans_b, bool accumulate) {
  check_size(a.size(), m * k, "gemm lhs");
  check_size(b.size(), k * n, "gemm rhs");
  check_size(c.size(), m * n, "gemm out");
  const Index rows = static_cast<Index>(m);
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < rows; ++i) {
    T* crow = c.data() + i * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    if (trans_b) {
      for (std::size_t j = 0; j < n; ++j) {
        T s = 0;
        for (std::size_t p = 0; p < k; ++p) {
          const T av = trans_a ? a[p * m + i] : a[i * k + p];
          s += av * b[j * k + p];
        }
        crow[j] += s;
      }
    } else {
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * m + i] : a[i * k + p];
        const T* brow = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void conv2d_forward(std::span<const T> x, std::span<const T> filter, std::span<T> out,
                    const ConvGeometry& g) {
  check_size(x.size(), g.height * g.width * g.in_channels, "conv2d input");
  check_size(filter.size(), g.filter_size(), "conv2d filter");
  const Index ho = static_cast<Index>(g.out_height());
  const Index wo = static_cast<Index>(g.out_width());
  check_size(out.size(), static_cast<std::size_t>(ho * wo) * g.out_channels, "conv2d output");
  const Index h = static_cast<Index>(g.height), w = static_cast<Index>(g.width);
  const Index k = static_cast<Index>(g.kernel), pad = static_cast<Index>(g.pad());
  const Index stride = static_cast<Index>(g.stride);
  const std::size_t cin = g.in_channels, cout = g.out_channels;

#pragma omp parallel for schedule(static)
  for (Index i = 0; i < ho; ++i) {
    for (Index j = 0; j < wo; ++j) {
      T* o = out.data() + (i * wo + j) * static_cast<Index>(cout);
      std::fill(o, o + cout, T(0));
      for (Index di = 0; di < k; ++di) {
        const Index y = i * stride + di - pad;
        if (y < 0 || y >= h) continue;
        for (Index dj = 0; dj < k; ++dj) {
          const Index xx = j * stride + dj - pad;
          if (xx < 0 || xx >= w) continue;
          const T* xp = x.data() + (y * w + xx) * static_cast<Index>(cin);
          const T* fp = filter.data() + (di * k + dj) * static_cast<Index>(cin * cout);
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T xv = xp[ci];
            const T* fr = fp + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) o[co] += xv * fr[co];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(std::span<const T> gout, std::span<const T> filter, std::span<T> gx,
                           const ConvGeometry& g) {
  const Index ho = static_cast<Index>(g.out_height());
  const Index wo = static_cast<Index>(g.out_width());
  check_size(gout.size(), static_cast<std::size_t>(ho * wo) * g.out_channels, "conv2d grad-out");
  check_size(gx.size(), g.height * g.width * g.in_channels, "conv2d grad-in");
  const Index h = static_cast<Index>(g.height), w = static_cast<Index>(g.width);
  const Index k = static_cast<Index>(g.kernel), pad = static_cast<Index>(g.pad());
  const Index stride = static_cast<Index>(g.stride);
  const std::size_t cin = g.in_channels, cout = g.out_channels;
  const std::vector<T> ft = transpose_taps(filter, g.kernel * g.kernel, cin, cout);

#pragma omp parallel for schedule(static)
  for (Index y = 0; y < h; ++y) {
    for (Index xx = 0; xx < w; ++xx) {
      T* gp = gx.data() + (y * w + xx) * static_cast<Index>(cin);
      for (Index di = 0; di < k; ++di) {
        const Index ny = y + pad - di;
        if (ny < 0 || ny % stride != 0 || ny / stride >= ho) continue;
        const Index i = ny / stride;
        for (Index dj = 0; dj < k; ++dj) {
          const Index nx = xx + pad - dj;
          if (nx < 0 || nx % stride != 0 || nx / stride >= wo) continue;
          const Index j = nx / stride;
          const T* go = gout.data() + (i * wo + j) * static_cast<Index>(cout);
          const T* fp = ft.data() + (di * k + dj) * static_cast<Index>(cin * cout);
          for (std::size_t co = 0; co < cout; ++co) {
            const T gv = go[co];
            const T* fr = fp + co * cin;
            for (std::size_t ci = 0; ci < cin; ++ci) gp[ci] += gv * fr[ci];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_filter(std::span<const T> x, std::span<const T> gout, std::span<T> gfilter,
                            const ConvGeometry& g) {
  const Index ho = static_cast<Index>(g.out_height());
  const Index wo = static_cast<Index>(g.out_width());
  check_size(x.size(), g.height * g.width * g.in_channels, "conv2d input");
  check_size(gout.size(), static_cast<std::size_t>(ho * wo) * g.out_channels, "conv2d grad-out");
  check_size(gfilter.size(), g.filter_size(), "conv2d grad-filter");
  const Index h = static_cast<Index>(g.height), w = static_cast<Index>(g.width);
  const Index k = static_cast<Index>(g.kernel), pad = static_cast<Index>(g.pad());
  const Index stride = static_cast<Index>(g.stride);
  const std::size_t cin = g.in_channels, cout = g.out_channels;
  const Index taps = k * k;

#pragma omp parallel for schedule(static)
  for (Index tap = 0; tap < taps; ++tap) {
    const Index di = tap / k, dj = tap % k;
    T* gf = gfilter.data() + tap * static_cast<Index>(cin * cout);
    for (Index i = 0; i < ho; ++i) {
      const Index y = i * stride + di - pad;
      if (y < 0 || y >= h) continue;
      for (Index j = 0; j < wo; ++j) {
        const Index xx = j * stride + dj - pad;
        if (xx < 0 || xx >= w) continue;
        const T* xp = x.data() + (y * w + xx) * static_cast<Index>(cin);
        const T* go = gout.data() + (i * wo + j) * static_cast<Index>(cout);
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const T xv = xp[ci];
          if (xv == T(0)) continue;
          T* row = gf + ci * cout;
          for (std::size_t co = 0; co < cout; ++co) row[co] += xv * go[co];
        }
      }
    }
  }
}

template <typename T>
void expert_dispatch_forward(std::span<const T> x, std::span<const T> bank,
                             std::span<const std::int32_t> indices, std::span<const T> weights,
                             std::span<T> out, std::span<T> responses, const ExpertGeometry& g) {
  const std::size_t c = g.channels, kk = g.top_k, fsize = g.filter_size();
  check_size(x.size(), g.pixels() * c, "expert input");
  check_size(bank.size(), g.experts * fsize, "expert bank");
  check_size(indices.size(), g.pixels() * kk, "expert indices");
  check_size(weights.size(), g.pixels() * kk, "expert weights");
  check_size(out.size(), g.pixels() * c, "expert output");
  if (!responses.empty()) check_size(responses.size(), g.pixels() * kk * c, "expert responses");
  for (auto n : indices) {
    if (n < 0 || static_cast<std::size_t>(n) >= g.experts) {
      throw ContractError("expert index " + std::to_string(n) + " out of range [0, " +
                          std::to_string(g.experts) + ")");
    }
  }
  const Index h = static_cast<Index>(g.height), w = static_cast<Index>(g.width);
  const Index pad = static_cast<Index>(g.kernel / 2);

#pragma omp parallel
  {
    std::vector<T> r(c);
#pragma omp for schedule(static)
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        const std::size_t p = static_cast<std::size_t>(i * w + j);
        T* o = out.data() + p * c;
        std::fill(o, o + c, T(0));
        for (std::size_t s = 0; s < kk; ++s) {
          const std::size_t n = static_cast<std::size_t>(indices[p * kk + s]);
          convolve_pixel(x.data(), bank.data() + n * fsize, r.data(), i, j, h, w, c, g.kernel, pad);
          const T wt = weights[p * kk + s];
          for (std::size_t co = 0; co < c; ++co) o[co] += wt * r[co];
          if (!responses.empty()) std::copy(r.begin(), r.end(), responses.data() + (p * kk + s) * c);
        }
      }
    }
  }
}

template <typename T>
void expert_dispatch_backward(std::span<const T> x, std::span<const T> bank,
                              std::span<const std::int32_t> indices, std::span<const T> weights,
                              std::span<const T> responses, std::span<const T> gout,
                              std::span<T> gx, std::span<T> gbank, std::span<T> gweights,
                              const ExpertGeometry& g) {
  const std::size_t c = g.channels, kk = g.top_k, fsize = g.filter_size();
  const std::size_t pixels = g.pixels();
  check_size(responses.size(), pixels * kk * c, "expert responses");
  check_size(gout.size(), pixels * c, "expert grad-out");
  const Index h = static_cast<Index>(g.height), w = static_cast<Index>(g.width);
  const Index k = static_cast<Index>(g.kernel), pad = static_cast<Index>(g.kernel / 2);

  if (!gweights.empty()) {
    for (std::size_t p = 0; p < pixels; ++p) {
      const T* go = gout.data() + p * c;
      for (std::size_t s = 0; s < kk; ++s) {
        const T* e = responses.data() + (p * kk + s) * c;
        T dot = 0;
        for (std::size_t co = 0; co < c; ++co) dot += go[co] * e[co];
        gweights[p * kk + s] += dot;
      }
    }
  }
  if (gx.empty() && gbank.empty()) return;

  // Per-selection output gradient scaled by its routing weight.
  std::vector<T> wg(pixels * kk * c);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t s = 0; s < kk; ++s) {
      const T wt = weights[p * kk + s];
      T* dst = wg.data() + (p * kk + s) * c;
      for (std::size_t co = 0; co < c; ++co) dst[co] = wt * gout[p * c + co];
    }
  }

  if (!gx.empty()) {
    std::vector<T> ft(bank.size());
    for (std::size_t n = 0; n < g.experts; ++n) {
      auto t = transpose_taps(bank.subspan(n * fsize, fsize), g.kernel * g.kernel, c, c);
      std::copy(t.begin(), t.end(), ft.begin() + static_cast<Index>(n * fsize));
    }
#pragma omp parallel for schedule(static)
    for (Index y = 0; y < h; ++y) {
      for (Index xx = 0; xx < w; ++xx) {
        T* gp = gx.data() + (y * w + xx) * static_cast<Index>(c);
        for (Index di = 0; di < k; ++di) {
          const Index i = y + pad - di;
          if (i < 0 || i >= h) continue;
          for (Index dj = 0; dj < k; ++dj) {
            const Index j = xx + pad - dj;
            if (j < 0 || j >= w) continue;
            const std::size_t p = static_cast<std::size_t>(i * w + j);
            for (std::size_t s = 0; s < kk; ++s) {
              const std::size_t n = static_cast<std::size_t>(indices[p * kk + s]);
              const T* go = wg.data() + (p * kk + s) * c;
              const T* fp = ft.data() + n * fsize + static_cast<std::size_t>(di * k + dj) * c * c;
              for (std::size_t co = 0; co < c; ++co) {
                const T gv = go[co];
                const T* fr = fp + co * c;
                for (std::size_t ci = 0; ci < c; ++ci) gp[ci] += gv * fr[ci];
              }
            }
          }
        }
      }
    }
  }

  if (!gbank.empty()) {
    // Bucket selections by expert so each filter gradient has one owner.
    std::vector<std::vector<std::size_t>> buckets(g.experts);
    for (std::size_t q = 0; q < pixels * kk; ++q) {
      buckets[static_cast<std::size_t>(indices[q])].push_back(q);
    }
    const Index jobs = static_cast<Index>(g.experts) * k * k;
#pragma omp parallel for schedule(dynamic)
    for (Index job = 0; job < jobs; ++job) {
      const std::size_t n = static_cast<std::size_t>(job / (k * k));
      const Index tap = job % (k * k);
      const Index di = tap / k, dj = tap % k;
      T* gf = gbank.data() + n * fsize + static_cast<std::size_t>(tap) * c * c;
      for (std::size_t q : buckets[n]) {
        const Index p = static_cast<Index>(q / kk);
        const Index y = p / w + di - pad, xx = p % w + dj - pad;
        if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
        const T* xp = x.data() + (y * w + xx) * static_cast<Index>(c);
        const T* go = wg.data() + q * c;
        for (std::size_t ci = 0; ci < c; ++ci) {
          const T xv = xp[ci];
          if (xv == T(0)) continue;
          T* row = gf + ci * c;
          for (std::size_t co = 0; co < c; ++co) row[co] += xv * go[co];
        }
      }
    }
  }
}

template <typename T>
void expert_dense_forward(std::span<const T> x, std::span<const T> bank, std::span<const T> weights,
                          std::span<T> out, const ExpertGeometry& g) {
  const std::size_t c = g.channels, fsize = g.filter_size(), nexp = g.experts;
  check_size(x.size(), g.pixels() * c, "expert input");
  check_size(bank.size(), nexp * fsize, "expert bank");
  check_size(weights.size(), g.pixels() * nexp, "expert dense weights");
  check_size(out.size(), g.pixels() * c, "expert output");
  const Index h = static_cast<Index>(g.height), w = static_cast<Index>(g.width);
  const Index pad = static_cast<Index>(g.kernel / 2);
#pragma omp parallel
  {
    std::vector<T> r(c);
#pragma omp for schedule(static)
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        const std::size_t p = static_cast<std::size_t>(i * w + j);
        T* o = out.data() + p * c;
        std::fill(o, o + c, T(0));
        for (std::size_t n = 0; n < nexp; ++n) {
          convolve_pixel(x.data(), bank.data() + n * fsize, r.data(), i, j, h, w, c, g.kernel, pad);
          const T wt = weights[p * nexp + n];
          for (std::size_t co = 0; co < c; ++co) o[co] += wt * r[co];
        }
      }
    }
  }
}

#define LDR_INSTANTIATE(T)                                                                        \
  template void gemm<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,         \
                        std::size_t, std::size_t, bool, bool, bool);                               \
  template void conv2d_forward<T>(std::span<const T>, std::span<const T>, std::span<T>,            \
                                  const ConvGeometry&);                                            \
  template void conv2d_backward_input<T>(std::span<const T>, std::span<const T>, std::span<T>,     \
                                         const ConvGeometry&);                                     \
  template void conv2d_backward_filter<T>(std::span<const T>, std::span<const T>, std::span<T>,    \
                                          const ConvGeometry&);                                    \
  template void expert_dispatch_forward<T>(std::span<const T>, std::span<const T>,                 \
                                           std::span<const std::int32_t>, std::span<const T>,      \
                                           std::span<T>, std::span<T>, const ExpertGeometry&);     \
  template void expert_dispatch_backward<T>(                                                      \
      std::span<const T>, std::span<const T>, std::span<const std::int32_t>, std::span<const T>,   \
      std::span<const T>, std::span<const T>, std::span<T>, std::span<T>, std::span<T>,            \
      const ExpertGeometry&);                                                                      \
  template void expert_dense_forward<T>(std::span<const T>, std::span<const T>,                    \
                                        std::span<const T>, std::span<T>, const ExpertGeometry&);

LDR_INSTANTIATE(float)
LDR_INSTANTIATE(double)

}  // namespace ldr::kernels
