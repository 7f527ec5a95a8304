// SPDX-License-Identifier: Apache-2.0
#include "ldr/reference.hpp"

namespace ldr::reference {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("reference matmul: " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& filter, std::size_t stride) {
  const long h = static_cast<long>(x.dim(0)), w = static_cast<long>(x.dim(1));
  const long cin = static_cast<long>(x.dim(2));
  const long k = static_cast<long>(filter.dim(0)), cout = static_cast<long>(filter.dim(3));
  const long pad = k / 2, s = static_cast<long>(stride);
  const long ho = (h + 2 * pad - k) / s + 1, wo = (w + 2 * pad - k) / s + 1;
  Tensor<T> out({static_cast<std::size_t>(ho), static_cast<std::size_t>(wo),
                 static_cast<std::size_t>(cout)});
  for (long i = 0; i < ho; ++i)
    for (long j = 0; j < wo; ++j)
      for (long co = 0; co < cout; ++co) {
        T acc = 0;
        for (long di = 0; di < k; ++di)
          for (long dj = 0; dj < k; ++dj)
            for (long ci = 0; ci < cin; ++ci) {
              const long y = i * s + di - pad, xx = j * s + dj - pad;
              if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
              acc += x[(y * w + xx) * cin + ci] * filter[((di * k + dj) * cin + ci) * cout + co];
            }
        out[(i * wo + j) * cout + co] = acc;
      }
  return out;
}

template <typename T>
std::vector<T> expert_response(const Tensor<T>& x, const Tensor<T>& bank, std::size_t n,
                               std::size_t i, std::size_t j) {
  const long h = static_cast<long>(x.dim(0)), w = static_cast<long>(x.dim(1));
  const long c = static_cast<long>(x.dim(2)), k = static_cast<long>(bank.dim(1));
  const long pad = k / 2;
  const std::size_t fsize = static_cast<std::size_t>(k * k * c * c);
  std::vector<T> r(static_cast<std::size_t>(c), T(0));
  for (long co = 0; co < c; ++co)
    for (long di = 0; di < k; ++di)
      for (long dj = 0; dj < k; ++dj)
        for (long ci = 0; ci < c; ++ci) {
          const long y = static_cast<long>(i) + di - pad, xx = static_cast<long>(j) + dj - pad;
          if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
          r[co] += x[(y * w + xx) * c + ci] * bank[n * fsize + ((di * k + dj) * c + ci) * c + co];
        }
  return r;
}

template <typename T>
Tensor<T> expert_sparse(const Tensor<T>& x, const Tensor<T>& bank,
                        const std::vector<std::int32_t>& indices, const Tensor<T>& weights) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2), kk = weights.dim(2);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t s = 0; s < kk; ++s) {
        const std::size_t q = (i * w + j) * kk + s;
        const auto r = expert_response(x, bank, static_cast<std::size_t>(indices[q]), i, j);
        for (std::size_t co = 0; co < c; ++co) out.at(i, j, co) += weights[q] * r[co];
      }
  return out;
}

template <typename T>
Tensor<T> expert_dense(const Tensor<T>& x, const Tensor<T>& bank, const Tensor<T>& scores) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2), nexp = bank.dim(0);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t n = 0; n < nexp; ++n) {
        const auto r = expert_response(x, bank, n, i, j);
        for (std::size_t co = 0; co < c; ++co) out.at(i, j, co) += scores.at(i, j, n) * r[co];
      }
  return out;
}

#define LDR_INSTANTIATE(T)                                                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t);                      \
  template std::vector<T> expert_response(const Tensor<T>&, const Tensor<T>&, std::size_t,          \
                                          std::size_t, std::size_t);                               \
  template Tensor<T> expert_sparse(const Tensor<T>&, const Tensor<T>&,                             \
                                   const std::vector<std::int32_t>&, const Tensor<T>&);            \
  template Tensor<T> expert_dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

LDR_INSTANTIATE(float)
LDR_INSTANTIATE(double)

}  // namespace ldr::reference
