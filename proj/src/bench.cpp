// SPDX-License-Identifier: Apache-2.0
#include "ldr/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "ldr/errors.hpp"
#include "ldr/kernels.hpp"
#include "ldr/rng.hpp"

namespace ldr {

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

ExpertBenchResult bench_experts(const ExpertBenchSpec& spec, const Tensor<float>& bank_in) {
  if (spec.top_k == 0 || spec.top_k > spec.experts) {
    throw ConfigError("bench: need 1 <= k <= n, got k=" + std::to_string(spec.top_k) +
                      " n=" + std::to_string(spec.experts));
  }
  if (spec.size == 0 || spec.channels == 0 || spec.repeat == 0 || spec.kernel % 2 == 0) {
    throw ConfigError("bench: size, channels and repeat must be positive and the kernel odd");
  }
  const kernels::ExpertGeometry g{spec.size, spec.size, spec.channels, spec.experts, spec.top_k,
                                  spec.kernel};
  Rng rng(spec.seed);
  std::vector<float> x(g.pixels() * g.channels);
  for (auto& v : x) v = static_cast<float>(rng.normal());
  std::vector<float> bank;
  if (bank_in.size() != 0) {
    if (bank_in.shape() != Shape{g.experts, g.kernel, g.kernel, g.channels, g.channels}) {
      throw DimensionError("bench: bank shape " + to_string(bank_in.shape()) +
                           " does not match the requested geometry");
    }
    bank = bank_in.storage();
  } else {
    bank.resize(g.experts * g.filter_size());
    for (auto& v : bank) v = static_cast<float>(rng.normal() * 0.1);
  }
  // Random scores; the sparse path takes each pixel's K largest.
  std::vector<float> scores(g.pixels() * g.experts);
  for (auto& v : scores) v = static_cast<float>(rng.uniform());
  std::vector<std::int32_t> indices(g.pixels() * g.top_k);
  std::vector<float> weights(g.pixels() * g.top_k);
  std::vector<std::int32_t> order(g.experts);
  for (std::size_t p = 0; p < g.pixels(); ++p) {
    const float* s = scores.data() + p * g.experts;
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(g.top_k),
                      order.end(), [&](std::int32_t a, std::int32_t b) {
                        return s[a] != s[b] ? s[a] > s[b] : a < b;
                      });
    for (std::size_t k = 0; k < g.top_k; ++k) {
      indices[p * g.top_k + k] = order[k];
      weights[p * g.top_k + k] = s[order[k]];
    }
  }

  ExpertBenchResult r;
  r.spec = spec;
  r.flops = count_expert_flops(g.height, g.width, g.channels, g.experts, g.top_k, g.kernel);
  std::vector<float> out(g.pixels() * g.channels);
  using clock = std::chrono::steady_clock;
  const auto ms = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
  };
  // One untimed warm-up of each path, then interleaved timed runs.
  kernels::expert_dispatch_forward<float>(x, bank, indices, weights, out, {}, g);
  kernels::expert_dense_forward<float>(x, bank, scores, out, g);
  for (std::size_t i = 0; i < spec.repeat; ++i) {
    auto t0 = clock::now();
    kernels::expert_dispatch_forward<float>(x, bank, indices, weights, out, {}, g);
    auto t1 = clock::now();
    kernels::expert_dense_forward<float>(x, bank, scores, out, g);
    auto t2 = clock::now();
    r.sparse_ms.push_back(ms(t0, t1));
    r.dense_ms.push_back(ms(t1, t2));
  }
  r.sparse_median_ms = median(r.sparse_ms);
  r.dense_median_ms = median(r.dense_ms);
  return r;
}

void write_bench_csv(const std::filesystem::path& path, const ExpertBenchResult& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const auto& s = r.spec;
  out << "N,K,H,W,C,sparse_macs,dense_macs,ratio,wall_ns_sparse,wall_ns_dense\n";
  char line[256];
  std::snprintf(line, sizeof line, "%zu,%zu,%zu,%zu,%zu,%llu,%llu,%.6f,%.0f,%.0f\n", s.experts,
                s.top_k, s.size, s.size, s.channels,
                static_cast<unsigned long long>(r.flops.sparse_macs),
                static_cast<unsigned long long>(r.flops.dense_macs), r.flops.ratio,
                r.sparse_median_ms * 1e6, r.dense_median_ms * 1e6);
  out << line;
}

}  // namespace ldr
