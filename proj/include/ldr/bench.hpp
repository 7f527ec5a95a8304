// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ldr/expert_moe.hpp"
#include "ldr/tensor.hpp"

namespace ldr {

struct ExpertBenchSpec {
  std::size_t size = 32;  // square feature map
  std::size_t channels = 32;
  std::size_t experts = 16;
  std::size_t top_k = 2;
  std::size_t kernel = 3;
  std::size_t repeat = 20;
  std::uint64_t seed = 0;
};

struct ExpertBenchResult {
  ExpertBenchSpec spec;
  FlopReport flops;
  std::vector<double> sparse_ms, dense_ms;
  double sparse_median_ms = 0, dense_median_ms = 0;
};

/// Times the sparse Top-K dispatch against the dense mixture over all experts
/// on random features and routing. `bank`, when non-empty, must be
/// N×k×k×C×C and replaces the random filters.
ExpertBenchResult bench_experts(const ExpertBenchSpec& spec, const Tensor<float>& bank = {});

/// N,K,H,W,C,sparse_macs,dense_macs,ratio,wall_ns_sparse,wall_ns_dense
/// (wall times are medians over the repeats).
void write_bench_csv(const std::filesystem::path& path, const ExpertBenchResult& result);

double median(std::vector<double> values);

}  // namespace ldr
