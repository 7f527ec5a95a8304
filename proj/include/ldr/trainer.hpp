// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "ldr/backbone.hpp"
#include "ldr/losses.hpp"
#include "ldr/synthdata.hpp"

namespace ldr {

struct TrainConfig {
  std::size_t batch_size = 4;
  std::size_t total_steps = 2000;
  double lr_start = 2e-4;
  double lr_end = 1e-6;
  double lambda = kEdgeLossWeight;
  std::size_t crop = 64;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 500;  // 0 = only the final checkpoint
  CharbonnierMode charbonnier = CharbonnierMode::per_pixel;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

/// lr_end + ½(lr_start − lr_end)(1 + cos(π·step/total_steps)), step ∈ [0, total].
double cosine_lr(std::size_t step, const TrainConfig& cfg);

template <typename T>
struct OptimState {
  std::vector<std::vector<T>> m, v;  // parallel to ParameterSet::entries()
  std::uint64_t t = 0;

  static OptimState create(const ParameterSet<T>& params);
};

/// Bias-corrected Adam update of every parameter from its accumulated
/// gradient (a missing gradient counts as zero).
template <typename T>
void adam_step(ParameterSet<T>& params, OptimState<T>& opt, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct LossLogRow {
  std::size_t step = 0;
  double lr = 0;
  LossReport loss;
};

struct TrainOptions {
  std::filesystem::path resume;  // checkpoint to continue from
  std::size_t stop_after = 0;    // stop once this many steps are done (0 = run to total)
  std::function<void(const LossLogRow&)> progress;
};

struct TrainSummary {
  std::vector<LossLogRow> log;  // rows produced by this invocation
  std::filesystem::path last_checkpoint;
  std::size_t steps_done = 0;
};

/// Seeded shuffling and cropping, total loss, backward, Adam under the cosine
/// schedule. Writes loss.csv and step_<n>.ldrc checkpoints into out_dir.
TrainSummary train(const ModelConfig& model_config, const TrainConfig& cfg,
                   const DatasetManifest& manifest, const std::filesystem::path& out_dir,
                   const TrainOptions& options = {});

/// Model parameters, model metadata, Adam moments and the step counter.
NamedTensors training_state(const Model<float>& model, const OptimState<float>& opt,
                            std::size_t step);
/// Loads a model from any checkpoint written by train() (or Model::state()).
Model<float> load_model(const std::filesystem::path& checkpoint);

}  // namespace ldr
