// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ldr/degradation_map.hpp"
#include "ldr/expert_moe.hpp"
#include "ldr/feature_aggregation.hpp"
#include "ldr/prior.hpp"
#include "ldr/tensor_io.hpp"

namespace ldr {

struct ModelConfig {
  std::size_t channels = 32;     // C
  std::size_t experts = 16;      // N
  std::size_t top_k = 2;         // K
  std::size_t tokens = 8;        // L
  std::size_t text_width = 256;  // prior text width
  std::size_t levels = 2;        // stride-2 stages in the encoder
  std::size_t ldr_blocks = 1;
  std::size_t kernel = 3;        // expert kernel size
  std::uint64_t seed = 0;
  std::uint64_t vocab_seed = kDefaultVocabSeed;
  Routing routing = Routing::pixel;
  bool scale_attention = false;
  bool rfa_residual = true;
  bool renormalize = false;

  void validate() const;
  PriorDims prior_dims() const { return {tokens, text_width}; }
  /// Throws ConfigError unless both sides are divisible by 2^levels.
  void check_image(std::size_t height, std::size_t width) const;

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LdrBlock {
  DmmParams<T> dmm;
  ExpertParams<T> experts;
  RfaParams<T> rfa;
};

template <typename T>
struct Diagnostics {
  Var<T> prior;     // L×C embedding
  Var<T> features;  // X, encoder output
  Var<T> map;       // M
  Var<T> scores;    // S, H×W×N (pixel routing) or 1×N (image routing)
  Selection<T> selection;
  Var<T> x_int;     // X̂int
  Var<T> x_hat;     // X̂ (after the optional channel mask)
};

template <typename T>
struct ForwardResult {
  Var<T> restored;  // H₀×W₀×3 in (0, 1)
  Diagnostics<T> diagnostics;
};

struct ForwardOptions {
  /// Per-channel multipliers applied to the bottleneck output X̂ of the last
  /// block (zero-out experiments). Empty = no mask.
  std::vector<double> channel_mask;
};

/// Encoder-decoder with LDR blocks at the bottleneck:
/// prior → project; image → encode → [DMM → scores → Top-K experts → RFA]×B
/// → decode.
template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& config);
  // Parameters are shared leaves; copying would alias them.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  struct Encoded {
    Var<T> features;
    std::vector<Var<T>> skips;  // finest first
  };

  Encoded encode(Tape<T>& tape, const Var<T>& image) const;
  Var<T> decode(Tape<T>& tape, const Var<T>& features, const std::vector<Var<T>>& skips) const;
  Var<T> prior_embedding(Tape<T>& tape, const DegradationDescriptor& d) const;

  ForwardResult<T> forward(Tape<T>& tape, const Tensor<T>& image, const DegradationDescriptor& d,
                           const ForwardOptions& options = {}) const;

  /// Parameters (as float32) followed by `meta.*` configuration entries.
  NamedTensors state() const;
  /// Rebuilds a model, including its configuration, from state().
  static Model from_state(const NamedTensors& state);
  /// Copies parameter values from a state; every parameter must be present.
  void load_parameters(const NamedTensors& state);

 private:
  ModelConfig config_;
  ParameterSet<T> params_;
  PriorMlp<T> prior_mlp_;
  Var<T> stem_f_, stem_b_;
  std::vector<Var<T>> down_f_, down_b_;
  std::vector<Var<T>> up_f_, up_b_;
  Var<T> head_f_, head_b_;
  std::vector<LdrBlock<T>> blocks_;
};

NamedTensors config_entries(const ModelConfig& config);
ModelConfig config_from_entries(const NamedTensors& state);

}  // namespace ldr
