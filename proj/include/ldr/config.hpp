// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "ldr/backbone.hpp"
#include "ldr/trainer.hpp"

namespace ldr {

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Applies one `key = value` setting; unknown keys and malformed values throw
/// ConfigError. `seed` sets both the model-init and the training seed.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Reads a plain-text config: `key = value` per line, `#` comments.
ExperimentConfig load_config(const std::filesystem::path& path);
void apply_config_text(ExperimentConfig& cfg, const std::string& text, const std::string& origin);

/// Every key with its current value, in load_config syntax.
std::string dump_config(const ExperimentConfig& cfg);

}  // namespace ldr
