// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ldr/autodiff.hpp"
#include "ldr/params.hpp"

namespace ldr {

enum class WeatherType { none, rain, snow, haze, raindrop };
enum class Severity { slight, moderate, heavy };

inline constexpr WeatherType kAllWeatherTypes[] = {WeatherType::none, WeatherType::rain,
                                                   WeatherType::snow, WeatherType::haze,
                                                   WeatherType::raindrop};
inline constexpr Severity kAllSeverities[] = {Severity::slight, Severity::moderate,
                                              Severity::heavy};

std::string_view to_string(WeatherType t);
std::string_view to_string(Severity s);
WeatherType parse_weather_type(std::string_view s);
Severity parse_severity(std::string_view s);

/// What the degradation looks like: which weather (applied in list order),
/// how strong, how much of the frame it covers, and the generator seed.
struct DegradationDescriptor {
  std::vector<WeatherType> types{WeatherType::none};
  Severity severity = Severity::slight;
  double coverage = 1.0;
  std::uint64_t seed = 0;

  /// Throws ValidationError when types is empty or repeats an entry, `none`
  /// is mixed with another type, or coverage lies outside [0,1].
  void validate() const;

  /// `types=rain+haze;severity=heavy;coverage=0.8;seed=42`
  std::string to_line() const;
  static DegradationDescriptor parse(std::string_view line);

  /// "rain", "rain+haze", ...
  std::string type_label() const;

  bool operator==(const DegradationDescriptor&) const = default;
};

/// Question posed to the vision-language model. Logged only; the stub
/// encoder does not read it.
std::string format_prompt(const DegradationDescriptor& d);

struct PriorDims {
  std::size_t tokens = 8;        // L
  std::size_t text_width = 256;  // width of the language-model embedding
};

inline constexpr std::uint64_t kDefaultVocabSeed = 0x5eed'1d2c'0ffe'e000ULL;

/// Deterministic stand-in for the language model's pre-output embedding.
/// Rows 0..L-2 are the (type, severity) vocabulary block, averaged over the
/// descriptor's types; row L-1 is a shared coverage row scaled by coverage.
/// Vocabulary rows are N(0, 1/width) draws seeded by (vocab_seed, type,
/// severity, row), so the output ignores the descriptor's generator seed.
template <typename T>
Tensor<T> stub_vl_encode(const DegradationDescriptor& d, std::uint64_t vocab_seed = kDefaultVocabSeed,
                         const PriorDims& dims = {});

/// The (L-1)-row vocabulary block of a single (type, severity) entry.
template <typename T>
Tensor<T> vocabulary_block(WeatherType type, Severity severity, std::uint64_t vocab_seed,
                           const PriorDims& dims);

/// Shared coverage direction (unscaled), 1×width.
template <typename T>
Tensor<T> coverage_row(std::uint64_t vocab_seed, const PriorDims& dims);

/// Two-layer perceptron text_width → C (relu) → C, applied row-wise.
template <typename T>
struct PriorMlp {
  Var<T> w1, b1, w2, b2;

  static PriorMlp create(ParameterSet<T>& params, std::size_t text_width, std::size_t channels,
                         std::uint64_t seed);
};

/// Maps the L×text_width prior text to the L×C prior embedding.
template <typename T>
Var<T> project_prior(Tape<T>& tape, const Var<T>& prior_text, const PriorMlp<T>& mlp);

}  // namespace ldr
