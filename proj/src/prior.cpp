// SPDX-License-Identifier: Apache-2.0
#include "ldr/prior.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "ldr/rng.hpp"

namespace ldr {

std::string_view to_string(WeatherType t) {
  switch (t) {
    case WeatherType::none: return "none";
    case WeatherType::rain: return "rain";
    case WeatherType::snow: return "snow";
    case WeatherType::haze: return "haze";
    case WeatherType::raindrop: return "raindrop";
  }
  return "?";
}

std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::slight: return "slight";
    case Severity::moderate: return "moderate";
    case Severity::heavy: return "heavy";
  }
  return "?";
}

WeatherType parse_weather_type(std::string_view s) {
  for (auto t : kAllWeatherTypes) {
    if (to_string(t) == s) return t;
  }
  throw ValidationError("unknown weather type '" + std::string(s) + "'");
}

Severity parse_severity(std::string_view s) {
  for (auto v : kAllSeverities) {
    if (to_string(v) == s) return v;
  }
  throw ValidationError("unknown severity '" + std::string(s) + "'");
}

void DegradationDescriptor::validate() const {
  if (types.empty()) throw ValidationError("descriptor has no weather type");
  for (std::size_t i = 0; i < types.size(); ++i) {
    for (std::size_t j = i + 1; j < types.size(); ++j) {
      if (types[i] == types[j]) {
        throw ValidationError("weather type '" + std::string(to_string(types[i])) + "' repeated");
      }
    }
  }
  if (types.size() > 1 && std::find(types.begin(), types.end(), WeatherType::none) != types.end()) {
    throw ValidationError("'none' cannot be combined with another weather type");
  }
  if (!(coverage >= 0.0 && coverage <= 1.0)) {
    throw ValidationError("coverage " + std::to_string(coverage) + " outside [0, 1]");
  }
}

std::string DegradationDescriptor::type_label() const {
  std::string s;
  for (std::size_t i = 0; i < types.size(); ++i) {
    if (i) s += '+';
    s += to_string(types[i]);
  }
  return s;
}

std::string DegradationDescriptor::to_line() const {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), coverage);
  return "types=" + type_label() + ";severity=" + std::string(to_string(severity)) +
         ";coverage=" + std::string(buf, res.ptr) + ";seed=" + std::to_string(seed);
}

DegradationDescriptor DegradationDescriptor::parse(std::string_view line) {
  DegradationDescriptor d;
  bool have_types = false, have_severity = false;
  while (!line.empty()) {
    const auto semi = line.find(';');
    const std::string_view field = line.substr(0, semi);
    line = semi == std::string_view::npos ? std::string_view{} : line.substr(semi + 1);
    if (field.empty()) continue;
    const auto eq = field.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("descriptor field '" + std::string(field) + "' lacks '='");
    }
    const auto key = field.substr(0, eq);
    const auto value = field.substr(eq + 1);
    if (key == "types") {
      d.types.clear();
      std::string_view rest = value;
      while (true) {
        const auto plus = rest.find('+');
        d.types.push_back(parse_weather_type(rest.substr(0, plus)));
        if (plus == std::string_view::npos) break;
        rest = rest.substr(plus + 1);
      }
      have_types = true;
    } else if (key == "severity") {
      d.severity = parse_severity(value);
      have_severity = true;
    } else if (key == "coverage") {
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), d.coverage);
      if (ec != std::errc{} || p != value.data() + value.size()) {
        throw ValidationError("bad coverage '" + std::string(value) + "'");
      }
    } else if (key == "seed") {
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), d.seed);
      if (ec != std::errc{} || p != value.data() + value.size()) {
        throw ValidationError("bad seed '" + std::string(value) + "'");
      }
    } else {
      throw ValidationError("unknown descriptor key '" + std::string(key) + "'");
    }
  }
  if (!have_types || !have_severity) {
    throw ValidationError("descriptor needs both 'types' and 'severity'");
  }
  d.validate();
  return d;
}

std::string format_prompt(const DegradationDescriptor& d) {
  char cov[32];
  std::snprintf(cov, sizeof(cov), "%.2f", d.coverage);
  return "[observed: " + d.type_label() + ", " + std::string(to_string(d.severity)) +
         ", coverage " + cov +
         "] What type of weather is in this picture, at what intensity, and which areas are "
         "obscured by it?";
}

template <typename T>
Tensor<T> vocabulary_block(WeatherType type, Severity severity, std::uint64_t vocab_seed,
                           const PriorDims& dims) {
  if (dims.tokens < 2 || dims.text_width < 1) {
    throw ConfigError("prior needs at least 2 tokens and a positive width");
  }
  const std::size_t rows = dims.tokens - 1, width = dims.text_width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(width));
  Tensor<T> block({rows, width});
  const std::uint64_t entry = mix_seed(mix_seed(vocab_seed, static_cast<std::uint64_t>(type)),
                                       static_cast<std::uint64_t>(severity));
  for (std::size_t r = 0; r < rows; ++r) {
    Rng rng(mix_seed(entry, r));
    for (std::size_t c = 0; c < width; ++c) block[r * width + c] = static_cast<T>(scale * rng.normal());
  }
  return block;
}

template <typename T>
Tensor<T> coverage_row(std::uint64_t vocab_seed, const PriorDims& dims) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dims.text_width));
  Rng rng(mix_seed(vocab_seed, 0xc0fe'ca9e'0000'0001ULL));
  Tensor<T> row({1, dims.text_width});
  for (auto& v : row.storage()) v = static_cast<T>(scale * rng.normal());
  return row;
}

template <typename T>
Tensor<T> stub_vl_encode(const DegradationDescriptor& d, std::uint64_t vocab_seed,
                         const PriorDims& dims) {
  d.validate();
  const std::size_t width = dims.text_width;
  Tensor<T> out({dims.tokens, width});
  const T share = T(1) / static_cast<T>(d.types.size());
  for (auto type : d.types) {
    const auto block = vocabulary_block<T>(type, d.severity, vocab_seed, dims);
    for (std::size_t i = 0; i < block.size(); ++i) out[i] += share * block[i];
  }
  const auto cov = coverage_row<T>(vocab_seed, dims);
  const std::size_t last = (dims.tokens - 1) * width;
  for (std::size_t c = 0; c < width; ++c) out[last + c] = static_cast<T>(d.coverage) * cov[c];
  return out;
}

template <typename T>
PriorMlp<T> PriorMlp<T>::create(ParameterSet<T>& params, std::size_t text_width,
                                std::size_t channels, std::uint64_t seed) {
  PriorMlp m;
  m.w1 = params.create("prior.w1", {text_width, channels}, text_width, seed);
  m.b1 = params.create("prior.b1", {channels}, 0, seed);
  m.w2 = params.create("prior.w2", {channels, channels}, channels, seed);
  m.b2 = params.create("prior.b2", {channels}, 0, seed);
  return m;
}

template <typename T>
Var<T> project_prior(Tape<T>& tape, const Var<T>& prior_text, const PriorMlp<T>& mlp) {
  const auto& p = prior_text->value;
  if (p.rank() != 2 || p.dim(1) != mlp.w1->value.dim(0)) {
    throw DimensionError("project_prior: prior text " + to_string(p.shape()) +
                         " does not match MLP input width " + std::to_string(mlp.w1->value.dim(0)));
  }
  auto h = tape.relu(tape.add_bias(tape.matmul(prior_text, mlp.w1), mlp.b1));
  return tape.add_bias(tape.matmul(h, mlp.w2), mlp.b2);
}

#define LDR_INSTANTIATE(T)                                                                        \
  template Tensor<T> stub_vl_encode<T>(const DegradationDescriptor&, std::uint64_t,                \
                                       const PriorDims&);                                         \
  template Tensor<T> vocabulary_block<T>(WeatherType, Severity, std::uint64_t, const PriorDims&);  \
  template Tensor<T> coverage_row<T>(std::uint64_t, const PriorDims&);                             \
  template struct PriorMlp<T>;                                                                     \
  template Var<T> project_prior<T>(Tape<T>&, const Var<T>&, const PriorMlp<T>&);

LDR_INSTANTIATE(float)
LDR_INSTANTIATE(double)

}  // namespace ldr
