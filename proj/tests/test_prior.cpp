// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "ldr/errors.hpp"
#include "ldr/gradcheck.hpp"
#include "ldr/prior.hpp"
#include "test_util.hpp"

using namespace ldr;

namespace {

DegradationDescriptor desc(std::vector<WeatherType> types, Severity s, double coverage = 1.0) {
  DegradationDescriptor d;
  d.types = std::move(types);
  d.severity = s;
  d.coverage = coverage;
  return d;
}

double frobenius(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("descriptor line round trip") {
  const auto d = DegradationDescriptor::parse("types=rain+haze;severity=heavy;coverage=0.8;seed=42");
  CHECK(d.types == std::vector<WeatherType>{WeatherType::rain, WeatherType::haze});
  CHECK(d.severity == Severity::heavy);
  CHECK(d.coverage == 0.8);
  CHECK(d.seed == 42);
  CHECK(d.to_line() == "types=rain+haze;severity=heavy;coverage=0.8;seed=42");
  CHECK(DegradationDescriptor::parse(d.to_line()) == d);
  CHECK(d.type_label() == "rain+haze");
}

TEST_CASE("descriptor validation") {
  CHECK_THROWS_AS(DegradationDescriptor::parse("types=none+rain;severity=slight;coverage=1;seed=0"),
                  ValidationError);
  CHECK_THROWS_AS(DegradationDescriptor::parse("types=rain;severity=slight;coverage=1.5;seed=0"),
                  ValidationError);
  CHECK_THROWS_AS(DegradationDescriptor::parse("types=rain+rain;severity=slight;coverage=1;seed=0"),
                  ValidationError);
  CHECK_THROWS(DegradationDescriptor::parse("types=fog;severity=slight;coverage=1;seed=0"));
  CHECK_THROWS(DegradationDescriptor::parse("types=rain;severity=extreme;coverage=1;seed=0"));
  CHECK_THROWS(DegradationDescriptor::parse("types=rain;severity=slight;coverage=abc;seed=0"));
  auto empty = desc({}, Severity::slight);
  CHECK_THROWS_AS(empty.validate(), ValidationError);
}

TEST_CASE("prompt wording") {
  const auto p = format_prompt(desc({WeatherType::rain}, Severity::heavy));
  CHECK(p.find("type of weather") != std::string::npos);
  CHECK(p.find("intensity") != std::string::npos);
  CHECK(p.find("obscured") != std::string::npos);
  const auto none = format_prompt(desc({WeatherType::none}, Severity::slight));
  CHECK(none.find("none") != std::string::npos);
  CHECK(none.find("type") != std::string::npos);
  CHECK(format_prompt(desc({WeatherType::snow}, Severity::moderate)) ==
        format_prompt(desc({WeatherType::snow}, Severity::moderate)));
}

TEST_CASE("stub encoder: shape, determinism, separation") {
  const auto rain = desc({WeatherType::rain}, Severity::moderate);
  const auto snow = desc({WeatherType::snow}, Severity::moderate);
  const auto a = stub_vl_encode<double>(rain), b = stub_vl_encode<double>(rain);
  CHECK(a == b);
  CHECK(a.shape() == Shape{8, 256});
  CHECK(frobenius(a, stub_vl_encode<double>(snow)) > 0.1);
  const PriorDims small{3, 5};
  CHECK(stub_vl_encode<double>(snow, 7, small).shape() == Shape{3, 5});
  // The generator seed is not part of the embedding.
  auto reseeded = rain;
  reseeded.seed = 99;
  CHECK(stub_vl_encode<double>(reseeded) == a);
}

TEST_CASE("stub encoder: every single-type descriptor is distinct") {
  std::vector<Tensor<double>> all;
  for (WeatherType t : kAllWeatherTypes)
    for (Severity s : kAllSeverities) all.push_back(stub_vl_encode<double>(desc({t}, s)));
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) CHECK(frobenius(all[i], all[j]) > 0.0);
}

TEST_CASE("stub encoder: mixed descriptors average the type blocks") {
  const PriorDims dims{};
  const auto mixed = desc({WeatherType::rain, WeatherType::haze}, Severity::heavy, 0.6);
  const auto got = stub_vl_encode<double>(mixed);
  const auto r = vocabulary_block<double>(WeatherType::rain, Severity::heavy, kDefaultVocabSeed, dims);
  const auto h = vocabulary_block<double>(WeatherType::haze, Severity::heavy, kDefaultVocabSeed, dims);
  const auto cov = coverage_row<double>(kDefaultVocabSeed, dims);
  const std::size_t w = dims.text_width;
  for (std::size_t i = 0; i < (dims.tokens - 1) * w; ++i) {
    CHECK(got[i] == doctest::Approx(0.5 * r[i] + 0.5 * h[i]).epsilon(1e-15));
  }
  for (std::size_t c = 0; c < w; ++c) CHECK(got[(dims.tokens - 1) * w + c] == 0.6 * cov[c]);
}

TEST_CASE("stub encoder rejects invalid descriptors") {
  CHECK_THROWS_AS(stub_vl_encode<double>(desc({WeatherType::none, WeatherType::rain}, Severity::slight)),
                  ValidationError);
}

TEST_CASE("prior projection: zero weights, shape, row-wise") {
  ParameterSet<double> params;
  auto mlp = PriorMlp<double>::create(params, 256, 32, 0);
  Tape<double> tape(false);
  const auto text = stub_vl_encode<double>(desc({WeatherType::rain}, Severity::slight));
  const auto emb = project_prior(tape, tape.constant(text), mlp)->value;
  CHECK(emb.shape() == Shape{8, 32});

  // Rows permute with the input rows.
  Tensor<double> permuted(text.shape());
  const std::size_t w = 256;
  for (std::size_t r = 0; r < 8; ++r)
    std::copy_n(text.data().begin() + (7 - r) * w, w, permuted.data().begin() + r * w);
  const auto pe = project_prior(tape, tape.constant(permuted), mlp)->value;
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 32; ++c) CHECK(pe[r * 32 + c] == emb[(7 - r) * 32 + c]);

  for (auto& [name, v] : params.entries()) std::fill(v->value.storage().begin(), v->value.storage().end(), 0.0);
  const auto projected = project_prior(tape, tape.constant(text), mlp);
  for (double v : projected->value.storage()) CHECK(v == 0.0);
}

TEST_CASE("prior projection: width mismatch") {
  ParameterSet<double> params;
  auto mlp = PriorMlp<double>::create(params, 16, 4, 0);
  Tape<double> tape(false);
  CHECK_THROWS_AS(project_prior(tape, tape.constant(Tensor<double>({3, 15})), mlp), DimensionError);
}

TEST_CASE("gradient suite: prior projection") {
  for (const auto& r : run_gradcheck("prior")) CHECK_MESSAGE(r.passed, r.name);
}
