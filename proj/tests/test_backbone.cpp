// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <set>

#include "ldr/backbone.hpp"
#include "ldr/errors.hpp"
#include "ldr/gradcheck.hpp"
#include "test_util.hpp"

using namespace ldr;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.experts = 4;
  cfg.top_k = 2;
  cfg.text_width = 32;
  return cfg;
}

DegradationDescriptor rain() { return DegradationDescriptor::parse("types=rain;severity=heavy;coverage=1;seed=0"); }
DegradationDescriptor snow() { return DegradationDescriptor::parse("types=snow;severity=heavy;coverage=1;seed=0"); }

}  // namespace

TEST_CASE("encode shape and zero input") {
  Model<double> model(ModelConfig{});
  Tape<double> tape(false);
  auto e = model.encode(tape, tape.constant(test::randu({64, 64, 3}, 1)));
  CHECK(e.features->value.shape() == Shape{16, 16, 32});
  CHECK(e.skips.size() == 2);
  for (auto& [name, p] : model.params().entries())
    if (name.ends_with(".b")) std::fill(p->value.storage().begin(), p->value.storage().end(), 0.0);
  auto z = model.encode(tape, tape.constant(Tensor<double>({16, 16, 3})));
  for (double v : z.features->value.storage()) CHECK(v == 0.0);
}

TEST_CASE("encode rejects sides not divisible by 2^levels") {
  Model<double> model(small_config());
  Tape<double> tape(false);
  CHECK_THROWS_AS(model.encode(tape, tape.constant(Tensor<double>({18, 16, 3}))), ConfigError);
  CHECK_THROWS_AS(model.encode(tape, tape.constant(Tensor<double>({16, 16, 1}))), DimensionError);
}

TEST_CASE("decode restores the image shape with values in (0,1)") {
  Model<double> model(small_config());
  Tape<double> tape(false);
  auto e = model.encode(tape, tape.constant(test::randu({16, 24, 3}, 2)));
  auto feats = tape.constant(test::randn(e.features->value.shape(), 3, 50.0));
  const auto out = model.decode(tape, feats, e.skips)->value;
  CHECK(out.shape() == Shape{16, 24, 3});
  for (double v : out.storage()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  std::vector<Var<double>> wrong(e.skips.begin(), e.skips.end() - 1);
  CHECK_THROWS_AS(model.decode(tape, feats, wrong), ContractError);
  std::vector<Var<double>> swapped = {e.skips[1], e.skips[0]};
  CHECK_THROWS_AS(model.decode(tape, feats, swapped), ContractError);
}

TEST_CASE("forward is deterministic and shape preserving") {
  Model<double> model(small_config());
  const auto img = test::randu({16, 16, 3}, 4);
  Tape<double> t1(false), t2(false);
  const auto a = model.forward(t1, img, rain());
  const auto b = model.forward(t2, img, rain());
  CHECK(a.restored->value == b.restored->value);
  CHECK(a.restored->value.shape() == img.shape());
  const auto& d = a.diagnostics;
  CHECK(d.map->value.shape() == Shape{4, 4, 8});
  CHECK(d.scores->value.shape() == Shape{4, 4, 4});
  CHECK(d.selection.indices.size() == 4u * 4 * 2);
  CHECK(d.x_int->value.shape() == Shape{4, 4, 8});
  CHECK(d.x_hat->value.shape() == Shape{4, 4, 8});
}

TEST_CASE("the prior path is live") {
  Model<double> model(small_config());
  const auto img = test::randu({16, 16, 3}, 5);
  Tape<double> tape(false);
  const auto a = model.forward(tape, img, rain()).restored->value;
  const auto b = model.forward(tape, img, snow()).restored->value;
  CHECK(test::max_abs_diff(a, b) > 0.0);
}

TEST_CASE("stage failures carry the stage name and keep their type") {
  Model<double> model(small_config());
  Tape<double> tape(false);
  auto bad = rain();
  bad.coverage = 2.0;
  try {
    model.forward(tape, test::randu({16, 16, 3}, 1), bad);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).starts_with("prior:"));
  }
  CHECK_THROWS_WITH_AS(model.forward(tape, Tensor<double>({10, 16, 3}), rain()),
                       doctest::Contains("encode:"), ConfigError);
  ForwardOptions opts;
  opts.channel_mask.assign(3, 1.0);
  CHECK_THROWS_AS(model.forward(tape, test::randu({16, 16, 3}, 1), rain(), opts), DimensionError);
}

TEST_CASE("channel mask of ones is neutral; zeros empty the bottleneck") {
  Model<float> model(small_config());
  const auto img = test::randu<float>({16, 16, 3}, 6);
  Tape<float> tape(false);
  const auto base = model.forward(tape, img, rain());
  ForwardOptions ones;
  ones.channel_mask.assign(8, 1.0);
  CHECK(model.forward(tape, img, rain(), ones).restored->value == base.restored->value);
  ForwardOptions zeros;
  zeros.channel_mask.assign(8, 0.0);
  const auto zeroed = model.forward(tape, img, rain(), zeros);
  for (float v : zeroed.diagnostics.x_hat->value.storage()) CHECK(v == 0.0f);
}

TEST_CASE("state round trip is bitwise") {
  auto cfg = small_config();
  cfg.seed = 17;
  cfg.routing = Routing::image;
  cfg.vocab_seed = 0xfedcba9876543210ULL;
  Model<float> model(cfg);
  const auto restored = Model<float>::from_state(model.state());
  CHECK(restored.config() == cfg);
  const auto img = test::randu<float>({16, 16, 3}, 7);
  Tape<float> tape(false);
  CHECK(model.forward(tape, img, rain()).restored->value ==
        restored.forward(tape, img, rain()).restored->value);

  NamedTensors partial = model.state();
  partial.erase(partial.begin());
  Model<float> other(cfg);
  CHECK_THROWS(other.load_parameters(partial));
}

TEST_CASE("parameter names are unique and init is seeded") {
  Model<float> a(small_config()), b(small_config());
  auto cfg = small_config();
  cfg.seed = 1;
  Model<float> c(cfg);
  std::set<std::string> names;
  for (const auto& [name, p] : a.params().entries()) CHECK(names.insert(name).second);
  CHECK(a.state() == b.state());
  CHECK(a.params().find("ldr0.ter.experts")->value != c.params().find("ldr0.ter.experts")->value);
}

TEST_CASE("config validation") {
  ModelConfig cfg;
  cfg.top_k = 17;
  CHECK_THROWS_AS(Model<float>{cfg}, ConfigError);
  cfg = ModelConfig{};
  cfg.kernel = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ModelConfig{};
  cfg.channels = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("gradient suite: encoder and decoder") {
  for (const auto& r : run_gradcheck("backbone")) CHECK_MESSAGE(r.passed, r.name);
}

TEST_CASE("gradient suite: end-to-end model") {
  const auto results = run_gradcheck("model");
  REQUIRE(results.size() == 1);
  CHECK(results[0].passed);
  CHECK(results[0].checked > 0.99 * double(results[0].checked + results[0].excluded));
}
