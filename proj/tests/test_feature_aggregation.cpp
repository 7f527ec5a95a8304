// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "ldr/backbone.hpp"
#include "ldr/errors.hpp"
#include "ldr/feature_aggregation.hpp"
#include "ldr/gradcheck.hpp"
#include "test_util.hpp"

using namespace ldr;
using test::randn;

namespace {

struct Fixture {
  ParameterSet<double> params;
  RfaParams<double> rfa;
  explicit Fixture(std::size_t c, std::uint64_t seed = 0) {
    rfa = RfaParams<double>::create(params, "rfa", c, seed);
  }
};

}  // namespace

TEST_CASE("constant restoration features give constant attention output") {
  Fixture f(4, 1);
  Tape<double> tape(false);
  const auto row = randn({4}, 2);
  Tensor<double> x({3, 3, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = row[i % 4];
  const auto a = aggregate(tape, tape.constant(randn({3, 3, 4}, 3, 3.0)), tape.constant(x), f.rfa)
                     .attended->value;
  for (std::size_t p = 1; p < 9; ++p)
    for (std::size_t c = 0; c < 4; ++c) CHECK(a[p * 4 + c] == doctest::Approx(a[c]).epsilon(1e-14));
}

TEST_CASE("attention rows sum to one over all tokens") {
  Fixture f(3, 2);
  Tape<double> tape(false);
  const auto r = aggregate(tape, tape.constant(randn({4, 2, 3}, 1, 2.0)),
                           tape.constant(randn({4, 2, 3}, 2, 2.0)), f.rfa);
  const auto& a = r.attention->value;
  CHECK(a.shape() == Shape{8, 8});
  for (std::size_t i = 0; i < 8; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 8; ++j) s += a[i * 8 + j];
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
}

TEST_CASE("duplicated map rows with identical fields give identical pre-FFN output") {
  Fixture f(3, 4);
  Tape<double> tape(false);
  auto m = randn({2, 2, 3}, 1);
  for (std::size_t c = 0; c < 3; ++c) m.at(1, 1, c) = m.at(0, 0, c);
  const auto a = aggregate(tape, tape.constant(m), tape.constant(randn({2, 2, 3}, 2)), f.rfa)
                     .attended->value;
  for (std::size_t c = 0; c < 3; ++c) CHECK(a.at(1, 1, c) == a.at(0, 0, c));
}

TEST_CASE("pre-FFN output lies in the convex hull of the value rows") {
  Fixture f(3, 5);
  Tape<double> tape(false);
  const auto x = randn({3, 3, 3}, 2, 2.0);
  const auto a = aggregate(tape, tape.constant(randn({3, 3, 3}, 1, 2.0)), tape.constant(x), f.rfa)
                     .attended->value;
  auto flat = x;
  flat.reshape({9, 3});
  const auto v = tape.matmul(tape.constant(flat), f.rfa.wv)->value;
  for (std::size_t c = 0; c < 3; ++c) {
    double lo = v[c], hi = v[c];
    for (std::size_t r = 1; r < 9; ++r) {
      lo = std::min(lo, v[r * 3 + c]);
      hi = std::max(hi, v[r * 3 + c]);
    }
    for (std::size_t p = 0; p < 9; ++p) {
      CHECK(a[p * 3 + c] >= lo - 1e-9);
      CHECK(a[p * 3 + c] <= hi + 1e-9);
    }
  }
}

TEST_CASE("residual flag adds the attended features") {
  Fixture f(3, 6);
  Tape<double> tape(false);
  auto m = tape.constant(randn({2, 3, 3}, 1));
  auto x = tape.constant(randn({2, 3, 3}, 2));
  const auto with = aggregate(tape, m, x, f.rfa, true);
  const auto without = aggregate(tape, m, x, f.rfa, false);
  for (std::size_t i = 0; i < with.output->value.size(); ++i) {
    CHECK(with.output->value[i] ==
          doctest::Approx(without.output->value[i] + with.attended->value[i]).epsilon(1e-14));
  }
}

TEST_CASE("shape mismatch is a dimension error") {
  Fixture f(3);
  Tape<double> tape(false);
  CHECK_THROWS_AS(aggregate(tape, tape.constant(Tensor<double>({2, 2, 3})),
                            tape.constant(Tensor<double>({2, 3, 3})), f.rfa),
                  DimensionError);
}

TEST_CASE("token budget at the default configuration") {
  // The block sits after `levels` stride-2 stages; a 128×128 input (twice the
  // training crop) still stays within the attention budget.
  const ModelConfig cfg;
  const std::size_t side = 128 >> cfg.levels;
  CHECK(side * side <= kMaxAggregationTokens);
  Fixture f(2);
  Tape<double> tape(false);
  Tensor<double> big({65, 64, 2});
  CHECK_THROWS_AS(aggregate(tape, tape.constant(big), tape.constant(big), f.rfa), ConfigError);
}

TEST_CASE("gradient suite: aggregation") {
  for (const auto& r : run_gradcheck("rfa")) CHECK_MESSAGE(r.passed, r.name);
}
