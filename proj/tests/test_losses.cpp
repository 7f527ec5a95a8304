// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "ldr/errors.hpp"
#include "ldr/gradcheck.hpp"
#include "ldr/losses.hpp"
#include "test_util.hpp"

using namespace ldr;

namespace {

double char_of(const Tensor<double>& a, const Tensor<double>& b,
               CharbonnierMode mode = CharbonnierMode::per_pixel) {
  Tape<double> tape(false);
  return charbonnier(tape, tape.constant(a), tape.constant(b), kCharbonnierEps, mode)->value[0];
}

double edge_of(const Tensor<double>& a, const Tensor<double>& b) {
  Tape<double> tape(false);
  return edge_loss(tape, tape.constant(a), tape.constant(b))->value[0];
}

}  // namespace

TEST_CASE("charbonnier anchors") {
  const auto img = test::randu({8, 8, 3}, 1);
  CHECK(char_of(img, img) == 1e-4);
  CHECK(char_of(img, img, CharbonnierMode::global) == 1e-4);
  const double single = char_of(make_tensor<double>({1}, {0.3}), make_tensor<double>({1}, {0.0}));
  CHECK(single == doctest::Approx(std::sqrt(0.09 + 1e-8)).epsilon(1e-15));
  CHECK(single == doctest::Approx(0.30000001667).epsilon(1e-10));
  const auto other = test::randu({8, 8, 3}, 2);
  CHECK(char_of(img, other) == char_of(other, img));
  CHECK(char_of(img, other) > 1e-4);
}

TEST_CASE("charbonnier per-pixel vs global reductions") {
  const auto a = make_tensor<double>({2}, {0.3, 0.0}), b = make_tensor<double>({2}, {0.0, 0.4});
  CHECK(char_of(a, b) == doctest::Approx(0.5 * (std::sqrt(0.09 + 1e-8) + std::sqrt(0.16 + 1e-8))));
  CHECK(char_of(a, b, CharbonnierMode::global) == doctest::Approx(std::sqrt(0.25 + 1e-8)));
}

TEST_CASE("charbonnier shape mismatch") {
  CHECK_THROWS_AS(char_of(Tensor<double>({2, 2, 3}), Tensor<double>({2, 3, 3})), DimensionError);
}

TEST_CASE("laplacian of an interior point and of constants") {
  Tape<double> tape(false);
  Tensor<double> delta({3, 3, 1});
  delta.at(1, 1, 0) = 1.0;
  const auto l = laplacian(tape, tape.constant(delta))->value;
  CHECK(l.at(1, 1, 0) == -4.0);
  CHECK(l.at(0, 1, 0) == 1.0);
  CHECK(l.at(0, 0, 0) == 0.0);
  // Zero padding makes constant images non-zero at the border only.
  const auto c = laplacian(tape, tape.constant(Tensor<double>({4, 4, 3}, 0.5)))->value;
  CHECK(c.at(1, 2, 0) == 0.0);
  CHECK(c.at(0, 0, 2) == -1.0);
}

TEST_CASE("edge loss anchors") {
  const auto flat_a = Tensor<double>({6, 6, 3}, 0.5);
  CHECK(edge_of(flat_a, flat_a) == 1e-4);
  const auto img = test::randu({6, 6, 3}, 3);
  CHECK(edge_of(img, img) == 1e-4);
  CHECK(edge_of(img, test::randu({6, 6, 3}, 4)) > 1e-4);
}

TEST_CASE("total loss composition") {
  const auto img = test::randu({8, 8, 3}, 1);
  Tape<double> tape(false);
  auto same = total_loss(tape, tape.constant(img), img);
  CHECK(same.report.total == doctest::Approx(1.05e-4).epsilon(1e-15));
  CHECK(same.report.charbonnier == 1e-4);
  CHECK(same.report.edge == 1e-4);
  CHECK(same.report.lambda == 0.05);

  const auto other = test::randu({8, 8, 3}, 2);
  auto zero = total_loss(tape, tape.constant(other), img, 0.0);
  CHECK(zero.report.total == zero.report.charbonnier);
  auto r = total_loss(tape, tape.constant(other), img);
  CHECK(r.report.total == r.report.charbonnier + 0.05 * r.report.edge);
  CHECK(r.total->value[0] == r.report.total);
}

TEST_CASE("total loss gradient reaches the prediction only") {
  auto pred = make_leaf(test::randu({5, 5, 3}, 1));
  Tape<double> tape;
  tape.backward(total_loss(tape, pred, test::randu({5, 5, 3}, 2)).total);
  CHECK(pred->has_grad());
}

TEST_CASE("psnr anchors") {
  const Tensor<double> a({4, 4, 3}, 0.5), b({4, 4, 3}, 0.6);
  CHECK(psnr(a, a) == 99.0);
  CHECK(std::abs(psnr(a, b) - 20.0) <= 1e-6);
  const auto x = test::randu({8, 8, 3}, 1), y = test::randu({8, 8, 3}, 2);
  CHECK(psnr(x, y) == psnr(y, x));
  CHECK_THROWS_AS(psnr(a, Tensor<double>({4, 4, 1})), DimensionError);
}

TEST_CASE("psnr decreases with noise amplitude") {
  const auto clean = test::randu({32, 32, 3}, 1, 0.2, 0.8);
  const auto noise = test::randn({32, 32, 3}, 2);
  double last = 1e9;
  for (double amp : {0.01, 0.03, 0.1}) {
    auto noisy = clean;
    for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] += amp * noise[i];
    const double p = psnr(clean, noisy);
    CHECK(p < last);
    last = p;
  }
}

TEST_CASE("ssim anchors") {
  const auto x = test::randu({16, 16, 3}, 1), y = test::randu({16, 16, 3}, 2);
  CHECK(std::abs(ssim(x, x) - 1.0) <= 1e-9);
  CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-14));
  const double c1 = 1e-4;
  CHECK(ssim(Tensor<double>({12, 12, 3}, 0.0), Tensor<double>({12, 12, 3}, 1.0)) ==
        doctest::Approx(c1 / (1.0 + c1)).epsilon(1e-9));
  CHECK_THROWS_AS(ssim(Tensor<double>({10, 12, 3}), Tensor<double>({10, 12, 3})), DimensionError);
}

TEST_CASE("gradient suite: losses") {
  for (const auto& r : run_gradcheck("losses")) CHECK_MESSAGE(r.passed, r.name);
}
