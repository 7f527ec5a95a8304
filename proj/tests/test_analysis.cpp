// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ldr/analysis.hpp"
#include "ldr/errors.hpp"
#include "ldr/image_io.hpp"
#include "test_util.hpp"

using namespace ldr;

namespace {

ModelConfig small_model(Routing routing = Routing::pixel) {
  ModelConfig m;
  m.channels = 8;
  m.experts = 4;
  m.top_k = 2;
  m.text_width = 32;
  m.routing = routing;
  return m;
}

const DatasetManifest& small_data() {
  static const DatasetManifest manifest = [] {
    DatasetSpec spec;
    spec.count = 9;
    spec.type_mix = parse_type_mix("rain,snow,haze");
    spec.size = 32;
    spec.seed = 3;
    return build_dataset(spec, test::scratch("analysis_data"));
  }();
  return manifest;
}

}  // namespace

TEST_CASE("expert usage: rows are distributions with one column per expert") {
  const Model<float> model(small_model());
  const auto usage = expert_usage(model, small_data());
  CHECK(usage.experts == 4);
  CHECK(usage.types == std::vector<std::string>{"rain", "snow", "haze"});
  for (std::size_t t = 0; t < usage.types.size(); ++t) {
    REQUIRE(usage.frequency[t].size() == 4);
    const double sum = std::accumulate(usage.frequency[t].begin(), usage.frequency[t].end(), 0.0);
    CHECK(std::abs(sum - 1.0) <= 1e-6);
    // 3 images of 8×8 bottleneck pixels, K=2 selections each.
    CHECK(usage.selections[t] == 3u * 8 * 8 * 2);
  }
  const auto again = expert_usage(model, small_data());
  CHECK(again.frequency == usage.frequency);

  const auto dir = test::scratch("usage_out");
  write_usage_csv(dir / "usage.csv", usage);
  write_usage_chart(dir / "usage.png", usage);
  const auto csv = test::slurp(dir / "usage.csv");
  CHECK(csv.starts_with("type,selections,expert_0,expert_1,expert_2,expert_3\n"));
  CHECK(read_png(dir / "usage.png").shape()[2] == 3);
}

TEST_CASE("expert usage rejects unlabelled samples") {
  const auto dir = test::scratch("usage_none");
  DatasetSpec spec;
  spec.count = 2;
  spec.type_mix = parse_type_mix("none");
  spec.size = 32;
  const auto manifest = build_dataset(spec, dir);
  CHECK_THROWS_AS(expert_usage(Model<float>(small_model()), manifest), ValidationError);
}

TEST_CASE("strongest specialization picks the largest between-type ratio") {
  UsageTable u;
  u.experts = 2;
  u.types = {"rain", "snow"};
  u.frequency = {{0.8, 0.2}, {0.4, 0.6}};
  u.selections = {10, 10};
  const auto s = strongest_specialization(u);
  CHECK(s.expert == 1);
  CHECK(s.ratio == doctest::Approx(3.0));
  CHECK(s.high_type == "snow");
  CHECK(s.low_type == "rain");
}

TEST_CASE("expert regions: sorted, in bounds, and empty for top 0") {
  const Model<float> model(small_model());
  const auto hits = expert_regions(model, small_data(), 1, 5);
  REQUIRE(hits.size() == 5);
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (i > 0) CHECK(hits[i - 1].score >= hits[i].score);
    CHECK(hits[i].y0 + hits[i].size <= 32);
    CHECK(hits[i].x0 + hits[i].size <= 32);
    CHECK(hits[i].score >= 0.0);
    CHECK(hits[i].score <= 1.0);
  }
  const auto dir = test::scratch("regions_out");
  write_regions(dir, small_data(), hits, 1);
  CHECK(std::filesystem::exists(dir / "region_000.png"));
  CHECK(std::filesystem::exists(dir / "regions.csv"));

  const auto empty_dir = test::scratch("regions_empty");
  const auto none = expert_regions(model, small_data(), 1, 0);
  CHECK(none.empty());
  write_regions(empty_dir, small_data(), none, 1);
  CHECK(std::filesystem::is_empty(empty_dir));

  CHECK_THROWS_AS(expert_regions(model, small_data(), 4, 3), ConfigError);
}

TEST_CASE("zero-out: fraction 0 is neutral and rows follow the request") {
  const Model<float> model(small_model());
  const std::vector<double> fractions{0.0, 0.5, 1.0};
  const auto rows = zero_out(model, small_data(), fractions);
  REQUIRE(rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(rows[i].fraction == fractions[i]);
  CHECK(rows[0].zeroed == 0);
  CHECK(rows[0].psnr_zeroed == rows[0].psnr_baseline);
  CHECK(rows[1].zeroed == 4);
  CHECK(rows[2].zeroed == 8);

  // A mask of ones leaves the restored images bitwise unchanged.
  const auto plain = evaluate(model, small_data());
  ForwardOptions ones;
  ones.channel_mask.assign(8, 1.0);
  const auto masked = evaluate(model, small_data(), ones);
  for (std::size_t i = 0; i < plain.size(); ++i) {
    CHECK(plain[i].psnr_restored == masked[i].psnr_restored);
    CHECK(plain[i].ssim_restored == masked[i].ssim_restored);
  }
  const auto activity = channel_activity(model, small_data());
  CHECK(activity.size() == 8);
  for (double a : activity) CHECK(a >= 0.0);
}

TEST_CASE("severity table: counts sum to the manifest size; absent cells stay absent") {
  const Model<float> model(small_model());
  const auto records = evaluate(model, small_data());
  REQUIRE(records.size() == small_data().entries.size());
  const auto cells = severity_table(records);
  std::size_t total = 0;
  for (const auto& c : cells) total += c.count;
  CHECK(total == records.size());
  CHECK(cells.size() == 9);

  std::vector<EvalRecord> sparse{records[0]};
  const auto few = severity_table(sparse);
  std::size_t present = 0;
  for (const auto& c : few) present += c.count > 0;
  CHECK(present == 1);
  const auto dir = test::scratch("severity_out");
  write_metric_csv(dir / "cells.csv", few);
  const auto csv = test::slurp(dir / "cells.csv");
  CHECK(csv.find(",0,,,,\n") != std::string::npos);

  const auto types = type_table(records);
  CHECK(types.size() == 3);
  for (const auto& c : types) CHECK(!c.severity.has_value());
  CHECK(severity_table(evaluate(model, small_data()))[0].psnr_restored == cells[0].psnr_restored);
}

TEST_CASE("clean inputs score the PSNR cap") {
  DatasetSpec spec;
  spec.count = 1;
  spec.type_mix = parse_type_mix("none");
  spec.size = 32;
  const auto manifest = build_dataset(spec, test::scratch("eval_none"));
  const auto r = evaluate(Model<float>(small_model()), manifest);
  CHECK(r[0].psnr_degraded == 99.0);
  CHECK(r[0].ssim_degraded == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("routing ablation: same checkpoint gives zero delta; mismatched modes rejected") {
  const Model<float> pixel(small_model(Routing::pixel));
  const Model<float> image(small_model(Routing::image));
  const auto same = routing_ablation(pixel, pixel, small_data(), true);
  CHECK(same.delta_psnr() == 0.0);
  CHECK(same.delta_ssim() == 0.0);
  CHECK_THROWS_AS(routing_ablation(pixel, pixel, small_data()), ConfigError);
  CHECK_THROWS_AS(routing_ablation(image, pixel, small_data()), ConfigError);
  const auto both = routing_ablation(pixel, image, small_data());
  CHECK(std::isfinite(both.delta_psnr()));

  const auto dir = test::scratch("ablation_out");
  write_ablation_csv(dir / "ablation.csv", both);
  const auto csv = test::slurp(dir / "ablation.csv");
  CHECK(csv.find("pixel,") != std::string::npos);
  CHECK(csv.find("image,") != std::string::npos);
  CHECK(csv.find("delta,") != std::string::npos);
}

TEST_CASE("inspect writes the intermediate tensors and heatmaps") {
  const Model<float> model(small_model());
  const auto& e = small_data().entries[0];
  const auto image = read_png(small_data().degraded_path(e));
  const auto dir = test::scratch("inspect_out");
  inspect(model, image, e.descriptor, dir);
  for (const char* f : {"prior.ldrt", "M.ldrt", "S.ldrt", "x_int.ldrt", "x_hat.ldrt", "restored.png",
                        "prompt.txt"})
    CHECK(std::filesystem::exists(dir / f));
  CHECK(std::filesystem::exists(dir / "heatmaps" / "M_c00.png"));
  const auto h = heatmap(test::randu<float>({4, 5, 3}, 1), 2);
  CHECK(h.shape() == Shape{4, 5, 1});
  CHECK_THROWS(heatmap(test::randu<float>({4, 5, 3}, 1), 3));
}
