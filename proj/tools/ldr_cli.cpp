// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Exit codes: 0 ok, 1 usage, 2 runtime failure,
// 3 gradient check failure.
#include <omp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ldr/analysis.hpp"
#include "ldr/bench.hpp"
#include "ldr/config.hpp"
#include "ldr/errors.hpp"
#include "ldr/gradcheck.hpp"
#include "ldr/image_io.hpp"
#include "ldr/trainer.hpp"

namespace fs = std::filesystem;
using namespace ldr;

namespace {

constexpr int kUsage = 1, kRuntime = 2, kCheckFailed = 3;

std::vector<double> parse_doubles(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad number '") + item + "' in " + what);
    }
  }
  return out;
}

fs::path with_suffix(const fs::path& csv, const std::string& suffix) {
  return csv.parent_path() / (csv.stem().string() + suffix + csv.extension().string());
}

void print_cells(const std::vector<MetricCell>& cells) {
  for (const auto& c : cells) {
    const std::string sev = c.severity ? std::string(to_string(*c.severity)) : "all";
    if (c.count == 0) {
      std::printf("  %-14s %-9s n=0  (absent)\n", c.type.c_str(), sev.c_str());
    } else {
      std::printf("  %-14s %-9s n=%-3zu PSNR %6.2f -> %6.2f dB  SSIM %.4f -> %.4f\n",
                  c.type.c_str(), sev.c_str(), c.count, c.psnr_degraded, c.psnr_restored,
                  c.ssim_degraded, c.ssim_restored);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-guided all-weather restoration with sparse experts (desk scale)"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("ldr ") + LDR_VERSION + " (C++20, OpenMP " +
                                        std::to_string(_OPENMP) + ")");
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (1 = deterministic single-core run)")
      ->check(CLI::NonNegativeNumber);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic paired dataset + manifest.tsv");
  fs::path gen_out;
  DatasetSpec spec;
  std::string types = "rain,snow,haze", sev_mix;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", spec.count, "Number of pairs")->capture_default_str();
  gen->add_option("--types", types, "Type mix, e.g. rain,snow,haze or rain:2,rain+haze")
      ->capture_default_str();
  gen->add_option("--severity-mix", sev_mix, "Weights for slight,moderate,heavy");
  gen->add_option("--size", spec.size, "Image side in pixels")->capture_default_str();
  gen->add_option("--seed", spec.seed, "Dataset seed")->capture_default_str();
  gen->add_option("--min-coverage", spec.min_coverage, "Lower bound of the coverage draw")
      ->capture_default_str();
  gen->add_flag("--held-out", spec.held_out, "Use the held-out id range");

  // train
  auto* tr = app.add_subcommand("train", "Train a model; writes loss.csv and step_<n>.ldrc");
  fs::path tr_config, tr_data, tr_out, tr_resume;
  std::vector<std::string> tr_set;
  std::optional<std::size_t> tr_steps, tr_batch, tr_crop, tr_every;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::string> tr_routing;
  std::size_t tr_stop_after = 0;
  bool tr_quiet = false;
  tr->add_option("--config", tr_config, "key = value config file")->check(CLI::ExistingFile);
  tr->add_option("--data", tr_data, "Training manifest.tsv")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--set", tr_set, "Override any config key: key=value (repeatable)");
  tr->add_option("--steps", tr_steps, "Total steps");
  tr->add_option("--batch", tr_batch, "Batch size");
  tr->add_option("--crop", tr_crop, "Crop side");
  tr->add_option("--checkpoint-every", tr_every, "Checkpoint interval (0 = final only)");
  tr->add_option("--seed", tr_seed, "Seed for init, shuffling and crops");
  tr->add_option("--routing", tr_routing, "pixel | image");
  tr->add_option("--resume", tr_resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  tr->add_option("--stop-after", tr_stop_after, "Stop once this many steps are done");
  tr->add_flag("--quiet", tr_quiet, "No per-step progress");

  // eval
  auto* ev = app.add_subcommand(
      "eval", "Per-sample metrics to --out; --by-severity/--by-type add <out>_by_severity.csv "
              "and <out>_by_type.csv");
  fs::path ev_ckpt, ev_data, ev_out;
  bool by_sev = false, by_type = false;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "Manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "CSV path")->required();
  ev->add_flag("--by-severity", by_sev, "Per (type, severity) table");
  ev->add_flag("--by-type", by_type, "Per type table");

  // bench
  auto* bn = app.add_subcommand("bench", "Sparse Top-K dispatch vs dense mixture timing + MACs");
  fs::path bn_ckpt, bn_out;
  ExpertBenchSpec bspec;
  bn->add_option("--ckpt", bn_ckpt, "Take channels, kernel and (if N matches) filters from here")
      ->check(CLI::ExistingFile);
  bn->add_option("--n", bspec.experts, "Experts N")->capture_default_str();
  bn->add_option("--k", bspec.top_k, "Selected K")->capture_default_str();
  bn->add_option("--size", bspec.size, "Feature map side")->capture_default_str();
  bn->add_option("--channels", bspec.channels, "Channels C (without --ckpt)")->capture_default_str();
  bn->add_option("--repeat", bspec.repeat, "Timed repetitions")->capture_default_str();
  bn->add_option("--seed", bspec.seed, "Input seed")->capture_default_str();
  bn->add_option("--out", bn_out, "CSV path");

  // inspect
  auto* in = app.add_subcommand("inspect", "Dump prior, M, S, X̂int, X̂ (LDRT) and M heatmaps");
  fs::path in_ckpt, in_image, in_dump;
  std::string in_desc;
  in->add_option("--ckpt", in_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  in->add_option("--image", in_image, "Degraded PNG")->required()->check(CLI::ExistingFile);
  in->add_option("--descriptor", in_desc, "e.g. types=rain;severity=heavy;coverage=1;seed=0")
      ->required();
  in->add_option("--dump", in_dump, "Output directory")->required();

  // usage
  auto* us = app.add_subcommand("usage", "Expert usage per type: usage.csv + usage.png");
  fs::path us_ckpt, us_data, us_out;
  us->add_option("--ckpt", us_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  us->add_option("--data", us_data, "Labelled manifest")->required()->check(CLI::ExistingFile);
  us->add_option("--out", us_out, "Output directory")->required();

  // regions
  auto* rg = app.add_subcommand("regions", "Top-scoring patches of one expert: region_NNN.png + regions.csv");
  fs::path rg_ckpt, rg_data, rg_out;
  std::size_t rg_expert = 0, rg_top = 8;
  rg->add_option("--ckpt", rg_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  rg->add_option("--data", rg_data, "Manifest")->required()->check(CLI::ExistingFile);
  rg->add_option("--expert", rg_expert, "Expert id")->required();
  rg->add_option("--top", rg_top, "Number of patches")->capture_default_str();
  rg->add_option("--out", rg_out, "Output directory")->required();

  // zero-out
  auto* zo = app.add_subcommand("zero-out", "PSNR after zeroing the least active X̂ channels");
  fs::path zo_ckpt, zo_data, zo_out;
  std::string zo_fractions = "0,0.25,0.5,0.75,1";
  zo->add_option("--ckpt", zo_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  zo->add_option("--data", zo_data, "Manifest")->required()->check(CLI::ExistingFile);
  zo->add_option("--fractions", zo_fractions, "Comma-separated fractions in [0,1]")
      ->capture_default_str();
  zo->add_option("--out", zo_out, "CSV path")->required();

  // ablate-routing
  auto* ab = app.add_subcommand("ablate-routing", "Pixel-wise vs whole-image routing comparison");
  fs::path ab_pixel, ab_image, ab_data, ab_out;
  ab->add_option("--pixel", ab_pixel, "Checkpoint trained with routing=pixel")->required()
      ->check(CLI::ExistingFile);
  ab->add_option("--image", ab_image, "Checkpoint trained with routing=image")->required()
      ->check(CLI::ExistingFile);
  ab->add_option("--data", ab_data, "Manifest")->required()->check(CLI::ExistingFile);
  ab->add_option("--out", ab_out, "CSV path")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::string gc_module;
  bool gc_verbose = false;
  gc->add_option("--module", gc_module, "ops|prior|dmm|experts|rfa|backbone|losses|model");
  gc->add_flag("--verbose", gc_verbose, "One line per check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }
  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (*gen) {
      spec.type_mix = parse_type_mix(types);
      if (!sev_mix.empty()) {
        const auto w = parse_doubles(sev_mix, "--severity-mix");
        if (w.size() != 3) throw ConfigError("--severity-mix needs three weights");
        std::copy(w.begin(), w.end(), spec.severity_mix);
      }
      const auto manifest = build_dataset(spec, gen_out);
      std::printf("wrote %zu pairs to %s\n", manifest.entries.size(),
                  (gen_out / "manifest.tsv").c_str());
    } else if (*tr) {
      ExperimentConfig cfg = tr_config.empty() ? ExperimentConfig{} : load_config(tr_config);
      for (const auto& kv : tr_set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (tr_steps) apply_setting(cfg, "total_steps", std::to_string(*tr_steps));
      if (tr_batch) apply_setting(cfg, "batch_size", std::to_string(*tr_batch));
      if (tr_crop) apply_setting(cfg, "crop", std::to_string(*tr_crop));
      if (tr_every) apply_setting(cfg, "checkpoint_every", std::to_string(*tr_every));
      if (tr_seed) apply_setting(cfg, "seed", std::to_string(*tr_seed));
      if (tr_routing) apply_setting(cfg, "routing", *tr_routing);
      fs::create_directories(tr_out);
      {
        std::ofstream dump(tr_out / "config.txt");
        dump << dump_config(cfg);
      }
      TrainOptions opts;
      opts.resume = tr_resume;
      opts.stop_after = tr_stop_after;
      const std::size_t total = cfg.train.total_steps;
      if (!tr_quiet) {
        opts.progress = [total](const LossLogRow& row) {
          if (row.step % 50 == 0 || row.step + 1 == total) {
            std::printf("step %5zu/%zu  lr %.3e  char %.5f  edge %.5f  total %.5f\n", row.step + 1,
                        total, row.lr, row.loss.charbonnier, row.loss.edge, row.loss.total);
            std::fflush(stdout);
          }
        };
      }
      const auto summary = train(cfg.model, cfg.train, DatasetManifest::load(tr_data), tr_out, opts);
      std::printf("done: %zu steps, checkpoint %s\n", summary.steps_done,
                  summary.last_checkpoint.c_str());
    } else if (*ev) {
      const auto model = load_model(ev_ckpt);
      const auto records = evaluate(model, DatasetManifest::load(ev_data));
      write_eval_csv(ev_out, records);
      print_cells(type_table(records));
      if (by_sev) {
        const auto cells = severity_table(records);
        write_metric_csv(with_suffix(ev_out, "_by_severity"), cells);
        print_cells(cells);
      }
      if (by_type) write_metric_csv(with_suffix(ev_out, "_by_type"), type_table(records));
    } else if (*bn) {
      Tensor<float> bank;
      if (!bn_ckpt.empty()) {
        const auto model = load_model(bn_ckpt);
        bspec.channels = model.config().channels;
        bspec.kernel = model.config().kernel;
        if (model.config().experts == bspec.experts) {
          bank = model.params().find("ldr0.ter.experts")->value;
        }
      }
      const auto r = bench_experts(bspec, bank);
      std::printf("N=%zu K=%zu %zux%zu C=%zu: MAC ratio %.6f, sparse %.3f ms, dense %.3f ms "
                  "(median of %zu)\n",
                  bspec.experts, bspec.top_k, bspec.size, bspec.size, bspec.channels,
                  r.flops.ratio, r.sparse_median_ms, r.dense_median_ms, bspec.repeat);
      if (!bn_out.empty()) write_bench_csv(bn_out, r);
    } else if (*in) {
      const auto model = load_model(in_ckpt);
      inspect(model, read_png(in_image), DegradationDescriptor::parse(in_desc), in_dump);
      std::printf("wrote diagnostics to %s\n", in_dump.c_str());
    } else if (*us) {
      const auto model = load_model(us_ckpt);
      const auto usage = expert_usage(model, DatasetManifest::load(us_data));
      write_usage_csv(us_out / "usage.csv", usage);
      write_usage_chart(us_out / "usage.png", usage);
      const auto s = strongest_specialization(usage);
      std::printf("strongest specialization: expert %zu used %.2fx more for %s than for %s\n",
                  s.expert, s.ratio, s.high_type.c_str(), s.low_type.c_str());
    } else if (*rg) {
      const auto model = load_model(rg_ckpt);
      const auto manifest = DatasetManifest::load(rg_data);
      const auto hits = expert_regions(model, manifest, rg_expert, rg_top);
      write_regions(rg_out, manifest, hits, rg_expert);
      std::printf("wrote %zu patches for expert %zu\n", hits.size(), rg_expert);
    } else if (*zo) {
      const auto model = load_model(zo_ckpt);
      const auto rows = zero_out(model, DatasetManifest::load(zo_data),
                                 parse_doubles(zo_fractions, "--fractions"));
      write_zero_out_csv(zo_out, rows);
      for (const auto& r : rows) {
        std::printf("fraction %.2f (%zu channels): %.2f dB -> %.2f dB\n", r.fraction, r.zeroed,
                    r.psnr_baseline, r.psnr_zeroed);
      }
    } else if (*ab) {
      const bool same = fs::equivalent(ab_pixel, ab_image);
      const auto pixel = load_model(ab_pixel);
      const auto image = same ? load_model(ab_pixel) : load_model(ab_image);
      const auto r = routing_ablation(pixel, image, DatasetManifest::load(ab_data), same);
      write_ablation_csv(ab_out, r);
      std::printf("pixel %.3f dB / %.4f, image %.3f dB / %.4f, delta %+.3f dB / %+.4f\n",
                  r.psnr_pixel, r.ssim_pixel, r.psnr_image, r.ssim_image, r.delta_psnr(),
                  r.delta_ssim());
    } else if (*gc) {
      std::size_t failed = 0, checks = 0;
      const auto results = run_gradcheck(gc_module, {}, [&](const GradCheckResult& r) {
        ++checks;
        if (!r.passed) ++failed;
        if (gc_verbose || !r.passed) {
          std::printf("%s %-10s %-48s checked %5zu excluded %3zu max rel %.2e\n",
                      r.passed ? "PASS" : "FAIL", r.module.c_str(), r.name.c_str(), r.checked,
                      r.excluded, r.max_rel_error);
          std::fflush(stdout);
        }
      });
      std::printf("%zu/%zu gradient checks passed\n", checks - failed, checks);
      return failed == 0 ? 0 : kCheckFailed;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
  return 0;
}
