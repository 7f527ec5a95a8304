// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "ldr/analysis.hpp"
#include "ldr/bench.hpp"
#include "ldr/degradation_map.hpp"
#include "ldr/expert_moe.hpp"
#include "ldr/feature_aggregation.hpp"
#include "ldr/gradcheck.hpp"
#include "ldr/image_io.hpp"
#include "ldr/losses.hpp"
#include "ldr/tensor_io.hpp"
#include "ldr/trainer.hpp"
#include "test_util.hpp"

using namespace ldr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + ("failed: " + what);
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Naive same-padded convolution, written independently of the library.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& f, std::size_t stride) {
  const long h = long(x.dim(0)), w = long(x.dim(1)), ci = long(x.dim(2));
  const long k = long(f.dim(0)), co = long(f.dim(3)), p = k / 2, s = long(stride);
  const long ho = (h + 2 * p - k) / s + 1, wo = (w + 2 * p - k) / s + 1;
  Tensor<double> out({std::size_t(ho), std::size_t(wo), std::size_t(co)});
  for (long oy = 0; oy < ho; ++oy)
    for (long ox = 0; ox < wo; ++ox)
      for (long o = 0; o < co; ++o) {
        double acc = 0;
        for (long a = 0; a < k; ++a)
          for (long b = 0; b < k; ++b) {
            const long y = oy * s + a - p, xx = ox * s + b - p;
            if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
            for (long c = 0; c < ci; ++c) acc += x.at(y, xx, c) * f[((a * k + b) * ci + c) * co + o];
          }
        out.at(oy, ox, o) = acc;
      }
  return out;
}

Tensor<double> bank_slice(const Tensor<double>& bank, std::size_t n) {
  const std::size_t k = bank.dim(1), c = bank.dim(3);
  Tensor<double> f({k, k, c, c});
  std::copy_n(bank.storage().begin() + long(n * f.size()), f.size(), f.storage().begin());
  return f;
}

double& at2(Tensor<double>& t, std::size_t i, std::size_t j) { return t[i * t.dim(1) + j]; }
double at2(const Tensor<double>& t, std::size_t i, std::size_t j) { return t[i * t.dim(1) + j]; }

Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  Tensor<double> out({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double acc = 0;
      for (std::size_t t = 0; t < a.dim(1); ++t) acc += at2(a, i, t) * at2(b, t, j);
      at2(out, i, j) = acc;
    }
  return out;
}

// Every output row lies channel-wise within [min, max] of the value rows.
bool within_hull(const Tensor<double>& out, const Tensor<double>& values, double tol) {
  const std::size_t c = values.dim(1);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double lo = at2(values, 0, ch), hi = lo;
    for (std::size_t r = 1; r < values.dim(0); ++r) {
      lo = std::min(lo, at2(values, r, ch));
      hi = std::max(hi, at2(values, r, ch));
    }
    for (std::size_t r = 0; r < out.size() / c; ++r) {
      const double v = out[r * c + ch];
      if (v < lo - tol || v > hi + tol) return false;
    }
  }
  return true;
}

double max_row_sum_error(const Tensor<double>& attention) {
  const std::size_t cols = attention.dim(1);
  double worst = 0;
  for (std::size_t r = 0; r < attention.dim(0); ++r) {
    double s = 0;
    for (std::size_t j = 0; j < cols; ++j) s += at2(attention, r, j);
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

std::vector<std::string> files_under(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir).string());
  std::sort(out.begin(), out.end());
  return out;
}

// Same file set with byte-identical contents.
bool identical_trees(const fs::path& a, const fs::path& b, std::string& why) {
  const auto fa = files_under(a), fb = files_under(b);
  if (fa != fb) {
    why = a.filename().string() + ": file sets differ";
    return false;
  }
  for (const auto& f : fa)
    if (test::slurp(a / f) != test::slurp(b / f)) {
      why = a.filename().string() + "/" + f + " differs";
      return false;
    }
  return true;
}

// --- shared desk-scale state ------------------------------------------------

const fs::path& workdir() {
  static const fs::path dir = test::scratch("acceptance");
  return dir;
}

struct Desk {
  DatasetManifest train, heldout;
  fs::path checkpoint;
  double train_seconds = 0;
};

Desk& desk() {
  static Desk d = [] {
    Desk d;
    DatasetSpec spec;
    spec.count = 240;
    spec.type_mix = parse_type_mix("rain,snow,haze");
    spec.seed = 0;
    d.train = build_dataset(spec, workdir() / "train");
    spec.count = 30;
    spec.seed = 1;
    spec.held_out = true;
    d.heldout = build_dataset(spec, workdir() / "heldout");
    const auto t0 = std::chrono::steady_clock::now();
    const auto summary = train(ModelConfig{}, TrainConfig{}, d.train, workdir() / "run");
    d.train_seconds = seconds_since(t0);
    d.checkpoint = summary.last_checkpoint;
    return d;
  }();
  return d;
}

// --- criteria -----------------------------------------------------------------

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t checked = 0, excluded = 0, checks = 0;
  double worst = 0;
  for (const auto& r : run_gradcheck()) {
    ++checks;
    checked += r.checked;
    excluded += r.excluded;
    worst = std::max(worst, r.max_rel_error);
    o.require(r.passed, r.module + "/" + r.name);
    const double total = double(r.checked + r.excluded);
    o.require(total == 0 || double(r.excluded) / total < 0.01, r.module + "/" + r.name + " exclusions");
  }
  const double secs = seconds_since(t0);
  o.require(secs < 120.0, "runtime under 2 min");
  o.note(std::to_string(checks) + " checks, " + std::to_string(checked) + " entries, " +
         std::to_string(excluded) + " excluded, max rel " + fmt("%.2e", worst) + ", " +
         fmt("%.1f s", secs));
  return o;
}

Outcome sparse_dense_equivalence() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  for (std::uint64_t inst = 0; inst < 20; ++inst) {
    const std::size_t h = 4 + inst % 5, w = 5 + inst % 3, c = 2 + inst % 3, n = 2 + inst % 4;
    const std::size_t kernel = inst % 2 ? 3 : 1;
    Tape<double> tape(false);
    const auto x = test::randn({h, w, c}, 100 + inst);
    const auto bank = test::randn({n, kernel, kernel, c, c}, 200 + inst, 0.5);
    auto scores = tape.softmax_lastdim(tape.constant(test::randn({h, w, n}, 300 + inst)));
    const auto sel = select_topk(tape, scores, n);
    const auto sparse = expert_convolve(tape, tape.constant(x), tape.constant(bank), sel)->value;
    Tensor<double> dense({h, w, c});
    for (std::size_t e = 0; e < n; ++e) {
      const auto resp = naive_conv(x, bank_slice(bank, e), 1);
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t ch = 0; ch < c; ++ch)
            dense.at(i, j, ch) += scores->value.at(i, j, e) * resp.at(i, j, ch);
    }
    worst = std::max(worst, test::max_abs_diff(sparse, dense));

    // K < N: filters no pixel selected cannot influence the output.
    const std::size_t k = 1 + inst % (n - 1);
    const auto part = select_topk(tape, scores, k);
    std::vector<bool> used(n, false);
    for (auto idx : part.indices) used[std::size_t(idx)] = true;
    auto perturbed = bank;
    const std::size_t fsize = bank.size() / n;
    std::size_t untouched = 0;
    for (std::size_t e = 0; e < n; ++e) {
      if (used[e]) continue;
      ++untouched;
      for (std::size_t t = 0; t < fsize; ++t) perturbed[e * fsize + t] += 1.0 + double(t);
    }
    // Per pixel: outputs depend only on that pixel's selected filters.
    auto shared = part;
    std::fill(shared.indices.begin(), shared.indices.end(), 0);
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t r = 0; r < k; ++r) shared.indices[p * k + r] = std::int32_t(r);
    auto bank_hi = bank;
    for (std::size_t e = k; e < n; ++e)
      for (std::size_t t = 0; t < fsize; ++t) bank_hi[e * fsize + t] = -7.0 * double(t + 1);
    const auto base = expert_convolve(tape, tape.constant(x), tape.constant(bank), part)->value;
    const auto pert = expert_convolve(tape, tape.constant(x), tape.constant(perturbed), part)->value;
    const auto lo = expert_convolve(tape, tape.constant(x), tape.constant(bank), shared)->value;
    const auto hi = expert_convolve(tape, tape.constant(x), tape.constant(bank_hi), shared)->value;
    o.require(base.storage() == pert.storage(), "instance " + std::to_string(inst) + " globally unselected");
    o.require(lo.storage() == hi.storage(), "instance " + std::to_string(inst) + " unselected tail");
    (void)untouched;
  }
  const double secs = seconds_since(t0);
  o.require(worst <= 1e-10, "K=N dense match " + fmt("%.2e", worst));
  o.require(secs < 30.0, "runtime under 30 s");
  o.note("20 instances, max |sparse-dense| " + fmt("%.2e", worst) + ", " + fmt("%.2f s", secs));
  return o;
}

Outcome convolution_oracle() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const std::size_t h = 1 + s % 9, w = 1 + (s * 7) % 11, ci = 1 + s % 4, co = 1 + (s * 3) % 5;
    const std::size_t k = 1 + 2 * (s % 3), stride = 1 + s % 2;
    const auto x = test::randn({h, w, ci}, 1000 + s);
    const auto f = test::randn({k, k, ci, co}, 2000 + s);
    Tape<double> tape(false);
    const auto got = tape.conv2d(tape.constant(x), tape.constant(f), stride)->value;
    const auto want = naive_conv(x, f, stride);
    if (got.shape() != want.shape()) {
      o.require(false, "shape for case " + std::to_string(s));
      continue;
    }
    worst = std::max(worst, test::max_abs_diff(got, want));
  }
  const double secs = seconds_since(t0);
  o.require(worst <= 1e-12, "max error " + fmt("%.2e", worst));
  o.require(secs < 30.0, "runtime under 30 s");
  o.note("50 shapes, max error " + fmt("%.2e", worst) + ", " + fmt("%.2f s", secs));
  return o;
}

Outcome attention_contracts() {
  Outcome o;
  double row_err = 0, perm_err = 0;
  bool hull = true;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const std::size_t h = 4, w = 5, c = 6, l = 8;
    ParameterSet<double> params;
    const auto dmm = DmmParams<double>::create(params, "dmm", c, s);
    const auto rfa = RfaParams<double>::create(params, "rfa", c, s);
    Tape<double> tape(false);
    const auto x = tape.constant(test::randn({h, w, c}, 10 + s));
    const auto prior = test::randn({l, c}, 20 + s);
    const auto d = measure_degradation_map(tape, x, tape.constant(prior), dmm);
    row_err = std::max(row_err, max_row_sum_error(d.attention->value));
    hull = hull && within_hull(d.map->value, naive_matmul(prior, dmm.wv->value), 1e-9);

    Tensor<double> rev({l, c});
    for (std::size_t r = 0; r < l; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) at2(rev, r, ch) = at2(prior, l - 1 - r, ch);
    const auto dp = measure_degradation_map(tape, x, tape.constant(rev), dmm);
    perm_err = std::max(perm_err, test::max_abs_diff(d.map->value, dp.map->value));

    const auto x_int = test::randn({h, w, c}, 30 + s);
    const auto a = aggregate(tape, d.map, tape.constant(x_int), rfa);
    row_err = std::max(row_err, max_row_sum_error(a.attention->value));
    auto flat = x_int;
    flat.reshape({h * w, c});
    hull = hull && within_hull(a.attended->value, naive_matmul(flat, rfa.wv->value), 1e-9);
  }
  o.require(row_err <= 1e-6, "attention rows sum to 1");
  o.require(perm_err <= 1e-12, "prior-row permutation invariance");
  o.require(hull, "convex-hull bounds");
  o.note("row-sum error " + fmt("%.1e", row_err) + ", permutation error " + fmt("%.1e", perm_err));
  return o;
}

Outcome loss_metric_anchors() {
  Outcome o;
  Tape<double> tape(false);
  const auto img = test::randu({16, 16, 3}, 5);
  const auto v = tape.constant(img);
  const double c = charbonnier(tape, v, v)->value[0];
  const double t = total_loss(tape, v, img, 0.05).total->value[0];
  Tensor<double> a({16, 16, 3}), b({16, 16, 3});
  a.storage().assign(a.size(), 0.5);
  b.storage().assign(b.size(), 0.6);
  const double p = psnr(a, b);
  const double s = ssim(img, img);
  o.require(c == 1e-4, "charbonnier(I,I) == 1e-4");
  o.require(std::abs(t - 1.05e-4) <= 1e-18, "total(I,I) == 1.05e-4");
  o.require(std::abs(p - 20.0) <= 1e-6, "psnr(0.5, 0.6) == 20 dB");
  o.require(std::abs(s - 1.0) <= 1e-9, "ssim(I,I) == 1");
  o.note("char " + fmt("%.6g", c) + ", total " + fmt("%.6g", t) + ", psnr " + fmt("%.9f", p) +
         ", ssim " + fmt("%.12f", s));
  return o;
}

Outcome flop_accounting() {
  Outcome o;
  ExpertBenchSpec spec;  // N=16, K=2, 32×32, C=32, 20 repeats
  const auto r = bench_experts(spec);
  o.require(r.flops.ratio == 2.0 / 16.0, "MAC ratio exactly K/N");
  o.require(r.flops.sparse_macs * 16 == r.flops.dense_macs * 2, "integer MAC counts in K:N");
  o.require(r.sparse_ms.size() >= 20 && r.dense_ms.size() >= 20, "at least 20 repeats");
  o.require(r.sparse_median_ms < r.dense_median_ms, "sparse faster than dense");
  o.note("ratio " + fmt("%.4f", r.flops.ratio) + ", median sparse " + fmt("%.3f ms", r.sparse_median_ms) +
         " vs dense " + fmt("%.3f ms", r.dense_median_ms));
  return o;
}

Outcome training_efficacy() {
  Outcome o;
  auto& d = desk();
  const auto records = evaluate(load_model(d.checkpoint), d.heldout);
  double pd = 0, pr = 0, sd = 0, sr = 0;
  for (const auto& r : records) {
    pd += r.psnr_degraded;
    pr += r.psnr_restored;
    sd += r.ssim_degraded;
    sr += r.ssim_restored;
  }
  const double n = double(records.size());
  pd /= n, pr /= n, sd /= n, sr /= n;
  o.require(pr >= pd + 3.0, "restored PSNR >= degraded + 3 dB");
  o.require(sr > sd, "restored SSIM > degraded SSIM");
  o.require(d.train_seconds <= 1800.0, "training within 30 min");
  o.note("held-out PSNR " + fmt("%.2f", pd) + " -> " + fmt("%.2f dB", pr) + ", SSIM " + fmt("%.4f", sd) +
         " -> " + fmt("%.4f", sr) + ", training " + fmt("%.0f s", d.train_seconds));
  return o;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.channels = 8;
  m.experts = 4;
  m.top_k = 2;
  m.text_width = 32;
  return m;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.batch_size = 2;
  t.total_steps = 8;
  t.crop = 32;
  t.checkpoint_every = 4;
  return t;
}

const DatasetManifest& tiny_data() {
  static const DatasetManifest m = [] {
    DatasetSpec spec;
    spec.count = 6;
    spec.type_mix = parse_type_mix("rain,snow,haze");
    spec.size = 32;
    spec.seed = 7;
    return build_dataset(spec, workdir() / "tiny");
  }();
  return m;
}

Outcome schedule_optimizer() {
  Outcome o;
  TrainConfig cfg;
  o.require(cosine_lr(0, cfg) == 2e-4, "cosine_lr(0) == 2e-4");
  o.require(cosine_lr(cfg.total_steps, cfg) == 1e-6, "cosine_lr(T) == 1e-6");

  ParameterSet<float> params;
  params.create("w", {5, 7}, 7, 1);
  params.create("b", {7}, 0, 1);
  std::vector<std::vector<float>> before;
  for (const auto& [name, p] : params.entries()) before.push_back(p->value.storage());
  auto opt = OptimState<float>::create(params);
  for (int i = 0; i < 10; ++i) adam_step(params, opt, 1e-3);
  bool fixed = true;
  for (std::size_t i = 0; i < before.size(); ++i)
    fixed = fixed && params.entries()[i].second->value.storage() == before[i];
  o.require(fixed, "Adam zero-gradient fixed point");

  const auto full = workdir() / "resume_full", part = workdir() / "resume_part";
  train(tiny_model(), tiny_train(), tiny_data(), full);
  TrainOptions stop;
  stop.stop_after = 4;
  train(tiny_model(), tiny_train(), tiny_data(), part, stop);
  TrainOptions resume;
  resume.resume = part / "step_4.ldrc";
  train(tiny_model(), tiny_train(), tiny_data(), part, resume);
  o.require(test::slurp(full / "step_8.ldrc") == test::slurp(part / "step_8.ldrc"),
            "resumed checkpoint bitwise equal");
  o.require(test::slurp(full / "loss.csv") == test::slurp(part / "loss.csv"), "resumed loss log equal");

  const auto model = load_model(full / "step_8.ldrc");
  save_checkpoint(workdir() / "resaved.ldrc", model.state());
  const auto again = Model<float>::from_state(load_checkpoint(workdir() / "resaved.ldrc"));
  bool same = true;
  const auto sa = model.state(), sb = again.state();
  same = sa.size() == sb.size();
  for (std::size_t i = 0; same && i < sa.size(); ++i)
    same = sa[i].first == sb[i].first && sa[i].second.storage() == sb[i].second.storage();
  o.require(same, "save/load round trip bitwise");
  o.note("lr endpoints exact, Adam fixed point holds, stop@4 + resume == uninterrupted 8 steps");
  return o;
}

// Writes every analysis artefact for `model` into dir.
void analysis_outputs(const Model<float>& model, const DatasetManifest& data, const fs::path& dir) {
  fs::create_directories(dir);
  const auto records = evaluate(model, data);
  write_eval_csv(dir / "eval.csv", records);
  write_metric_csv(dir / "by_severity.csv", severity_table(records));
  write_metric_csv(dir / "by_type.csv", type_table(records));
  const auto usage = expert_usage(model, data);
  write_usage_csv(dir / "usage.csv", usage);
  write_usage_chart(dir / "usage.png", usage);
  write_regions(dir / "regions", data, expert_regions(model, data, 0, 4), 0);
  write_zero_out_csv(dir / "zero_out.csv", zero_out(model, data, {0.0, 0.5, 1.0}));
  write_ablation_csv(dir / "ablation.csv", routing_ablation(model, model, data, true));
  const auto& e = data.entries.front();
  inspect(model, read_png(data.degraded_path(e)), e.descriptor, dir / "inspect");
}

Outcome determinism() {
  Outcome o;
  std::string why;
  const auto a = workdir() / "det_train_a", b = workdir() / "det_train_b";
  train(tiny_model(), tiny_train(), tiny_data(), a);
  train(tiny_model(), tiny_train(), tiny_data(), b);
  o.require(identical_trees(a, b, why), "train outputs identical (" + why + ")");

  DatasetSpec spec;
  spec.count = 4;
  spec.type_mix = parse_type_mix("rain,snow+haze");
  spec.size = 32;
  build_dataset(spec, workdir() / "det_data_a");
  build_dataset(spec, workdir() / "det_data_b");
  o.require(identical_trees(workdir() / "det_data_a", workdir() / "det_data_b", why),
            "gen-data outputs identical (" + why + ")");

  const auto model = load_model(a / "step_8.ldrc");
  analysis_outputs(model, tiny_data(), workdir() / "det_an_a");
  analysis_outputs(model, tiny_data(), workdir() / "det_an_b");
  o.require(identical_trees(workdir() / "det_an_a", workdir() / "det_an_b", why),
            "analysis outputs identical (" + why + ")");

  ExpertBenchSpec bs;
  bs.repeat = 1;
  o.require(bench_experts(bs).flops.sparse_macs == bench_experts(bs).flops.sparse_macs, "bench MACs");
  o.note(std::to_string(files_under(a).size() + files_under(workdir() / "det_an_a").size()) +
         " files compared byte-for-byte");
  return o;
}

Outcome analysis_validity() {
  Outcome o;
  auto& d = desk();
  const auto model = load_model(d.checkpoint);
  const auto usage = expert_usage(model, d.heldout);
  double worst = 0;
  for (const auto& row : usage.frequency)
    worst = std::max(worst, std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0));
  o.require(worst <= 1e-6, "usage rows sum to 1");
  o.require(usage.experts == model.config().experts, "usage has N columns");

  const auto plain = evaluate(model, d.heldout);
  ForwardOptions ones;
  ones.channel_mask.assign(model.config().channels, 1.0);
  const auto masked = evaluate(model, d.heldout, ones);
  bool neutral = true;
  for (std::size_t i = 0; i < plain.size(); ++i)
    neutral = neutral && plain[i].psnr_restored == masked[i].psnr_restored &&
              plain[i].ssim_restored == masked[i].ssim_restored;
  const auto rows = zero_out(model, d.heldout, {0.0, 1.0});
  neutral = neutral && rows[0].zeroed == 0 && rows[0].psnr_zeroed == rows[0].psnr_baseline;
  o.require(neutral, "zero_out(0) bitwise neutral");

  std::size_t total = 0;
  const auto cells = severity_table(plain);
  for (const auto& c : cells) total += c.count;
  o.require(total == d.heldout.entries.size(), "severity cell counts sum to manifest size");

  const auto spec = strongest_specialization(usage);
  o.note("strongest specialization: expert " + std::to_string(spec.expert) + " " + spec.high_type +
         "/" + spec.low_type + " = " + fmt("%.2fx", spec.ratio) +
         (spec.ratio >= 1.5 ? " (>= 1.5x)" : " (below the expected 1.5x)"));
  o.note("zero-out fraction 1 drop " + fmt("%.2f dB", rows[1].psnr_baseline - rows[1].psnr_zeroed));
  for (const auto& c : cells)
    if (c.count > 0 && c.severity && *c.severity != Severity::moderate)
      o.note(c.type + "/" + std::string(to_string(*c.severity)) + " restored " +
             fmt("%.2f dB", c.psnr_restored));
  return o;
}

}  // namespace

int main() {
  omp_set_num_threads(1);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"sparse/dense equivalence", sparse_dense_equivalence},
      {"convolution oracle", convolution_oracle},
      {"attention contracts", attention_contracts},
      {"loss/metric anchors", loss_metric_anchors},
      {"FLOP accounting", flop_accounting},
      {"desk-scale training efficacy", training_efficacy},
      {"schedule/optimizer anchors", schedule_optimizer},
      {"determinism", determinism},
      {"analysis validity", analysis_validity},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::printf("criterion %2zu %-30s %s  [%.1f s] %s\n", i + 1, criteria[i].first,
                o.pass ? "PASS" : "FAIL", seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
