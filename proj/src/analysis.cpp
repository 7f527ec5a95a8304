// SPDX-License-Identifier: Apache-2.0
#include "ldr/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "ldr/errors.hpp"
#include "ldr/image_io.hpp"
#include "ldr/losses.hpp"
#include "ldr/tensor_io.hpp"

namespace ldr {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Runs the model without recording a graph.
ForwardResult<float> run(const Model<float>& model, const Image& image,
                         const DegradationDescriptor& d, const ForwardOptions& options = {}) {
  Tape<float> tape(false);
  return model.forward(tape, image, d, options);
}

template <typename Fn>
void for_each_sample(const DatasetManifest& manifest, Fn&& fn) {
  for (const auto& e : manifest.entries) fn(e, read_png(manifest.degraded_path(e)));
}

double mean_restored_psnr(const Model<float>& model, const DatasetManifest& manifest,
                          const ForwardOptions& options) {
  const auto records = evaluate(model, manifest, options);
  if (records.empty()) throw ValidationError("manifest has no samples");
  double sum = 0;
  for (const auto& r : records) sum += r.psnr_restored;
  return sum / static_cast<double>(records.size());
}

void accumulate(MetricCell& cell, const EvalRecord& r) {
  ++cell.count;
  cell.psnr_degraded += r.psnr_degraded;
  cell.psnr_restored += r.psnr_restored;
  cell.ssim_degraded += r.ssim_degraded;
  cell.ssim_restored += r.ssim_restored;
}

void finish(MetricCell& cell) {
  if (cell.count == 0) return;
  const double n = static_cast<double>(cell.count);
  cell.psnr_degraded /= n;
  cell.psnr_restored /= n;
  cell.ssim_degraded /= n;
  cell.ssim_restored /= n;
}

// Labels in first-seen order.
std::vector<std::string> type_labels(const std::vector<EvalRecord>& records) {
  std::vector<std::string> labels;
  for (const auto& r : records) {
    if (std::find(labels.begin(), labels.end(), r.type) == labels.end()) labels.push_back(r.type);
  }
  return labels;
}

}  // namespace

std::vector<EvalRecord> evaluate(const Model<float>& model, const DatasetManifest& manifest,
                                 const ForwardOptions& options) {
  std::vector<EvalRecord> records;
  records.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    const Image clean = read_png(manifest.clean_path(e));
    const Image degraded = read_png(manifest.degraded_path(e));
    if (clean.shape() != degraded.shape()) {
      throw DimensionError("sample " + std::to_string(e.id) + ": clean " + to_string(clean.shape()) +
                           " vs degraded " + to_string(degraded.shape()));
    }
    const Image restored = run(model, degraded, e.descriptor, options).restored->value;
    EvalRecord r;
    r.id = e.id;
    r.type = e.descriptor.type_label();
    r.severity = e.descriptor.severity;
    r.psnr_degraded = psnr(degraded, clean);
    r.psnr_restored = psnr(restored, clean);
    r.ssim_degraded = ssim(degraded, clean);
    r.ssim_restored = ssim(restored, clean);
    records.push_back(std::move(r));
  }
  return records;
}

void write_eval_csv(const fs::path& path, const std::vector<EvalRecord>& records) {
  auto out = open_out(path);
  out << "sample_id,type,severity,psnr_degraded,psnr_restored,ssim_restored\n";
  for (const auto& r : records) {
    out << r.id << ',' << r.type << ',' << to_string(r.severity) << ',' << fmt(r.psnr_degraded)
        << ',' << fmt(r.psnr_restored) << ',' << fmt(r.ssim_restored) << '\n';
  }
}

std::vector<MetricCell> severity_table(const std::vector<EvalRecord>& records) {
  std::vector<MetricCell> cells;
  for (const auto& label : type_labels(records)) {
    for (Severity s : kAllSeverities) {
      MetricCell cell{label, s};
      for (const auto& r : records) {
        if (r.type == label && r.severity == s) accumulate(cell, r);
      }
      finish(cell);
      cells.push_back(cell);
    }
  }
  return cells;
}

std::vector<MetricCell> type_table(const std::vector<EvalRecord>& records) {
  std::vector<MetricCell> cells;
  for (const auto& label : type_labels(records)) {
    MetricCell cell{label, std::nullopt};
    for (const auto& r : records) {
      if (r.type == label) accumulate(cell, r);
    }
    finish(cell);
    cells.push_back(cell);
  }
  return cells;
}

void write_metric_csv(const fs::path& path, const std::vector<MetricCell>& cells) {
  auto out = open_out(path);
  out << "type,severity,count,psnr_degraded,psnr_restored,ssim_degraded,ssim_restored\n";
  for (const auto& c : cells) {
    out << c.type << ',' << (c.severity ? std::string(to_string(*c.severity)) : "all") << ','
        << c.count;
    if (c.count == 0) {
      out << ",,,,\n";
    } else {
      out << ',' << fmt(c.psnr_degraded) << ',' << fmt(c.psnr_restored) << ','
          << fmt(c.ssim_degraded) << ',' << fmt(c.ssim_restored) << '\n';
    }
  }
}

UsageTable expert_usage(const Model<float>& model, const DatasetManifest& manifest) {
  UsageTable usage;
  usage.experts = model.config().experts;
  std::vector<std::vector<std::uint64_t>> counts;
  for_each_sample(manifest, [&](const ManifestEntry& e, const Image& image) {
    if (e.descriptor.types == std::vector<WeatherType>{WeatherType::none}) {
      throw ValidationError("sample " + std::to_string(e.id) +
                            " has no degradation label; expert usage needs labelled samples");
    }
    const std::string label = e.descriptor.type_label();
    auto it = std::find(usage.types.begin(), usage.types.end(), label);
    const auto row = static_cast<std::size_t>(it - usage.types.begin());
    if (it == usage.types.end()) {
      usage.types.push_back(label);
      counts.emplace_back(usage.experts, 0);
    }
    const auto r = run(model, image, e.descriptor);
    for (std::int32_t idx : r.diagnostics.selection.indices) ++counts[row][static_cast<std::size_t>(idx)];
  });
  if (usage.types.empty()) throw ValidationError("manifest has no samples");
  for (const auto& row : counts) {
    const std::uint64_t total = std::accumulate(row.begin(), row.end(), std::uint64_t{0});
    usage.selections.push_back(total);
    std::vector<double> freq(usage.experts);
    for (std::size_t e = 0; e < usage.experts; ++e) {
      freq[e] = static_cast<double>(row[e]) / static_cast<double>(total);
    }
    usage.frequency.push_back(std::move(freq));
  }
  return usage;
}

void write_usage_csv(const fs::path& path, const UsageTable& usage) {
  auto out = open_out(path);
  out << "type,selections";
  for (std::size_t e = 0; e < usage.experts; ++e) out << ",expert_" << e;
  out << '\n';
  for (std::size_t t = 0; t < usage.types.size(); ++t) {
    out << usage.types[t] << ',' << usage.selections[t];
    for (double f : usage.frequency[t]) out << ',' << fmt(f);
    out << '\n';
  }
}

void write_usage_chart(const fs::path& path, const UsageTable& usage) {
  // Grouped bars: one group per expert, one bar per type.
  static constexpr float palette[][3] = {{0.85f, 0.30f, 0.25f}, {0.25f, 0.55f, 0.85f},
                                         {0.35f, 0.70f, 0.35f}, {0.90f, 0.65f, 0.20f},
                                         {0.55f, 0.40f, 0.75f}, {0.40f, 0.40f, 0.40f}};
  const std::size_t types = std::max<std::size_t>(usage.types.size(), 1);
  const std::size_t bar = 6, gap = 8, height = 200, margin = 10;
  const std::size_t group = types * bar + gap;
  const std::size_t width = 2 * margin + usage.experts * group;
  Image img({height + 2 * margin, width, 3}, 1.0f);
  double peak = 0;
  for (const auto& row : usage.frequency) {
    for (double f : row) peak = std::max(peak, f);
  }
  if (peak <= 0) peak = 1;
  for (std::size_t e = 0; e < usage.experts; ++e) {
    for (std::size_t t = 0; t < usage.types.size(); ++t) {
      const auto h = static_cast<std::size_t>(std::lround(usage.frequency[t][e] / peak * height));
      const auto* colour = palette[t % std::size(palette)];
      const std::size_t x0 = margin + e * group + t * bar;
      for (std::size_t y = margin + height - h; y < margin + height; ++y) {
        for (std::size_t x = x0; x < x0 + bar - 1; ++x) {
          for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = colour[c];
        }
      }
    }
  }
  for (std::size_t x = margin; x + margin < width; ++x) {
    for (std::size_t c = 0; c < 3; ++c) img.at(margin + height, x, c) = 0.0f;
  }
  write_png(path, img);
}

Specialization strongest_specialization(const UsageTable& usage) {
  Specialization best;
  for (std::size_t e = 0; e < usage.experts; ++e) {
    for (std::size_t a = 0; a < usage.types.size(); ++a) {
      for (std::size_t b = 0; b < usage.types.size(); ++b) {
        const double hi = usage.frequency[a][e], lo = usage.frequency[b][e];
        if (a == b || lo <= 0) continue;
        if (hi / lo > best.ratio) best = {hi / lo, e, usage.types[a], usage.types[b]};
      }
    }
  }
  return best;
}

std::vector<RegionHit> expert_regions(const Model<float>& model, const DatasetManifest& manifest,
                                      std::size_t expert, std::size_t top) {
  const auto& cfg = model.config();
  if (expert >= cfg.experts) {
    throw ConfigError("expert " + std::to_string(expert) + " out of range [0, " +
                      std::to_string(cfg.experts) + ")");
  }
  std::vector<RegionHit> hits;
  if (top == 0) return hits;
  const std::size_t stride = std::size_t{1} << cfg.levels;
  const std::size_t patch = 4 * stride;
  for_each_sample(manifest, [&](const ManifestEntry& e, const Image& image) {
    const auto r = run(model, image, e.descriptor);
    const auto& s = r.diagnostics.scores->value;
    const std::size_t h = r.diagnostics.selection.height, w = r.diagnostics.selection.width;
    const bool global = s.size() == cfg.experts;  // image routing: one score for all pixels
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        RegionHit hit;
        hit.id = e.id;
        hit.row = i;
        hit.col = j;
        hit.score = global ? s[expert] : s[(i * w + j) * cfg.experts + expert];
        hit.size = std::min({patch, image.dim(0), image.dim(1)});
        const auto place = [&](std::size_t centre, std::size_t extent) {
          const std::size_t half = hit.size / 2;
          const std::size_t start = centre > half ? centre - half : 0;
          return std::min(start, extent - hit.size);
        };
        hit.y0 = place(i * stride + stride / 2, image.dim(0));
        hit.x0 = place(j * stride + stride / 2, image.dim(1));
        hits.push_back(hit);
      }
    }
  });
  // Stable order: score descending, then sample, row, column.
  const std::size_t keep = std::min(top, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                    [](const RegionHit& a, const RegionHit& b) {
                      if (a.score != b.score) return a.score > b.score;
                      if (a.id != b.id) return a.id < b.id;
                      if (a.row != b.row) return a.row < b.row;
                      return a.col < b.col;
                    });
  hits.resize(keep);
  return hits;
}

void write_regions(const fs::path& dir, const DatasetManifest& manifest,
                   const std::vector<RegionHit>& hits, std::size_t expert) {
  if (hits.empty()) return;
  fs::create_directories(dir);
  std::map<std::uint64_t, const ManifestEntry*> by_id;
  for (const auto& e : manifest.entries) by_id[e.id] = &e;
  auto csv = open_out(dir / "regions.csv");
  csv << "rank,expert,sample_id,row,col,y0,x0,size,score,file\n";
  for (std::size_t rank = 0; rank < hits.size(); ++rank) {
    const auto& hit = hits[rank];
    const auto it = by_id.find(hit.id);
    if (it == by_id.end()) throw ValidationError("sample " + std::to_string(hit.id) + " not in manifest");
    const Image image = read_png(manifest.degraded_path(*it->second));
    Image crop({hit.size, hit.size, 3});
    for (std::size_t y = 0; y < hit.size; ++y) {
      for (std::size_t x = 0; x < hit.size; ++x) {
        for (std::size_t c = 0; c < 3; ++c) crop.at(y, x, c) = image.at(hit.y0 + y, hit.x0 + x, c);
      }
    }
    char name[32];
    std::snprintf(name, sizeof name, "region_%03zu.png", rank);
    write_png(dir / name, crop);
    csv << rank << ',' << expert << ',' << hit.id << ',' << hit.row << ',' << hit.col << ','
        << hit.y0 << ',' << hit.x0 << ',' << hit.size << ',' << fmt(hit.score) << ',' << name
        << '\n';
  }
}

std::vector<double> channel_activity(const Model<float>& model, const DatasetManifest& manifest) {
  const std::size_t c = model.config().channels;
  std::vector<double> activity(c, 0.0);
  std::size_t samples = 0;
  for_each_sample(manifest, [&](const ManifestEntry& e, const Image& image) {
    const auto& x = run(model, image, e.descriptor).diagnostics.x_hat->value;
    std::vector<double> sq(c, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) sq[i % c] += double(x[i]) * double(x[i]);
    for (std::size_t k = 0; k < c; ++k) activity[k] += std::sqrt(sq[k]);
    ++samples;
  });
  if (samples == 0) throw ValidationError("manifest has no samples");
  for (auto& a : activity) a /= static_cast<double>(samples);
  return activity;
}

std::vector<ZeroOutRow> zero_out(const Model<float>& model, const DatasetManifest& manifest,
                                 const std::vector<double>& fractions) {
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("zero-out fraction " + fmt(f) + " outside [0, 1]");
  }
  const std::size_t c = model.config().channels;
  const auto activity = channel_activity(model, manifest);
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return activity[a] < activity[b]; });
  const double baseline = mean_restored_psnr(model, manifest, {});
  std::vector<ZeroOutRow> rows;
  for (double f : fractions) {
    ZeroOutRow row;
    row.fraction = f;
    row.zeroed = static_cast<std::size_t>(std::floor(f * static_cast<double>(c) + 1e-9));
    row.psnr_baseline = baseline;
    if (row.zeroed == 0) {
      row.psnr_zeroed = baseline;
    } else {
      ForwardOptions options;
      options.channel_mask.assign(c, 1.0);
      for (std::size_t k = 0; k < row.zeroed; ++k) options.channel_mask[order[k]] = 0.0;
      row.psnr_zeroed = mean_restored_psnr(model, manifest, options);
    }
    rows.push_back(row);
  }
  return rows;
}

void write_zero_out_csv(const fs::path& path, const std::vector<ZeroOutRow>& rows) {
  auto out = open_out(path);
  out << "fraction,zeroed_channels,psnr_baseline,psnr_zeroed,psnr_drop\n";
  for (const auto& r : rows) {
    out << fmt(r.fraction) << ',' << r.zeroed << ',' << fmt(r.psnr_baseline) << ','
        << fmt(r.psnr_zeroed) << ',' << fmt(r.psnr_baseline - r.psnr_zeroed) << '\n';
  }
}

AblationReport routing_ablation(const Model<float>& pixelwise, const Model<float>& global,
                                const DatasetManifest& manifest, bool same_checkpoint) {
  if (!same_checkpoint) {
    if (pixelwise.config().routing != Routing::pixel) {
      throw ConfigError("pixel-routing checkpoint was trained with routing=" +
                        std::string(to_string(pixelwise.config().routing)));
    }
    if (global.config().routing != Routing::image) {
      throw ConfigError("image-routing checkpoint was trained with routing=" +
                        std::string(to_string(global.config().routing)));
    }
  }
  const auto mean = [&](const Model<float>& m, double& p, double& s) {
    const auto records = evaluate(m, manifest);
    if (records.empty()) throw ValidationError("manifest has no samples");
    for (const auto& r : records) {
      p += r.psnr_restored;
      s += r.ssim_restored;
    }
    p /= static_cast<double>(records.size());
    s /= static_cast<double>(records.size());
  };
  AblationReport report;
  mean(pixelwise, report.psnr_pixel, report.ssim_pixel);
  mean(global, report.psnr_image, report.ssim_image);
  return report;
}

void write_ablation_csv(const fs::path& path, const AblationReport& r) {
  auto out = open_out(path);
  out << "routing,psnr,ssim\n";
  out << "pixel," << fmt(r.psnr_pixel) << ',' << fmt(r.ssim_pixel) << '\n';
  out << "image," << fmt(r.psnr_image) << ',' << fmt(r.ssim_image) << '\n';
  out << "delta," << fmt(r.delta_psnr()) << ',' << fmt(r.delta_ssim()) << '\n';
}

Image heatmap(const Tensor<float>& t, std::size_t channel) {
  if (t.rank() != 3) throw DimensionError("heatmap expects H×W×C, got " + to_string(t.shape()));
  if (channel >= t.dim(2)) throw DimensionError("channel " + std::to_string(channel) + " out of range");
  Image out({t.dim(0), t.dim(1), 1});
  float lo = t.at(0, 0, channel), hi = lo;
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) {
      lo = std::min(lo, t.at(i, j, channel));
      hi = std::max(hi, t.at(i, j, channel));
    }
  }
  const float span = hi > lo ? hi - lo : 1.0f;
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) out.at(i, j, 0) = (t.at(i, j, channel) - lo) / span;
  }
  return out;
}

void inspect(const Model<float>& model, const Image& image, const DegradationDescriptor& d,
             const fs::path& dir) {
  fs::create_directories(dir);
  const auto r = run(model, image, d);
  const auto& diag = r.diagnostics;
  save_ldrt(dir / "prior.ldrt", diag.prior->value);
  save_ldrt(dir / "M.ldrt", diag.map->value);
  save_ldrt(dir / "S.ldrt", diag.scores->value);
  save_ldrt(dir / "x_int.ldrt", diag.x_int->value);
  save_ldrt(dir / "x_hat.ldrt", diag.x_hat->value);
  write_png(dir / "restored.png", r.restored->value);
  const auto& m = diag.map->value;
  fs::create_directories(dir / "heatmaps");
  for (std::size_t c = 0; c < m.dim(2); ++c) {
    char name[32];
    std::snprintf(name, sizeof name, "M_c%02zu.png", c);
    write_png(dir / "heatmaps" / name, heatmap(m, c));
  }
  auto prompt = open_out(dir / "prompt.txt");
  prompt << d.to_line() << '\n' << format_prompt(d) << '\n';
}

}  // namespace ldr
