// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ldr/backbone.hpp"
#include "ldr/synthdata.hpp"

namespace ldr {

// Diagnostic experiments over a trained model and a labelled manifest. All
// of them read checkpoints and datasets without modifying them.

struct EvalRecord {
  std::uint64_t id = 0;
  std::string type;
  Severity severity = Severity::slight;
  double psnr_degraded = 0;
  double psnr_restored = 0;
  double ssim_degraded = 0;
  double ssim_restored = 0;
};

/// Restores every degraded image of the manifest (no-grad, full resolution).
std::vector<EvalRecord> evaluate(const Model<float>& model, const DatasetManifest& manifest,
                                 const ForwardOptions& options = {});

/// sample_id,type,severity,psnr_degraded,psnr_restored,ssim_restored
void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRecord>& records);

struct MetricCell {
  std::string type;
  std::optional<Severity> severity;  // unset for per-type rows
  std::size_t count = 0;
  double psnr_degraded = 0, psnr_restored = 0, ssim_degraded = 0, ssim_restored = 0;
};

/// Mean metrics per (type, severity); every severity of every type present
/// gets a row, empty cells keep count 0.
std::vector<MetricCell> severity_table(const std::vector<EvalRecord>& records);
std::vector<MetricCell> type_table(const std::vector<EvalRecord>& records);
/// type,severity,count,psnr_degraded,psnr_restored,ssim_degraded,ssim_restored;
/// metric fields are left empty for cells without samples.
void write_metric_csv(const std::filesystem::path& path, const std::vector<MetricCell>& cells);

struct UsageTable {
  std::size_t experts = 0;
  std::vector<std::string> types;
  std::vector<std::vector<double>> frequency;  // per type, sums to one
  std::vector<std::uint64_t> selections;       // (pixel, k) selections per type
};

/// Fraction of all (pixel, k) selections routed to each expert, per
/// degradation type. Samples labelled `none` are rejected.
UsageTable expert_usage(const Model<float>& model, const DatasetManifest& manifest);
void write_usage_csv(const std::filesystem::path& path, const UsageTable& usage);
void write_usage_chart(const std::filesystem::path& path, const UsageTable& usage);

/// Largest usage ratio of any expert between two types (types with zero
/// usage of that expert are skipped), with the expert and type pair.
struct Specialization {
  double ratio = 0;
  std::size_t expert = 0;
  std::string high_type, low_type;
};
Specialization strongest_specialization(const UsageTable& usage);

struct RegionHit {
  std::uint64_t id = 0;
  std::size_t row = 0, col = 0;  // bottleneck position
  std::size_t y0 = 0, x0 = 0, size = 0;  // image patch
  double score = 0;
};

/// The `top` bottleneck positions (over all samples) with the highest
/// selection score for `expert`, each mapped to an image patch clipped to
/// the frame. Sorted by descending score.
std::vector<RegionHit> expert_regions(const Model<float>& model, const DatasetManifest& manifest,
                                      std::size_t expert, std::size_t top);
/// region_<rank>.png for each hit plus regions.csv; nothing for an empty list.
void write_regions(const std::filesystem::path& dir, const DatasetManifest& manifest,
                   const std::vector<RegionHit>& hits, std::size_t expert);

struct ZeroOutRow {
  double fraction = 0;
  std::size_t zeroed = 0;
  double psnr_baseline = 0;
  double psnr_zeroed = 0;
};

/// Mean L2 norm of each bottleneck channel of X̂ over the manifest.
std::vector<double> channel_activity(const Model<float>& model, const DatasetManifest& manifest);

/// Zeroes the floor(fraction·C) least active channels of X̂ and reports the
/// mean restored PSNR with and without the mask, one row per fraction.
std::vector<ZeroOutRow> zero_out(const Model<float>& model, const DatasetManifest& manifest,
                                 const std::vector<double>& fractions);
void write_zero_out_csv(const std::filesystem::path& path, const std::vector<ZeroOutRow>& rows);

struct AblationReport {
  double psnr_pixel = 0, ssim_pixel = 0;
  double psnr_image = 0, ssim_image = 0;
  double delta_psnr() const { return psnr_pixel - psnr_image; }
  double delta_ssim() const { return ssim_pixel - ssim_image; }
};

/// Compares a pixel-routed and an image-routed model. Unless
/// `same_checkpoint`, each model's stored routing mode must match its role.
AblationReport routing_ablation(const Model<float>& pixelwise, const Model<float>& global,
                                const DatasetManifest& manifest, bool same_checkpoint = false);
void write_ablation_csv(const std::filesystem::path& path, const AblationReport& report);

/// Dumps prior, M, S, X̂int, X̂ (LDRT), the restored image, the prompt and
/// per-channel heatmaps of M into dir.
void inspect(const Model<float>& model, const Image& image, const DegradationDescriptor& d,
             const std::filesystem::path& dir);

/// Min-max normalised grayscale rendering of one channel of an H×W×C tensor.
Image heatmap(const Tensor<float>& t, std::size_t channel);

}  // namespace ldr
