// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ldr/image_io.hpp"
#include "ldr/prior.hpp"

namespace ldr {

/// Per-severity strengths, indexed slight/moderate/heavy.
struct SeverityTable {
  int rain_streaks[3] = {20, 60, 150};
  int snow_discs[3] = {30, 100, 250};
  double haze_transmission[3] = {0.8, 0.6, 0.35};
  int raindrop_blobs[3] = {3, 8, 16};
};

/// Procedural scene: smooth colour gradient, random rectangles and discs, and
/// mild texture noise. Deterministic in `seed`.
Image gen_clean(std::uint64_t seed, std::size_t height, std::size_t width);

/// Renders the descriptor's weather onto a clean image (types applied in list
/// order, output clamped to [0,1]). All randomness comes from d.seed.
Image apply_degradation(const Image& clean, const DegradationDescriptor& d,
                        const SeverityTable& table = {});

struct SamplePair {
  std::uint64_t id = 0;
  Image clean;
  Image degraded;
  DegradationDescriptor descriptor;
};

struct ManifestEntry {
  std::uint64_t id = 0;
  DegradationDescriptor descriptor;
  std::filesystem::path clean;     // as written in the manifest (relative to its directory)
  std::filesystem::path degraded;
};

/// `# seed=<u64>` header followed by
/// `id<TAB>descriptor<TAB>clean.png<TAB>degraded.png` lines.
struct DatasetManifest {
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;
  std::filesystem::path directory;  // base for relative paths

  std::filesystem::path clean_path(const ManifestEntry& e) const { return directory / e.clean; }
  std::filesystem::path degraded_path(const ManifestEntry& e) const { return directory / e.degraded; }

  void save(const std::filesystem::path& path) const;
  /// Parses and checks that ids are unique and every referenced file exists.
  static DatasetManifest load(const std::filesystem::path& path);
};

/// One weighted entry of the type mix; `types` may hold several types for a
/// mixed-weather entry.
struct TypeMixEntry {
  std::vector<WeatherType> types;
  double weight = 1.0;
};

struct DatasetSpec {
  std::size_t count = 30;
  std::vector<TypeMixEntry> type_mix;
  double severity_mix[3] = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::uint64_t seed = 0;
  std::size_t size = 96;     // square images
  bool held_out = false;     // ids start at kHeldOutIdBase
  double min_coverage = 0.6; // coverage ~ U[min_coverage, 1], two decimals
};

inline constexpr std::uint64_t kHeldOutIdBase = 1'000'000;

/// Splits `count` across weights by largest remainder (ties to the earlier
/// entry); the parts always sum to count.
std::vector<std::size_t> stratify(std::size_t count, const std::vector<double>& weights);

/// Parses "rain,snow,haze" or "rain:2,rain+haze:1".
std::vector<TypeMixEntry> parse_type_mix(const std::string& text);

/// Generates pairs in memory (no files).
std::vector<SamplePair> generate_samples(const DatasetSpec& spec);

/// Writes clean/ and degraded/ PNGs plus manifest.tsv under out_dir.
DatasetManifest build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

}  // namespace ldr
