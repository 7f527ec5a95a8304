// SPDX-License-Identifier: Apache-2.0
#include "ldr/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "ldr/rng.hpp"

namespace ldr {

namespace {

constexpr double kPi = std::numbers::pi;

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

std::size_t severity_index(Severity s) { return static_cast<std::size_t>(s); }

// Stream for one weather layer, independent of the other layers in a mix.
std::uint64_t layer_seed(const DegradationDescriptor& d, WeatherType t) {
  return mix_seed(d.seed, 0x1000 + static_cast<std::uint64_t>(t));
}

std::size_t scaled_count(int base, double coverage) {
  return static_cast<std::size_t>(std::lround(base * coverage));
}

void add_mask(Image& img, const std::vector<float>& mask, double alpha) {
  const std::size_t c = img.dim(2);
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (mask[p] == 0.0f) continue;
    for (std::size_t ch = 0; ch < c; ++ch) {
      img[p * c + ch] = clamp01(img[p * c + ch] + alpha * mask[p]);
    }
  }
}

void render_rain(Image& img, const DegradationDescriptor& d, const SeverityTable& table) {
  static constexpr double kOpacity[3] = {0.3, 0.45, 0.6};
  const std::size_t h = img.dim(0), w = img.dim(1);
  const double scale = static_cast<double>(std::min(h, w)) / 64.0;
  const std::uint64_t seed = layer_seed(d, WeatherType::rain);
  const double angle = Rng(mix_seed(seed, 0)).uniform(-0.35, 0.35);
  const double dy = std::cos(angle), dx = std::sin(angle);
  const std::size_t sev = severity_index(d.severity);
  const std::size_t count = scaled_count(table.rain_streaks[sev], d.coverage);
  std::vector<float> mask(h * w, 0.0f);
  for (std::size_t s = 0; s < count; ++s) {
    Rng r(mix_seed(seed, s + 1));
    const double y0 = r.uniform(0, static_cast<double>(h));
    const double x0 = r.uniform(0, static_cast<double>(w));
    const double len = r.uniform(6, 16) * scale;
    const float intensity = static_cast<float>(r.uniform(0.6, 1.0));
    for (double t = 0; t <= len; t += 0.5) {
      const long y = std::lround(y0 + t * dy), x = std::lround(x0 + t * dx);
      if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) continue;
      float& m = mask[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
      m = std::max(m, intensity);
    }
  }
  add_mask(img, mask, kOpacity[sev]);
}

void render_snow(Image& img, const DegradationDescriptor& d, const SeverityTable& table) {
  static constexpr double kOpacity[3] = {0.5, 0.65, 0.8};
  const std::size_t h = img.dim(0), w = img.dim(1);
  const double scale = static_cast<double>(std::min(h, w)) / 64.0;
  const std::uint64_t seed = layer_seed(d, WeatherType::snow);
  const std::size_t sev = severity_index(d.severity);
  const std::size_t count = scaled_count(table.snow_discs[sev], d.coverage);
  std::vector<float> mask(h * w, 0.0f);
  for (std::size_t s = 0; s < count; ++s) {
    Rng r(mix_seed(seed, s + 1));
    const double cy = r.uniform(0, static_cast<double>(h));
    const double cx = r.uniform(0, static_cast<double>(w));
    const double radius = r.uniform(0.6, 1.6) * scale * (1.0 + 0.3 * static_cast<double>(sev));
    const double bright = r.uniform(0.7, 1.0);
    const long y_lo = std::max(0L, static_cast<long>(cy - radius - 1));
    const long y_hi = std::min(static_cast<long>(h) - 1, static_cast<long>(cy + radius + 1));
    const long x_lo = std::max(0L, static_cast<long>(cx - radius - 1));
    const long x_hi = std::min(static_cast<long>(w) - 1, static_cast<long>(cx + radius + 1));
    for (long y = y_lo; y <= y_hi; ++y)
      for (long x = x_lo; x <= x_hi; ++x) {
        const double dist = std::hypot(y + 0.5 - cy, x + 0.5 - cx);
        const double v = bright * std::clamp(radius + 0.5 - dist, 0.0, 1.0);
        float& m = mask[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
        m = std::max(m, static_cast<float>(v));
      }
  }
  add_mask(img, mask, kOpacity[sev]);
}

void render_haze(Image& img, const DegradationDescriptor& d, const SeverityTable& table) {
  const double t = 1.0 - d.coverage * (1.0 - table.haze_transmission[severity_index(d.severity)]);
  Rng r(mix_seed(layer_seed(d, WeatherType::haze), 0));
  const double base = r.uniform(0.75, 0.95);
  double airlight[3];
  for (auto& a : airlight) a = std::clamp(base + r.uniform(-0.02, 0.02), 0.0, 1.0);
  const std::size_t c = img.dim(2);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = clamp01(img[i] * t + airlight[i % c] * (1.0 - t));
  }
}

void render_raindrops(Image& img, const DegradationDescriptor& d, const SeverityTable& table) {
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  const double scale = static_cast<double>(std::min(h, w)) / 64.0;
  const std::uint64_t seed = layer_seed(d, WeatherType::raindrop);
  const std::size_t sev = severity_index(d.severity);
  const std::size_t count = scaled_count(table.raindrop_blobs[sev], d.coverage);
  if (count == 0) return;
  // Box-blurred, brightened copy seen through the drops.
  Image drop(img.shape());
  const long rad = 2;
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0;
        int n = 0;
        for (long yy = std::max(0L, y - rad); yy <= std::min(static_cast<long>(h) - 1, y + rad); ++yy)
          for (long xx = std::max(0L, x - rad); xx <= std::min(static_cast<long>(w) - 1, x + rad); ++xx) {
            s += img.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), ch);
            ++n;
          }
        drop.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch) = clamp01(1.05 * s / n + 0.06);
      }
  std::vector<float> mask(h * w, 0.0f);
  for (std::size_t s = 0; s < count; ++s) {
    Rng r(mix_seed(seed, s + 1));
    const double cy = r.uniform(0, static_cast<double>(h));
    const double cx = r.uniform(0, static_cast<double>(w));
    const double radius = r.uniform(3, 7) * scale * (1.0 + 0.15 * static_cast<double>(sev));
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double q = std::hypot(y + 0.5 - cy, x + 0.5 - cx) / radius;
        if (q >= 1.0) continue;
        float& m = mask[y * w + x];
        m = std::max(m, static_cast<float>(std::sqrt(1.0 - q * q)));
      }
  }
  for (std::size_t p = 0; p < h * w; ++p) {
    const double m = mask[p];
    if (m == 0.0) continue;
    for (std::size_t ch = 0; ch < c; ++ch) {
      img[p * c + ch] = clamp01(img[p * c + ch] * (1.0 - m) + drop[p * c + ch] * m);
    }
  }
}

}  // namespace

Image gen_clean(std::uint64_t seed, std::size_t height, std::size_t width) {
  Rng rng(mix_seed(seed, 0xc1ea));
  Image img({height, width, 3});
  double c0[3], c1[3];
  for (int ch = 0; ch < 3; ++ch) {
    c0[ch] = rng.uniform(0.15, 0.75);
    c1[ch] = rng.uniform(0.15, 0.75);
  }
  const double theta = rng.uniform(0, 2 * kPi);
  const double fy = rng.uniform(0.5, 2.0), fx = rng.uniform(0.5, 2.0), phase = rng.uniform(0, 2 * kPi);
  const double hf = static_cast<double>(height), wf = static_cast<double>(width);
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j) {
      const double u = i / hf, v = j / wf;
      const double t = 0.5 + 0.5 * ((u - 0.5) * std::cos(theta) + (v - 0.5) * std::sin(theta)) * 1.4;
      const double wave = 0.05 * std::sin(2 * kPi * (fy * u + fx * v) + phase);
      for (int ch = 0; ch < 3; ++ch) img.at(i, j, ch) = clamp01(c0[ch] + (c1[ch] - c0[ch]) * t + wave);
    }

  auto blend = [&](std::size_t i, std::size_t j, const double* col, double alpha) {
    for (int ch = 0; ch < 3; ++ch) {
      float& p = img.at(i, j, ch);
      p = clamp01(p * (1 - alpha) + col[ch] * alpha);
    }
  };
  const int rects = 2 + static_cast<int>(rng.below(4));
  for (int r = 0; r < rects; ++r) {
    double col[3];
    for (auto& v : col) v = rng.uniform(0.05, 0.85);
    const double rh = rng.uniform(0.1, 0.4) * hf, rw = rng.uniform(0.1, 0.4) * wf;
    const double y0 = rng.uniform(-0.1, 0.9) * hf, x0 = rng.uniform(-0.1, 0.9) * wf;
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        if (i + 0.5 >= y0 && i + 0.5 < y0 + rh && j + 0.5 >= x0 && j + 0.5 < x0 + rw) blend(i, j, col, 0.85);
      }
  }
  const int discs = 2 + static_cast<int>(rng.below(4));
  for (int r = 0; r < discs; ++r) {
    double col[3];
    for (auto& v : col) v = rng.uniform(0.05, 0.85);
    const double radius = rng.uniform(0.05, 0.2) * std::min(hf, wf);
    const double cy = rng.uniform(0, hf), cx = rng.uniform(0, wf);
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const double dist = std::hypot(i + 0.5 - cy, j + 0.5 - cx);
        const double alpha = 0.85 * std::clamp(radius + 0.5 - dist, 0.0, 1.0);
        if (alpha > 0) blend(i, j, col, alpha);
      }
  }
  for (auto& v : img.storage()) v = clamp01(v + rng.uniform(-0.02, 0.02));
  return img;
}

Image apply_degradation(const Image& clean, const DegradationDescriptor& d,
                        const SeverityTable& table) {
  d.validate();
  if (clean.rank() != 3 || clean.dim(2) != 3) {
    throw DimensionError("apply_degradation: expected an H×W×3 image, got " + to_string(clean.shape()));
  }
  Image img = clean;
  for (auto type : d.types) {
    switch (type) {
      case WeatherType::none: break;
      case WeatherType::rain: render_rain(img, d, table); break;
      case WeatherType::snow: render_snow(img, d, table); break;
      case WeatherType::haze: render_haze(img, d, table); break;
      case WeatherType::raindrop: render_raindrops(img, d, table); break;
    }
  }
  return img;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "# seed=" << seed << '\n';
  for (const auto& e : entries) {
    out << e.id << '\t' << e.descriptor.to_line() << '\t' << e.clean.generic_string() << '\t'
        << e.degraded.generic_string() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.directory = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  std::set<std::uint64_t> ids;
  bool have_seed = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(lineno) + ": ";
    if (line[0] == '#') {
      if (line.rfind("# seed=", 0) == 0) {
        const std::string v = line.substr(7);
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), m.seed);
        if (ec != std::errc{}) throw IoError(where + "bad seed header");
        have_seed = true;
      }
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 4) throw IoError(where + "expected 4 tab-separated fields");
    ManifestEntry e;
    auto [p, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), e.id);
    if (ec != std::errc{}) throw IoError(where + "bad id '" + fields[0] + "'");
    try {
      e.descriptor = DegradationDescriptor::parse(fields[1]);
    } catch (const ValidationError& err) {
      throw IoError(where + err.what());
    }
    e.clean = fields[2];
    e.degraded = fields[3];
    if (!ids.insert(e.id).second) throw IoError(where + "duplicate id " + fields[0]);
    for (const auto& file : {m.directory / e.clean, m.directory / e.degraded}) {
      if (!std::filesystem::exists(file)) throw IoError(where + "missing file " + file.string());
    }
    m.entries.push_back(std::move(e));
  }
  if (!have_seed) throw IoError(path.string() + ": missing '# seed=' header");
  return m;
}

std::vector<std::size_t> stratify(std::size_t count, const std::vector<double>& weights) {
  double total = 0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("mix weights must be finite and non-negative");
    total += w;
  }
  if (weights.empty() || total <= 0) throw ConfigError("mix weights must not all be zero");
  std::vector<std::size_t> parts(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(count) * weights[i] / total;
    parts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += parts[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < count; ++r, ++assigned) ++parts[remainders[r % remainders.size()].second];
  return parts;
}

std::vector<TypeMixEntry> parse_type_mix(const std::string& text) {
  std::vector<TypeMixEntry> mix;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    TypeMixEntry e;
    const auto colon = item.find(':');
    const std::string types = item.substr(0, colon);
    if (colon != std::string::npos) {
      const std::string w = item.substr(colon + 1);
      auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), e.weight);
      if (ec != std::errc{} || p != w.data() + w.size()) throw ConfigError("bad type weight '" + w + "'");
    }
    std::stringstream ts(types);
    std::string t;
    while (std::getline(ts, t, '+')) e.types.push_back(parse_weather_type(t));
    DegradationDescriptor probe;
    probe.types = e.types;
    probe.validate();
    mix.push_back(std::move(e));
  }
  if (mix.empty()) throw ConfigError("empty type list");
  return mix;
}

std::vector<SamplePair> generate_samples(const DatasetSpec& spec) {
  if (spec.count < 1) throw ConfigError("dataset count must be at least 1");
  if (spec.type_mix.empty()) throw ConfigError("dataset needs at least one weather type");
  std::vector<double> type_w;
  for (const auto& e : spec.type_mix) type_w.push_back(e.weight);
  const auto per_type = stratify(spec.count, type_w);
  const std::vector<double> sev_w(std::begin(spec.severity_mix), std::end(spec.severity_mix));

  std::vector<SamplePair> samples;
  samples.reserve(spec.count);
  const std::uint64_t base = spec.held_out ? kHeldOutIdBase : 0;
  for (std::size_t t = 0; t < spec.type_mix.size(); ++t) {
    const auto per_sev = stratify(per_type[t], sev_w);
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t n = 0; n < per_sev[s]; ++n) {
        SamplePair sp;
        sp.id = base + samples.size();
        sp.descriptor.types = spec.type_mix[t].types;
        sp.descriptor.severity = kAllSeverities[s];
        sp.descriptor.seed = mix_seed(spec.seed, 2 * sp.id + 1);
        Rng cov(mix_seed(spec.seed, 0xc0ffee00ULL ^ sp.id));
        sp.descriptor.coverage = std::round(cov.uniform(spec.min_coverage, 1.0) * 100.0) / 100.0;
        samples.push_back(std::move(sp));
      }
    }
  }
  const long n = static_cast<long>(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    auto& sp = samples[static_cast<std::size_t>(i)];
    sp.clean = quantize8(gen_clean(mix_seed(spec.seed, 2 * sp.id), spec.size, spec.size));
    sp.degraded = quantize8(apply_degradation(sp.clean, sp.descriptor));
  }
  return samples;
}

DatasetManifest build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
  auto samples = generate_samples(spec);
  std::filesystem::create_directories(out_dir / "clean");
  std::filesystem::create_directories(out_dir / "degraded");
  DatasetManifest m;
  m.seed = spec.seed;
  m.directory = out_dir;
  for (const auto& sp : samples) {
    char name[32];
    std::snprintf(name, sizeof(name), "%07llu.png", static_cast<unsigned long long>(sp.id));
    m.entries.push_back({sp.id, sp.descriptor, std::filesystem::path("clean") / name,
                         std::filesystem::path("degraded") / name});
  }
  const long n = static_cast<long>(samples.size());
  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      write_png(m.clean_path(m.entries[static_cast<std::size_t>(i)]), samples[static_cast<std::size_t>(i)].clean);
      write_png(m.degraded_path(m.entries[static_cast<std::size_t>(i)]), samples[static_cast<std::size_t>(i)].degraded);
    } catch (const std::exception& e) {
#pragma omp critical
      if (failure.empty()) failure = e.what();
    }
  }
  if (!failure.empty()) throw IoError(failure);
  m.save(out_dir / "manifest.tsv");
  return m;
}

}  // namespace ldr
