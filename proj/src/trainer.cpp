// SPDX-License-Identifier: Apache-2.0
#include "ldr/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "ldr/rng.hpp"

namespace ldr {

void TrainConfig::validate() const {
  if (!(lr_start > lr_end && lr_end > 0)) {
    throw ConfigError("learning rates must satisfy lr_start > lr_end > 0");
  }
  if (total_steps < 1) throw ConfigError("total_steps must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (crop < 1) throw ConfigError("crop must be positive");
  if (!(lambda >= 0)) throw ConfigError("lambda must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0)) {
    throw ConfigError("Adam requires 0 <= beta < 1 and eps > 0");
  }
}

double cosine_lr(std::size_t step, const TrainConfig& cfg) {
  if (step > cfg.total_steps) {
    throw ContractError("cosine_lr: step " + std::to_string(step) + " beyond total_steps " +
                        std::to_string(cfg.total_steps));
  }
  const double progress = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
OptimState<T> OptimState<T>::create(const ParameterSet<T>& params) {
  OptimState s;
  for (const auto& [name, v] : params.entries()) {
    s.m.emplace_back(v->value.size(), T(0));
    s.v.emplace_back(v->value.size(), T(0));
  }
  return s;
}

template <typename T>
void adam_step(ParameterSet<T>& params, OptimState<T>& opt, double lr, double beta1, double beta2,
               double eps) {
  auto& entries = params.entries();
  if (opt.m.size() != entries.size() || opt.v.size() != entries.size()) {
    throw ContractError("adam_step: optimizer state tracks " + std::to_string(opt.m.size()) +
                        " tensors, model has " + std::to_string(entries.size()));
  }
  opt.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(opt.t));
  for (std::size_t e = 0; e < entries.size(); ++e) {
    auto& node = *entries[e].second;
    auto& m = opt.m[e];
    auto& v = opt.v[e];
    if (m.size() != node.value.size() || v.size() != node.value.size()) {
      throw ContractError("adam_step: moment buffers do not match " + entries[e].first);
    }
    const bool has = node.has_grad();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = has ? static_cast<double>(node.grad[i]) : 0.0;
      const double mi = beta1 * m[i] + (1.0 - beta1) * g;
      const double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
      node.value[i] = static_cast<T>(static_cast<double>(node.value[i]) - step);
    }
  }
}

namespace {

Tensor<float> u64_entry(std::uint64_t v) {
  std::vector<float> chunks(4);
  for (int i = 0; i < 4; ++i) chunks[i] = static_cast<float>((v >> (16 * i)) & 0xffff);
  return Tensor<float>({4}, std::move(chunks));
}

std::uint64_t u64_value(const Tensor<float>& t) {
  std::uint64_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint64_t>(t[i]) << (16 * i);
  return v;
}

struct Example {
  Image clean;
  Image degraded;
  DegradationDescriptor descriptor;
};

Image crop_image(const Image& img, std::size_t y0, std::size_t x0, std::size_t size) {
  Image out({size, size, 3});
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j)
      for (std::size_t c = 0; c < 3; ++c) out.at(i, j, c) = img.at(y0 + i, x0 + j, c);
  return out;
}

// Position g of the training stream maps to (epoch permutation, crop offset),
// both derived from (seed, g) alone so a resumed run sees the same batches.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

  std::size_t example(std::uint64_t position) {
    const std::uint64_t epoch = position / n_;
    if (epoch != cached_epoch_ || perm_.empty()) {
      perm_.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
      Rng rng(mix_seed(seed_, 0x5417'0000ULL + epoch));
      for (std::size_t i = n_; i > 1; --i) std::swap(perm_[i - 1], perm_[rng.below(i)]);
      cached_epoch_ = epoch;
    }
    return perm_[position % n_];
  }

  std::pair<std::size_t, std::size_t> crop(std::uint64_t position, std::size_t h, std::size_t w,
                                           std::size_t size) const {
    Rng rng(mix_seed(mix_seed(seed_, 0xc809ULL), position));
    const std::size_t y0 = rng.below(h - size + 1);
    const std::size_t x0 = rng.below(w - size + 1);
    return {y0, x0};
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t cached_epoch_ = 0;
  std::vector<std::size_t> perm_;
};

std::string format_row(const LossLogRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.9g,%.9g,%.9g", r.step, r.lr, r.loss.charbonnier,
                r.loss.edge, r.loss.total);
  return buf;
}

constexpr const char* kLogHeader = "step,lr,char,edge,total";

}  // namespace

NamedTensors training_state(const Model<float>& model, const OptimState<float>& opt,
                            std::size_t step) {
  NamedTensors state = model.state();
  const auto& entries = model.params().entries();
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const Shape& shape = entries[e].second->value.shape();
    state.emplace_back("adam.m." + entries[e].first, Tensor<float>(shape, opt.m[e]));
    state.emplace_back("adam.v." + entries[e].first, Tensor<float>(shape, opt.v[e]));
  }
  state.emplace_back("train.step", u64_entry(step));
  state.emplace_back("train.adam_t", u64_entry(opt.t));
  return state;
}

Model<float> load_model(const std::filesystem::path& checkpoint) {
  return Model<float>::from_state(load_checkpoint(checkpoint));
}

TrainSummary train(const ModelConfig& model_config, const TrainConfig& cfg,
                   const DatasetManifest& manifest, const std::filesystem::path& out_dir,
                   const TrainOptions& options) {
  cfg.validate();
  model_config.validate();
  model_config.check_image(cfg.crop, cfg.crop);
  if (manifest.entries.empty()) throw ConfigError("training manifest is empty");
  std::filesystem::create_directories(out_dir);

  std::vector<Example> data;
  data.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    Example ex{read_png(manifest.clean_path(e)), read_png(manifest.degraded_path(e)), e.descriptor};
    if (ex.clean.shape() != ex.degraded.shape() || ex.clean.dim(0) < cfg.crop ||
        ex.clean.dim(1) < cfg.crop) {
      throw ConfigError("sample " + std::to_string(e.id) + " is smaller than the " +
                        std::to_string(cfg.crop) + " crop or has mismatched pair shapes");
    }
    data.push_back(std::move(ex));
  }

  Model<float> model(model_config);
  OptimState<float> opt = OptimState<float>::create(model.params());
  std::size_t start = 0;
  if (!options.resume.empty()) {
    const auto state = load_checkpoint(options.resume);
    model = Model<float>::from_state(state);
    if (!(model.config() == model_config)) {
      throw ConfigError("checkpoint " + options.resume.string() +
                        " was trained with a different model configuration");
    }
    opt = OptimState<float>::create(model.params());
    std::map<std::string, const Tensor<float>*> byname;
    for (const auto& [name, t] : state) byname[name] = &t;
    const auto& entries = model.params().entries();
    for (std::size_t e = 0; e < entries.size(); ++e) {
      auto m = byname.find("adam.m." + entries[e].first);
      auto v = byname.find("adam.v." + entries[e].first);
      if (m == byname.end() || v == byname.end()) {
        throw IoError(options.resume.string() + " has no optimizer state for " + entries[e].first);
      }
      opt.m[e] = m->second->storage();
      opt.v[e] = v->second->storage();
    }
    auto step_it = byname.find("train.step");
    auto t_it = byname.find("train.adam_t");
    if (step_it == byname.end() || t_it == byname.end()) {
      throw IoError(options.resume.string() + " is not a training checkpoint");
    }
    start = static_cast<std::size_t>(u64_value(*step_it->second));
    opt.t = u64_value(*t_it->second);
  }

  const auto log_path = out_dir / "loss.csv";
  {
    // On resume keep only rows that precede the restart point.
    std::vector<std::string> kept;
    if (start > 0) {
      std::ifstream in(log_path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || line == kLogHeader) continue;
        if (std::stoull(line.substr(0, line.find(','))) < start) kept.push_back(line);
      }
    }
    std::ofstream out(log_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + log_path.string());
    out << kLogHeader << '\n';
    for (const auto& l : kept) out << l << '\n';
  }
  std::ofstream log(log_path, std::ios::app);

  const std::size_t end =
      options.stop_after > 0 ? std::min(options.stop_after, cfg.total_steps) : cfg.total_steps;
  BatchSampler sampler(data.size(), cfg.seed);
  TrainSummary summary;
  summary.steps_done = start;

  auto save = [&](std::size_t steps) {
    for (const auto& [name, v] : model.params().entries()) {
      if (!all_finite<float>(v->value.data())) {
        throw NumericError("parameter " + name + " is not finite at step " + std::to_string(steps));
      }
    }
    const auto path = out_dir / ("step_" + std::to_string(steps) + ".ldrc");
    save_checkpoint(path, training_state(model, opt, steps));
    summary.last_checkpoint = path;
  };

  const auto diverged = [&](std::size_t step, const std::string& what) {
    return NumericError(what + " at step " + std::to_string(step) + "; last checkpoint: " +
                        (summary.last_checkpoint.empty() ? std::string("none")
                                                         : summary.last_checkpoint.string()));
  };
  const float inv_batch = 1.0f / static_cast<float>(cfg.batch_size);
  for (std::size_t step = start; step < end; ++step) {
    model.params().zero_grad();
    LossReport acc;
    acc.lambda = cfg.lambda;
    acc.charbonnier = acc.edge = acc.total = 0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::uint64_t position = static_cast<std::uint64_t>(step) * cfg.batch_size + b;
      const Example& ex = data[sampler.example(position)];
      const auto [y0, x0] = sampler.crop(position, ex.clean.dim(0), ex.clean.dim(1), cfg.crop);
      const Image input = crop_image(ex.degraded, y0, x0, cfg.crop);
      const Image target = crop_image(ex.clean, y0, x0, cfg.crop);
      Tape<float> tape;
      TotalLoss<float> loss;
      try {
        auto out = model.forward(tape, input, ex.descriptor);
        loss = total_loss(tape, out.restored, target, static_cast<float>(cfg.lambda),
                          static_cast<float>(kCharbonnierEps), cfg.charbonnier);
      } catch (const NumericError& e) {
        throw diverged(step, e.what());
      }
      tape.backward(tape.scalar_mul(loss.total, inv_batch));
      acc.charbonnier += loss.report.charbonnier / cfg.batch_size;
      acc.edge += loss.report.edge / cfg.batch_size;
      acc.total += loss.report.total / cfg.batch_size;
    }
    if (!std::isfinite(acc.total)) throw diverged(step, "non-finite loss");
    const double lr = cosine_lr(step, cfg);
    adam_step(model.params(), opt, lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    LossLogRow row{step, lr, acc};
    log << format_row(row) << '\n' << std::flush;
    summary.log.push_back(row);
    if (options.progress) options.progress(row);
    summary.steps_done = step + 1;
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) save(step + 1);
  }
  if (summary.last_checkpoint.empty() ||
      summary.last_checkpoint.filename() != "step_" + std::to_string(summary.steps_done) + ".ldrc") {
    save(summary.steps_done);
  }
  return summary;
}

template struct OptimState<float>;
template struct OptimState<double>;
template void adam_step(ParameterSet<float>&, OptimState<float>&, double, double, double, double);
template void adam_step(ParameterSet<double>&, OptimState<double>&, double, double, double, double);

}  // namespace ldr
