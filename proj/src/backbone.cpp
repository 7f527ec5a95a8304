// SPDX-License-Identifier: Apache-2.0
#include "ldr/backbone.hpp"

#include <cmath>
#include <map>

namespace ldr {

void ModelConfig::validate() const {
  if (channels < 1 || experts < 1 || top_k < 1 || tokens < 2 || text_width < 1 || levels < 1 ||
      ldr_blocks < 1) {
    throw ConfigError("model dimensions must be positive (tokens >= 2, levels >= 1)");
  }
  if (top_k > experts) {
    throw ConfigError("top_k=" + std::to_string(top_k) + " exceeds experts=" + std::to_string(experts));
  }
  if (kernel % 2 == 0) throw ConfigError("expert kernel size must be odd");
  if (levels > 6) throw ConfigError("at most 6 encoder levels are supported");
}

void ModelConfig::check_image(std::size_t height, std::size_t width) const {
  const std::size_t unit = std::size_t{1} << levels;
  if (height == 0 || width == 0 || height % unit != 0 || width % unit != 0) {
    throw ConfigError("image " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by 2^levels = " + std::to_string(unit));
  }
}

template <typename T>
Model<T>::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t c = config_.channels;
  const std::uint64_t seed = config_.seed;
  prior_mlp_ = PriorMlp<T>::create(params_, config_.text_width, c, seed);
  stem_f_ = params_.create("enc.stem.f", {3, 3, 3, c}, 27, seed);
  stem_b_ = params_.create("enc.stem.b", {c}, 0, seed);
  for (std::size_t l = 0; l < config_.levels; ++l) {
    const auto n = std::to_string(l);
    down_f_.push_back(params_.create("enc.down" + n + ".f", {3, 3, c, c}, 9 * c, seed));
    down_b_.push_back(params_.create("enc.down" + n + ".b", {c}, 0, seed));
  }
  for (std::size_t b = 0; b < config_.ldr_blocks; ++b) {
    const std::string prefix = "ldr" + std::to_string(b);
    LdrBlock<T> block;
    block.dmm = DmmParams<T>::create(params_, prefix + ".dmm", c, seed);
    block.experts = ExpertParams<T>::create(params_, prefix + ".ter", c, config_.experts,
                                            config_.kernel, seed);
    block.rfa = RfaParams<T>::create(params_, prefix + ".rfa", c, seed);
    blocks_.push_back(std::move(block));
  }
  for (std::size_t l = 0; l < config_.levels; ++l) {
    const auto n = std::to_string(l);
    up_f_.push_back(params_.create("dec.up" + n + ".f", {3, 3, c, c}, 9 * c, seed));
    up_b_.push_back(params_.create("dec.up" + n + ".b", {c}, 0, seed));
  }
  head_f_ = params_.create("dec.head.f", {3, 3, c, 3}, 9 * c, seed);
  head_b_ = params_.create("dec.head.b", {3}, 0, seed);
}

template <typename T>
typename Model<T>::Encoded Model<T>::encode(Tape<T>& tape, const Var<T>& image) const {
  const auto& iv = image->value;
  if (iv.rank() != 3 || iv.dim(2) != 3) {
    throw DimensionError("encode: expected an H×W×3 image, got " + to_string(iv.shape()));
  }
  config_.check_image(iv.dim(0), iv.dim(1));
  Encoded e;
  auto x = tape.relu(tape.add_bias(tape.conv2d(image, stem_f_), stem_b_));
  for (std::size_t l = 0; l < config_.levels; ++l) {
    e.skips.push_back(x);
    x = tape.relu(tape.add_bias(tape.conv2d(x, down_f_[l], 2), down_b_[l]));
  }
  e.features = x;
  return e;
}

template <typename T>
Var<T> Model<T>::decode(Tape<T>& tape, const Var<T>& features,
                        const std::vector<Var<T>>& skips) const {
  if (skips.size() != config_.levels) {
    throw ContractError("decode: expected " + std::to_string(config_.levels) + " skips, got " +
                        std::to_string(skips.size()));
  }
  auto x = features;
  for (std::size_t l = 0; l < config_.levels; ++l) {
    const auto& skip = skips[config_.levels - 1 - l];
    x = tape.upsample2x(x);
    if (x->value.shape() != skip->value.shape()) {
      throw ContractError("decode: skip " + to_string(skip->value.shape()) +
                          " does not match upsampled features " + to_string(x->value.shape()));
    }
    x = tape.add(tape.relu(tape.add_bias(tape.conv2d(x, up_f_[l]), up_b_[l])), skip);
  }
  return tape.sigmoid(tape.add_bias(tape.conv2d(x, head_f_), head_b_));
}

template <typename T>
Var<T> Model<T>::prior_embedding(Tape<T>& tape, const DegradationDescriptor& d) const {
  auto text = tape.constant(stub_vl_encode<T>(d, config_.vocab_seed, config_.prior_dims()));
  return project_prior(tape, text, prior_mlp_);
}

template <typename T>
ForwardResult<T> Model<T>::forward(Tape<T>& tape, const Tensor<T>& image,
                                   const DegradationDescriptor& d,
                                   const ForwardOptions& options) const {
  ForwardResult<T> r;
  auto& diag = r.diagnostics;
  // Errors keep their type and gain the name of the failing stage.
  auto stage = [](const char* name, auto&& fn) {
    const auto prefix = [name](const std::exception& e) { return std::string(name) + ": " + e.what(); };
    try {
      return fn();
    } catch (const DimensionError& e) {
      throw DimensionError(prefix(e));
    } catch (const ConfigError& e) {
      throw ConfigError(prefix(e));
    } catch (const ContractError& e) {
      throw ContractError(prefix(e));
    } catch (const ValidationError& e) {
      throw ValidationError(prefix(e));
    } catch (const NumericError& e) {
      throw NumericError(prefix(e));
    } catch (const std::exception& e) {
      throw std::runtime_error(prefix(e));
    }
  };
  diag.prior = stage("prior", [&] { return prior_embedding(tape, d); });
  auto enc = stage("encode", [&] { return encode(tape, tape.constant(image)); });
  diag.features = enc.features;
  auto x = enc.features;
  for (const auto& block : blocks_) {
    diag.map = stage("degradation map", [&] {
      return measure_degradation_map(tape, x, diag.prior, block.dmm, config_.scale_attention).map;
    });
    stage("expert routing", [&] {
      if (config_.routing == Routing::pixel) {
        diag.scores = score_map(tape, diag.map, block.experts);
        diag.selection = select_topk(tape, diag.scores, config_.top_k, config_.renormalize);
      } else {
        diag.selection = select_topk_image(tape, diag.map, block.experts, config_.top_k,
                                           config_.renormalize, &diag.scores);
      }
      return 0;
    });
    diag.x_int = stage("expert restoration", [&] {
      return expert_convolve(tape, x, block.experts.bank, diag.selection);
    });
    x = stage("feature aggregation", [&] {
      return aggregate(tape, diag.map, diag.x_int, block.rfa, config_.rfa_residual,
                       config_.scale_attention)
          .output;
    });
  }
  if (!options.channel_mask.empty()) {
    const std::size_t c = x->value.last_dim();
    if (options.channel_mask.size() != c) {
      throw DimensionError("channel mask has " + std::to_string(options.channel_mask.size()) +
                           " entries for " + std::to_string(c) + " channels");
    }
    Tensor<T> mask(x->value.shape());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = static_cast<T>(options.channel_mask[i % c]);
    x = tape.mul(x, tape.constant(std::move(mask)));
  }
  diag.x_hat = x;
  r.restored = stage("decode", [&] { return decode(tape, x, enc.skips); });
  return r;
}

namespace {

Tensor<float> meta_scalar(double v) { return Tensor<float>({1}, std::vector<float>{static_cast<float>(v)}); }

Tensor<float> meta_u64(std::uint64_t v) {
  std::vector<float> chunks(4);
  for (int i = 0; i < 4; ++i) chunks[i] = static_cast<float>((v >> (16 * i)) & 0xffff);
  return Tensor<float>({4}, std::move(chunks));
}

std::uint64_t read_u64(const Tensor<float>& t) {
  if (t.size() != 4) throw IoError("malformed 64-bit metadata entry");
  std::uint64_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint64_t>(t[i]) << (16 * i);
  return v;
}

}  // namespace

NamedTensors config_entries(const ModelConfig& c) {
  return {
      {"meta.channels", meta_scalar(static_cast<double>(c.channels))},
      {"meta.experts", meta_scalar(static_cast<double>(c.experts))},
      {"meta.top_k", meta_scalar(static_cast<double>(c.top_k))},
      {"meta.tokens", meta_scalar(static_cast<double>(c.tokens))},
      {"meta.text_width", meta_scalar(static_cast<double>(c.text_width))},
      {"meta.levels", meta_scalar(static_cast<double>(c.levels))},
      {"meta.ldr_blocks", meta_scalar(static_cast<double>(c.ldr_blocks))},
      {"meta.kernel", meta_scalar(static_cast<double>(c.kernel))},
      {"meta.seed", meta_u64(c.seed)},
      {"meta.vocab_seed", meta_u64(c.vocab_seed)},
      {"meta.routing", meta_scalar(c.routing == Routing::pixel ? 0 : 1)},
      {"meta.scale_attention", meta_scalar(c.scale_attention)},
      {"meta.rfa_residual", meta_scalar(c.rfa_residual)},
      {"meta.renormalize", meta_scalar(c.renormalize)},
  };
}

ModelConfig config_from_entries(const NamedTensors& state) {
  std::map<std::string, const Tensor<float>*> meta;
  for (const auto& [name, t] : state) {
    if (name.rfind("meta.", 0) == 0) meta[name.substr(5)] = &t;
  }
  auto get = [&](const std::string& key) -> const Tensor<float>& {
    auto it = meta.find(key);
    if (it == meta.end()) throw IoError("checkpoint lacks metadata entry meta." + key);
    return *it->second;
  };
  auto count = [&](const std::string& key) { return static_cast<std::size_t>(get(key)[0]); };
  ModelConfig c;
  c.channels = count("channels");
  c.experts = count("experts");
  c.top_k = count("top_k");
  c.tokens = count("tokens");
  c.text_width = count("text_width");
  c.levels = count("levels");
  c.ldr_blocks = count("ldr_blocks");
  c.kernel = count("kernel");
  c.seed = read_u64(get("seed"));
  c.vocab_seed = read_u64(get("vocab_seed"));
  c.routing = get("routing")[0] == 0.0f ? Routing::pixel : Routing::image;
  c.scale_attention = get("scale_attention")[0] != 0.0f;
  c.rfa_residual = get("rfa_residual")[0] != 0.0f;
  c.renormalize = get("renormalize")[0] != 0.0f;
  c.validate();
  return c;
}

template <typename T>
NamedTensors Model<T>::state() const {
  NamedTensors out;
  for (const auto& [name, v] : params_.entries()) out.emplace_back(name, v->value.template cast<float>());
  for (auto& e : config_entries(config_)) out.push_back(std::move(e));
  return out;
}

template <typename T>
void Model<T>::load_parameters(const NamedTensors& state) {
  std::map<std::string, const Tensor<float>*> byname;
  for (const auto& [name, t] : state) byname[name] = &t;
  for (auto& [name, v] : params_.entries()) {
    auto it = byname.find(name);
    if (it == byname.end()) throw IoError("checkpoint lacks parameter " + name);
    if (it->second->shape() != v->value.shape()) {
      throw IoError("checkpoint parameter " + name + " has shape " +
                    to_string(it->second->shape()) + ", model expects " +
                    to_string(v->value.shape()));
    }
    v->value = it->second->template cast<T>();
  }
}

template <typename T>
Model<T> Model<T>::from_state(const NamedTensors& state) {
  Model m(config_from_entries(state));
  m.load_parameters(state);
  return m;
}

template class Model<float>;
template class Model<double>;

}  // namespace ldr
