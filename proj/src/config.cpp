// SPDX-License-Identifier: Apache-2.0
#include "ldr/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace ldr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename U>
U parse_number(const std::string& key, const std::string& value) {
  U out{};
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || p != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::string fmt(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  auto& m = cfg.model;
  auto& t = cfg.train;
  auto size = [&] { return parse_number<std::size_t>(key, value); };
  auto real = [&] { return parse_number<double>(key, value); };
  if (key == "channels") m.channels = size();
  else if (key == "experts") m.experts = size();
  else if (key == "top_k") m.top_k = size();
  else if (key == "tokens") m.tokens = size();
  else if (key == "text_width") m.text_width = size();
  else if (key == "levels") m.levels = size();
  else if (key == "ldr_blocks") m.ldr_blocks = size();
  else if (key == "kernel") m.kernel = size();
  else if (key == "seed") m.seed = t.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "vocab_seed") m.vocab_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "routing") m.routing = parse_routing(value);
  else if (key == "scale_attention") m.scale_attention = parse_bool(key, value);
  else if (key == "rfa_residual") m.rfa_residual = parse_bool(key, value);
  else if (key == "renormalize") m.renormalize = parse_bool(key, value);
  else if (key == "batch_size") t.batch_size = size();
  else if (key == "total_steps") t.total_steps = size();
  else if (key == "lr_start") t.lr_start = real();
  else if (key == "lr_end") t.lr_end = real();
  else if (key == "lambda") t.lambda = real();
  else if (key == "crop") t.crop = size();
  else if (key == "checkpoint_every") t.checkpoint_every = size();
  else if (key == "beta1") t.beta1 = real();
  else if (key == "beta2") t.beta2 = real();
  else if (key == "adam_eps") t.adam_eps = real();
  else if (key == "charbonnier") {
    if (value == "per_pixel") t.charbonnier = CharbonnierMode::per_pixel;
    else if (value == "global") t.charbonnier = CharbonnierMode::global;
    else throw ConfigError("config key 'charbonnier': expected per_pixel or global");
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void apply_config_text(ExperimentConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::exception& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.model.validate();
  cfg.train.validate();
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig cfg;
  apply_config_text(cfg, ss.str(), path.string());
  return cfg;
}

std::string dump_config(const ExperimentConfig& cfg) {
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  std::ostringstream o;
  o << "channels = " << m.channels << "\nexperts = " << m.experts << "\ntop_k = " << m.top_k
    << "\ntokens = " << m.tokens << "\ntext_width = " << m.text_width << "\nlevels = " << m.levels
    << "\nldr_blocks = " << m.ldr_blocks << "\nkernel = " << m.kernel << "\nseed = " << m.seed
    << "\nvocab_seed = " << m.vocab_seed << "\nrouting = " << to_string(m.routing)
    << "\nscale_attention = " << (m.scale_attention ? "true" : "false")
    << "\nrfa_residual = " << (m.rfa_residual ? "true" : "false")
    << "\nrenormalize = " << (m.renormalize ? "true" : "false") << "\nbatch_size = " << t.batch_size
    << "\ntotal_steps = " << t.total_steps << "\nlr_start = " << fmt(t.lr_start)
    << "\nlr_end = " << fmt(t.lr_end) << "\nlambda = " << fmt(t.lambda) << "\ncrop = " << t.crop
    << "\ncheckpoint_every = " << t.checkpoint_every << "\ncharbonnier = "
    << (t.charbonnier == CharbonnierMode::per_pixel ? "per_pixel" : "global")
    << "\nbeta1 = " << fmt(t.beta1) << "\nbeta2 = " << fmt(t.beta2)
    << "\nadam_eps = " << fmt(t.adam_eps) << '\n';
  return o.str();
}

}  // namespace ldr
