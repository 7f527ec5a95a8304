// SPDX-License-Identifier: Apache-2.0
#include "ldr/expert_moe.hpp"

namespace ldr {

std::string_view to_string(Routing r) { return r == Routing::pixel ? "pixel" : "image"; }

Routing parse_routing(std::string_view s) {
  if (s == "pixel") return Routing::pixel;
  if (s == "image") return Routing::image;
  throw ConfigError("unknown routing mode '" + std::string(s) + "' (pixel|image)");
}

template <typename T>
ExpertParams<T> ExpertParams<T>::create(ParameterSet<T>& params, const std::string& prefix,
                                        std::size_t channels, std::size_t experts,
                                        std::size_t kernel, std::uint64_t seed) {
  if (kernel % 2 == 0) throw ConfigError("expert kernel size must be odd");
  ExpertParams e;
  e.ffn_w1 = params.create(prefix + ".ffn_m.w1", {channels, channels}, channels, seed);
  e.ffn_b1 = params.create(prefix + ".ffn_m.b1", {channels}, 0, seed);
  e.ffn_w2 = params.create(prefix + ".ffn_m.w2", {channels, experts}, channels, seed);
  e.ffn_b2 = params.create(prefix + ".ffn_m.b2", {experts}, 0, seed);
  e.bank = params.create(prefix + ".experts", {experts, kernel, kernel, channels, channels},
                         kernel * kernel * channels, seed);
  return e;
}

namespace {

template <typename T>
Var<T> ffn_scores(Tape<T>& tape, const Var<T>& tokens, const ExpertParams<T>& p) {
  auto h = tape.relu(tape.add_bias(tape.matmul(tokens, p.ffn_w1), p.ffn_b1));
  return tape.softmax_lastdim(tape.add_bias(tape.matmul(h, p.ffn_w2), p.ffn_b2));
}

}  // namespace

template <typename T>
Var<T> score_map(Tape<T>& tape, const Var<T>& m, const ExpertParams<T>& params) {
  const auto& mv = m->value;
  if (mv.rank() != 3 || mv.dim(2) != params.ffn_w1->value.dim(0)) {
    throw DimensionError("score_map: degradation map " + to_string(mv.shape()) +
                         " does not match scoring width " +
                         std::to_string(params.ffn_w1->value.dim(0)));
  }
  const std::size_t h = mv.dim(0), w = mv.dim(1), c = mv.dim(2);
  auto s = ffn_scores(tape, tape.reshape(m, {h * w, c}), params);
  return tape.reshape(s, {h, w, params.experts()});
}

template <typename T>
Selection<T> select_topk(Tape<T>& tape, const Var<T>& scores, std::size_t k, bool renormalize) {
  const auto& sv = scores->value;
  if (sv.rank() != 3) throw DimensionError("select_topk: expected H×W×N scores, got " + to_string(sv.shape()));
  auto top = topk_lastdim(sv, k);
  Selection<T> sel;
  sel.height = sv.dim(0);
  sel.width = sv.dim(1);
  sel.k = k;
  sel.weights = tape.gather_lastdim(scores, top.indices, k);
  if (renormalize) sel.weights = tape.normalize_lastdim(sel.weights);
  sel.indices = std::move(top.indices);
  return sel;
}

template <typename T>
Selection<T> select_topk_image(Tape<T>& tape, const Var<T>& m, const ExpertParams<T>& params,
                               std::size_t k, bool renormalize, Var<T>* pooled) {
  const auto& mv = m->value;
  if (mv.rank() != 3) throw DimensionError("select_topk_image: expected H×W×C map");
  const std::size_t h = mv.dim(0), w = mv.dim(1), c = mv.dim(2);
  auto s = ffn_scores(tape, tape.mean_rows(tape.reshape(m, {h * w, c})), params);  // 1×N
  if (pooled) *pooled = s;
  auto top = topk_lastdim(s->value, k);
  auto weights = tape.gather_lastdim(s, top.indices, k);
  if (renormalize) weights = tape.normalize_lastdim(weights);
  Selection<T> sel;
  sel.height = h;
  sel.width = w;
  sel.k = k;
  sel.weights = tape.reshape(tape.tile_rows(weights, h * w), {h, w, k});
  sel.indices.reserve(h * w * k);
  for (std::size_t p = 0; p < h * w; ++p) {
    sel.indices.insert(sel.indices.end(), top.indices.begin(), top.indices.end());
  }
  return sel;
}

template <typename T>
Var<T> expert_convolve(Tape<T>& tape, const Var<T>& x, const Var<T>& bank,
                       const Selection<T>& selection) {
  const auto& xv = x->value;
  if (xv.rank() != 3 || xv.dim(0) != selection.height || xv.dim(1) != selection.width) {
    throw DimensionError("expert_convolve: features " + to_string(xv.shape()) +
                         " do not match the " + std::to_string(selection.height) + "x" +
                         std::to_string(selection.width) + " selection");
  }
  return tape.expert_convolve(x, bank, selection.indices, selection.weights);
}

FlopReport count_expert_flops(std::size_t height, std::size_t width, std::size_t channels,
                              std::size_t experts, std::size_t k, std::size_t kernel) {
  const std::uint64_t per_expert = static_cast<std::uint64_t>(height) * width * kernel * kernel *
                                   channels * channels;
  FlopReport r;
  r.sparse_macs = per_expert * k;
  r.dense_macs = per_expert * experts;
  r.ratio = r.dense_macs ? static_cast<double>(r.sparse_macs) / static_cast<double>(r.dense_macs) : 0.0;
  return r;
}

#define LDR_INSTANTIATE(T)                                                                        \
  template struct ExpertParams<T>;                                                                \
  template Var<T> score_map(Tape<T>&, const Var<T>&, const ExpertParams<T>&);                      \
  template Selection<T> select_topk(Tape<T>&, const Var<T>&, std::size_t, bool);                   \
  template Selection<T> select_topk_image(Tape<T>&, const Var<T>&, const ExpertParams<T>&,         \
                                          std::size_t, bool, Var<T>*);                             \
  template Var<T> expert_convolve(Tape<T>&, const Var<T>&, const Var<T>&, const Selection<T>&);

LDR_INSTANTIATE(float)
LDR_INSTANTIATE(double)

}  // namespace ldr
