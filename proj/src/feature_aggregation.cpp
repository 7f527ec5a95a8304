// SPDX-License-Identifier: Apache-2.0
#include "ldr/feature_aggregation.hpp"

#include <cmath>

namespace ldr {

template <typename T>
RfaParams<T> RfaParams<T>::create(ParameterSet<T>& params, const std::string& prefix,
                                  std::size_t channels, std::uint64_t seed) {
  RfaParams r;
  r.wq = params.create(prefix + ".wq", {channels, channels}, channels, seed);
  r.wk = params.create(prefix + ".wk", {channels, channels}, channels, seed);
  r.wv = params.create(prefix + ".wv", {channels, channels}, channels, seed);
  r.ffn_f1 = params.create(prefix + ".ffn_int.f1", {3, 3, channels, 2 * channels}, 9 * channels, seed);
  r.ffn_b1 = params.create(prefix + ".ffn_int.b1", {2 * channels}, 0, seed);
  r.ffn_f2 = params.create(prefix + ".ffn_int.f2", {3, 3, 2 * channels, channels}, 18 * channels, seed);
  r.ffn_b2 = params.create(prefix + ".ffn_int.b2", {channels}, 0, seed);
  return r;
}

template <typename T>
Aggregation<T> aggregate(Tape<T>& tape, const Var<T>& m, const Var<T>& x_int,
                         const RfaParams<T>& params, bool residual, bool scale_logits) {
  const auto& mv = m->value;
  const auto& xv = x_int->value;
  if (mv.rank() != 3 || mv.shape() != xv.shape()) {
    throw DimensionError("aggregate: degradation map " + to_string(mv.shape()) +
                         " and restoration features " + to_string(xv.shape()) + " differ");
  }
  const std::size_t h = mv.dim(0), w = mv.dim(1), c = mv.dim(2);
  if (params.wq->value.dim(0) != c) {
    throw DimensionError("aggregate: projections expect width " +
                         std::to_string(params.wq->value.dim(0)) + ", features have " +
                         std::to_string(c));
  }
  if (h * w > kMaxAggregationTokens) {
    throw ConfigError("aggregate: " + std::to_string(h * w) + " tokens exceed the limit of " +
                      std::to_string(kMaxAggregationTokens));
  }
  auto q = tape.matmul(tape.reshape(m, {h * w, c}), params.wq);
  auto feats = tape.reshape(x_int, {h * w, c});
  auto k = tape.matmul(feats, params.wk);
  auto v = tape.matmul(feats, params.wv);
  auto logits = tape.matmul(q, tape.transpose(k));
  if (scale_logits) logits = tape.scalar_mul(logits, T(1) / std::sqrt(static_cast<T>(c)));
  auto attention = tape.softmax_lastdim(logits);
  auto attended = tape.reshape(tape.matmul(attention, v), {h, w, c});
  auto hidden = tape.relu(tape.add_bias(tape.conv2d(attended, params.ffn_f1), params.ffn_b1));
  auto refined = tape.add_bias(tape.conv2d(hidden, params.ffn_f2), params.ffn_b2);
  auto out = residual ? tape.add(refined, attended) : refined;
  return {out, attended, attention};
}

template struct RfaParams<float>;
template struct RfaParams<double>;
template Aggregation<float> aggregate(Tape<float>&, const Var<float>&, const Var<float>&,
                                      const RfaParams<float>&, bool, bool);
template Aggregation<double> aggregate(Tape<double>&, const Var<double>&, const Var<double>&,
                                       const RfaParams<double>&, bool, bool);

}  // namespace ldr
