// SPDX-License-Identifier: Apache-2.0
#include "ldr/degradation_map.hpp"

#include <cmath>

namespace ldr {

template <typename T>
DmmParams<T> DmmParams<T>::create(ParameterSet<T>& params, const std::string& prefix,
                                  std::size_t channels, std::uint64_t seed) {
  DmmParams d;
  d.wq = params.create(prefix + ".wq", {channels, channels}, channels, seed);
  d.wk = params.create(prefix + ".wk", {channels, channels}, channels, seed);
  d.wv = params.create(prefix + ".wv", {channels, channels}, channels, seed);
  return d;
}

template <typename T>
DegradationMap<T> measure_degradation_map(Tape<T>& tape, const Var<T>& x, const Var<T>& prior,
                                          const DmmParams<T>& params, bool scale_logits) {
  const auto& xv = x->value;
  const auto& pv = prior->value;
  if (xv.rank() != 3 || pv.rank() != 2) {
    throw DimensionError("degradation map: expected H×W×C features and L×C prior, got " +
                         to_string(xv.shape()) + " and " + to_string(pv.shape()));
  }
  const std::size_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  if (pv.dim(1) != c || params.wq->value.dim(0) != c) {
    throw DimensionError("degradation map: channel width mismatch between features " +
                         to_string(xv.shape()) + ", prior " + to_string(pv.shape()) +
                         " and projections " + to_string(params.wq->value.shape()));
  }
  auto tokens = tape.reshape(x, {h * w, c});
  auto q = tape.matmul(tokens, params.wq);
  auto k = tape.matmul(prior, params.wk);
  auto v = tape.matmul(prior, params.wv);
  auto logits = tape.matmul(q, tape.transpose(k));
  if (scale_logits) logits = tape.scalar_mul(logits, T(1) / std::sqrt(static_cast<T>(c)));
  auto attention = tape.softmax_lastdim(logits);
  auto m = tape.reshape(tape.matmul(attention, v), {h, w, c});
  return {m, attention};
}

template struct DmmParams<float>;
template struct DmmParams<double>;
template DegradationMap<float> measure_degradation_map(Tape<float>&, const Var<float>&,
                                                       const Var<float>&, const DmmParams<float>&,
                                                       bool);
template DegradationMap<double> measure_degradation_map(Tape<double>&, const Var<double>&,
                                                        const Var<double>&,
                                                        const DmmParams<double>&, bool);

}  // namespace ldr
