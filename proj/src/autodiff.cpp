// SPDX-License-Identifier: Apache-2.0
#include "ldr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <type_traits>

namespace ldr {

namespace {

template <typename T>
bool is_scalar(const Node<T>& n) {
  return n.value.size() == 1;
}

template <typename T>
void require_same_shape(const Node<T>& a, const Node<T>& b, const char* op) {
  if (a.value.shape() != b.value.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.value.shape()) +
                         " vs " + to_string(b.value.shape()));
  }
}

// Resolves the scalar-vs-tensor broadcast; returns the output shape.
template <typename T>
Shape broadcast_shape(const Node<T>& a, const Node<T>& b, const char* op) {
  if (a.value.shape() == b.value.shape()) return a.value.shape();
  if (is_scalar(b)) return a.value.shape();
  if (is_scalar(a)) return b.value.shape();
  throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.value.shape()) +
                       " vs " + to_string(b.value.shape()) + " (only scalar broadcast allowed)");
}

// Reductions accumulate in a wider type: sums of identical values stay exact
// for any realistic tensor size.
template <typename T>
using Wide = std::conditional_t<std::is_same_v<T, float>, double, long double>;

template <typename T>
void accumulate(Node<T>& target, std::size_t i, T g) {
  target.ensure_grad()[target.value.size() == 1 ? 0 : i] += g;
}

}  // namespace

template <typename T>
TopK<T> topk_lastdim(const Tensor<T>& x, std::size_t k) {
  const std::size_t n = x.last_dim();
  if (k < 1 || k > n) {
    throw ConfigError("topk: K=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  const std::size_t slices = x.size() / n;
  Shape out_shape = x.shape();
  if (out_shape.empty()) out_shape.push_back(1);
  out_shape.back() = k;
  TopK<T> result{std::vector<std::int32_t>(slices * k), Tensor<T>(out_shape)};
  std::vector<std::int32_t> order(n);
  for (std::size_t s = 0; s < slices; ++s) {
    const T* row = x.data().data() + s * n;
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [row](std::int32_t a, std::int32_t b) {
                        return row[a] > row[b] || (row[a] == row[b] && a < b);
                      });
    for (std::size_t j = 0; j < k; ++j) {
      result.indices[s * k + j] = order[j];
      result.values[s * k + j] = row[order[j]];
    }
  }
  return result;
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<Var<T>> inputs,
                       std::function<void(Node<T>&)> rule) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  const bool needs = grad_enabled_ && std::any_of(inputs.begin(), inputs.end(),
                                                  [](const Var<T>& v) { return v->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(rule);
    nodes_.push_back(node);
  }
  return node;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (loss->value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        to_string(loss->value.shape()));
  }
  if (!loss->requires_grad) throw ContractError("backward: loss is not connected to the tape");
  loss->ensure_grad()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>& n = **it;
    if (n.has_grad() && n.backward) n.backward(n);
  }
}

template <typename T>
Var<T> Tape<T>::matmul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a->value;
  const auto& bv = b->value;
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: inner dimensions disagree for " + to_string(av.shape()) +
                         " x " + to_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  kernels::gemm<T>(av.data(), bv.data(), out.data(), m, k, n, false, false, false);
  return record(std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    Node<T>& a = *self.inputs[0];
    Node<T>& b = *self.inputs[1];
    const std::span<const T> g(self.grad);
    if (a.requires_grad) {  // dA = dC · Bᵀ
      kernels::gemm<T>(g, b.value.data(), a.ensure_grad(), m, n, k, false, true, true);
    }
    if (b.requires_grad) {  // dB = Aᵀ · dC
      kernels::gemm<T>(a.value.data(), g, b.ensure_grad(), k, m, n, true, false, true);
    }
  });
}

template <typename T>
Var<T> Tape<T>::transpose(const Var<T>& a) {
  const auto& av = a->value;
  if (av.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + to_string(av.shape()));
  const std::size_t r = av.dim(0), c = av.dim(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return record(std::move(out), {a}, [r, c](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

template <typename T>
Var<T> Tape<T>::softmax_lastdim(const Var<T>& x) {
  const auto& xv = x->value;
  const std::size_t d = xv.last_dim();
  if (d < 1) throw DimensionError("softmax: empty last dimension");
  if (!all_finite<T>(xv.data())) throw NumericError("softmax: non-finite input");
  Tensor<T> out(xv.shape());
  const std::size_t slices = xv.size() / d;
  for (std::size_t s = 0; s < slices; ++s) {
    const T* in = xv.data().data() + s * d;
    T* o = out.data().data() + s * d;
    const T mx = *std::max_element(in, in + d);
    T total = 0;
    for (std::size_t j = 0; j < d; ++j) total += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < d; ++j) o[j] /= total;
  }
  return record(std::move(out), {x}, [d, slices](Node<T>& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t s = 0; s < slices; ++s) {
      const T* y = self.value.data().data() + s * d;
      const T* g = self.grad.data() + s * d;
      T dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) gx[s * d + j] += y[j] * (g[j] - dot);
    }
  });
}

template <typename T>
Var<T> Tape<T>::conv2d(const Var<T>& x, const Var<T>& filter, std::size_t stride) {
  const auto& xv = x->value;
  const auto& fv = filter->value;
  if (xv.rank() != 3 || fv.rank() != 4) {
    throw DimensionError("conv2d: expected H×W×C input and k×k×Cin×Cout filter, got " +
                         to_string(xv.shape()) + " and " + to_string(fv.shape()));
  }
  if (fv.dim(0) != fv.dim(1) || fv.dim(0) % 2 == 0) {
    throw ConfigError("conv2d: kernel must be square with odd size, got " + to_string(fv.shape()));
  }
  if (fv.dim(2) != xv.dim(2)) {
    throw DimensionError("conv2d: input has " + std::to_string(xv.dim(2)) +
                         " channels, filter expects " + std::to_string(fv.dim(2)));
  }
  if (stride < 1) throw ConfigError("conv2d: stride must be positive");
  const kernels::ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), fv.dim(3), fv.dim(0), stride};
  Tensor<T> out({g.out_height(), g.out_width(), g.out_channels});
  kernels::conv2d_forward<T>(xv.data(), fv.data(), out.data(), g);
  return record(std::move(out), {x, filter}, [g](Node<T>& self) {
    Node<T>& x = *self.inputs[0];
    Node<T>& f = *self.inputs[1];
    if (x.requires_grad) {
      kernels::conv2d_backward_input<T>(self.grad, f.value.data(), x.ensure_grad(), g);
    }
    if (f.requires_grad) {
      kernels::conv2d_backward_filter<T>(x.value.data(), self.grad, f.ensure_grad(), g);
    }
  });
}

template <typename T>
Var<T> Tape<T>::add_bias(const Var<T>& x, const Var<T>& bias) {
  const std::size_t c = x->value.last_dim();
  if (bias->value.size() != c) {
    throw DimensionError("add_bias: bias " + to_string(bias->value.shape()) +
                         " does not match channels of " + to_string(x->value.shape()));
  }
  Tensor<T> out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias->value[i % c];
  return record(std::move(out), {x, bias}, [c](Node<T>& self) {
    Node<T>& x = *self.inputs[0];
    Node<T>& b = *self.inputs[1];
    if (x.requires_grad) {
      auto& gx = x.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
    if (b.requires_grad) {
      auto& gb = b.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % c] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> Tape<T>::add(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out(broadcast_shape(*a, *b, "add"));
  const bool sa = a->value.size() == 1 && out.size() != 1;
  const bool sb = b->value.size() == 1 && out.size() != 1;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a->value[sa ? 0 : i] + b->value[sb ? 0 : i];
  }
  return record(std::move(out), {a, b}, [](Node<T>& self) {
    for (int s = 0; s < 2; ++s) {
      Node<T>& in = *self.inputs[s];
      if (!in.requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) accumulate(in, i, self.grad[i]);
    }
  });
}

template <typename T>
Var<T> Tape<T>::sub(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out(broadcast_shape(*a, *b, "sub"));
  const bool sa = a->value.size() == 1 && out.size() != 1;
  const bool sb = b->value.size() == 1 && out.size() != 1;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a->value[sa ? 0 : i] - b->value[sb ? 0 : i];
  }
  return record(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& a = *self.inputs[0];
    Node<T>& b = *self.inputs[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (a.requires_grad) accumulate(a, i, self.grad[i]);
      if (b.requires_grad) accumulate(b, i, -self.grad[i]);
    }
  });
}

template <typename T>
Var<T> Tape<T>::mul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out(broadcast_shape(*a, *b, "mul"));
  const bool sa = a->value.size() == 1 && out.size() != 1;
  const bool sb = b->value.size() == 1 && out.size() != 1;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a->value[sa ? 0 : i] * b->value[sb ? 0 : i];
  }
  return record(std::move(out), {a, b}, [sa, sb](Node<T>& self) {
    Node<T>& a = *self.inputs[0];
    Node<T>& b = *self.inputs[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T g = self.grad[i];
      if (a.requires_grad) accumulate(a, i, g * b.value[sb ? 0 : i]);
      if (b.requires_grad) accumulate(b, i, g * a.value[sa ? 0 : i]);
    }
  });
}

template <typename T>
Var<T> Tape<T>::scalar_mul(const Var<T>& a, T s) {
  Tensor<T> out = a->value;
  for (auto& v : out.storage()) v *= s;
  return record(std::move(out), {a}, [s](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

template <typename T>
Var<T> Tape<T>::add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a->value;
  for (auto& v : out.storage()) v += s;
  return record(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> Tape<T>::relu(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  return record(std::move(out), {a}, [](Node<T>& self) {
    Node<T>& a = *self.inputs[0];
    auto& g = a.ensure_grad();
    // relu'(0) = 0
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (a.value[i] > T(0)) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> Tape<T>::sigmoid(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& v : out.storage()) v = T(1) / (T(1) + std::exp(-v));
  return record(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> Tape<T>::sqrt(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& v : out.storage()) v = std::sqrt(v);
  return record(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / (T(2) * self.value[i]);
  });
}

template <typename T>
Var<T> Tape<T>::square(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& v : out.storage()) v = v * v;
  return record(std::move(out), {a}, [](Node<T>& self) {
    Node<T>& a = *self.inputs[0];
    auto& g = a.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += T(2) * a.value[i] * self.grad[i];
  });
}

template <typename T>
Var<T> Tape<T>::sum(const Var<T>& a) {
  Wide<T> total = 0;
  for (T v : a->value.data()) total += v;
  return record(Tensor<T>(Shape{}, std::vector<T>{static_cast<T>(total)}), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Var<T> Tape<T>::mean(const Var<T>& a) {
  const std::size_t n = a->value.size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  Wide<T> total = 0;
  for (T v : a->value.data()) total += v;
  return record(Tensor<T>(Shape{}, std::vector<T>{static_cast<T>(total / static_cast<Wide<T>>(n))}),
                {a},
                [n](Node<T>& self) {
                  auto& g = self.inputs[0]->ensure_grad();
                  const T share = self.grad[0] / static_cast<T>(n);
                  for (auto& v : g) v += share;
                });
}

template <typename T>
Var<T> Tape<T>::reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a->value;
  out.reshape(std::move(shape));
  return record(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> Tape<T>::upsample2x(const Var<T>& a) {
  const auto& av = a->value;
  if (av.rank() != 3) throw DimensionError("upsample2x: expected H×W×C, got " + to_string(av.shape()));
  const std::size_t h = av.dim(0), w = av.dim(1), c = av.dim(2);
  Tensor<T> out({2 * h, 2 * w, c});
  for (std::size_t i = 0; i < 2 * h; ++i)
    for (std::size_t j = 0; j < 2 * w; ++j)
      for (std::size_t ch = 0; ch < c; ++ch) out.at(i, j, ch) = av.at(i / 2, j / 2, ch);
  return record(std::move(out), {a}, [h, w, c](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < 2 * h; ++i)
      for (std::size_t j = 0; j < 2 * w; ++j)
        for (std::size_t ch = 0; ch < c; ++ch) {
          g[((i / 2) * w + j / 2) * c + ch] += self.grad[(i * 2 * w + j) * c + ch];
        }
  });
}

template <typename T>
Var<T> Tape<T>::mean_rows(const Var<T>& a) {
  const auto& av = a->value;
  if (av.rank() != 2) throw DimensionError("mean_rows: expected a matrix, got " + to_string(av.shape()));
  const std::size_t r = av.dim(0), c = av.dim(1);
  Tensor<T> out({1, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += av[i * c + j];
  for (auto& v : out.storage()) v /= static_cast<T>(r);
  return record(std::move(out), {a}, [r, c](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] / static_cast<T>(r);
  });
}

template <typename T>
Var<T> Tape<T>::tile_rows(const Var<T>& a, std::size_t rows) {
  const std::size_t k = a->value.size();
  Tensor<T> out({rows, k});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = a->value[j];
  return record(std::move(out), {a}, [rows, k](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < k; ++j) g[j] += self.grad[i * k + j];
  });
}

template <typename T>
Var<T> Tape<T>::gather_lastdim(const Var<T>& x, const std::vector<std::int32_t>& indices,
                               std::size_t k) {
  const auto& xv = x->value;
  const std::size_t n = xv.last_dim();
  const std::size_t slices = xv.size() / n;
  if (indices.size() != slices * k) {
    throw DimensionError("gather_lastdim: " + std::to_string(indices.size()) +
                         " indices for " + std::to_string(slices) + " slices of width " +
                         std::to_string(k));
  }
  Shape shape = xv.shape();
  shape.back() = k;
  Tensor<T> out(shape);
  for (std::size_t s = 0; s < slices; ++s)
    for (std::size_t j = 0; j < k; ++j) {
      const auto idx = indices[s * k + j];
      if (idx < 0 || static_cast<std::size_t>(idx) >= n) {
        throw ContractError("gather_lastdim: index " + std::to_string(idx) + " out of range");
      }
      out[s * k + j] = xv[s * n + static_cast<std::size_t>(idx)];
    }
  return record(std::move(out), {x}, [indices, n, k, slices](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t s = 0; s < slices; ++s)
      for (std::size_t j = 0; j < k; ++j) {
        g[s * n + static_cast<std::size_t>(indices[s * k + j])] += self.grad[s * k + j];
      }
  });
}

template <typename T>
Var<T> Tape<T>::normalize_lastdim(const Var<T>& x) {
  const auto& xv = x->value;
  const std::size_t d = xv.last_dim();
  const std::size_t slices = xv.size() / d;
  Tensor<T> out = xv;
  std::vector<T> sums(slices);
  for (std::size_t s = 0; s < slices; ++s) {
    T total = 0;
    for (std::size_t j = 0; j < d; ++j) total += xv[s * d + j];
    sums[s] = total;
    for (std::size_t j = 0; j < d; ++j) out[s * d + j] /= total;
  }
  return record(std::move(out), {x}, [d, slices, sums](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t s = 0; s < slices; ++s) {
      T dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += self.grad[s * d + j] * self.value[s * d + j];
      for (std::size_t j = 0; j < d; ++j) g[s * d + j] += (self.grad[s * d + j] - dot) / sums[s];
    }
  });
}

template <typename T>
Var<T> Tape<T>::expert_convolve(const Var<T>& x, const Var<T>& bank,
                                const std::vector<std::int32_t>& indices, const Var<T>& weights) {
  const auto& xv = x->value;
  const auto& bv = bank->value;
  if (xv.rank() != 3 || bv.rank() != 5) {
    throw DimensionError("expert_convolve: expected H×W×C input and N×k×k×C×C bank, got " +
                         to_string(xv.shape()) + " and " + to_string(bv.shape()));
  }
  if (bv.dim(3) != xv.dim(2) || bv.dim(4) != xv.dim(2)) {
    throw DimensionError("expert_convolve: bank " + to_string(bv.shape()) +
                         " does not match input channels " + std::to_string(xv.dim(2)));
  }
  if (bv.dim(1) % 2 == 0) throw ConfigError("expert_convolve: even kernel size");
  const kernels::ExpertGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), bv.dim(0),
                                  weights->value.last_dim(), bv.dim(1)};
  if (weights->value.size() != g.pixels() * g.top_k || indices.size() != g.pixels() * g.top_k) {
    throw DimensionError("expert_convolve: selection does not cover " + to_string(xv.shape()));
  }
  Tensor<T> out(xv.shape());
  const bool keep = grad_enabled_ && (x->requires_grad || bank->requires_grad || weights->requires_grad);
  std::vector<T> responses(keep ? g.pixels() * g.top_k * g.channels : 0);
  kernels::expert_dispatch_forward<T>(xv.data(), bv.data(), indices, weights->value.data(),
                                      out.data(), responses, g);
  return record(std::move(out), {x, bank, weights},
                [g, indices, responses = std::move(responses)](Node<T>& self) {
                  Node<T>& x = *self.inputs[0];
                  Node<T>& b = *self.inputs[1];
                  Node<T>& w = *self.inputs[2];
                  kernels::expert_dispatch_backward<T>(
                      x.value.data(), b.value.data(), indices, w.value.data(), responses,
                      self.grad, x.requires_grad ? std::span<T>(x.ensure_grad()) : std::span<T>(),
                      b.requires_grad ? std::span<T>(b.ensure_grad()) : std::span<T>(),
                      w.requires_grad ? std::span<T>(w.ensure_grad()) : std::span<T>(), g);
                });
}

template class Tape<float>;
template class Tape<double>;
template TopK<float> topk_lastdim(const Tensor<float>&, std::size_t);
template TopK<double> topk_lastdim(const Tensor<double>&, std::size_t);

}  // namespace ldr
