// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "ldr/kernels.hpp"
#include "ldr/tensor.hpp"

namespace ldr {

/// One value in the computation graph. Leaves with requires_grad are the
/// trainable parameters; interior nodes carry the rule that pushes their
/// gradient back to their inputs.
template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
  bool has_grad() const { return !grad.empty(); }
  void zero_grad() { grad.clear(); }
  Tensor<T> grad_tensor() const {
    return has_grad() ? Tensor<T>(value.shape(), grad) : Tensor<T>(value.shape());
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

/// Trainable leaf (persists across tapes).
template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = true) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

/// Per-slice Top-K over the last axis: descending values, lowest index first
/// on ties.
template <typename T>
struct TopK {
  std::vector<std::int32_t> indices;
  Tensor<T> values;
};

template <typename T>
TopK<T> topk_lastdim(const Tensor<T>& x, std::size_t k);

/// Records operations in execution order. backward() replays the recorded
/// rules in reverse; clear() drops the graph between training steps. With
/// gradients disabled nothing is recorded.
template <typename T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  Var<T> constant(Tensor<T> value) { return make_leaf(std::move(value), false); }

  Var<T> matmul(const Var<T>& a, const Var<T>& b);
  Var<T> transpose(const Var<T>& a);
  Var<T> softmax_lastdim(const Var<T>& x);
  /// Same-padded convolution; x is H×W×Cin, filter k×k×Cin×Cout (k odd).
  Var<T> conv2d(const Var<T>& x, const Var<T>& filter, std::size_t stride = 1);
  /// x[..., C] + bias[C]
  Var<T> add_bias(const Var<T>& x, const Var<T>& bias);

  // Elementwise; the only broadcast is a one-element operand against a tensor.
  Var<T> add(const Var<T>& a, const Var<T>& b);
  Var<T> sub(const Var<T>& a, const Var<T>& b);
  Var<T> mul(const Var<T>& a, const Var<T>& b);
  Var<T> scalar_mul(const Var<T>& a, T s);
  Var<T> add_scalar(const Var<T>& a, T s);
  Var<T> relu(const Var<T>& a);
  Var<T> sigmoid(const Var<T>& a);
  Var<T> sqrt(const Var<T>& a);
  Var<T> square(const Var<T>& a);
  Var<T> sum(const Var<T>& a);
  Var<T> mean(const Var<T>& a);

  Var<T> reshape(const Var<T>& a, Shape shape);
  /// Nearest-neighbour ×2 upsampling of an H×W×C tensor.
  Var<T> upsample2x(const Var<T>& a);
  /// Column means of an R×C matrix, as a 1×C matrix.
  Var<T> mean_rows(const Var<T>& a);
  /// Repeats a 1×K matrix into R×K.
  Var<T> tile_rows(const Var<T>& a, std::size_t rows);
  /// out[..., k] = x[..., indices[..., k]]
  Var<T> gather_lastdim(const Var<T>& x, const std::vector<std::int32_t>& indices, std::size_t k);
  /// Divides each last-axis slice by its sum.
  Var<T> normalize_lastdim(const Var<T>& x);
  /// Sparse per-pixel expert convolution (see kernels::expert_dispatch_forward).
  /// x: H×W×C, bank: N×k×k×C×C, weights: H×W×K.
  Var<T> expert_convolve(const Var<T>& x, const Var<T>& bank,
                         const std::vector<std::int32_t>& indices, const Var<T>& weights);

  /// Seeds d(loss)/d(loss) = 1 and replays the tape. Gradients accumulate
  /// into existing buffers; call zero_grad on leaves to reset.
  void backward(const Var<T>& loss);

 private:
  Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> rule);

  bool grad_enabled_;
  std::vector<Var<T>> nodes_;
};

}  // namespace ldr
