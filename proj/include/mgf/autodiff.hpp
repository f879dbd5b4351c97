// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mgf/tensor.hpp"

namespace mgf::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the
/// tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Gradient of a scalar loss, keyed by parameter id.
using Gradients = std::map<int, Tensor>;

/// Append-only record of tensor operations for reverse-mode
/// differentiation.
///
/// Every op output is checked for finiteness when recorded. A tape built
/// with `record = false` keeps values only and cannot run backward; that
/// mode serves inference.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out, const Tensor& out)>;

  explicit Tape(bool record = true) : record_(record) { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  /// Trainable leaf. Several leaves may share a `param_id`; their
  /// gradients are summed.
  Var parameter(Tensor value, int param_id);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Records an op output. `fn` receives the output gradient and value and
  /// must add into the inputs' buffers via grad_buffer().
  /// The closure is only materialized when the tape records.
  template <typename F>
  Var push(Tensor value, std::initializer_list<Var> inputs, F&& fn, const char* op) {
    return push_node(std::move(value), inputs, record_ ? BackwardFn(std::forward<F>(fn)) : BackwardFn{}, op);
  }

  /// Gradient accumulator of node `id`, zero-initialized on first use.
  Tensor& grad_buffer(int id);

  /// Reverse sweep from `loss` in strict reverse creation order. Returns
  /// a gradient for every parameter leaf (zeros when off the path).
  Gradients backward(Var loss);

 private:
  Var push_node(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn, const char* op);

  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    int param_id = -1;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool record_;
};

// Elementwise, equal shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a * m with a constant tensor m (masks, dropout keep-maps).
Var mul_const(Var a, const Tensor& m);
Var add_const(Var a, const Tensor& m);
Var scale(Var a, double s);
Var exp(Var a);
Var tanh(Var a);
Var silu(Var a);
Var square(Var a);
/// s_max * tanh(a / s_max).
Var soft_clamp(Var a, double s_max);

/// Sum of all elements as a rank-0 scalar.
Var sum(Var a);
/// Sum of elementwise log N(a; 0, 1).
Var log_normal_sum(Var a);

/// Same-padded convolution, [Cin,H,W] x [Cout,Cin,k,k] -> [Cout,H,W].
Var conv2d(Var x, Var kernel);
/// x[c,:,:] + b[c].
Var add_channel_bias(Var x, Var b);
/// gamma[c] * h[c,:,:] + beta[c].
Var film(Var h, Var gamma, Var beta);
/// y[:,i,j] = W * x[:,i,j].
Var channel_mix(Var w, Var x);
Var matvec(Var w, Var v);
Var matmul(Var a, Var b);
/// [C] -> [C,C] diagonal matrix.
Var diag_embed(Var v);
/// Row k of a [K,E] table.
Var row(Var table, std::size_t k);

Var reshape(Var x, Shape shape);
Var concat_channels(Var a, Var b);
Var slice_channels(Var x, std::size_t begin, std::size_t end);
/// [E] -> [E,H,W], constant over space.
Var broadcast_spatial(Var v, std::size_t h, std::size_t w);
/// Standardize all elements to zero mean and unit variance.
Var layer_norm(Var x, double eps = 1e-5);
Var squeeze2x2(Var x);
Var unsqueeze2x2(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace mgf::ad
