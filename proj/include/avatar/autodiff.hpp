#pragma once

// Tape-free reverse-mode automatic differentiation over Tensor values.
// Each op records its inputs and a backward closure on a shared node; calling
// backward() on a scalar walks the graph in reverse topological order.

#include <functional>
#include <memory>
#include <vector>

#include "avatar/tensor.hpp"

namespace avatar::ad {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const;
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(std::size_t i) const { return node_->value.dim(i); }
  std::int64_t numel() const { return node_->value.numel(); }
  double item() const { return node_->value.item(); }
  bool defined() const { return static_cast<bool>(node_); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad = Tensor(); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Returns whether ops currently record graph edges (thread-local).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Accumulates d(root)/d(leaf) into every reachable leaf with requires_grad.
void backward(const Var& root);

/// Builds a node from a precomputed value; `fn` receives the node and must
/// push gradients into node.inputs[i]->ensure_grad() for inputs that require it.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn);

Var constant(Tensor value);

// Elementwise with numpy-style broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
/// Gradient passes only where lo < x < hi.
Var clamp(const Var& a, double lo, double hi);

Var sum(const Var& a);
Var mean(const Var& a);
/// Sum over one axis; the axis is removed unless keepdim.
Var sum_axis(const Var& a, int axis, bool keepdim = false);
Var dot(const Var& a, const Var& b);
/// Euclidean norm of all entries, with `eps` added under the root.
Var l2_norm(const Var& a, double eps = 0.0);

Var reshape(const Var& a, Shape shape);
/// Swap the last two axes.
Var transpose_last(const Var& a);
Var slice(const Var& a, int axis, std::int64_t start, std::int64_t length);
Var concat(const std::vector<Var>& parts, int axis);

/// [m,k] x [k,n], or batched [b,m,k] x [b,k,n].
Var matmul(const Var& a, const Var& b);

/// x [N,C,H,W], w [O,C,K,K], bias [O] (may be undefined).
Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad);
/// x [N,C,L], w [O,C,K], bias [O] (may be undefined).
Var conv1d(const Var& x, const Var& w, const Var& bias, int stride, int pad);

/// Nearest-neighbour upsampling of the trailing spatial axes by `factor`.
Var upsample_nearest(const Var& x, int factor);
/// Non-overlapping average pooling of the trailing spatial axes.
Var avg_pool(const Var& x, int factor);

/// Normalization over (channels-in-group x spatial) per item, no affine.
Var group_norm(const Var& x, int groups, double eps = 1e-5);
/// Softmax over the last axis.
Var softmax(const Var& x);

}  // namespace avatar::ad
