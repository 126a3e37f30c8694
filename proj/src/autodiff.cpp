#include "avatar/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "avatar/kernels.hpp"

namespace avatar::ad {

namespace {

thread_local bool g_grad_enabled = true;

using std::int64_t;

// Strides (in elements) of `shape` aligned to an output of rank `rank`, with 0
// for broadcast axes.
std::vector<int64_t> aligned_strides(const Shape& shape, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<int64_t> strides(rank, 0);
  int64_t s = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const std::size_t src = shape.size() - 1 - i;
    const std::size_t dst = rank - 1 - i;
    strides[dst] = shape[src] == 1 ? 0 : s;
    s *= shape[src];
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

// Calls f(out_index, a_offset, b_offset) for every output element.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa, const std::vector<int64_t>& sb, F&& f) {
  const std::size_t rank = out.size();
  const int64_t total = shape_numel(out);
  if (rank == 0) {
    if (total == 1) f(0, 0, 0);
    return;
  }
  std::vector<int64_t> idx(rank, 0);
  int64_t oa = 0, ob = 0;
  const int64_t inner = out[rank - 1];
  const int64_t ia = sa[rank - 1], ib = sb[rank - 1];
  for (int64_t o = 0; o < total; o += inner) {
    int64_t a = oa, b = ob;
    for (int64_t k = 0; k < inner; ++k, a += ia, b += ib) f(o + k, a, b);
    // advance odometer on the outer axes
    for (int d = static_cast<int>(rank) - 2; d >= 0; --d) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

bool needs_grad(const std::vector<Var>& inputs) {
  if (!g_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
}

template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = fwd(x[i]);
  return make_op(std::move(y), {a}, [deriv](Node& n) {
    auto& in = n.inputs[0];
    Tensor& g = in->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * deriv(in->value[i], n.value[i]);
  });
}

int normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::invalid_argument("axis out of range");
  return axis;
}

}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.empty() && value.numel() > 0) grad = Tensor(value.shape(), 0.0);
  if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::grad() const {
  if (node_->grad.empty()) node_->ensure_grad();
  return node_->grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  Var out(std::move(value), false);
  if (needs_grad(inputs)) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.inputs.reserve(inputs.size());
    for (auto& v : inputs) node.inputs.push_back(v.node());
    node.backward = std::move(fn);
  }
  return out;
}

Var constant(Tensor value) { return Var(std::move(value), false); }

void backward(const Var& root) {
  if (root.numel() != 1) throw std::invalid_argument("backward() needs a scalar root, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;
  // Iterative post-order DFS for the topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---------------------------------------------------------------- binary ops

namespace {

enum class BinOp { Add, Sub, Mul, Div };

Var binary(const Var& a, const Var& b, BinOp op) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() == y.shape()) {
    Tensor out(x.shape());
    const int64_t n = x.numel();
    switch (op) {
      case BinOp::Add: for (int64_t i = 0; i < n; ++i) out[i] = x[i] + y[i]; break;
      case BinOp::Sub: for (int64_t i = 0; i < n; ++i) out[i] = x[i] - y[i]; break;
      case BinOp::Mul: for (int64_t i = 0; i < n; ++i) out[i] = x[i] * y[i]; break;
      case BinOp::Div: for (int64_t i = 0; i < n; ++i) out[i] = x[i] / y[i]; break;
    }
    return make_op(std::move(out), {a, b}, [op](Node& nd) {
      auto& pa = nd.inputs[0];
      auto& pb = nd.inputs[1];
      const int64_t n = nd.value.numel();
      const Tensor& g = nd.grad;
      if (pa->requires_grad) {
        Tensor& ga = pa->ensure_grad();
        switch (op) {
          case BinOp::Add:
          case BinOp::Sub: for (int64_t i = 0; i < n; ++i) ga[i] += g[i]; break;
          case BinOp::Mul: for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb->value[i]; break;
          case BinOp::Div: for (int64_t i = 0; i < n; ++i) ga[i] += g[i] / pb->value[i]; break;
        }
      }
      if (pb->requires_grad) {
        Tensor& gb = pb->ensure_grad();
        switch (op) {
          case BinOp::Add: for (int64_t i = 0; i < n; ++i) gb[i] += g[i]; break;
          case BinOp::Sub: for (int64_t i = 0; i < n; ++i) gb[i] -= g[i]; break;
          case BinOp::Mul: for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa->value[i]; break;
          case BinOp::Div:
            for (int64_t i = 0; i < n; ++i) gb[i] -= g[i] * nd.value[i] / pb->value[i];
            break;
        }
      }
    });
  }
  Shape out_shape = broadcast_shape(x.shape(), y.shape());
  auto sa = aligned_strides(x.shape(), out_shape);
  auto sb = aligned_strides(y.shape(), out_shape);
  Tensor out(out_shape);
  for_each_broadcast(out_shape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
    switch (op) {
      case BinOp::Add: out[o] = x[ia] + y[ib]; break;
      case BinOp::Sub: out[o] = x[ia] - y[ib]; break;
      case BinOp::Mul: out[o] = x[ia] * y[ib]; break;
      case BinOp::Div: out[o] = x[ia] / y[ib]; break;
    }
  });
  return make_op(std::move(out), {a, b}, [op, out_shape, sa, sb](Node& nd) {
    auto& pa = nd.inputs[0];
    auto& pb = nd.inputs[1];
    const Tensor& g = nd.grad;
    Tensor* ga = pa->requires_grad ? &pa->ensure_grad() : nullptr;
    Tensor* gb = pb->requires_grad ? &pb->ensure_grad() : nullptr;
    const Tensor& x = pa->value;
    const Tensor& y = pb->value;
    for_each_broadcast(out_shape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
      switch (op) {
        case BinOp::Add:
          if (ga) (*ga)[ia] += g[o];
          if (gb) (*gb)[ib] += g[o];
          break;
        case BinOp::Sub:
          if (ga) (*ga)[ia] += g[o];
          if (gb) (*gb)[ib] -= g[o];
          break;
        case BinOp::Mul:
          if (ga) (*ga)[ia] += g[o] * y[ib];
          if (gb) (*gb)[ib] += g[o] * x[ia];
          break;
        case BinOp::Div:
          if (ga) (*ga)[ia] += g[o] / y[ib];
          if (gb) (*gb)[ib] -= g[o] * x[ia] / (y[ib] * y[ib]);
          break;
      }
    });
  });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::Add); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::Sub); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::Mul); }
Var div(const Var& a, const Var& b) { return binary(a, b, BinOp::Div); }

// ----------------------------------------------------------------- unary ops

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(const Var& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var silu(const Var& a) {
  return unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------- reductions

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().span()) s += v;
  return make_op(Tensor::scalar(s), {a}, [](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    const double gv = n.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gv;
  });
}

Var mean(const Var& a) {
  const auto n = a.numel();
  if (n == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_axis(const Var& a, int axis, bool keepdim) {
  const Shape& s = a.value().shape();
  axis = normalize_axis(axis, s.size());
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const int64_t len = s[axis];
  Shape os = s;
  if (keepdim) os[axis] = 1;
  else os.erase(os.begin() + axis);
  Tensor out(os, 0.0);
  const Tensor& x = a.value();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t l = 0; l < len; ++l)
      for (int64_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * len + l) * inner + i];
  return make_op(std::move(out), {a}, [outer, len, inner](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t l = 0; l < len; ++l)
        for (int64_t i = 0; i < inner; ++i) g[(o * len + l) * inner + i] += n.grad[o * inner + i];
  });
}

Var dot(const Var& a, const Var& b) {
  if (a.numel() != b.numel()) throw std::invalid_argument("dot: size mismatch");
  return sum(mul(reshape(a, {a.numel()}), reshape(b, {b.numel()})));
}

Var l2_norm(const Var& a, double eps) {
  double s = 0.0;
  for (double v : a.value().span()) s += v * v;
  const double r = std::sqrt(s + eps);
  return make_op(Tensor::scalar(r), {a}, [](Node& n) {
    auto& in = n.inputs[0];
    Tensor& g = in->ensure_grad();
    const double r = n.value[0];
    if (r == 0.0) return;
    const double k = n.grad[0] / r;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += k * in->value[i];
  });
}

// ------------------------------------------------------------------- shaping

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

Var transpose_last(const Var& a) {
  const Shape& s = a.value().shape();
  if (s.size() < 2) throw std::invalid_argument("transpose_last needs rank >= 2");
  const int64_t r = s[s.size() - 2], c = s[s.size() - 1];
  const int64_t batch = a.numel() / (r * c);
  Shape os = s;
  std::swap(os[os.size() - 2], os[os.size() - 1]);
  Tensor out(os);
  const Tensor& x = a.value();
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = x[b * r * c + i * c + j];
  return make_op(std::move(out), {a}, [batch, r, c](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) g[b * r * c + i * c + j] += n.grad[b * r * c + j * r + i];
  });
}

Var slice(const Var& a, int axis, int64_t start, int64_t length) {
  const Shape& s = a.value().shape();
  axis = normalize_axis(axis, s.size());
  if (start < 0 || length < 0 || start + length > s[axis])
    throw std::invalid_argument("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                                ") out of range for axis of size " + std::to_string(s[axis]));
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const int64_t len = s[axis];
  Shape os = s;
  os[axis] = length;
  Tensor out(os);
  const Tensor& x = a.value();
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(x.data() + (o * len + start) * inner, length * inner, out.data() + o * length * inner);
  return make_op(std::move(out), {a}, [outer, len, inner, start, length](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t k = 0; k < length * inner; ++k) g[(o * len + start) * inner + k] += n.grad[o * length * inner + k];
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  const Shape& s0 = parts[0].value().shape();
  axis = normalize_axis(axis, s0.size());
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<int64_t> lens;
  int64_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.value().shape();
    if (s.size() != s0.size()) throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && s[i] != s0[i])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    lens.push_back(s[axis]);
    total += s[axis];
  }
  Shape os = s0;
  os[axis] = total;
  Tensor out(os);
  int64_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& x = parts[p].value();
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(x.data() + o * lens[p] * inner, lens[p] * inner, out.data() + (o * total + off) * inner);
    off += lens[p];
  }
  return make_op(std::move(out), parts, [outer, inner, lens, total](Node& n) {
    int64_t off = 0;
    for (std::size_t p = 0; p < n.inputs.size(); ++p) {
      auto& in = n.inputs[p];
      if (in->requires_grad) {
        Tensor& g = in->ensure_grad();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t k = 0; k < lens[p] * inner; ++k) g[o * lens[p] * inner + k] += n.grad[(o * total + off) * inner + k];
      }
      off += lens[p];
    }
  });
}

// -------------------------------------------------------------------- matmul

Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.value().shape();
  const Shape& sb = b.value().shape();
  const bool batched = sa.size() == 3;
  if (!((sa.size() == 2 && sb.size() == 2) || (sa.size() == 3 && sb.size() == 3)))
    throw std::invalid_argument("matmul expects rank 2 or 3 operands");
  const int64_t batch = batched ? sa[0] : 1;
  if (batched && sb[0] != batch) throw std::invalid_argument("matmul: batch mismatch");
  const int64_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
  const int64_t k2 = sb[sb.size() - 2], nn = sb[sb.size() - 1];
  if (k != k2) throw std::invalid_argument("matmul: inner dims " + shape_str(sa) + " x " + shape_str(sb));
  Shape os = batched ? Shape{batch, m, nn} : Shape{m, nn};
  Tensor out(os);
  for (int64_t bi = 0; bi < batch; ++bi)
    kernels::gemm(static_cast<int>(m), static_cast<int>(nn), static_cast<int>(k),
                  a.value().span().subspan(bi * m * k, m * k), false,
                  b.value().span().subspan(bi * k * nn, k * nn), false,
                  out.span().subspan(bi * m * nn, m * nn), false);
  return make_op(std::move(out), {a, b}, [batch, m, k, nn](Node& n) {
    auto& pa = n.inputs[0];
    auto& pb = n.inputs[1];
    for (int64_t bi = 0; bi < batch; ++bi) {
      auto g = n.grad.span().subspan(bi * m * nn, m * nn);
      if (pa->requires_grad)
        kernels::gemm(static_cast<int>(m), static_cast<int>(k), static_cast<int>(nn), g, false,
                      pb->value.span().subspan(bi * k * nn, k * nn), true,
                      pa->ensure_grad().span().subspan(bi * m * k, m * k), true);
      if (pb->requires_grad)
        kernels::gemm(static_cast<int>(k), static_cast<int>(nn), static_cast<int>(m),
                      pa->value.span().subspan(bi * m * k, m * k), true, g, false,
                      pb->ensure_grad().span().subspan(bi * k * nn, k * nn), true);
    }
  });
}

// ----------------------------------------------------------------- conv ops

namespace {

Var conv_impl(const Var& x, const Var& w, const Var& bias, kernels::ConvDims d, Shape out_shape) {
  Tensor out(std::move(out_shape));
  std::span<const double> bspan;
  if (bias.defined()) bspan = bias.value().span();
  kernels::conv2d_forward(d, x.value().span(), w.value().span(), bspan, out.span());
  std::vector<Var> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_op(std::move(out), std::move(inputs), [d](Node& n) {
    auto& px = n.inputs[0];
    auto& pw = n.inputs[1];
    std::span<double> dx, dw, db;
    if (px->requires_grad) dx = px->ensure_grad().span();
    if (pw->requires_grad) dw = pw->ensure_grad().span();
    if (n.inputs.size() > 2 && n.inputs[2]->requires_grad) db = n.inputs[2]->ensure_grad().span();
    kernels::conv2d_backward(d, px->value.span(), pw->value.span(), n.grad.span(), dx, dw, db);
  });
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad) {
  const Shape& sx = x.value().shape();
  const Shape& sw = w.value().shape();
  if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1])
    throw std::invalid_argument("conv2d: input " + shape_str(sx) + " weight " + shape_str(sw));
  kernels::ConvDims d;
  d.n = static_cast<int>(sx[0]);
  d.cin = static_cast<int>(sx[1]);
  d.h = static_cast<int>(sx[2]);
  d.w = static_cast<int>(sx[3]);
  d.cout = static_cast<int>(sw[0]);
  d.kh = static_cast<int>(sw[2]);
  d.kw = static_cast<int>(sw[3]);
  d.sh = d.sw = stride;
  d.ph = d.pw = pad;
  if (d.hout() <= 0 || d.wout() <= 0) throw std::invalid_argument("conv2d: empty output");
  return conv_impl(x, w, bias, d, {sx[0], sw[0], d.hout(), d.wout()});
}

Var conv1d(const Var& x, const Var& w, const Var& bias, int stride, int pad) {
  const Shape& sx = x.value().shape();
  const Shape& sw = w.value().shape();
  if (sx.size() != 3 || sw.size() != 3 || sx[1] != sw[1])
    throw std::invalid_argument("conv1d: input " + shape_str(sx) + " weight " + shape_str(sw));
  kernels::ConvDims d;
  d.n = static_cast<int>(sx[0]);
  d.cin = static_cast<int>(sx[1]);
  d.h = 1;
  d.w = static_cast<int>(sx[2]);
  d.cout = static_cast<int>(sw[0]);
  d.kh = 1;
  d.kw = static_cast<int>(sw[2]);
  d.sh = 1;
  d.sw = stride;
  d.ph = 0;
  d.pw = pad;
  if (d.wout() <= 0) throw std::invalid_argument("conv1d: empty output");
  return conv_impl(x, w, bias, d, {sx[0], sw[0], d.wout()});
}

// -------------------------------------------------------------- resampling

Var upsample_nearest(const Var& x, int factor) {
  const Shape& s = x.value().shape();
  if (s.size() != 3 && s.size() != 4) throw std::invalid_argument("upsample expects [N,C,L] or [N,C,H,W]");
  const bool two_d = s.size() == 4;
  const int64_t planes = s[0] * s[1];
  const int64_t h = two_d ? s[2] : 1, w = s.back();
  const int64_t fh = two_d ? factor : 1;
  Shape os = s;
  if (two_d) os[2] *= factor;
  os.back() *= factor;
  Tensor out(os);
  const Tensor& in = x.value();
  const int64_t oh = h * fh, ow = w * factor;
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t xx = 0; xx < ow; ++xx) out[(p * oh + y) * ow + xx] = in[(p * h + y / fh) * w + xx / factor];
  return make_op(std::move(out), {x}, [planes, h, w, fh, factor](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    const int64_t oh = h * fh, ow = w * factor;
    for (int64_t p = 0; p < planes; ++p)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx) g[(p * h + y / fh) * w + xx / factor] += n.grad[(p * oh + y) * ow + xx];
  });
}

Var avg_pool(const Var& x, int factor) {
  const Shape& s = x.value().shape();
  if (s.size() != 3 && s.size() != 4) throw std::invalid_argument("avg_pool expects [N,C,L] or [N,C,H,W]");
  const bool two_d = s.size() == 4;
  const int64_t planes = s[0] * s[1];
  const int64_t h = two_d ? s[2] : 1, w = s.back();
  const int64_t fh = two_d ? factor : 1;
  if (h % fh != 0 || w % factor != 0) throw std::invalid_argument("avg_pool: size not divisible by factor");
  const int64_t oh = h / fh, ow = w / factor;
  Shape os = s;
  if (two_d) os[2] = oh;
  os.back() = ow;
  Tensor out(os, 0.0);
  const double inv = 1.0 / static_cast<double>(fh * factor);
  const Tensor& in = x.value();
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) out[(p * oh + y / fh) * ow + xx / factor] += inv * in[(p * h + y) * w + xx];
  return make_op(std::move(out), {x}, [planes, h, w, fh, factor, oh, ow, inv](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    for (int64_t p = 0; p < planes; ++p)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t xx = 0; xx < w; ++xx) g[(p * h + y) * w + xx] += inv * n.grad[(p * oh + y / fh) * ow + xx / factor];
  });
}

// ------------------------------------------------------------ normalization

Var group_norm(const Var& x, int groups, double eps) {
  const Shape& s = x.value().shape();
  if (s.size() < 2) throw std::invalid_argument("group_norm expects [N,C,...]");
  const int64_t nb = s[0], c = s[1];
  if (c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
  const int64_t spatial = x.numel() / (nb * c);
  const int64_t gsize = (c / groups) * spatial;
  const int64_t ng = nb * groups;
  Tensor out(s);
  std::vector<double> inv_std(static_cast<std::size_t>(ng));
  const Tensor& in = x.value();
  for (int64_t g = 0; g < ng; ++g) {
    const double* src = in.data() + g * gsize;
    double m = 0.0;
    for (int64_t i = 0; i < gsize; ++i) m += src[i];
    m /= static_cast<double>(gsize);
    double v = 0.0;
    for (int64_t i = 0; i < gsize; ++i) v += (src[i] - m) * (src[i] - m);
    v /= static_cast<double>(gsize);
    const double is = 1.0 / std::sqrt(v + eps);
    inv_std[g] = is;
    double* dst = out.data() + g * gsize;
    for (int64_t i = 0; i < gsize; ++i) dst[i] = (src[i] - m) * is;
  }
  return make_op(std::move(out), {x}, [ng, gsize, inv_std](Node& n) {
    Tensor& gx = n.inputs[0]->ensure_grad();
    for (int64_t g = 0; g < ng; ++g) {
      const double* y = n.value.data() + g * gsize;
      const double* gy = n.grad.data() + g * gsize;
      double sg = 0.0, sgy = 0.0;
      for (int64_t i = 0; i < gsize; ++i) {
        sg += gy[i];
        sgy += gy[i] * y[i];
      }
      const double inv_n = 1.0 / static_cast<double>(gsize);
      double* dst = gx.data() + g * gsize;
      for (int64_t i = 0; i < gsize; ++i) dst[i] += inv_std[g] * (gy[i] - inv_n * sg - y[i] * inv_n * sgy);
    }
  });
}

Var softmax(const Var& x) {
  const Shape& s = x.value().shape();
  const int64_t len = s.back();
  const int64_t rows = x.numel() / len;
  Tensor out(s);
  const Tensor& in = x.value();
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * len;
    double* dst = out.data() + r * len;
    const double mx = *std::max_element(src, src + len);
    double z = 0.0;
    for (int64_t i = 0; i < len; ++i) z += (dst[i] = std::exp(src[i] - mx));
    for (int64_t i = 0; i < len; ++i) dst[i] /= z;
  }
  return make_op(std::move(out), {x}, [rows, len](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = n.value.data() + r * len;
      const double* gy = n.grad.data() + r * len;
      double d = 0.0;
      for (int64_t i = 0; i < len; ++i) d += gy[i] * y[i];
      for (int64_t i = 0; i < len; ++i) g[r * len + i] += y[i] * (gy[i] - d);
    }
  });
}

}  // namespace avatar::ad
