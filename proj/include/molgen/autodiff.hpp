#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "molgen/rng.hpp"

namespace molgen::diff {

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

class NonScalarLossError : public std::runtime_error {
 public:
  explicit NonScalarLossError(const std::string& what) : std::runtime_error(what) {}
};

class SecondOrderUnsupportedError : public std::runtime_error {
 public:
  explicit SecondOrderUnsupportedError(const std::string& what)
      : std::runtime_error(what) {}
};

class SingularMatrixError : public std::runtime_error {
 public:
  explicit SingularMatrixError(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::uint64_t id = 0;

  // Backward graph. vjp maps (self, upstream grad) to per-parent gradients,
  // expressed with the same differentiable ops so gradients can themselves
  // be differentiated.
  std::vector<std::shared_ptr<Node>> parents;
  std::function<std::vector<Tensor>(const Tensor&, const Tensor&)> vjp;
  bool second_order_ok = true;
  const char* op = "leaf";
};

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Temporarily disables graph recording (gradient tapes are not built).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Dense 64-bit tensor participating in a reverse-mode differentiation
/// graph. Cheap handle semantics: copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data) {
    if (numel(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("data length does not match shape " + shape_str(shape));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->id = detail::next_node_id();
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  static Tensor zeros(Shape shape) {
    auto n = numel(shape);
    return from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  }

  static Tensor full(Shape shape, double value) {
    auto n = numel(shape);
    return from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
  }

  static Tensor scalar(double value) { return from({}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->data.size()); }
  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }

  double item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }

  Tensor& set_requires_grad(bool v) {
    if (v && node_->vjp)
      throw std::logic_error("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = v;
    return *this;
  }

  /// A leaf sharing this tensor's values but cut off from the graph.
  Tensor detach() const {
    Tensor t = from(node_->shape, node_->data);
    return t;
  }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

using Vjp = std::function<std::vector<Tensor>(const Tensor&, const Tensor&)>;

inline Tensor make_op(Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents, Vjp vjp, const char* op,
                      bool second_order_ok = true) {
  bool track = grad_mode();
  if (track) {
    track = false;
    for (const auto& p : parents)
      if (p.node()->requires_grad) {
        track = true;
        break;
      }
  }
  Tensor t = Tensor::from(std::move(shape), std::move(data));
  if (track) {
    auto* n = t.node();
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_ptr());
    n->vjp = std::move(vjp);
    n->second_order_ok = second_order_ok;
    n->op = op;
  }
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shape utilities
// ---------------------------------------------------------------------------

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
    const int db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor broadcast_to(const Tensor& x, const Shape& target);
Tensor sum_to(const Tensor& x, const Shape& target);

namespace detail {

// Row-major strides, with zero stride on broadcast dimensions relative to
// the (right-aligned) target shape.
inline std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  if (in.size() > out.size())
    throw ShapeError("cannot broadcast " + shape_str(in) + " to lower-rank " +
                     shape_str(out));
  std::vector<std::int64_t> strides(out.size(), 0);
  std::int64_t s = 1;
  for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
    const std::size_t oi = out.size() - in.size() + static_cast<std::size_t>(i);
    if (in[static_cast<std::size_t>(i)] == out[oi])
      strides[oi] = s;
    else if (in[static_cast<std::size_t>(i)] != 1)
      throw ShapeError("cannot broadcast " + shape_str(in) + " to " + shape_str(out));
    s *= in[static_cast<std::size_t>(i)];
  }
  return strides;
}

}  // namespace detail

inline Tensor broadcast_to(const Tensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  const auto strides = detail::broadcast_strides(x.shape(), target);
  const auto n = numel(target);
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* src = x.data().data();
  std::vector<int> idx(target.size(), 0);
  std::int64_t src_off = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = src[src_off];
    for (int d = static_cast<int>(target.size()) - 1; d >= 0; --d) {
      const auto ud = static_cast<std::size_t>(d);
      src_off += strides[ud];
      if (++idx[ud] < target[ud]) break;
      idx[ud] = 0;
      src_off -= strides[ud] * target[ud];
    }
  }
  Shape in_shape = x.shape();
  return detail::make_op(
      target, std::move(out), {x},
      [in_shape](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        (void)self;
        return {sum_to(g, in_shape)};
      },
      "broadcast_to");
}

inline Tensor sum_to(const Tensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  const auto strides = detail::broadcast_strides(target, x.shape());
  const auto n = x.size();
  std::vector<double> out(static_cast<std::size_t>(numel(target)), 0.0);
  const double* src = x.data().data();
  const Shape& in = x.shape();
  std::vector<int> idx(in.size(), 0);
  std::int64_t dst_off = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(dst_off)] += src[i];
    for (int d = static_cast<int>(in.size()) - 1; d >= 0; --d) {
      const auto ud = static_cast<std::size_t>(d);
      dst_off += strides[ud];
      if (++idx[ud] < in[ud]) break;
      idx[ud] = 0;
      dst_off -= strides[ud] * in[ud];
    }
  }
  Shape in_shape = x.shape();
  return detail::make_op(
      target, std::move(out), {x},
      [in_shape](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        (void)self;
        return {broadcast_to(g, in_shape)};
      },
      "sum_to");
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic (with numpy-style broadcasting)
// ---------------------------------------------------------------------------

namespace detail {

template <class F>
Tensor binary_op(const Tensor& a, const Tensor& b, F&& f, const char* name, Vjp vjp) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  Tensor ab = broadcast_to(a, out_shape);
  Tensor bb = broadcast_to(b, out_shape);
  const auto n = ab.size();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* pa = ab.data().data();
  const double* pb = bb.data().data();
  for (std::int64_t i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] = f(pa[i], pb[i]);
  return make_op(out_shape, std::move(out), {ab, bb}, std::move(vjp), name);
}

template <class F>
Tensor unary_op(const Tensor& x, F&& f, const char* name, Vjp vjp,
                bool second_order_ok = true) {
  const auto n = x.size();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* px = x.data().data();
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = f(px[i]);
  return make_op(x.shape(), std::move(out), {x}, std::move(vjp), name, second_order_ok);
}

inline Tensor parent(const Tensor& self, std::size_t i) {
  return Tensor::wrap(self.node()->parents[i]);
}

}  // namespace detail

Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, [](double x, double y) { return x + y; }, "add",
      [](const Tensor&, const Tensor& g) -> std::vector<Tensor> { return {g, g}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, [](double x, double y) { return x - y; }, "sub",
      [](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
        return {g, neg(g)};
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, [](double x, double y) { return x * y; }, "mul",
      [](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        return {mul(g, detail::parent(self, 1)), mul(g, detail::parent(self, 0))};
      });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, [](double x, double y) { return x / y; }, "div",
      [](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        Tensor bb = detail::parent(self, 1);
        return {div(g, bb), neg(div(mul(g, self), bb))};
      });
}

inline Tensor neg(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return -v; }, "neg",
      [](const Tensor&, const Tensor& g) -> std::vector<Tensor> { return {neg(g)}; });
}

inline Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor sub(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor sub(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
inline Tensor mul(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor div(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
inline Tensor div(double a, const Tensor& b) { return div(Tensor::scalar(a), b); }

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

inline Tensor tanh(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::tanh(v); }, "tanh",
      [](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        return {mul(g, sub(1.0, mul(self, self)))};
      });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, "sigmoid",
      [](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        return {mul(g, mul(self, sub(1.0, self)))};
      });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::exp(v); }, "exp",
      [](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        return {mul(g, self)};
      });
}

inline Tensor log(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::log(v); }, "log",
      [](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        return {div(g, detail::parent(self, 0))};
      });
}

inline Tensor sqrt(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::sqrt(v); }, "sqrt",
      [](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        return {div(mul(g, 0.5), self)};
      });
}

inline Tensor pow(const Tensor& x, double c) {
  return detail::unary_op(
      x, [c](double v) { return std::pow(v, c); }, "pow",
      [c](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        Tensor xx = detail::parent(self, 0);
        return {mul(mul(g, c), pow(xx, c - 1.0))};
      });
}

inline Tensor square(const Tensor& x) { return mul(x, x); }

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  Shape in_shape = x.shape();
  std::vector<double> data(x.data().begin(), x.data().end());
  return detail::make_op(
      std::move(shape), std::move(data), {x},
      [in_shape](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
        return {reshape(g, in_shape)};
      },
      "reshape");
}

/// Swaps two axes. Self-inverse, so the gradient is the same swap.
inline Tensor swap_axes(const Tensor& x, int axis_a, int axis_b) {
  const int r = x.rank();
  if (axis_a < 0 || axis_b < 0 || axis_a >= r || axis_b >= r)
    throw ShapeError("swap_axes axis out of range");
  if (axis_a == axis_b) return x;
  const Shape& in = x.shape();
  Shape out_shape = in;
  std::swap(out_shape[static_cast<std::size_t>(axis_a)],
            out_shape[static_cast<std::size_t>(axis_b)]);

  std::vector<std::int64_t> in_strides(in.size());
  std::int64_t s = 1;
  for (int i = r - 1; i >= 0; --i) {
    in_strides[static_cast<std::size_t>(i)] = s;
    s *= in[static_cast<std::size_t>(i)];
  }
  std::vector<std::int64_t> strides(in_strides);
  std::swap(strides[static_cast<std::size_t>(axis_a)],
            strides[static_cast<std::size_t>(axis_b)]);

  const auto n = x.size();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* src = x.data().data();
  std::vector<int> idx(out_shape.size(), 0);
  std::int64_t off = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = src[off];
    for (int d = r - 1; d >= 0; --d) {
      const auto ud = static_cast<std::size_t>(d);
      off += strides[ud];
      if (++idx[ud] < out_shape[ud]) break;
      idx[ud] = 0;
      off -= strides[ud] * out_shape[ud];
    }
  }
  return detail::make_op(
      std::move(out_shape), std::move(out), {x},
      [axis_a, axis_b](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
        return {swap_axes(g, axis_a, axis_b)};
      },
      "swap_axes");
}

/// Transposes the last two axes.
inline Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2");
  return swap_axes(x, x.rank() - 2, x.rank() - 1);
}

Tensor pad_slice(const Tensor& g, const Shape& full_shape, int axis, int start);

inline Tensor slice(const Tensor& x, int axis, int start, int stop) {
  const int r = x.rank();
  if (axis < 0 || axis >= r) throw ShapeError("slice axis out of range");
  const Shape& in = x.shape();
  const int dim = in[static_cast<std::size_t>(axis)];
  if (start < 0 || stop > dim || start >= stop)
    throw ShapeError("slice bounds [" + std::to_string(start) + "," +
                     std::to_string(stop) + ") invalid for dim " + std::to_string(dim));
  Shape out_shape = in;
  out_shape[static_cast<std::size_t>(axis)] = stop - start;

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= in[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= in[static_cast<std::size_t>(i)];
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  const double* src = x.data().data();
  double* dst = out.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    const double* s = src + (o * dim + start) * inner;
    std::copy(s, s + static_cast<std::int64_t>(stop - start) * inner,
              dst + o * (stop - start) * inner);
  }
  Shape in_shape = in;
  return detail::make_op(
      std::move(out_shape), std::move(out), {x},
      [in_shape, axis, start](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
        return {pad_slice(g, in_shape, axis, start)};
      },
      "slice");
}

/// Embeds g into a zero tensor of full_shape at offset start along axis.
/// Adjoint of slice.
inline Tensor pad_slice(const Tensor& g, const Shape& full_shape, int axis, int start) {
  const Shape& gs = g.shape();
  const int r = static_cast<int>(full_shape.size());
  const int dim = full_shape[static_cast<std::size_t>(axis)];
  const int width = gs[static_cast<std::size_t>(axis)];
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= full_shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= full_shape[static_cast<std::size_t>(i)];
  std::vector<double> out(static_cast<std::size_t>(numel(full_shape)), 0.0);
  const double* src = g.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    double* d = out.data() + (o * dim + start) * inner;
    std::copy(src + o * width * inner, src + (o + 1) * width * inner, d);
  }
  const int stop = start + width;
  return detail::make_op(
      full_shape, std::move(out), {g},
      [axis, start, stop](const Tensor&, const Tensor& gg) -> std::vector<Tensor> {
        return {slice(gg, axis, start, stop)};
      },
      "pad_slice");
}

inline Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = xs[0].shape();
  const int r = static_cast<int>(first.size());
  if (axis < 0 || axis >= r) throw ShapeError("concat axis out of range");
  Shape out_shape = first;
  int total = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    if (static_cast<int>(s.size()) != r) throw ShapeError("concat rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && s[static_cast<std::size_t>(i)] != first[static_cast<std::size_t>(i)])
        throw ShapeError("concat shape mismatch on non-concat axis");
    total += s[static_cast<std::size_t>(axis)];
  }
  out_shape[static_cast<std::size_t>(axis)] = total;

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= first[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= first[static_cast<std::size_t>(i)];
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  std::int64_t offset = 0;
  for (const auto& t : xs) {
    const int w = t.shape()[static_cast<std::size_t>(axis)];
    const double* src = t.data().data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy(src + o * w * inner, src + (o + 1) * w * inner,
                out.data() + (o * total + offset) * inner);
    offset += w;
  }
  std::vector<int> widths;
  for (const auto& t : xs) widths.push_back(t.shape()[static_cast<std::size_t>(axis)]);
  return detail::make_op(
      std::move(out_shape), std::move(out), xs,
      [axis, widths](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> grads;
        int at = 0;
        for (int w : widths) {
          grads.push_back(slice(g, axis, at, at + w));
          at += w;
        }
        return grads;
      },
      "concat");
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Shape in_shape = x.shape();
  return detail::make_op(
      {}, {acc}, {x},
      [in_shape](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
        return {broadcast_to(g, in_shape)};
      },
      "sum");
}

inline Tensor sum(const Tensor& x, int axis, bool keepdims = false) {
  const int r = x.rank();
  if (axis < 0 || axis >= r) throw ShapeError("sum axis out of range");
  const Shape& in = x.shape();
  Shape keep_shape = in;
  keep_shape[static_cast<std::size_t>(axis)] = 1;

  std::int64_t outer = 1, inner = 1;
  const int dim = in[static_cast<std::size_t>(axis)];
  for (int i = 0; i < axis; ++i) outer *= in[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= in[static_cast<std::size_t>(i)];
  std::vector<double> out(static_cast<std::size_t>(outer * inner), 0.0);
  const double* src = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (int k = 0; k < dim; ++k) {
      const double* s = src + (o * dim + k) * inner;
      double* d = out.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) d[i] += s[i];
    }

  Shape out_shape;
  if (keepdims) {
    out_shape = keep_shape;
  } else {
    for (int i = 0; i < r; ++i)
      if (i != axis) out_shape.push_back(in[static_cast<std::size_t>(i)]);
  }
  Shape in_shape = in;
  return detail::make_op(
      std::move(out_shape), std::move(out), {x},
      [in_shape, keep_shape](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        (void)self;
        return {broadcast_to(reshape(g, keep_shape), in_shape)};
      },
      "sum_axis");
}

inline Tensor mean(const Tensor& x) {
  return mul(sum(x), 1.0 / static_cast<double>(x.size()));
}

inline Tensor mean(const Tensor& x, int axis, bool keepdims = false) {
  const double inv = 1.0 / x.shape()[static_cast<std::size_t>(axis)];
  return mul(sum(x, axis, keepdims), inv);
}

inline Tensor l2_norm(const Tensor& x) { return sqrt(sum(square(x))); }

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

namespace detail {

inline void matmul_kernel(const double* a, const double* b, double* c, int n, int k,
                          int m) {
  std::fill(c, c + static_cast<std::int64_t>(n) * m, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* ai = a + static_cast<std::int64_t>(i) * k;
    double* ci = c + static_cast<std::int64_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + static_cast<std::int64_t>(p) * m;
      for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  const int n = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], m = b.shape()[1];
  if (k != k2)
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(n) * static_cast<std::size_t>(m));
  detail::matmul_kernel(a.data().data(), b.data().data(), out.data(), n, k, m);
  return detail::make_op(
      {n, m}, std::move(out), {a, b},
      [](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        Tensor pa = detail::parent(self, 0), pb = detail::parent(self, 1);
        return {matmul(g, transpose(pb)), matmul(transpose(pa), g)};
      },
      "matmul");
}

inline Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3)
    throw ShapeError("bmm expects rank-3 tensors");
  const int bt = a.shape()[0], n = a.shape()[1], k = a.shape()[2];
  if (b.shape()[0] != bt || b.shape()[1] != k)
    throw ShapeError("bmm shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const int m = b.shape()[2];
  std::vector<double> out(static_cast<std::size_t>(bt) * n * m);
  for (int i = 0; i < bt; ++i)
    detail::matmul_kernel(a.data().data() + static_cast<std::int64_t>(i) * n * k,
                          b.data().data() + static_cast<std::int64_t>(i) * k * m,
                          out.data() + static_cast<std::int64_t>(i) * n * m, n, k, m);
  return detail::make_op(
      {bt, n, m}, std::move(out), {a, b},
      [](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        Tensor pa = detail::parent(self, 0), pb = detail::parent(self, 1);
        return {bmm(g, transpose(pb)), bmm(transpose(pa), g)};
      },
      "bmm");
}

// ---------------------------------------------------------------------------
// Softmax (composite; max-shift is detached, which changes neither the value
// nor any derivative because softmax is shift invariant)
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& x, int axis) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("softmax axis out of range");
  const Shape& in = x.shape();
  Shape keep = in;
  keep[static_cast<std::size_t>(axis)] = 1;
  std::int64_t outer = 1, inner = 1;
  const int dim = in[static_cast<std::size_t>(axis)];
  for (int i = 0; i < axis; ++i) outer *= in[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= in[static_cast<std::size_t>(i)];
  std::vector<double> mx(static_cast<std::size_t>(outer * inner),
                         -std::numeric_limits<double>::infinity());
  const double* src = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (int k = 0; k < dim; ++k)
      for (std::int64_t i = 0; i < inner; ++i)
        mx[static_cast<std::size_t>(o * inner + i)] =
            std::max(mx[static_cast<std::size_t>(o * inner + i)],
                     src[(o * dim + k) * inner + i]);
  Tensor shift = Tensor::from(keep, std::move(mx));
  Tensor e = exp(sub(x, shift));
  Tensor denom = sum(e, axis, /*keepdims=*/true);
  return div(e, denom);
}

// ---------------------------------------------------------------------------
// Dropout. The mask is drawn once and acts as a constant; the op is
// excluded from second-order differentiation by contract.
// ---------------------------------------------------------------------------

inline Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const auto n = x.size();
  std::vector<double> mask(static_cast<std::size_t>(n));
  const double scale = 1.0 / (1.0 - p);
  for (auto& v : mask) v = rng.uniform() < p ? 0.0 : scale;
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* px = x.data().data();
  for (std::int64_t i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] = px[i] * mask[static_cast<std::size_t>(i)];
  Tensor mask_t = Tensor::from(x.shape(), std::move(mask));
  return detail::make_op(
      x.shape(), std::move(out), {x},
      [mask_t](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
        return {mul(g, mask_t)};
      },
      "dropout", /*second_order_ok=*/false);
}

// ---------------------------------------------------------------------------
// Dense linear algebra (LU with partial pivoting; dims here are tiny)
// ---------------------------------------------------------------------------

namespace detail {

struct Lu {
  std::vector<double> lu;
  std::vector<int> piv;
  int parity = 1;
  int n = 0;
};

inline Lu lu_decompose(const double* a, int n) {
  Lu r;
  r.n = n;
  r.lu.assign(a, a + static_cast<std::int64_t>(n) * n);
  r.piv.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) r.piv[static_cast<std::size_t>(i)] = i;
  for (int col = 0; col < n; ++col) {
    int best = col;
    for (int row = col + 1; row < n; ++row)
      if (std::abs(r.lu[static_cast<std::size_t>(row * n + col)]) >
          std::abs(r.lu[static_cast<std::size_t>(best * n + col)]))
        best = row;
    if (best != col) {
      for (int j = 0; j < n; ++j)
        std::swap(r.lu[static_cast<std::size_t>(col * n + j)],
                  r.lu[static_cast<std::size_t>(best * n + j)]);
      std::swap(r.piv[static_cast<std::size_t>(col)], r.piv[static_cast<std::size_t>(best)]);
      r.parity = -r.parity;
    }
    const double pivot = r.lu[static_cast<std::size_t>(col * n + col)];
    if (pivot == 0.0) continue;  // singular; caught by det check
    for (int row = col + 1; row < n; ++row) {
      const double f = r.lu[static_cast<std::size_t>(row * n + col)] / pivot;
      r.lu[static_cast<std::size_t>(row * n + col)] = f;
      for (int j = col + 1; j < n; ++j)
        r.lu[static_cast<std::size_t>(row * n + j)] -=
            f * r.lu[static_cast<std::size_t>(col * n + j)];
    }
  }
  return r;
}

inline double lu_det(const Lu& f) {
  double det = f.parity;
  for (int i = 0; i < f.n; ++i) det *= f.lu[static_cast<std::size_t>(i * f.n + i)];
  return det;
}

inline void lu_solve(const Lu& f, const double* rhs, double* out) {
  const int n = f.n;
  std::vector<double> y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double acc = rhs[f.piv[static_cast<std::size_t>(i)]];
    for (int j = 0; j < i; ++j) acc -= f.lu[static_cast<std::size_t>(i * n + j)] * y[static_cast<std::size_t>(j)];
    y[static_cast<std::size_t>(i)] = acc;
  }
  for (int i = n - 1; i >= 0; --i) {
    double acc = y[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < n; ++j) acc -= f.lu[static_cast<std::size_t>(i * n + j)] * out[j];
    out[i] = acc / f.lu[static_cast<std::size_t>(i * n + i)];
  }
}

constexpr double kDetFloor = 1e-12;

}  // namespace detail

inline Tensor mat_inverse(const Tensor& x) {
  if (x.rank() != 2 || x.shape()[0] != x.shape()[1])
    throw ShapeError("mat_inverse expects a square matrix");
  const int n = x.shape()[0];
  auto f = detail::lu_decompose(x.data().data(), n);
  if (std::abs(detail::lu_det(f)) <= detail::kDetFloor)
    throw SingularMatrixError("matrix is numerically singular");
  std::vector<double> inv(static_cast<std::size_t>(n) * n);
  std::vector<double> e(static_cast<std::size_t>(n), 0.0), col(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    e[static_cast<std::size_t>(j)] = 1.0;
    detail::lu_solve(f, e.data(), col.data());
    for (int i = 0; i < n; ++i) inv[static_cast<std::size_t>(i * n + j)] = col[static_cast<std::size_t>(i)];
    e[static_cast<std::size_t>(j)] = 0.0;
  }
  return detail::make_op(
      {n, n}, std::move(inv), {x},
      [](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        Tensor it = transpose(self);
        return {neg(matmul(matmul(it, g), it))};
      },
      "mat_inverse");
}

inline Tensor logabsdet(const Tensor& x) {
  if (x.rank() != 2 || x.shape()[0] != x.shape()[1])
    throw ShapeError("logabsdet expects a square matrix");
  auto f = detail::lu_decompose(x.data().data(), x.shape()[0]);
  const double det = detail::lu_det(f);
  if (std::abs(det) <= detail::kDetFloor)
    throw SingularMatrixError("matrix is numerically singular");
  return detail::make_op(
      {}, {std::log(std::abs(det))}, {x},
      [](const Tensor& self, const Tensor& g) -> std::vector<Tensor> {
        Tensor xx = detail::parent(self, 0);
        return {mul(g, transpose(mat_inverse(xx)))};
      },
      "logabsdet");
}

/// Solves x W = y for x given W (row-vector convention), i.e. x = y W^{-1}.
inline Tensor solve_right(const Tensor& y, const Tensor& w) {
  return matmul(y, mat_inverse(w));
}

// ---------------------------------------------------------------------------
// Random tensors
// ---------------------------------------------------------------------------

inline Tensor randn(Shape shape, Rng& rng) {
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = rng.normal();
  return Tensor::from(std::move(shape), std::move(data));
}

inline Tensor rand_uniform(Shape shape, Rng& rng) {
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = rng.uniform();
  return Tensor::from(std::move(shape), std::move(data));
}

inline Tensor gumbel_noise(Shape shape, Rng& rng) {
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = rng.gumbel();
  return Tensor::from(std::move(shape), std::move(data));
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Backward engine
// ---------------------------------------------------------------------------

using GradMap = std::unordered_map<const detail::Node*, Tensor>;

/// Reverse-mode sweep from a scalar loss. With create_graph the returned
/// gradients are themselves differentiable graph nodes; ops outside the
/// second-order subset (dropout) refuse to participate.
inline GradMap backward(const Tensor& loss, bool create_graph = false) {
  if (loss.size() != 1)
    throw NonScalarLossError("backward expects a scalar loss, got shape " +
                             shape_str(loss.shape()));

  // Reachable requires-grad subgraph, in creation order (parents precede
  // children by construction, so descending id is a reverse topological
  // order and the sweep is deterministic).
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_map<const detail::Node*, char> seen;
  std::vector<std::shared_ptr<detail::Node>> stack;
  if (loss.node()->requires_grad) {
    stack.push_back(loss.node_ptr());
    seen[loss.node()] = 1;
  }
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad && !seen.count(p.get())) {
        seen[p.get()] = 1;
        stack.push_back(p);
      }
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });

  GradMap grads;
  if (order.empty()) return grads;

  std::unique_ptr<NoGradGuard> guard;
  if (!create_graph) guard = std::make_unique<NoGradGuard>();

  grads[loss.node()] = Tensor::full(loss.shape(), 1.0);
  for (const auto& n : order) {
    auto it = grads.find(n.get());
    if (it == grads.end() || !n->vjp) continue;
    if (create_graph && !n->second_order_ok)
      throw SecondOrderUnsupportedError(std::string("op '") + n->op +
                                        "' does not support second-order differentiation");
    const Tensor self = Tensor::wrap(n);
    const std::vector<Tensor> pgrads = n->vjp(self, it->second);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      const auto& p = n->parents[i];
      if (!p->requires_grad) continue;
      auto pit = grads.find(p.get());
      if (pit == grads.end())
        grads.emplace(p.get(), pgrads[i]);
      else
        pit->second = add(pit->second, pgrads[i]);
    }
  }
  return grads;
}

/// Gradients of loss w.r.t. an explicit list of tensors; zeros where a
/// tensor does not influence the loss.
inline std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& wrt,
                                bool create_graph = false) {
  GradMap grads = backward(loss, create_graph);
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& t : wrt) {
    auto it = grads.find(t.node());
    out.push_back(it != grads.end() ? it->second : Tensor::zeros(t.shape()));
  }
  return out;
}

}  // namespace molgen::diff
