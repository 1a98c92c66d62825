#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "autoview/errors.hpp"
#include "autoview/tensor.hpp"

namespace autoview {

/// When enabled, every op validates its output for NaN/Inf and throws a
/// NumericError naming the offending node.
inline bool& checked_mode() {
  thread_local bool enabled = false;
  return enabled;
}

inline uint64_t next_node_id() {
  static std::atomic<uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;
  bool grad_init = false;
  bool requires_grad = false;
  bool backward_done = false;
  uint64_t id = 0;
  const char* op = "leaf";
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (!grad_init) {
      grad = Tensor<S>::zeros(value.shape);
      grad_init = true;
    }
  }
};

/// Shared handle to a node of the computation graph. Cheap to copy; graphs
/// are built per training step and freed when the last handle dies.
template <typename S>
class Var {
 public:
  using Scalar = S;

  Var() = default;
  explicit Var(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

  static Var leaf(Tensor<S> value, bool requires_grad = false, std::string name = {}) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->id = next_node_id();
    n->name = std::move(name);
    return Var(std::move(n));
  }
  static Var param(Tensor<S> value, std::string name) {
    return leaf(std::move(value), true, std::move(name));
  }
  static Var constant(Tensor<S> value) { return leaf(std::move(value), false); }
  static Var scalar(double v) { return constant(Tensor<S>::scalar(static_cast<S>(v))); }

  bool valid() const { return node_ != nullptr; }
  Node<S>* node() const { return node_.get(); }
  const std::shared_ptr<Node<S>>& node_ptr() const { return node_; }

  const Tensor<S>& value() const { return node_->value; }
  Tensor<S>& value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad_init; }

  /// Accumulated gradient; allocates a zero buffer on first access.
  const Tensor<S>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (node_->grad_init) node_->grad.data.setZero();
  }

 private:
  std::shared_ptr<Node<S>> node_;
};

namespace detail {

template <typename S>
Var<S> make_op(const char* op, Tensor<S> value, std::vector<Var<S>> parents,
               std::function<void(Node<S>&)> backward_fn) {
  auto n = std::make_shared<Node<S>>();
  n->op = op;
  n->value = std::move(value);
  n->id = next_node_id();
  for (const auto& p : parents) {
    if (p.node()->requires_grad) n->requires_grad = true;
    n->parents.push_back(p.node_ptr());
  }
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  if (checked_mode() && !n->value.all_finite())
    throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  return Var<S>(std::move(n));
}

enum class Bcast { Same, BScalar, AScalar, BSuffix, ASuffix };

inline Bcast broadcast_mode(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Bcast::Same;
  if (shape_numel(b) == 1) return Bcast::BScalar;
  if (shape_numel(a) == 1) return Bcast::AScalar;
  if (is_trailing_suffix(a, b)) return Bcast::BSuffix;
  if (is_trailing_suffix(b, a)) return Bcast::ASuffix;
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                   " do not conform (only trailing-dimension broadcast is supported)");
}

// Generic elementwise binary op with trailing-suffix broadcasting.
// fwd(a,b) -> y; dfa/dfb(a,b,y) -> local derivative w.r.t. that input.
template <typename S, typename F, typename Da, typename Db>
Var<S> binary_ew(const char* op, const Var<S>& a, const Var<S>& b, F fwd, Da dfa, Db dfb) {
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  Bcast mode = broadcast_mode(av.shape, bv.shape, op);
  const Shape& out_shape = (mode == Bcast::AScalar || mode == Bcast::ASuffix) ? bv.shape : av.shape;
  Tensor<S> out(out_shape);
  const int64_t n = out.numel();
  const int64_t na = av.numel(), nb = bv.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i % na], bv[i % nb]);

  auto backward = [dfa, dfb](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    Node<S>& pb = *self.parents[1];
    const int64_t n = self.value.numel();
    const int64_t na = pa.value.numel(), nb = pb.value.numel();
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        pa.grad[i % na] += dfa(pa.value[i % na], pb.value[i % nb], self.value[i]) * self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        pb.grad[i % nb] += dfb(pa.value[i % na], pb.value[i % nb], self.value[i]) * self.grad[i];
    }
  };
  return make_op<S>(op, std::move(out), {a, b}, std::move(backward));
}

template <typename S, typename F, typename D>
Var<S> unary_ew(const char* op, const Var<S>& a, F fwd, D dfa) {
  const Tensor<S>& av = a.value();
  Tensor<S> out(av.shape);
  for (int64_t i = 0; i < av.numel(); ++i) out[i] = fwd(av[i]);
  auto backward = [dfa](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    pa.ensure_grad();
    for (int64_t i = 0; i < self.value.numel(); ++i)
      pa.grad[i] += dfa(pa.value[i], self.value[i]) * self.grad[i];
  };
  return make_op<S>(op, std::move(out), {a}, std::move(backward));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  return detail::binary_ew<S>(
      "add", a, b, [](S x, S y) { return x + y; }, [](S, S, S) { return S(1); },
      [](S, S, S) { return S(1); });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  return detail::binary_ew<S>(
      "sub", a, b, [](S x, S y) { return x - y; }, [](S, S, S) { return S(1); },
      [](S, S, S) { return S(-1); });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  return detail::binary_ew<S>(
      "mul", a, b, [](S x, S y) { return x * y; }, [](S, S y, S) { return y; },
      [](S x, S, S) { return x; });
}

// Denominator magnitude is clamped to 1e-12; intended for positive-domain use.
template <typename S>
Var<S> div(const Var<S>& a, const Var<S>& b) {
  auto safe = [](S y) {
    const S eps = S(1e-12);
    return std::abs(y) < eps ? (y < S(0) ? -eps : eps) : y;
  };
  return detail::binary_ew<S>(
      "div", a, b, [safe](S x, S y) { return x / safe(y); },
      [safe](S, S y, S) { return S(1) / safe(y); },
      [](S x, S y, S) {
        if (std::abs(y) < S(1e-12)) return S(0);
        return -x / (y * y);
      });
}

template <typename S>
Var<S> neg(const Var<S>& a) {
  return detail::unary_ew<S>(
      "neg", a, [](S x) { return -x; }, [](S, S) { return S(-1); });
}

template <typename S> Var<S> add(const Var<S>& a, double c) { return add(a, Var<S>::scalar(c)); }
template <typename S> Var<S> add(double c, const Var<S>& a) { return add(a, c); }
template <typename S> Var<S> sub(const Var<S>& a, double c) { return add(a, -c); }
template <typename S> Var<S> sub(double c, const Var<S>& a) { return sub(Var<S>::scalar(c), a); }
template <typename S> Var<S> mul(const Var<S>& a, double c) { return mul(a, Var<S>::scalar(c)); }
template <typename S> Var<S> mul(double c, const Var<S>& a) { return mul(a, c); }

template <typename S> Var<S> operator+(const Var<S>& a, const Var<S>& b) { return add(a, b); }
template <typename S> Var<S> operator-(const Var<S>& a, const Var<S>& b) { return sub(a, b); }
template <typename S> Var<S> operator*(const Var<S>& a, const Var<S>& b) { return mul(a, b); }
template <typename S> Var<S> operator+(const Var<S>& a, double c) { return add(a, c); }
template <typename S> Var<S> operator+(double c, const Var<S>& a) { return add(a, c); }
template <typename S> Var<S> operator-(const Var<S>& a, double c) { return sub(a, c); }
template <typename S> Var<S> operator-(double c, const Var<S>& a) { return sub(c, a); }
template <typename S> Var<S> operator*(const Var<S>& a, double c) { return mul(a, c); }
template <typename S> Var<S> operator*(double c, const Var<S>& a) { return mul(a, c); }
template <typename S> Var<S> operator-(const Var<S>& a) { return neg(a); }

// ---------------------------------------------------------------------------
// pointwise nonlinearities
// ---------------------------------------------------------------------------

template <typename S>
Var<S> exp(const Var<S>& a) {
  return detail::unary_ew<S>(
      "exp", a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

/// log with the argument clamped to >= 1e-12.
template <typename S>
Var<S> log(const Var<S>& a) {
  return detail::unary_ew<S>(
      "log", a, [](S x) { return std::log(x < S(1e-12) ? S(1e-12) : x); },
      [](S x, S) { return x < S(1e-12) ? S(0) : S(1) / x; });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  return detail::unary_ew<S>(
      "sigmoid", a,
      [](S x) {
        if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
        S e = std::exp(x);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  return detail::unary_ew<S>(
      "relu", a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
Var<S> gelu(const Var<S>& a) {
  const S inv_sqrt2 = S(0.7071067811865475244);
  const S inv_sqrt2pi = S(0.3989422804014326779);
  return detail::unary_ew<S>(
      "gelu", a,
      [=](S x) { return S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2)); },
      [=](S x, S) {
        S cdf = S(0.5) * (S(1) + std::erf(x * inv_sqrt2));
        return cdf + x * inv_sqrt2pi * std::exp(S(-0.5) * x * x);
      });
}

template <typename S>
Var<S> clamp(const Var<S>& a, double lo, double hi) {
  const S l = static_cast<S>(lo), h = static_cast<S>(hi);
  return detail::unary_ew<S>(
      "clamp", a, [=](S x) { return x < l ? l : (x > h ? h : x); },
      [=](S x, S) { return (x >= l && x <= h) ? S(1) : S(0); });
}

template <typename S>
Var<S> maximum(const Var<S>& a, const Var<S>& b) {
  return detail::binary_ew<S>(
      "maximum", a, b, [](S x, S y) { return x >= y ? x : y; },
      [](S x, S y, S) { return x >= y ? S(1) : S(0); },
      [](S x, S y, S) { return x < y ? S(1) : S(0); });
}

template <typename S>
Var<S> minimum(const Var<S>& a, const Var<S>& b) {
  return detail::binary_ew<S>(
      "minimum", a, b, [](S x, S y) { return x <= y ? x : y; },
      [](S x, S y, S) { return x <= y ? S(1) : S(0); },
      [](S x, S y, S) { return x > y ? S(1) : S(0); });
}

template <typename S>
Var<S> lerp(const Var<S>& a, const Var<S>& b, const Var<S>& w) {
  return add(a, mul(w, sub(b, a)));
}

template <typename S>
Var<S> lerp(const Var<S>& a, const Var<S>& b, double w) {
  return lerp(a, b, Var<S>::scalar(w));
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
    throw ShapeError("matmul: shapes " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  const int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Tensor<S> out(Shape{m, n});
  out.as_matrix(m, n).noalias() = av.as_matrix(m, k) * bv.as_matrix(k, n);
  auto backward = [m, k, n](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    Node<S>& pb = *self.parents[1];
    auto g = self.grad.as_matrix(m, n);
    if (pa.requires_grad) {
      pa.ensure_grad();
      pa.grad.as_matrix(m, k).noalias() += g * pb.value.as_matrix(k, n).transpose();
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      pb.grad.as_matrix(k, n).noalias() += pa.value.as_matrix(m, k).transpose() * g;
    }
  };
  return detail::make_op<S>("matmul", std::move(out), {a, b}, std::move(backward));
}

/// Batched matmul: (B,m,k) x (B,k,n) -> (B,m,n).
template <typename S>
Var<S> bmm(const Var<S>& a, const Var<S>& b) {
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.shape[0] != bv.shape[0] || av.shape[2] != bv.shape[1])
    throw ShapeError("bmm: shapes " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  const int64_t bs = av.shape[0], m = av.shape[1], k = av.shape[2], n = bv.shape[2];
  Tensor<S> out(Shape{bs, m, n});
  using Map = Eigen::Map<typename Tensor<S>::MatrixRM>;
  using CMap = Eigen::Map<const typename Tensor<S>::MatrixRM>;
  for (int64_t i = 0; i < bs; ++i)
    Map(out.ptr() + i * m * n, m, n).noalias() =
        CMap(av.ptr() + i * m * k, m, k) * CMap(bv.ptr() + i * k * n, k, n);
  auto backward = [bs, m, k, n](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    Node<S>& pb = *self.parents[1];
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (int64_t i = 0; i < bs; ++i) {
      CMap g(self.grad.ptr() + i * m * n, m, n);
      if (pa.requires_grad)
        Map(pa.grad.ptr() + i * m * k, m, k).noalias() +=
            g * CMap(pb.value.ptr() + i * k * n, k, n).transpose();
      if (pb.requires_grad)
        Map(pb.grad.ptr() + i * k * n, k, n).noalias() +=
            CMap(pa.value.ptr() + i * m * k, m, k).transpose() * g;
    }
  };
  return detail::make_op<S>("bmm", std::move(out), {a, b}, std::move(backward));
}

/// Batched matmul with the second operand transposed: (B,m,k) x (B,n,k) -> (B,m,n).
template <typename S>
Var<S> bmm_nt(const Var<S>& a, const Var<S>& b) {
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.shape[0] != bv.shape[0] || av.shape[2] != bv.shape[2])
    throw ShapeError("bmm_nt: shapes " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  const int64_t bs = av.shape[0], m = av.shape[1], k = av.shape[2], n = bv.shape[1];
  Tensor<S> out(Shape{bs, m, n});
  using Map = Eigen::Map<typename Tensor<S>::MatrixRM>;
  using CMap = Eigen::Map<const typename Tensor<S>::MatrixRM>;
  for (int64_t i = 0; i < bs; ++i)
    Map(out.ptr() + i * m * n, m, n).noalias() =
        CMap(av.ptr() + i * m * k, m, k) * CMap(bv.ptr() + i * n * k, n, k).transpose();
  auto backward = [bs, m, k, n](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    Node<S>& pb = *self.parents[1];
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (int64_t i = 0; i < bs; ++i) {
      CMap g(self.grad.ptr() + i * m * n, m, n);
      if (pa.requires_grad)
        Map(pa.grad.ptr() + i * m * k, m, k).noalias() +=
            g * CMap(pb.value.ptr() + i * n * k, n, k);
      if (pb.requires_grad)
        Map(pb.grad.ptr() + i * n * k, n, k).noalias() +=
            g.transpose() * CMap(pa.value.ptr() + i * m * k, m, k);
    }
  };
  return detail::make_op<S>("bmm_nt", std::move(out), {a, b}, std::move(backward));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> reshape(const Var<S>& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(new_shape));
  Tensor<S> out(new_shape);
  out.data = a.value().data;
  auto backward = [](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    pa.ensure_grad();
    pa.grad.data += self.grad.data;
  };
  return detail::make_op<S>("reshape", std::move(out), {a}, std::move(backward));
}

namespace detail {

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int64_t i = static_cast<int64_t>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

// out linear index -> in linear index for a permutation of axes
inline std::vector<int64_t> permute_index_map(const Shape& in_shape,
                                              const std::vector<int64_t>& perm) {
  Shape out_shape(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = in_shape[perm[i]];
  auto in_st = row_major_strides(in_shape);
  auto out_st = row_major_strides(out_shape);
  const int64_t n = shape_numel(in_shape);
  std::vector<int64_t> map(n);
  for (int64_t o = 0; o < n; ++o) {
    int64_t rem = o, in_idx = 0;
    for (size_t d = 0; d < perm.size(); ++d) {
      int64_t coord = rem / out_st[d];
      rem -= coord * out_st[d];
      in_idx += coord * in_st[perm[d]];
    }
    map[o] = in_idx;
  }
  return map;
}

}  // namespace detail

template <typename S>
Var<S> permute(const Var<S>& a, std::vector<int64_t> dims) {
  const Tensor<S>& av = a.value();
  if (static_cast<int64_t>(dims.size()) != av.rank())
    throw ShapeError("permute: rank mismatch for " + shape_str(av.shape));
  Shape out_shape(dims.size());
  for (size_t i = 0; i < dims.size(); ++i) out_shape[i] = av.shape[dims[i]];
  auto map = detail::permute_index_map(av.shape, dims);
  Tensor<S> out(out_shape);
  for (int64_t o = 0; o < out.numel(); ++o) out[o] = av[map[o]];
  auto backward = [map](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    pa.ensure_grad();
    for (int64_t o = 0; o < self.value.numel(); ++o) pa.grad[map[o]] += self.grad[o];
  };
  return detail::make_op<S>("permute", std::move(out), {a}, std::move(backward));
}

/// Pick index `idx` along `axis`, removing that axis.
template <typename S>
Var<S> select(const Var<S>& a, int64_t axis, int64_t idx) {
  const Tensor<S>& av = a.value();
  if (axis < 0 || axis >= av.rank() || idx < 0 || idx >= av.shape[axis])
    throw ShapeError("select: axis/index out of range for " + shape_str(av.shape));
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= av.shape[d];
  for (int64_t d = axis + 1; d < av.rank(); ++d) inner *= av.shape[d];
  const int64_t dim = av.shape[axis];
  Shape out_shape;
  for (int64_t d = 0; d < av.rank(); ++d)
    if (d != axis) out_shape.push_back(av.shape[d]);
  Tensor<S> out(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) out[o * inner + i] = av[(o * dim + idx) * inner + i];
  auto backward = [outer, inner, dim, idx](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    pa.ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i)
        pa.grad[(o * dim + idx) * inner + i] += self.grad[o * inner + i];
  };
  return detail::make_op<S>("select", std::move(out), {a}, std::move(backward));
}

/// Stack equally-shaped tensors along a new leading axis.
template <typename S>
Var<S> stack0(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("stack0: no inputs");
  const Shape& s = parts[0].shape();
  for (const auto& p : parts)
    if (p.shape() != s) throw ShapeError("stack0: mismatched input shapes");
  const int64_t block = shape_numel(s);
  Shape out_shape{static_cast<int64_t>(parts.size())};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor<S> out(out_shape);
  for (size_t i = 0; i < parts.size(); ++i)
    std::copy_n(parts[i].value().ptr(), block, out.ptr() + static_cast<int64_t>(i) * block);
  auto backward = [block](Node<S>& self) {
    for (size_t i = 0; i < self.parents.size(); ++i) {
      Node<S>& p = *self.parents[i];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      const S* g = self.grad.ptr() + static_cast<int64_t>(i) * block;
      for (int64_t j = 0; j < block; ++j) p.grad[j] += g[j];
    }
  };
  return detail::make_op<S>("stack0", std::move(out), parts, std::move(backward));
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum(const Var<S>& a) {
  Tensor<S> out = Tensor<S>::scalar(a.value().data.sum());
  auto backward = [](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    pa.ensure_grad();
    pa.grad.data += self.grad[0];
  };
  return detail::make_op<S>("sum", std::move(out), {a}, std::move(backward));
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  const S inv = S(1) / static_cast<S>(a.numel());
  Tensor<S> out = Tensor<S>::scalar(a.value().data.sum() * inv);
  auto backward = [inv](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    pa.ensure_grad();
    pa.grad.data += self.grad[0] * inv;
  };
  return detail::make_op<S>("mean", std::move(out), {a}, std::move(backward));
}

namespace detail {

template <typename S>
Var<S> reduce_axis(const char* op, const Var<S>& a, int64_t axis, bool take_mean) {
  const Tensor<S>& av = a.value();
  if (axis < 0) axis += av.rank();
  if (axis < 0 || axis >= av.rank())
    throw ShapeError(std::string(op) + ": axis out of range for " + shape_str(av.shape));
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= av.shape[d];
  for (int64_t d = axis + 1; d < av.rank(); ++d) inner *= av.shape[d];
  const int64_t dim = av.shape[axis];
  const S w = take_mean ? S(1) / static_cast<S>(dim) : S(1);
  Shape out_shape;
  for (int64_t d = 0; d < av.rank(); ++d)
    if (d != axis) out_shape.push_back(av.shape[d]);
  Tensor<S> out(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      S acc = S(0);
      for (int64_t k = 0; k < dim; ++k) acc += av[(o * dim + k) * inner + i];
      out[o * inner + i] = acc * w;
    }
  auto backward = [outer, inner, dim, w](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    pa.ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        S g = self.grad[o * inner + i] * w;
        for (int64_t k = 0; k < dim; ++k) pa.grad[(o * dim + k) * inner + i] += g;
      }
  };
  return make_op<S>(op, std::move(out), {a}, std::move(backward));
}

}  // namespace detail

template <typename S>
Var<S> sum(const Var<S>& a, int64_t axis) {
  return detail::reduce_axis("sum_axis", a, axis, false);
}

template <typename S>
Var<S> mean(const Var<S>& a, int64_t axis) {
  return detail::reduce_axis("mean_axis", a, axis, true);
}

// ---------------------------------------------------------------------------
// row-wise nn primitives (operate over the last axis)
// ---------------------------------------------------------------------------

template <typename S>
Var<S> softmax_last(const Var<S>& a) {
  const Tensor<S>& av = a.value();
  if (av.rank() < 1) throw ShapeError("softmax_last: rank-0 input");
  const int64_t c = av.shape.back();
  const int64_t rows = av.numel() / c;
  Tensor<S> out(av.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const S* x = av.ptr() + r * c;
    S* y = out.ptr() + r * c;
    S m = x[0];
    for (int64_t i = 1; i < c; ++i) m = std::max(m, x[i]);
    S z = S(0);
    for (int64_t i = 0; i < c; ++i) {
      y[i] = std::exp(x[i] - m);
      z += y[i];
    }
    S inv = S(1) / z;
    for (int64_t i = 0; i < c; ++i) y[i] *= inv;
  }
  auto backward = [c, rows](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    pa.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const S* y = self.value.ptr() + r * c;
      const S* g = self.grad.ptr() + r * c;
      S* gx = pa.grad.ptr() + r * c;
      S dot = S(0);
      for (int64_t i = 0; i < c; ++i) dot += g[i] * y[i];
      for (int64_t i = 0; i < c; ++i) gx[i] += y[i] * (g[i] - dot);
    }
  };
  return detail::make_op<S>("softmax", std::move(out), {a}, std::move(backward));
}

template <typename S>
Var<S> layer_norm(const Var<S>& a, const Var<S>& gamma, const Var<S>& beta, double eps = 1e-5) {
  const Tensor<S>& av = a.value();
  const int64_t c = av.shape.back();
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(c) + " elements");
  const int64_t rows = av.numel() / c;
  Tensor<S> out(av.shape);
  Tensor<S> xhat(av.shape);
  Tensor<S> inv_std(Shape{rows});
  const S* gm = gamma.value().ptr();
  const S* bt = beta.value().ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const S* x = av.ptr() + r * c;
    S mu = S(0);
    for (int64_t i = 0; i < c; ++i) mu += x[i];
    mu /= static_cast<S>(c);
    S var = S(0);
    for (int64_t i = 0; i < c; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= static_cast<S>(c);
    S inv = S(1) / std::sqrt(var + static_cast<S>(eps));
    inv_std[r] = inv;
    S* xh = xhat.ptr() + r * c;
    S* y = out.ptr() + r * c;
    for (int64_t i = 0; i < c; ++i) {
      xh[i] = (x[i] - mu) * inv;
      y[i] = gm[i] * xh[i] + bt[i];
    }
  }
  auto backward = [c, rows, xhat, inv_std](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    Node<S>& pg = *self.parents[1];
    Node<S>& pb = *self.parents[2];
    if (pa.requires_grad) pa.ensure_grad();
    if (pg.requires_grad) pg.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    const S* gm = pg.value.ptr();
    for (int64_t r = 0; r < rows; ++r) {
      const S* g = self.grad.ptr() + r * c;
      const S* xh = xhat.ptr() + r * c;
      if (pg.requires_grad || pb.requires_grad) {
        for (int64_t i = 0; i < c; ++i) {
          if (pg.requires_grad) pg.grad[i] += g[i] * xh[i];
          if (pb.requires_grad) pb.grad[i] += g[i];
        }
      }
      if (pa.requires_grad) {
        S mean_dxh = S(0), mean_dxh_xh = S(0);
        for (int64_t i = 0; i < c; ++i) {
          S dxh = g[i] * gm[i];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xh[i];
        }
        mean_dxh /= static_cast<S>(c);
        mean_dxh_xh /= static_cast<S>(c);
        S* gx = pa.grad.ptr() + r * c;
        for (int64_t i = 0; i < c; ++i) {
          S dxh = g[i] * gm[i];
          gx[i] += inv_std[r] * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
        }
      }
    }
  };
  return detail::make_op<S>("layer_norm", std::move(out), {a, gamma, beta}, std::move(backward));
}

/// Normalize each row (last axis) to unit Euclidean norm.
template <typename S>
Var<S> l2_normalize_rows(const Var<S>& a, double eps = 1e-12) {
  const Tensor<S>& av = a.value();
  const int64_t c = av.shape.back();
  const int64_t rows = av.numel() / c;
  Tensor<S> out(av.shape);
  Tensor<S> inv_norm(Shape{rows});
  for (int64_t r = 0; r < rows; ++r) {
    const S* x = av.ptr() + r * c;
    S ss = S(0);
    for (int64_t i = 0; i < c; ++i) ss += x[i] * x[i];
    S inv = S(1) / std::sqrt(ss + static_cast<S>(eps));
    inv_norm[r] = inv;
    S* y = out.ptr() + r * c;
    for (int64_t i = 0; i < c; ++i) y[i] = x[i] * inv;
  }
  auto backward = [c, rows, inv_norm](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    pa.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const S* g = self.grad.ptr() + r * c;
      const S* y = self.value.ptr() + r * c;
      S* gx = pa.grad.ptr() + r * c;
      S dot = S(0);
      for (int64_t i = 0; i < c; ++i) dot += g[i] * y[i];
      for (int64_t i = 0; i < c; ++i) gx[i] += (g[i] - y[i] * dot) * inv_norm[r];
    }
  };
  return detail::make_op<S>("l2_normalize", std::move(out), {a}, std::move(backward));
}

// ---------------------------------------------------------------------------
// depthwise 2-D convolution with a fixed kernel (reflect-101 padding)
// ---------------------------------------------------------------------------

namespace detail {
inline int64_t reflect101(int64_t t, int64_t n) {
  if (n == 1) return 0;
  while (t < 0 || t >= n) {
    if (t < 0) t = -t;
    if (t >= n) t = 2 * n - 2 - t;
  }
  return t;
}
}  // namespace detail

/// Same-size depthwise convolution of a (C,H,W) tensor with a constant
/// (kh,kw) kernel. The kernel carries no gradient.
template <typename S>
Var<S> conv2d_depthwise(const Var<S>& a, const Tensor<S>& kernel) {
  const Tensor<S>& av = a.value();
  if (av.rank() != 3 || kernel.rank() != 2)
    throw ShapeError("conv2d_depthwise: expected (C,H,W) input and (kh,kw) kernel, got " +
                     shape_str(av.shape) + " / " + shape_str(kernel.shape));
  const int64_t C = av.shape[0], H = av.shape[1], W = av.shape[2];
  const int64_t kh = kernel.shape[0], kw = kernel.shape[1];
  const int64_t ay = kh / 2, ax = kw / 2;
  Tensor<S> out(av.shape);
  for (int64_t ch = 0; ch < C; ++ch) {
    const S* in = av.ptr() + ch * H * W;
    S* o = out.ptr() + ch * H * W;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        S acc = S(0);
        for (int64_t dy = 0; dy < kh; ++dy) {
          int64_t sy = detail::reflect101(y + dy - ay, H);
          for (int64_t dx = 0; dx < kw; ++dx) {
            int64_t sx = detail::reflect101(x + dx - ax, W);
            acc += kernel[dy * kw + dx] * in[sy * W + sx];
          }
        }
        o[y * W + x] = acc;
      }
  }
  auto backward = [kernel, C, H, W, kh, kw, ay, ax](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    pa.ensure_grad();
    for (int64_t ch = 0; ch < C; ++ch) {
      const S* g = self.grad.ptr() + ch * H * W;
      S* gi = pa.grad.ptr() + ch * H * W;
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          S gv = g[y * W + x];
          for (int64_t dy = 0; dy < kh; ++dy) {
            int64_t sy = detail::reflect101(y + dy - ay, H);
            for (int64_t dx = 0; dx < kw; ++dx) {
              int64_t sx = detail::reflect101(x + dx - ax, W);
              gi[sy * W + sx] += kernel[dy * kw + dx] * gv;
            }
          }
        }
    }
  };
  return detail::make_op<S>("conv2d_depthwise", std::move(out), {a}, std::move(backward));
}

// ---------------------------------------------------------------------------
// special gradient nodes
// ---------------------------------------------------------------------------

/// Forward identity, zero gradient upstream: the result is a fresh leaf.
template <typename S>
Var<S> stop_grad(const Var<S>& a) {
  auto n = std::make_shared<Node<S>>();
  n->op = "stop_grad";
  n->value = a.value();
  n->id = next_node_id();
  return Var<S>(std::move(n));
}

/// Forward identity; backward multiplies the incoming gradient by -scale.
template <typename S>
Var<S> grad_reverse(const Var<S>& a, double scale = 1.0) {
  Tensor<S> out = a.value();
  const S s = static_cast<S>(scale);
  auto backward = [s](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    pa.ensure_grad();
    pa.grad.data += (-s) * self.grad.data;
  };
  return detail::make_op<S>("grad_reverse", std::move(out), {a}, std::move(backward));
}

/// Straight-through composition: forward takes the discrete value `hard`,
/// backward passes the gradient unchanged to the continuous surrogate.
template <typename S>
Var<S> straight_through(const Tensor<S>& hard, const Var<S>& soft) {
  if (hard.shape != soft.shape())
    throw ShapeError("straight_through: hard/soft shape mismatch " + shape_str(hard.shape) +
                     " vs " + shape_str(soft.shape()));
  auto backward = [](Node<S>& self) {
    Node<S>& pa = *self.parents[0];
    pa.ensure_grad();
    pa.grad.data += self.grad.data;
  };
  return detail::make_op<S>("straight_through", Tensor<S>(hard), {soft}, std::move(backward));
}

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable leaf with requires_grad set. A second call on the same loss
/// node (without rebuilding the graph) is an error.
template <typename S>
void backward(const Var<S>& loss) {
  Node<S>* root = loss.node();
  if (root->value.numel() != 1)
    throw GraphStateError("backward: loss must be scalar-shaped, got " +
                          shape_str(root->value.shape));
  if (root->backward_done)
    throw GraphStateError("backward: already ran on this graph; rebuild it or reset first");
  root->backward_done = true;

  // Collect reachable grad-requiring nodes; creation ids give a valid
  // topological order because inputs always precede outputs.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<Node<S>*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    Node<S>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node<S>* a, const Node<S>* b) { return a->id > b->id; });

  root->ensure_grad();
  root->grad.data.setConstant(S(1));
  for (Node<S>* n : order)
    if (n->backward_fn && n->grad_init) n->backward_fn(*n);
}

/// True if `leaf` participates in the graph below `out` through a
/// gradient-carrying path. Used by structural assertions.
template <typename S>
bool reaches(const Var<S>& out, const Var<S>& leaf) {
  std::unordered_set<Node<S>*> seen;
  std::vector<Node<S>*> stack{out.node()};
  while (!stack.empty()) {
    Node<S>* n = stack.back();
    stack.pop_back();
    if (n == leaf.node()) return true;
    for (const auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  return false;
}

}  // namespace autoview
