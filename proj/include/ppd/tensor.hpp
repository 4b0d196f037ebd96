#pragma once

// Reverse-mode automatic differentiation over dense row-major arrays.
// Scalar type is a template parameter: double for tests and oracles,
// float for training speed. Graphs are built eagerly; backward() walks
// the tape once in reverse topological order. A restricted op subset also
// supports graph-building backward, which is what makes the WGAN-GP
// input-gradient penalty differentiable w.r.t. discriminator parameters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

namespace ppd {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

template <class T>
class Tensor;

template <class T>
struct TensorNode {
  using FastBwd = std::function<void(TensorNode<T>&)>;
  using GraphBwd =
      std::function<std::vector<Tensor<T>>(TensorNode<T>&, const Tensor<T>&)>;

  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;  // leaf that wants a gradient
  bool needs_grad = false;     // depends on a requires_grad leaf
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  FastBwd backward_fn;
  GraphBwd backward_graph_fn;

  bool wants() const { return requires_grad || needs_grad; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor constant(Shape shape, std::vector<T> value) {
    check_sized(shape, value, "constant");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return Tensor(n);
  }
  static Tensor scalar(T v) { return constant({1}, {v}); }
  static Tensor zeros(Shape shape) {
    size_t n = shape_numel(shape);
    return constant(std::move(shape), std::vector<T>(n, T(0)));
  }
  static Tensor full(Shape shape, T v) {
    size_t n = shape_numel(shape);
    return constant(std::move(shape), std::vector<T>(n, v));
  }
  // Leaf that participates in gradient computation (a parameter or a
  // gradient-penalty target).
  static Tensor param(Shape shape, std::vector<T> value) {
    Tensor t = constant(std::move(shape), std::move(value));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t size() const { return node_->value.size(); }
  int rows() const {
    const Shape& s = node_->shape;
    return s.size() >= 2 ? s[0] : 1;
  }
  int cols() const {
    const Shape& s = node_->shape;
    return s.size() >= 2 ? s[1] : (s.empty() ? 1 : s[0]);
  }
  const std::vector<T>& value() const { return node_->value; }
  std::vector<T>& mutable_value() { return node_->value; }
  const std::vector<T>& grad() const { return node_->grad; }
  T item() const {
    if (size() != 1)
      throw std::runtime_error("item(): tensor is not scalar, shape " +
                               shape_str(shape()));
    return node_->value[0];
  }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  void zero_grad() {
    node_->grad.assign(node_->value.size(), T(0));
  }
  const char* op_name() const { return node_->op; }

  std::shared_ptr<Node> node() const { return node_; }
  Node* raw() const { return node_.get(); }

 private:
  static void check_sized(const Shape& shape, const std::vector<T>& v,
                          const char* who) {
    if (shape_numel(shape) != v.size())
      throw std::runtime_error(std::string(who) + ": value size " +
                               std::to_string(v.size()) +
                               " does not match shape " + shape_str(shape));
  }
  std::shared_ptr<Node> node_;
};

// When set, newly built ops do not record the tape (forward values only).
inline bool& no_grad_flag() {
  thread_local bool flag = false;
  return flag;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(no_grad_flag()) { no_grad_flag() = true; }
  ~NoGradGuard() { no_grad_flag() = prev; }
};

namespace detail {

template <class T>
Tensor<T> make_op(const char* name, Shape shape, std::vector<T> value,
                  std::vector<Tensor<T>> parents,
                  typename TensorNode<T>::FastBwd bwd,
                  typename TensorNode<T>::GraphBwd gbwd = nullptr) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = name;
  bool needs = false;
  if (!no_grad_flag())
    for (const auto& p : parents) needs = needs || p.raw()->wants();
  if (needs) {
    n->needs_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(bwd);
    n->backward_graph_fn = std::move(gbwd);
  }
  return Tensor<T>(n);
}

[[noreturn]] inline void shape_fail(const char* op, const Shape& a,
                                    const Shape& b) {
  throw std::runtime_error(std::string("op '") + op + "': incompatible shapes " +
                           shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] inline void shape_fail1(const char* op, const Shape& a,
                                     const std::string& why) {
  throw std::runtime_error(std::string("op '") + op + "': shape " +
                           shape_str(a) + " " + why);
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const EMat<T>>;
template <class T>
using MMap = Eigen::Map<EMat<T>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise helpers

namespace detail {

template <class T, class F, class DF>
Tensor<T> unary_op(const char* name, const Tensor<T>& a, F f, DF df,
                   typename TensorNode<T>::GraphBwd gbwd = nullptr) {
  std::vector<T> v(a.size());
  const auto& av = a.value();
  for (size_t i = 0; i < v.size(); ++i) v[i] = f(av[i]);
  auto bwd = [df](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    for (size_t i = 0; i < self.value.size(); ++i)
      p.grad[i] += self.grad[i] * df(p.value[i], self.value[i]);
  };
  return make_op<T>(name, a.shape(), std::move(v), {a}, bwd, std::move(gbwd));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// core ops

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> sum_rows(const Tensor<T>& a);
template <class T>
Tensor<T> sum_all(const Tensor<T>& a);
template <class T>
Tensor<T> transpose(const Tensor<T>& a);
template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c);
template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, int r0, int r1);
template <class T>
Tensor<T> embed_rows(const Tensor<T>& a, int r0, int total_rows);
template <class T>
Tensor<T> sum_rows_segments(const Tensor<T>& a, int segments);
template <class T>
Tensor<T> tile_rows(const Tensor<T>& a, int R);

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0])
    detail::shape_fail("matmul", a.shape(), b.shape());
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> v(static_cast<size_t>(m) * n);
  {
    detail::CMap<T> A(a.value().data(), m, k), B(b.value().data(), k, n);
    detail::MMap<T> C(v.data(), m, n);
    C.noalias() = A * B;
  }
  auto bwd = [m, k, n](TensorNode<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    detail::CMap<T> G(self.grad.data(), m, n);
    if (pa.wants()) {
      detail::CMap<T> B(pb.value.data(), k, n);
      detail::MMap<T> GA(pa.grad.data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (pb.wants()) {
      detail::CMap<T> A(pa.value.data(), m, k);
      detail::MMap<T> GB(pb.grad.data(), k, n);
      GB.noalias() += A.transpose() * G;
    }
  };
  auto gbwd = [](TensorNode<T>& self, const Tensor<T>& g) {
    Tensor<T> pa(self.parents[0]), pb(self.parents[1]);
    return std::vector<Tensor<T>>{matmul(g, transpose(pb)),
                                  matmul(transpose(pa), g)};
  };
  return detail::make_op<T>("matmul", {m, n}, std::move(v), {a, b}, bwd, gbwd);
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.shape().size() != 2)
    detail::shape_fail1("transpose", a.shape(), "is not 2-D");
  const int r = a.shape()[0], c = a.shape()[1];
  std::vector<T> v(a.size());
  const auto& av = a.value();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) v[static_cast<size_t>(j) * r + i] = av[static_cast<size_t>(i) * c + j];
  auto bwd = [r, c](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        p.grad[static_cast<size_t>(i) * c + j] += self.grad[static_cast<size_t>(j) * r + i];
  };
  auto gbwd = [](TensorNode<T>& self, const Tensor<T>& g) {
    return std::vector<Tensor<T>>{transpose(g)};
  };
  return detail::make_op<T>("transpose", {c, r}, std::move(v), {a}, bwd, gbwd);
}

// add/sub support equal shapes, a row-broadcast right operand [1,C] against
// [R,C], and a scalar right operand. No other broadcasting.
namespace detail {
enum class BcastKind { kEqual, kRow, kScalar };

template <class T>
BcastKind bcast_kind(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (b.size() == 1 && a.size() >= 1) return BcastKind::kScalar;
  if (same_shape(a.shape(), b.shape())) return BcastKind::kEqual;
  if (a.shape().size() == 2 && b.shape().size() == 2 && b.shape()[0] == 1 &&
      b.shape()[1] == a.shape()[1])
    return BcastKind::kRow;
  shape_fail(op, a.shape(), b.shape());
}
}  // namespace detail

template <class T, int Sign>
Tensor<T> addsub_impl(const char* name, const Tensor<T>& a, const Tensor<T>& b) {
  auto kind = detail::bcast_kind(name, a, b);
  const int C = a.cols();
  std::vector<T> v(a.size());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (size_t i = 0; i < v.size(); ++i) {
    T bval = kind == detail::BcastKind::kEqual  ? bv[i]
             : kind == detail::BcastKind::kRow ? bv[i % C]
                                               : bv[0];
    v[i] = av[i] + T(Sign) * bval;
  }
  auto bwd = [kind, C](TensorNode<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.wants())
      for (size_t i = 0; i < self.value.size(); ++i) pa.grad[i] += self.grad[i];
    if (pb.wants()) {
      for (size_t i = 0; i < self.value.size(); ++i) {
        size_t j = kind == detail::BcastKind::kEqual  ? i
                   : kind == detail::BcastKind::kRow ? i % C
                                                     : 0;
        pb.grad[j] += T(Sign) * self.grad[i];
      }
    }
  };
  auto gbwd = [kind](TensorNode<T>& self, const Tensor<T>& g) {
    Tensor<T> gb;
    if (kind == detail::BcastKind::kEqual)
      gb = g;
    else if (kind == detail::BcastKind::kRow)
      gb = sum_rows(g);
    else
      gb = sum_all(g);
    if (Sign < 0) gb = mul_scalar(gb, T(-1));
    return std::vector<Tensor<T>>{g, gb};
  };
  return detail::make_op<T>(name, a.shape(), std::move(v), {a, b}, bwd, gbwd);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return addsub_impl<T, 1>("add", a, b);
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return addsub_impl<T, -1>("sub", a, b);
}

// Elementwise product; right operand may be scalar or a [1,C] row.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  auto kind = detail::bcast_kind("mul", a, b);
  const int C = a.cols();
  std::vector<T> v(a.size());
  const auto& av = a.value();
  const auto& bv = b.value();
  auto bsel = [kind, C, &bv](size_t i) {
    return kind == detail::BcastKind::kEqual  ? bv[i]
           : kind == detail::BcastKind::kRow ? bv[i % C]
                                             : bv[0];
  };
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bsel(i);
  auto bwd = [kind, C](TensorNode<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    auto bidx = [kind, C](size_t i) {
      return kind == detail::BcastKind::kEqual  ? i
             : kind == detail::BcastKind::kRow ? i % C
                                               : size_t(0);
    };
    if (pa.wants())
      for (size_t i = 0; i < self.value.size(); ++i)
        pa.grad[i] += self.grad[i] * pb.value[bidx(i)];
    if (pb.wants())
      for (size_t i = 0; i < self.value.size(); ++i)
        pb.grad[bidx(i)] += self.grad[i] * pa.value[i];
  };
  auto gbwd = [kind](TensorNode<T>& self, const Tensor<T>& g) {
    Tensor<T> pa(self.parents[0]), pb(self.parents[1]);
    Tensor<T> ga = mul(g, pb);
    Tensor<T> prod = mul(g, pa);
    Tensor<T> gb = kind == detail::BcastKind::kEqual  ? prod
                   : kind == detail::BcastKind::kRow ? sum_rows(prod)
                                                     : sum_all(prod);
    return std::vector<Tensor<T>>{ga, gb};
  };
  return detail::make_op<T>("mul", a.shape(), std::move(v), {a, b}, bwd, gbwd);
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "neg", a, [](T x) { return -x; }, [](T, T) { return T(-1); },
      [](TensorNode<T>&, const Tensor<T>& g) {
        return std::vector<Tensor<T>>{mul_scalar(g, T(-1))};
      });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return detail::unary_op<T>(
      "add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T(1); },
      [](TensorNode<T>&, const Tensor<T>& g) {
        return std::vector<Tensor<T>>{g};
      });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  return detail::unary_op<T>(
      "mul_scalar", a, [c](T x) { return x * c; },
      [c](T, T) { return c; },
      [c](TensorNode<T>&, const Tensor<T>& g) {
        return std::vector<Tensor<T>>{mul_scalar(g, c)};
      });
}

namespace detail {
template <class T>
using AMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using CAMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
}  // namespace detail

template <class T>
Tensor<T> sine(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "sine", a, [](T x) { return std::sin(x); },
      [](T x, T) { return std::cos(x); });
}

// sin(scale * x) in one vectorized pass; the workhorse of the sine MLPs.
template <class T>
Tensor<T> sine_scaled(const Tensor<T>& a, T scale) {
  std::vector<T> v(a.size());
  {
    detail::CAMap<T> in(a.value().data(), a.size());
    detail::AMap<T> out(v.data(), v.size());
    out = (in * scale).sin();
  }
  auto bwd = [scale](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    detail::CAMap<T> x(p.value.data(), p.value.size());
    detail::CAMap<T> g(self.grad.data(), self.grad.size());
    detail::AMap<T> gx(p.grad.data(), p.grad.size());
    gx += g * scale * (x * scale).cos();
  };
  return detail::make_op<T>("sine_scaled", a.shape(), std::move(v), {a}, bwd);
}

// Fused affine map y = x W + b with a row-broadcast bias.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b) {
  if (x.shape().size() != 2 || W.shape().size() != 2 ||
      x.shape()[1] != W.shape()[0])
    detail::shape_fail("linear", x.shape(), W.shape());
  if (b.shape().size() != 2 || b.shape()[0] != 1 ||
      b.shape()[1] != W.shape()[1])
    detail::shape_fail("linear", W.shape(), b.shape());
  const int m = x.shape()[0], k = x.shape()[1], n = W.shape()[1];
  std::vector<T> v(static_cast<size_t>(m) * n);
  {
    detail::CMap<T> A(x.value().data(), m, k), B(W.value().data(), k, n);
    detail::CMap<T> bias(b.value().data(), 1, n);
    detail::MMap<T> C(v.data(), m, n);
    C.noalias() = A * B;
    C.rowwise() += bias.row(0);
  }
  auto bwd = [m, k, n](TensorNode<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    detail::CMap<T> G(self.grad.data(), m, n);
    if (px.wants()) {
      detail::CMap<T> B(pw.value.data(), k, n);
      detail::MMap<T> GX(px.grad.data(), m, k);
      GX.noalias() += G * B.transpose();
    }
    if (pw.wants()) {
      detail::CMap<T> A(px.value.data(), m, k);
      detail::MMap<T> GW(pw.grad.data(), k, n);
      GW.noalias() += A.transpose() * G;
    }
    if (pb.wants()) {
      detail::MMap<T> GB(pb.grad.data(), 1, n);
      GB.row(0) += G.colwise().sum();
    }
  };
  auto gbwd = [](TensorNode<T>& self, const Tensor<T>& g) {
    Tensor<T> px(self.parents[0]), pw(self.parents[1]);
    return std::vector<Tensor<T>>{matmul(g, transpose(pw)),
                                  matmul(transpose(px), g), sum_rows(g)};
  };
  return detail::make_op<T>("linear", {m, n}, std::move(v), {x, W, b}, bwd,
                            gbwd);
}

template <class T>
Tensor<T> cosine(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "cosine", a, [](T x) { return std::cos(x); },
      [](T x, T) { return -std::sin(x); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  {
    detail::CAMap<T> in(a.value().data(), a.size());
    detail::AMap<T> out(v.data(), v.size());
    out = T(1) / (T(1) + (-in).exp());
  }
  auto bwd = [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    detail::CAMap<T> y(self.value.data(), self.value.size());
    detail::CAMap<T> g(self.grad.data(), self.grad.size());
    detail::AMap<T> gx(p.grad.data(), p.grad.size());
    gx += g * y * (T(1) - y);
  };
  return detail::make_op<T>("sigmoid", a.shape(), std::move(v), {a}, bwd);
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  {
    detail::CAMap<T> in(a.value().data(), a.size());
    detail::AMap<T> out(v.data(), v.size());
    out = in.max(T(0));
  }
  auto bwd = [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    detail::CAMap<T> x(p.value.data(), p.value.size());
    detail::CAMap<T> g(self.grad.data(), self.grad.size());
    detail::AMap<T> gx(p.grad.data(), p.grad.size());
    gx += g * (x > T(0)).template cast<T>();
  };
  auto gbwd = [](TensorNode<T>& self, const Tensor<T>& g) {
    auto& p = *self.parents[0];
    std::vector<T> mask(p.value.size());
    for (size_t i = 0; i < mask.size(); ++i)
      mask[i] = p.value[i] > T(0) ? T(1) : T(0);
    Tensor<T> m = Tensor<T>::constant(p.shape, std::move(mask));
    return std::vector<Tensor<T>>{mul(g, m)};
  };
  return detail::make_op<T>("relu", a.shape(), std::move(v), {a}, bwd, gbwd);
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  std::vector<T> v(a.size());
  {
    detail::CAMap<T> in(a.value().data(), a.size());
    detail::AMap<T> out(v.data(), v.size());
    out = (in > T(0)).select(in, in * slope);
  }
  auto bwd = [slope](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    detail::CAMap<T> x(p.value.data(), p.value.size());
    detail::CAMap<T> g(self.grad.data(), self.grad.size());
    detail::AMap<T> gx(p.grad.data(), p.grad.size());
    gx += g * (x > T(0)).select(
                  Eigen::Array<T, Eigen::Dynamic, 1>::Ones(x.size()),
                  Eigen::Array<T, Eigen::Dynamic, 1>::Constant(x.size(), slope));
  };
  auto gbwd = [slope](TensorNode<T>& self, const Tensor<T>& g) {
    auto& p = *self.parents[0];
    std::vector<T> mask(p.value.size());
    for (size_t i = 0; i < mask.size(); ++i)
      mask[i] = p.value[i] > T(0) ? T(1) : slope;
    Tensor<T> m = Tensor<T>::constant(p.shape, std::move(mask));
    return std::vector<Tensor<T>>{mul(g, m)};
  };
  return detail::make_op<T>("leaky_relu", a.shape(), std::move(v), {a}, bwd,
                            gbwd);
}

template <class T>
Tensor<T> exp_(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  {
    detail::CAMap<T> in(a.value().data(), a.size());
    detail::AMap<T> out(v.data(), v.size());
    out = in.exp();
  }
  auto bwd = [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    detail::CAMap<T> y(self.value.data(), self.value.size());
    detail::CAMap<T> g(self.grad.data(), self.grad.size());
    detail::AMap<T> gx(p.grad.data(), p.grad.size());
    gx += g * y;
  };
  return detail::make_op<T>("exp", a.shape(), std::move(v), {a}, bwd);
}

template <class T>
Tensor<T> log_(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "log", a, [](T x) { return std::log(x); },
      [](T x, T) { return T(1) / x; });
}

template <class T>
Tensor<T> sqrt_(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return T(1) / (T(2) * y + T(1e-12)); });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "square", a, [](T x) { return x * x; },
      [](T x, T) { return T(2) * x; },
      [](TensorNode<T>& self, const Tensor<T>& g) {
        Tensor<T> p(self.parents[0]);
        return std::vector<Tensor<T>>{mul(mul_scalar(g, T(2)), p)};
      });
}

template <class T>
Tensor<T> reciprocal(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "reciprocal", a, [](T x) { return T(1) / x; },
      [](T, T y) { return -y * y; },
      [](TensorNode<T>& self, const Tensor<T>& g) {
        // rebuild 1/x from the parent so the expression stays differentiable
        Tensor<T> p(self.parents[0]);
        Tensor<T> inv = reciprocal(p);
        return std::vector<Tensor<T>>{neg(mul(g, mul(inv, inv)))};
      });
}

// Values outside [lo, hi] are pinned; their gradient is zero.
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary_op<T>(
      "clamp", a,
      [lo, hi](T x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// reductions and structure ops

template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
  const auto& av = a.value();
  T acc = 0;
  for (T x : av) acc += x;
  T m = acc / static_cast<T>(av.size());
  auto bwd = [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    T g = self.grad[0] / static_cast<T>(p.value.size());
    for (size_t i = 0; i < p.value.size(); ++i) p.grad[i] += g;
  };
  auto gbwd = [](TensorNode<T>& self, const Tensor<T>& g) {
    auto& p = *self.parents[0];
    T scale = T(1) / static_cast<T>(p.value.size());
    Tensor<T> gs = mul_scalar(g, scale);
    // broadcast the scalar up to the parent shape
    Tensor<T> ones = Tensor<T>::full(p.shape, T(1));
    return std::vector<Tensor<T>>{mul(ones, gs)};
  };
  return detail::make_op<T>("mean", {1}, {m}, {a}, bwd, gbwd);
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
  const auto& av = a.value();
  T acc = 0;
  for (T x : av) acc += x;
  auto bwd = [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    for (size_t i = 0; i < p.value.size(); ++i) p.grad[i] += self.grad[0];
  };
  auto gbwd = [](TensorNode<T>& self, const Tensor<T>& g) {
    auto& p = *self.parents[0];
    Tensor<T> ones = Tensor<T>::full(p.shape, T(1));
    return std::vector<Tensor<T>>{mul(ones, g)};
  };
  return detail::make_op<T>("sum", {1}, {acc}, {a}, bwd, gbwd);
}

template <class T>
Tensor<T> sum_rows(const Tensor<T>& a) {
  if (a.shape().size() != 2)
    detail::shape_fail1("sum_rows", a.shape(), "is not 2-D");
  const int R = a.shape()[0], C = a.shape()[1];
  std::vector<T> v(C, T(0));
  const auto& av = a.value();
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) v[j] += av[static_cast<size_t>(i) * C + j];
  auto bwd = [R, C](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < C; ++j)
        p.grad[static_cast<size_t>(i) * C + j] += self.grad[j];
  };
  auto gbwd = [R](TensorNode<T>& self, const Tensor<T>& g) {
    return std::vector<Tensor<T>>{tile_rows(g, R)};
  };
  return detail::make_op<T>("sum_rows", {1, C}, std::move(v), {a}, bwd, gbwd);
}

template <class T>
Tensor<T> tile_rows(const Tensor<T>& a, int R) {
  if (a.shape().size() != 2 || a.shape()[0] != 1)
    detail::shape_fail1("tile_rows", a.shape(), "is not [1,C]");
  const int C = a.shape()[1];
  std::vector<T> v(static_cast<size_t>(R) * C);
  const auto& av = a.value();
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) v[static_cast<size_t>(i) * C + j] = av[j];
  auto bwd = [R, C](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < C; ++j)
        p.grad[j] += self.grad[static_cast<size_t>(i) * C + j];
  };
  auto gbwd = [](TensorNode<T>& self, const Tensor<T>& g) {
    return std::vector<Tensor<T>>{sum_rows(g)};
  };
  return detail::make_op<T>("tile_rows", {R, C}, std::move(v), {a}, bwd, gbwd);
}

// Repeat each row L times consecutively: [S,C] -> [S*L,C].
template <class T>
Tensor<T> repeat_rows(const Tensor<T>& a, int L) {
  if (a.shape().size() != 2 || L <= 0)
    detail::shape_fail1("repeat_rows", a.shape(), "is not 2-D");
  const int S = a.shape()[0], C = a.shape()[1];
  std::vector<T> v(static_cast<size_t>(S) * L * C);
  const auto& av = a.value();
  for (int s = 0; s < S; ++s)
    for (int l = 0; l < L; ++l)
      std::copy(av.begin() + static_cast<size_t>(s) * C,
                av.begin() + static_cast<size_t>(s + 1) * C,
                v.begin() + (static_cast<size_t>(s) * L + l) * C);
  auto bwd = [S, L, C](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    for (int s = 0; s < S; ++s)
      for (int l = 0; l < L; ++l)
        for (int j = 0; j < C; ++j)
          p.grad[static_cast<size_t>(s) * C + j] +=
              self.grad[(static_cast<size_t>(s) * L + l) * C + j];
  };
  auto gbwd = [L](TensorNode<T>& self, const Tensor<T>& g) {
    return std::vector<Tensor<T>>{sum_rows_segments(g, self.parents[0]->shape[0])};
  };
  return detail::make_op<T>("repeat_rows", {S * L, C}, std::move(v), {a}, bwd,
                            gbwd);
}

// Sum rows within S equal segments: [S*L,C] -> [S,C].
template <class T>
Tensor<T> sum_rows_segments(const Tensor<T>& a, int segments) {
  if (a.shape().size() != 2 || segments <= 0 || a.shape()[0] % segments != 0)
    detail::shape_fail1("sum_rows_segments", a.shape(),
                        "rows not divisible into segments");
  const int R = a.shape()[0], C = a.shape()[1], L = R / segments;
  std::vector<T> v(static_cast<size_t>(segments) * C, T(0));
  const auto& av = a.value();
  for (int s = 0; s < segments; ++s)
    for (int l = 0; l < L; ++l)
      for (int j = 0; j < C; ++j)
        v[static_cast<size_t>(s) * C + j] +=
            av[(static_cast<size_t>(s) * L + l) * C + j];
  auto bwd = [segments, L, C](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    for (int s = 0; s < segments; ++s)
      for (int l = 0; l < L; ++l)
        for (int j = 0; j < C; ++j)
          p.grad[(static_cast<size_t>(s) * L + l) * C + j] +=
              self.grad[static_cast<size_t>(s) * C + j];
  };
  auto gbwd = [L](TensorNode<T>& self, const Tensor<T>& g) {
    return std::vector<Tensor<T>>{repeat_rows(g, L)};
  };
  return detail::make_op<T>("sum_rows_segments", {segments, C}, std::move(v),
                            {a}, bwd, gbwd);
}

// Row-wise standardization (x - mean) / sqrt(var + eps), no affine part.
template <class T>
Tensor<T> normalize_rows(const Tensor<T>& a, T eps = T(1e-5)) {
  if (a.shape().size() != 2)
    detail::shape_fail1("normalize_rows", a.shape(), "is not 2-D");
  const int R = a.shape()[0], C = a.shape()[1];
  std::vector<T> v(a.size());
  std::vector<T> inv_sd(R);
  const auto& av = a.value();
  for (int i = 0; i < R; ++i) {
    T mean = 0;
    for (int j = 0; j < C; ++j) mean += av[static_cast<size_t>(i) * C + j];
    mean /= static_cast<T>(C);
    T var = 0;
    for (int j = 0; j < C; ++j) {
      T d = av[static_cast<size_t>(i) * C + j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(C);
    T is = T(1) / std::sqrt(var + eps);
    inv_sd[i] = is;
    for (int j = 0; j < C; ++j)
      v[static_cast<size_t>(i) * C + j] =
          (av[static_cast<size_t>(i) * C + j] - mean) * is;
  }
  auto bwd = [R, C, inv_sd](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    for (int i = 0; i < R; ++i) {
      T gm = 0, gy = 0;
      for (int j = 0; j < C; ++j) {
        size_t k = static_cast<size_t>(i) * C + j;
        gm += self.grad[k];
        gy += self.grad[k] * self.value[k];
      }
      gm /= static_cast<T>(C);
      gy /= static_cast<T>(C);
      for (int j = 0; j < C; ++j) {
        size_t k = static_cast<size_t>(i) * C + j;
        p.grad[k] += (self.grad[k] - gm - self.value[k] * gy) * inv_sd[i];
      }
    }
  };
  return detail::make_op<T>("normalize_rows", a.shape(), std::move(v), {a},
                            bwd);
}

namespace detail {
// Scatter a [1,C] gradient back into an [R,C] layout at per-column row
// indices. Used by the graph backward of the max-pool ops.
template <class T>
Tensor<T> scatter_rows(const Tensor<T>& g, std::vector<int> idx, int R) {
  const int C = g.shape()[1];
  std::vector<T> v(static_cast<size_t>(R) * C, T(0));
  const auto& gv = g.value();
  for (int j = 0; j < C; ++j) v[static_cast<size_t>(idx[j]) * C + j] = gv[j];
  auto bwd = [idx, C](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    for (int j = 0; j < C; ++j)
      p.grad[j] += self.grad[static_cast<size_t>(idx[j]) * C + j];
  };
  return make_op<T>("scatter_rows", {R, C}, std::move(v), {g}, bwd);
}
}  // namespace detail

// Max over rows (axis 0): [R,C] -> [1,C]. Ties keep the first row.
template <class T>
Tensor<T> rows_max(const Tensor<T>& a) {
  if (a.shape().size() != 2)
    detail::shape_fail1("rows_max", a.shape(), "is not 2-D");
  const int R = a.shape()[0], C = a.shape()[1];
  std::vector<T> v(C);
  std::vector<int> idx(C, 0);
  const auto& av = a.value();
  for (int j = 0; j < C; ++j) v[j] = av[j];
  for (int i = 1; i < R; ++i)
    for (int j = 0; j < C; ++j) {
      T x = av[static_cast<size_t>(i) * C + j];
      if (x > v[j]) {
        v[j] = x;
        idx[j] = i;
      }
    }
  auto bwd = [idx, C](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    for (int j = 0; j < C; ++j)
      p.grad[static_cast<size_t>(idx[j]) * C + j] += self.grad[j];
  };
  auto gbwd = [idx, R](TensorNode<T>& self, const Tensor<T>& g) {
    return std::vector<Tensor<T>>{detail::scatter_rows(g, idx, R)};
  };
  return detail::make_op<T>("rows_max", {1, C}, std::move(v), {a}, bwd, gbwd);
}

// Per-segment max over rows: [S*L, C] -> [S, C] for S equal segments.
template <class T>
Tensor<T> rows_max_segments(const Tensor<T>& a, int segments) {
  if (a.shape().size() != 2 || segments <= 0 || a.shape()[0] % segments != 0)
    detail::shape_fail1("rows_max_segments", a.shape(),
                        "rows not divisible into " + std::to_string(segments) +
                            " segments");
  const int R = a.shape()[0], C = a.shape()[1], L = R / segments;
  std::vector<T> v(static_cast<size_t>(segments) * C);
  std::vector<int> idx(static_cast<size_t>(segments) * C);
  const auto& av = a.value();
  for (int s = 0; s < segments; ++s)
    for (int j = 0; j < C; ++j) {
      int base = s * L;
      T best = av[static_cast<size_t>(base) * C + j];
      int bi = base;
      for (int i = base + 1; i < base + L; ++i) {
        T x = av[static_cast<size_t>(i) * C + j];
        if (x > best) {
          best = x;
          bi = i;
        }
      }
      v[static_cast<size_t>(s) * C + j] = best;
      idx[static_cast<size_t>(s) * C + j] = bi;
    }
  auto bwd = [idx, C, segments](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    for (int s = 0; s < segments; ++s)
      for (int j = 0; j < C; ++j)
        p.grad[static_cast<size_t>(idx[static_cast<size_t>(s) * C + j]) * C + j] +=
            self.grad[static_cast<size_t>(s) * C + j];
  };
  auto gbwd = [idx, R, C, segments](TensorNode<T>& self, const Tensor<T>& g) {
    // scatter each segment row back to its argmax position
    std::vector<T> zeros(static_cast<size_t>(R) * C, T(0));
    // express as embed of per-segment scatters; a single custom node is simpler
    const std::vector<int> id = idx;
    auto fb = [id, C, segments](TensorNode<T>& self2) {
      auto& p = *self2.parents[0];
      if (!p.wants()) return;
      for (int s = 0; s < segments; ++s)
        for (int j = 0; j < C; ++j)
          p.grad[static_cast<size_t>(s) * C + j] +=
              self2.grad[static_cast<size_t>(id[static_cast<size_t>(s) * C + j]) * C + j];
    };
    std::vector<T> v2(static_cast<size_t>(R) * C, T(0));
    const auto& gv = g.value();
    for (int s = 0; s < segments; ++s)
      for (int j = 0; j < C; ++j)
        v2[static_cast<size_t>(id[static_cast<size_t>(s) * C + j]) * C + j] =
            gv[static_cast<size_t>(s) * C + j];
    return std::vector<Tensor<T>>{
        detail::make_op<T>("scatter_segments", {R, C}, std::move(v2), {g}, fb)};
  };
  return detail::make_op<T>("rows_max_segments", {segments, C}, std::move(v),
                            {a}, bwd, gbwd);
}

// Numerically stable log-sum-exp over rows (axis 0): [R,C] -> [1,C].
template <class T>
Tensor<T> logsumexp_rows(const Tensor<T>& a) {
  if (a.shape().size() != 2)
    detail::shape_fail1("logsumexp_rows", a.shape(), "is not 2-D");
  const int R = a.shape()[0], C = a.shape()[1];
  std::vector<T> v(C);
  const auto& av = a.value();
  for (int j = 0; j < C; ++j) {
    T m = av[j];
    for (int i = 1; i < R; ++i)
      m = std::max(m, av[static_cast<size_t>(i) * C + j]);
    T acc = 0;
    for (int i = 0; i < R; ++i)
      acc += std::exp(av[static_cast<size_t>(i) * C + j] - m);
    v[j] = m + std::log(acc);
  }
  auto bwd = [R, C](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < C; ++j)
        p.grad[static_cast<size_t>(i) * C + j] +=
            self.grad[j] *
            std::exp(p.value[static_cast<size_t>(i) * C + j] - self.value[j]);
  };
  return detail::make_op<T>("logsumexp_rows", {1, C}, std::move(v), {a}, bwd);
}

// L2 norm of all elements; gradient guarded at the origin (subgradient 0).
template <class T>
Tensor<T> l2_norm(const Tensor<T>& a) {
  const auto& av = a.value();
  T acc = 0;
  for (T x : av) acc += x * x;
  T n = std::sqrt(acc);
  auto bwd = [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    T denom = self.value[0] + T(1e-12);
    for (size_t i = 0; i < p.value.size(); ++i)
      p.grad[i] += self.grad[0] * p.value[i] / denom;
  };
  return detail::make_op<T>("l2_norm", {1}, {n}, {a}, bwd);
}

// Population standard deviation of all elements; gradient guarded at std 0.
template <class T>
Tensor<T> batch_std(const Tensor<T>& a) {
  const auto& av = a.value();
  const T n = static_cast<T>(av.size());
  T mean = 0;
  for (T x : av) mean += x;
  mean /= n;
  T var = 0;
  for (T x : av) var += (x - mean) * (x - mean);
  var /= n;
  T sd = std::sqrt(var);
  auto bwd = [mean, n](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    T denom = n * (self.value[0] + T(1e-12));
    for (size_t i = 0; i < p.value.size(); ++i)
      p.grad[i] += self.grad[0] * (p.value[i] - mean) / denom;
  };
  return detail::make_op<T>("batch_std", {1}, {sd}, {a}, bwd);
}

// ---------------------------------------------------------------------------
// concatenation / slicing

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty())
    throw std::runtime_error("op 'concat_rows': no operands");
  const int C = parts[0].cols();
  int R = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.shape()[1] != C)
      detail::shape_fail("concat_rows", parts[0].shape(), p.shape());
    R += p.shape()[0];
  }
  std::vector<T> v;
  v.reserve(static_cast<size_t>(R) * C);
  for (const auto& p : parts)
    v.insert(v.end(), p.value().begin(), p.value().end());
  std::vector<int> offs;
  int off = 0;
  for (const auto& p : parts) {
    offs.push_back(off);
    off += p.shape()[0];
  }
  auto bwd = [offs, C](TensorNode<T>& self) {
    for (size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      if (!p.wants()) continue;
      size_t base = static_cast<size_t>(offs[k]) * C;
      for (size_t i = 0; i < p.value.size(); ++i) p.grad[i] += self.grad[base + i];
    }
  };
  auto gbwd = [offs](TensorNode<T>& self, const Tensor<T>& g) {
    std::vector<Tensor<T>> out;
    for (size_t k = 0; k < self.parents.size(); ++k) {
      int r0 = offs[k];
      int r1 = r0 + self.parents[k]->shape[0];
      out.push_back(slice_rows(g, r0, r1));
    }
    return out;
  };
  return detail::make_op<T>("concat_rows", {R, C}, std::move(v), parts, bwd,
                            gbwd);
}

template <class T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[0] != b.shape()[0])
    detail::shape_fail("concat_cols", a.shape(), b.shape());
  const int R = a.shape()[0], Ca = a.shape()[1], Cb = b.shape()[1];
  std::vector<T> v(static_cast<size_t>(R) * (Ca + Cb));
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int i = 0; i < R; ++i) {
    std::copy(av.begin() + static_cast<size_t>(i) * Ca,
              av.begin() + static_cast<size_t>(i + 1) * Ca,
              v.begin() + static_cast<size_t>(i) * (Ca + Cb));
    std::copy(bv.begin() + static_cast<size_t>(i) * Cb,
              bv.begin() + static_cast<size_t>(i + 1) * Cb,
              v.begin() + static_cast<size_t>(i) * (Ca + Cb) + Ca);
  }
  auto bwd = [R, Ca, Cb](TensorNode<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (int i = 0; i < R; ++i) {
      size_t base = static_cast<size_t>(i) * (Ca + Cb);
      if (pa.wants())
        for (int j = 0; j < Ca; ++j)
          pa.grad[static_cast<size_t>(i) * Ca + j] += self.grad[base + j];
      if (pb.wants())
        for (int j = 0; j < Cb; ++j)
          pb.grad[static_cast<size_t>(i) * Cb + j] += self.grad[base + Ca + j];
    }
  };
  auto gbwd = [Ca, Cb](TensorNode<T>& self, const Tensor<T>& g) {
    return std::vector<Tensor<T>>{slice_cols(g, 0, Ca),
                                  slice_cols(g, Ca, Ca + Cb)};
  };
  return detail::make_op<T>("concat_cols", {R, Ca + Cb}, std::move(v), {a, b},
                            bwd, gbwd);
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, int r0, int r1) {
  if (a.shape().size() != 2 || r0 < 0 || r1 > a.shape()[0] || r0 >= r1)
    detail::shape_fail1("slice_rows", a.shape(),
                        "cannot slice rows [" + std::to_string(r0) + "," +
                            std::to_string(r1) + ")");
  const int C = a.shape()[1];
  std::vector<T> v(a.value().begin() + static_cast<size_t>(r0) * C,
                   a.value().begin() + static_cast<size_t>(r1) * C);
  auto bwd = [r0, C](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    size_t base = static_cast<size_t>(r0) * C;
    for (size_t i = 0; i < self.value.size(); ++i) p.grad[base + i] += self.grad[i];
  };
  auto gbwd = [r0](TensorNode<T>& self, const Tensor<T>& g) {
    return std::vector<Tensor<T>>{embed_rows(g, r0, self.parents[0]->shape[0])};
  };
  return detail::make_op<T>("slice_rows", {r1 - r0, C}, std::move(v), {a}, bwd,
                            gbwd);
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
  if (a.shape().size() != 2 || c0 < 0 || c1 > a.shape()[1] || c0 >= c1)
    detail::shape_fail1("slice_cols", a.shape(),
                        "cannot slice cols [" + std::to_string(c0) + "," +
                            std::to_string(c1) + ")");
  const int R = a.shape()[0], C = a.shape()[1], W = c1 - c0;
  std::vector<T> v(static_cast<size_t>(R) * W);
  const auto& av = a.value();
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < W; ++j)
      v[static_cast<size_t>(i) * W + j] = av[static_cast<size_t>(i) * C + c0 + j];
  auto bwd = [R, C, W, c0](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < W; ++j)
        p.grad[static_cast<size_t>(i) * C + c0 + j] +=
            self.grad[static_cast<size_t>(i) * W + j];
  };
  auto gbwd = [R, C, c0, c1](TensorNode<T>& self, const Tensor<T>& g) {
    // pad columns back out with zeros
    Tensor<T> left = c0 > 0 ? Tensor<T>::zeros({R, c0}) : Tensor<T>();
    Tensor<T> right = c1 < C ? Tensor<T>::zeros({R, C - c1}) : Tensor<T>();
    Tensor<T> out = g;
    if (left.defined()) out = concat_cols(left, out);
    if (right.defined()) out = concat_cols(out, right);
    return std::vector<Tensor<T>>{out};
  };
  return detail::make_op<T>("slice_cols", {R, W}, std::move(v), {a}, bwd, gbwd);
}

template <class T>
Tensor<T> embed_rows(const Tensor<T>& a, int r0, int total_rows) {
  if (a.shape().size() != 2 || r0 < 0 || r0 + a.shape()[0] > total_rows)
    detail::shape_fail1("embed_rows", a.shape(), "does not fit");
  const int C = a.shape()[1];
  std::vector<T> v(static_cast<size_t>(total_rows) * C, T(0));
  std::copy(a.value().begin(), a.value().end(),
            v.begin() + static_cast<size_t>(r0) * C);
  auto bwd = [r0, C](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.wants()) return;
    size_t base = static_cast<size_t>(r0) * C;
    for (size_t i = 0; i < p.value.size(); ++i) p.grad[i] += self.grad[base + i];
  };
  auto gbwd = [r0](TensorNode<T>& self, const Tensor<T>& g) {
    auto& p = *self.parents[0];
    return std::vector<Tensor<T>>{slice_rows(g, r0, r0 + p.shape[0])};
  };
  return detail::make_op<T>("embed_rows", {total_rows, C}, std::move(v), {a},
                            bwd, gbwd);
}

// Assemble size-1 tensors into one tensor of the given shape.
template <class T>
Tensor<T> stack_scalars(const std::vector<Tensor<T>>& xs, Shape shape) {
  if (shape_numel(shape) != xs.size())
    throw std::runtime_error("op 'stack_scalars': " + std::to_string(xs.size()) +
                             " operands do not fill shape " + shape_str(shape));
  std::vector<T> v(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != 1)
      detail::shape_fail1("stack_scalars", xs[i].shape(), "is not scalar");
    v[i] = xs[i].value()[0];
  }
  auto bwd = [](TensorNode<T>& self) {
    for (size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = *self.parents[i];
      if (p.wants()) p.grad[0] += self.grad[i];
    }
  };
  return detail::make_op<T>("stack_scalars", std::move(shape), std::move(v), xs,
                            bwd);
}

template <class T>
Tensor<T> detach(const Tensor<T>& a, bool requires_grad = false) {
  Tensor<T> t = Tensor<T>::constant(a.shape(), a.value());
  t.set_requires_grad(requires_grad);
  return t;
}

// ---------------------------------------------------------------------------
// backward drivers

namespace detail {

template <class T>
void topo_order(TensorNode<T>* root, std::vector<TensorNode<T>*>& order) {
  // iterative post-order DFS
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, i] = stack.back();
    if (i < node->parents.size()) {
      TensorNode<T>* p = node->parents[i++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Writes dLoss/dLeaf into every reachable leaf's grad buffer (accumulating).
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1)
    throw std::runtime_error("backward: loss must be scalar, got shape " +
                             shape_str(loss.shape()));
  std::vector<TensorNode<T>*> order;
  detail::topo_order(loss.raw(), order);
  loss.raw()->ensure_grad();
  loss.raw()->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (!n->backward_fn) continue;
    if (n->grad.empty()) continue;  // not reached by any gradient
    for (auto& p : n->parents)
      if (p->wants()) p->ensure_grad();
    n->backward_fn(*n);
  }
}

// Builds the gradient of a scalar output w.r.t. one input as a new graph
// expression, so the result is differentiable again. Every op between the
// two must provide a graph backward; anything else raises an error naming
// the offending op.
template <class T>
Tensor<T> input_gradient(const Tensor<T>& y, const Tensor<T>& x) {
  if (y.size() != 1)
    throw std::runtime_error("input_gradient: output must be scalar, got " +
                             shape_str(y.shape()));
  std::vector<TensorNode<T>*> order;
  detail::topo_order(y.raw(), order);
  std::unordered_map<TensorNode<T>*, bool> relevant;
  for (TensorNode<T>* n : order) {
    bool r = (n == x.raw());
    for (auto& p : n->parents) r = r || relevant[p.get()];
    relevant[n] = r;
  }
  if (!relevant[y.raw()]) return Tensor<T>::zeros(x.shape());

  std::unordered_map<TensorNode<T>*, Tensor<T>> gmap;
  gmap.emplace(y.raw(), Tensor<T>::full(y.shape(), T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (!relevant[n] || n == x.raw()) continue;
    auto gi = gmap.find(n);
    if (gi == gmap.end()) continue;  // no path from y
    if (!n->backward_graph_fn)
      throw std::runtime_error(
          std::string("op '") + n->op +
          "' is not twice-differentiable; it cannot appear between a "
          "gradient-penalty input and the critic output");
    std::vector<Tensor<T>> pgs = n->backward_graph_fn(*n, gi->second);
    for (size_t k = 0; k < n->parents.size(); ++k) {
      TensorNode<T>* p = n->parents[k].get();
      if (!relevant[p] || !pgs[k].defined()) continue;
      auto pi = gmap.find(p);
      if (pi == gmap.end())
        gmap.emplace(p, pgs[k]);
      else
        pi->second = add(pi->second, pgs[k]);
    }
  }
  auto xi = gmap.find(x.raw());
  if (xi == gmap.end()) return Tensor<T>::zeros(x.shape());
  return xi->second;
}

// (||grad_x D(x)|| - 1)^2, differentiable w.r.t. the critic's parameters.
template <class T>
Tensor<T> input_gradient_penalty(
    const std::function<Tensor<T>(const Tensor<T>&)>& disc,
    const Tensor<T>& x_hat) {
  Tensor<T> y = disc(x_hat);
  if (y.size() != 1)
    throw std::runtime_error(
        "input_gradient_penalty: critic output must be scalar, got " +
        shape_str(y.shape()));
  Tensor<T> g = input_gradient(y, x_hat);
  Tensor<T> n = l2_norm(g);
  return square(add_scalar(n, T(-1)));
}

}  // namespace ppd
