// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with tape-free reverse-mode differentiation.
// Every op output keeps shared ownership of its inputs, so a loss tensor
// owns the whole graph that produced it.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace stylecomp {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Additive attention bias standing in for minus infinity. Absorbing under
/// softmax at the magnitudes this library works with, and never NaN-producing.
template <typename T>
constexpr T masked_bias() {
  if constexpr (std::is_same_v<T, float>) {
    return T(-1e9);
  } else {
    return T(-1e30);
  }
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
    for (auto e : shape) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (values.size() != shape_numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    node_ = std::make_shared<Node<T>>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor filled(Shape shape, T v) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v));
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  /// Leading extent of a matrix-shaped tensor.
  std::size_t rows() const { return rank() == 0 ? 1 : node_->shape.front(); }
  /// Trailing extent.
  std::size_t cols() const { return rank() == 0 ? 1 : node_->shape.back(); }

  std::span<const T> values() const { return node_->value; }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  /// Marks a leaf trainable or frozen. Freezing drops any held gradient.
  void set_requires_grad(bool flag) const {
    if (!node_->leaf) throw std::logic_error("set_requires_grad() on a non-leaf tensor");
    node_->requires_grad = flag;
    if (!flag) clear_grad();
  }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void clear_grad() const {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }

  /// Overwrites the values of a leaf. Used by optimizers and loaders only;
  /// op outputs are immutable.
  void assign(std::span<const T> values) const {
    if (!node_->leaf) throw std::logic_error("assign() on a non-leaf tensor");
    if (values.size() != numel()) throw ShapeError("assign() size mismatch");
    std::copy(values.begin(), values.end(), node_->value.begin());
  }

  /// Copy with no graph history; gradient flag as requested.
  Tensor detached(bool requires_grad = false) const {
    return Tensor(shape(), node_->value, requires_grad);
  }

  const NodePtr& node() const { return node_; }
  const Node<T>* id() const { return node_.get(); }

 private:
  NodePtr node_;
};

namespace detail {

template <typename T>
void check_finite(std::span<const T> v, const char* op) {
  // x * 0 is NaN exactly when x is infinite or NaN; the sum stays branch-free.
  T acc = 0;
  for (auto x : v) acc += x * T(0);
  if (acc != acc) throw NumericError(std::string("non-finite value produced by ") + op);
}

/// Builds an op output. The backward closure is attached only when some
/// input participates in differentiation.
template <typename T, typename Fn>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> inputs, Fn&& backward) {
  check_finite<T>(values, op);
  Tensor<T> out(std::move(shape), std::move(values));
  bool any = false;
  for (auto* in : inputs) any = any || in->requires_grad();
  if (any) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.leaf = false;
    for (auto* in : inputs) node.inputs.push_back(in->node());
    node.backward = std::forward<Fn>(backward);
  }
  return out;
}

template <typename T>
Tensor<T> make_result_n(const char* op, Shape shape, std::vector<T> values,
                        const std::vector<Tensor<T>>& inputs,
                        std::function<void(Node<T>&)> backward) {
  check_finite<T>(values, op);
  Tensor<T> out(std::move(shape), std::move(values));
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.leaf = false;
    for (const auto& in : inputs) node.inputs.push_back(in.node());
    node.backward = std::move(backward);
  }
  return out;
}

template <typename T>
std::vector<T> transpose2d(const T* a, std::size_t m, std::size_t n);

template <typename T>
struct Vec {
  using type [[gnu::vector_size(32)]] = T;
  static constexpr std::size_t width = 32 / sizeof(T);
  static type load(const T* p) {
    type v;
    std::memcpy(&v, p, sizeof v);
    return v;
  }
  static void add_to(T* p, type v) {
    type cur = load(p);
    cur += v;
    std::memcpy(p, &cur, sizeof cur);
  }
};

// c[m x n] += a[m x k] * b[k x n] with a register tile of 4 rows by two
// vectors, accumulated over all of k before touching c. Accumulators start
// at +0, so zero products never flip a sign bit: masked-out terms leave
// exact bits.
template <typename T>
void gemm_rows(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using V = Vec<T>;
  using v_t = typename V::type;
  constexpr std::size_t W = V::width, J = 2 * W;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + i * k;
    const T* a1 = a0 + k;
    const T* a2 = a1 + k;
    const T* a3 = a2 + k;
    std::size_t j = 0;
    for (; j + J <= n; j += J) {
      v_t c00{}, c01{}, c10{}, c11{}, c20{}, c21{}, c30{}, c31{};
      for (std::size_t p = 0; p < k; ++p) {
        const T* bp = b + p * n + j;
        const v_t b0 = V::load(bp), b1 = V::load(bp + W);
        c00 += a0[p] * b0;
        c01 += a0[p] * b1;
        c10 += a1[p] * b0;
        c11 += a1[p] * b1;
        c20 += a2[p] * b0;
        c21 += a2[p] * b1;
        c30 += a3[p] * b0;
        c31 += a3[p] * b1;
      }
      T* cr = c + i * n + j;
      V::add_to(cr, c00);
      V::add_to(cr + W, c01);
      V::add_to(cr + n, c10);
      V::add_to(cr + n + W, c11);
      V::add_to(cr + 2 * n, c20);
      V::add_to(cr + 2 * n + W, c21);
      V::add_to(cr + 3 * n, c30);
      V::add_to(cr + 3 * n + W, c31);
    }
    for (; j + W <= n; j += W) {
      v_t c0{}, c1{}, c2{}, c3{};
      for (std::size_t p = 0; p < k; ++p) {
        const v_t b0 = V::load(b + p * n + j);
        c0 += a0[p] * b0;
        c1 += a1[p] * b0;
        c2 += a2[p] * b0;
        c3 += a3[p] * b0;
      }
      T* cr = c + i * n + j;
      V::add_to(cr, c0);
      V::add_to(cr + n, c1);
      V::add_to(cr + 2 * n, c2);
      V::add_to(cr + 3 * n, c3);
    }
    for (; j < n; ++j) {
      T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T bv = b[p * n + j];
        s0 += a0[p] * bv;
        s1 += a1[p] * bv;
        s2 += a2[p] * bv;
        s3 += a3[p] * bv;
      }
      c[i * n + j] += s0;
      c[(i + 1) * n + j] += s1;
      c[(i + 2) * n + j] += s2;
      c[(i + 3) * n + j] += s3;
    }
  }
  for (; i < m; ++i) {
    const T* arow = a + i * k;
    std::size_t j = 0;
    for (; j + W <= n; j += W) {
      v_t acc{};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * V::load(b + p * n + j);
      V::add_to(c + i * n + j, acc);
    }
    for (; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * b[p * n + j];
      c[i * n + j] += acc;
    }
  }
}

// c[m x n] += a[m x k] * b[k x n]. Narrow outputs whose width is not a
// multiple of the vector width are padded so the vector tiles cover them.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t W = Vec<T>::width;
  if (n % W != 0 && n < 4 * W && m >= 8) {
    const std::size_t np = (n + W - 1) / W * W;
    std::vector<T> bp(k * np, T(0)), cp(m * np, T(0));
    for (std::size_t p = 0; p < k; ++p) std::copy(b + p * n, b + p * n + n, bp.begin() + static_cast<long>(p * np));
    gemm_rows(a, bp.data(), cp.data(), m, k, np);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += cp[i * np + j];
    return;
  }
  gemm_rows(a, b, c, m, k, n);
}

template <typename T>
std::vector<T> transpose2d(const T* a, std::size_t m, std::size_t n) {
  std::vector<T> t(m * n);
  constexpr std::size_t B = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += B)
    for (std::size_t j0 = 0; j0 < n; j0 += B) {
      const std::size_t i1 = std::min(m, i0 + B), j1 = std::min(n, j0 + B);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) t[j * m + i] = a[i * n + j];
    }
  return t;
}

enum class Broadcast { same, trailing, scalar };

inline Broadcast broadcast_kind(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::same;
  if (shape_numel(b) == 1 && b.size() <= 1) return Broadcast::scalar;
  if (b.size() < a.size() && std::equal(b.begin(), b.end(), a.end() - static_cast<long>(b.size())))
    return Broadcast::trailing;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
}

inline std::size_t bcast_index(Broadcast kind, std::size_t i, std::size_t bn) {
  switch (kind) {
    case Broadcast::same: return i;
    case Broadcast::trailing: return i % bn;
    case Broadcast::scalar: return 0;
  }
  return 0;
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const auto kind = detail::broadcast_kind(a.shape(), b.shape(), "add");
  const auto bn = b.numel();
  std::vector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[detail::bcast_index(kind, i, bn)];
  auto na = a.node(), nb = b.node();
  return detail::make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [na, nb, kind, bn](Node<T>& self) {
    const auto& g = self.grad;
    if (na->requires_grad) {
      auto& ga = na->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (nb->requires_grad) {
      auto& gb = nb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[detail::bcast_index(kind, i, bn)] += g[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const auto kind = detail::broadcast_kind(a.shape(), b.shape(), "sub");
  const auto bn = b.numel();
  std::vector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[detail::bcast_index(kind, i, bn)];
  auto na = a.node(), nb = b.node();
  return detail::make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [na, nb, kind, bn](Node<T>& self) {
    const auto& g = self.grad;
    if (na->requires_grad) {
      auto& ga = na->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (nb->requires_grad) {
      auto& gb = nb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[detail::bcast_index(kind, i, bn)] -= g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto kind = detail::broadcast_kind(a.shape(), b.shape(), "mul");
  const auto bn = b.numel();
  std::vector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[detail::bcast_index(kind, i, bn)];
  auto na = a.node(), nb = b.node();
  return detail::make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [na, nb, kind, bn](Node<T>& self) {
    const auto& g = self.grad;
    if (na->requires_grad) {
      auto& ga = na->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * nb->value[detail::bcast_index(kind, i, bn)];
    }
    if (nb->requires_grad) {
      auto& gb = nb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[detail::bcast_index(kind, i, bn)] += g[i] * na->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  auto na = a.node();
  return detail::make_result<T>("scale", a.shape(), std::move(out), {&a}, [na, c](Node<T>& self) {
    auto& ga = na->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * c;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  auto na = a.node();
  return detail::make_result<T>("add_scalar", a.shape(), std::move(out), {&a}, [na](Node<T>& self) {
    auto& ga = na->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

/// x * sigmoid(x)
template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / (T(1) + std::exp(-av[i]));
  auto na = a.node();
  return detail::make_result<T>("silu", a.shape(), std::move(out), {&a}, [na](Node<T>& self) {
    auto& ga = na->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const T x = na->value[i];
      const T s = T(1) / (T(1) + std::exp(-x));
      ga[i] += self.grad[i] * s * (T(1) + x * (T(1) - s));
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (auto v : a.values()) s += v;
  auto na = a.node();
  return detail::make_result<T>("sum", Shape{}, std::vector<T>{s}, {&a}, [na](Node<T>& self) {
    auto& ga = na->grad_buffer();
    for (auto& g : ga) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Mean of squared differences over all elements.
template <typename T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  const auto n = pred.numel();
  auto pv = pred.values();
  auto tv = target.values();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pv[i] - tv[i];
    acc += d * d;
  }
  acc /= static_cast<T>(n);
  auto np = pred.node(), nt = target.node();
  return detail::make_result<T>("mse", Shape{}, std::vector<T>{acc}, {&pred, &target}, [np, nt, n](Node<T>& self) {
    const T k = T(2) * self.grad[0] / static_cast<T>(n);
    if (np->requires_grad) {
      auto& g = np->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] += k * (np->value[i] - nt->value[i]);
    }
    if (nt->requires_grad) {
      auto& g = nt->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] -= k * (np->value[i] - nt->value[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(a.values().begin(), a.values().end());
  auto na = a.node();
  return detail::make_result<T>("reshape", std::move(shape), std::move(out), {&a}, [na](Node<T>& self) {
    auto& ga = na->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

/// Rows [begin, begin+count) of a matrix.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t count) {
  detail::require_matrix(a, "slice_rows");
  if (count == 0 || begin + count > a.rows()) throw ShapeError("slice_rows: range out of bounds");
  const auto n = a.cols();
  std::vector<T> out(a.values().begin() + static_cast<long>(begin * n),
                     a.values().begin() + static_cast<long>((begin + count) * n));
  auto na = a.node();
  return detail::make_result<T>("slice_rows", Shape{count, n}, std::move(out), {&a}, [na, begin, n](Node<T>& self) {
    auto& ga = na->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[begin * n + i] += self.grad[i];
  });
}

/// Columns [begin, begin+count) of a matrix.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t count) {
  detail::require_matrix(a, "slice_cols");
  if (count == 0 || begin + count > a.cols()) throw ShapeError("slice_cols: range out of bounds");
  const auto m = a.rows(), n = a.cols();
  std::vector<T> out(m * count);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(av.begin() + static_cast<long>(i * n + begin), count, out.begin() + static_cast<long>(i * count));
  auto na = a.node();
  return detail::make_result<T>("slice_cols", Shape{m, count}, std::move(out), {&a},
                                [na, begin, count, m, n](Node<T>& self) {
                                  auto& ga = na->grad_buffer();
                                  for (std::size_t i = 0; i < m; ++i)
                                    for (std::size_t j = 0; j < count; ++j)
                                      ga[i * n + begin + j] += self.grad[i * count + j];
                                });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const auto n = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.cols() != n) throw ShapeError("concat_rows: column mismatch");
    m += p.rows();
  }
  std::vector<T> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_result_n<T>("concat_rows", Shape{m, n}, std::move(out), parts, [nodes](Node<T>& self) {
    std::size_t off = 0;
    for (const auto& np : nodes) {
      if (np->requires_grad) {
        auto& g = np->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
      }
      off += np->value.size();
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const auto m = parts.front().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != m) throw ShapeError("concat_cols: row mismatch");
    n += p.cols();
  }
  std::vector<T> out(m * n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto w = p.cols();
    auto pv = p.values();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv.begin() + static_cast<long>(i * w), w, out.begin() + static_cast<long>(i * n + off));
    off += w;
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_result_n<T>("concat_cols", Shape{m, n}, std::move(out), parts, [nodes, m, n](Node<T>& self) {
    std::size_t off = 0;
    for (const auto& np : nodes) {
      const auto w = np->shape.back();
      if (np->requires_grad) {
        auto& g = np->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * n + off + j];
      }
      off += w;
    }
  });
}

/// Gathers rows by index; repeated indices accumulate on the way back.
template <typename T>
Tensor<T> select_rows(const Tensor<T>& a, std::span<const std::size_t> rows) {
  detail::require_matrix(a, "select_rows");
  if (rows.empty()) throw ShapeError("select_rows: empty index set");
  const auto n = a.cols();
  std::vector<T> out(rows.size() * n);
  auto av = a.values();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= a.rows()) throw ShapeError("select_rows: index out of range");
    std::copy_n(av.begin() + static_cast<long>(rows[r] * n), n, out.begin() + static_cast<long>(r * n));
  }
  auto na = a.node();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return detail::make_result<T>("select_rows", Shape{rows.size(), n}, std::move(out), {&a},
                                [na, idx = std::move(idx), n](Node<T>& self) {
                                  auto& ga = na->grad_buffer();
                                  for (std::size_t r = 0; r < idx.size(); ++r)
                                    for (std::size_t j = 0; j < n; ++j) ga[idx[r] * n + j] += self.grad[r * n + j];
                                });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(m * n, T(0));
  detail::gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
  auto na = a.node(), nb = b.node();
  return detail::make_result<T>("matmul", Shape{m, n}, std::move(out), {&a, &b}, [na, nb, m, k, n](Node<T>& self) {
    if (na->requires_grad) {
      // dA = G * B^T
      auto bt = detail::transpose2d(nb->value.data(), k, n);
      detail::gemm_acc(self.grad.data(), bt.data(), na->grad_buffer().data(), m, n, k);
    }
    if (nb->requires_grad) {
      // dB = A^T * G
      auto at = detail::transpose2d(na->value.data(), m, k);
      detail::gemm_acc(at.data(), self.grad.data(), nb->grad_buffer().data(), k, m, n);
    }
  });
}

/// a * b^T for a[m x k], b[n x k].
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw ShapeError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  auto bt = detail::transpose2d(b.values().data(), n, k);
  std::vector<T> out(m * n, T(0));
  detail::gemm_acc(a.values().data(), bt.data(), out.data(), m, k, n);
  auto na = a.node(), nb = b.node();
  return detail::make_result<T>("matmul_nt", Shape{m, n}, std::move(out), {&a, &b}, [na, nb, m, k, n](Node<T>& self) {
    if (na->requires_grad) {
      // dA = G * B
      detail::gemm_acc(self.grad.data(), nb->value.data(), na->grad_buffer().data(), m, n, k);
    }
    if (nb->requires_grad) {
      // dB = G^T * A
      auto gt = detail::transpose2d(self.grad.data(), m, n);
      detail::gemm_acc(gt.data(), na->value.data(), nb->grad_buffer().data(), n, m, k);
    }
  });
}

/// x * (W + scale * A * B). W never receives a gradient unless it was
/// created with requires_grad; with B == 0 the result equals x * W bitwise.
template <typename T>
Tensor<T> linear_lora(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& a, const Tensor<T>& b, T scale) {
  detail::require_matrix(x, "linear_lora");
  detail::require_matrix(w, "linear_lora");
  detail::require_matrix(a, "linear_lora");
  detail::require_matrix(b, "linear_lora");
  const auto m = x.rows(), din = x.cols(), dout = w.cols(), r = a.cols();
  if (w.rows() != din || a.rows() != din || b.rows() != r || b.cols() != dout || r == 0)
    throw ShapeError("linear_lora: incompatible shapes x" + shape_str(x.shape()) + " W" + shape_str(w.shape()) + " A" +
                     shape_str(a.shape()) + " B" + shape_str(b.shape()));
  std::vector<T> out(m * dout, T(0));
  detail::gemm_acc(x.values().data(), w.values().data(), out.data(), m, din, dout);
  std::vector<T> xa(m * r, T(0));
  detail::gemm_acc(x.values().data(), a.values().data(), xa.data(), m, din, r);
  std::vector<T> delta(m * dout, T(0));
  detail::gemm_acc(xa.data(), b.values().data(), delta.data(), m, r, dout);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (delta[i] != T(0)) out[i] += scale * delta[i];
  }
  auto nx = x.node(), nw = w.node(), na = a.node(), nb = b.node();
  return detail::make_result<T>(
      "linear_lora", Shape{m, dout}, std::move(out), {&x, &w, &a, &b},
      [nx, nw, na, nb, xa = std::move(xa), m, din, dout, r, scale](Node<T>& self) {
        const auto& g = self.grad;
        // g * B^T, shared by dX and dA
        auto bt = detail::transpose2d(nb->value.data(), r, dout);
        std::vector<T> gbt(m * r, T(0));
        detail::gemm_acc(g.data(), bt.data(), gbt.data(), m, dout, r);
        if (nx->requires_grad) {
          auto& gx = nx->grad_buffer();
          auto wt = detail::transpose2d(nw->value.data(), din, dout);
          detail::gemm_acc(g.data(), wt.data(), gx.data(), m, dout, din);
          auto at = detail::transpose2d(na->value.data(), din, r);
          std::vector<T> tmp(m * din, T(0));
          detail::gemm_acc(gbt.data(), at.data(), tmp.data(), m, r, din);
          for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += scale * tmp[i];
        }
        if (nw->requires_grad) {
          auto xt = detail::transpose2d(nx->value.data(), m, din);
          detail::gemm_acc(xt.data(), g.data(), nw->grad_buffer().data(), din, m, dout);
        }
        if (na->requires_grad) {
          auto xt = detail::transpose2d(nx->value.data(), m, din);
          std::vector<T> tmp(din * r, T(0));
          detail::gemm_acc(xt.data(), gbt.data(), tmp.data(), din, m, r);
          auto& ga = na->grad_buffer();
          for (std::size_t i = 0; i < tmp.size(); ++i) ga[i] += scale * tmp[i];
        }
        if (nb->requires_grad) {
          auto xat = detail::transpose2d(xa.data(), m, r);
          std::vector<T> tmp(r * dout, T(0));
          detail::gemm_acc(xat.data(), g.data(), tmp.data(), r, m, dout);
          auto& gb = nb->grad_buffer();
          for (std::size_t i = 0; i < tmp.size(); ++i) gb[i] += scale * tmp[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization and attention
// ---------------------------------------------------------------------------

inline constexpr double kRmsEps = 1e-6;

/// x / sqrt(mean(x^2) + eps) * gain over the trailing dimension.
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain) {
  const auto d = x.cols();
  if (gain.rank() != 1 || gain.numel() != d)
    throw ShapeError("rms_norm: gain " + shape_str(gain.shape()) + " does not match width " + std::to_string(d));
  const auto rows = x.numel() / d;
  auto xv = x.values();
  auto gv = gain.values();
  std::vector<T> out(x.numel());
  std::vector<T> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T ms = 0;
    for (std::size_t j = 0; j < d; ++j) ms += xv[r * d + j] * xv[r * d + j];
    ms /= static_cast<T>(d);
    inv[r] = T(1) / std::sqrt(ms + static_cast<T>(kRmsEps));
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] * inv[r] * gv[j];
  }
  auto nx = x.node(), ng = gain.node();
  return detail::make_result<T>("rms_norm", x.shape(), std::move(out), {&x, &gain},
                                [nx, ng, inv = std::move(inv), rows, d](Node<T>& self) {
                                  const auto& g = self.grad;
                                  const auto& xv = nx->value;
                                  const auto& gv = ng->value;
                                  if (nx->requires_grad) {
                                    auto& gx = nx->grad_buffer();
                                    for (std::size_t r = 0; r < rows; ++r) {
                                      // dot = sum_j g_j * gain_j * x_j
                                      T dot = 0;
                                      for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * gv[j] * xv[r * d + j];
                                      const T s = inv[r];
                                      const T k = s * s * s * dot / static_cast<T>(d);
                                      for (std::size_t j = 0; j < d; ++j)
                                        gx[r * d + j] += g[r * d + j] * gv[j] * s - xv[r * d + j] * k;
                                    }
                                  }
                                  if (ng->requires_grad) {
                                    auto& gg = ng->grad_buffer();
                                    for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xv[r * d + j] * inv[r];
                                  }
                                });
}

namespace detail {

// Vectorized e^x for f32 (range reduction to [-ln2/2, ln2/2] and a degree-6
// polynomial; relative error below 2e-7). Inputs below -87 flush to ~1e-38.
inline void exp_f32(float* x, std::size_t n) {
  using V = Vec<float>;
  using v_t = V::type;
  using vi_t [[gnu::vector_size(32)]] = std::int32_t;
  std::size_t j = 0;
  for (; j + V::width <= n; j += V::width) {
    v_t v = V::load(x + j);
    v = v > 88.3762626647949f ? 88.3762626647949f : v;
    v = v < -87.3365447504f ? -87.3365447504f : v;
    v_t fx = v * 1.44269504088896341f + 0.5f;
    vi_t ti = __builtin_convertvector(fx, vi_t);
    v_t tf = __builtin_convertvector(ti, v_t);
    tf = tf > fx ? tf - 1.0f : tf;
    ti = __builtin_convertvector(tf, vi_t);
    v_t r = v - tf * 0.693359375f;
    r = r - tf * -2.12194440e-4f;
    v_t p = v_t{} + 1.9875691500E-4f;
    p = p * r + 1.3981999507E-3f;
    p = p * r + 8.3334519073E-3f;
    p = p * r + 4.1665795894E-2f;
    p = p * r + 1.6666665459E-1f;
    p = p * r + 5.0000001201E-1f;
    p = p * r * r + r + 1.0f;
    vi_t bits = (ti + 127) << 23;
    v_t scale;
    std::memcpy(&scale, &bits, sizeof scale);
    p *= scale;
    std::memcpy(x + j, &p, sizeof p);
  }
  for (; j < n; ++j) x[j] = std::exp(x[j]);
}

template <typename T>
T vec_sum(const T* x, std::size_t n) {
  using V = Vec<T>;
  typename V::type acc{};
  std::size_t j = 0;
  for (; j + V::width <= n; j += V::width) acc += V::load(x + j);
  T s = 0;
  for (std::size_t l = 0; l < V::width; ++l) s += acc[l];
  for (; j < n; ++j) s += x[j];
  return s;
}

// out = softmax(logits * inv + bias) over one row; entries whose bias is at
// or below half the masked sentinel are exactly zero. False if every entry
// is masked.
template <typename T>
bool softmax_row(const T* logits, const T* bias, T inv, T* out, std::size_t n) {
  const T cutoff = masked_bias<T>() / T(2);
  for (std::size_t j = 0; j < n; ++j) out[j] = logits[j] * inv + bias[j];
  T mx = -std::numeric_limits<T>::infinity();
  bool any = false;
  for (std::size_t j = 0; j < n; ++j) {
    if (bias[j] <= cutoff) continue;
    any = true;
    mx = std::max(mx, out[j]);
  }
  if (!any) return false;
  for (std::size_t j = 0; j < n; ++j) out[j] -= mx;
  if constexpr (std::is_same_v<T, float>) {
    exp_f32(out, n);
  } else {
    for (std::size_t j = 0; j < n; ++j) out[j] = std::exp(out[j]);
  }
  for (std::size_t j = 0; j < n; ++j) out[j] = bias[j] > cutoff ? out[j] : T(0);
  const T iz = T(1) / vec_sum(out, n);
  for (std::size_t j = 0; j < n; ++j) out[j] *= iz;
  return true;
}

// Row-wise softmax Jacobian-vector product: gl += y * (g - <g, y>).
template <typename T>
void softmax_row_backward(const T* y, const T* g, T* gl, std::size_t n, T scale = T(1)) {
  T dot = 0;
  for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
  for (std::size_t j = 0; j < n; ++j) gl[j] += scale * (y[j] * (g[j] - dot));
}

}  // namespace detail

/// Softmax over the last axis of logits + bias. Bias broadcasts (same
/// shape, a trailing shape, or a scalar) and receives no gradient; masked
/// entries get exactly zero probability. Throws on a fully masked row.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& logits, const Tensor<T>& bias) {
  const auto kind = detail::broadcast_kind(logits.shape(), bias.shape(), "masked_softmax");
  const auto n = logits.cols();
  const auto rows = logits.numel() / n;
  const auto bn = bias.numel();
  auto lv = logits.values();
  auto bv = bias.values();
  std::vector<T> brow;
  std::vector<T> out(logits.numel(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* b = nullptr;
    if (kind == detail::Broadcast::same || (kind == detail::Broadcast::trailing && bn % n == 0)) {
      b = bv.data() + (r * n) % bn;
    } else {
      brow.resize(n);
      for (std::size_t j = 0; j < n; ++j) brow[j] = bv[detail::bcast_index(kind, r * n + j, bn)];
      b = brow.data();
    }
    if (!detail::softmax_row(lv.data() + r * n, b, T(1), out.data() + r * n, n))
      throw NumericError("masked_softmax: row " + std::to_string(r) + " is fully masked");
  }
  auto nl = logits.node();
  return detail::make_result<T>("masked_softmax", logits.shape(), std::move(out), {&logits},
                                [nl, rows, n](Node<T>& self) {
                                  auto& gl = nl->grad_buffer();
                                  for (std::size_t r = 0; r < rows; ++r)
                                    detail::softmax_row_backward(self.value.data() + r * n, self.grad.data() + r * n,
                                                                 gl.data() + r * n, n);
                                });
}

/// Multi-head scaled dot-product attention over a shared token set:
/// per head h, softmax(Q_h K_h^T / sqrt(d_h) + bias) V_h, heads concatenated
/// along columns. Equivalent to composing matmul_nt, scale, masked_softmax and
/// matmul per head, without materializing per-head graph nodes. bias is
/// [n x n] and receives no gradient.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& bias,
                               std::size_t n_heads) {
  detail::require_matrix(q, "attention");
  if (k.shape() != q.shape() || v.shape() != q.shape())
    throw ShapeError("attention: q, k, v shapes differ: " + shape_str(q.shape()) + ", " + shape_str(k.shape()) +
                     ", " + shape_str(v.shape()));
  const auto n = q.rows();
  const auto d = q.cols();
  if (n_heads == 0 || d % n_heads != 0)
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) +
                     " heads");
  if (bias.shape() != Shape{n, n}) throw ShapeError("attention: bias must be " + shape_str(Shape{n, n}));
  const auto dh = d / n_heads;
  const T inv = T(1) / std::sqrt(static_cast<T>(dh));
  auto qv = q.values();
  auto kv = k.values();
  auto vv = v.values();
  auto bv = bias.values();
  // Column block h of an [n x d] matrix, packed [n x dh] or transposed [dh x n].
  auto pack = [n, d, dh](std::span<const T> m, std::size_t h) {
    std::vector<T> p(n * dh);
    for (std::size_t i = 0; i < n; ++i)
      std::copy(m.data() + i * d + h * dh, m.data() + i * d + h * dh + dh, p.begin() + static_cast<long>(i * dh));
    return p;
  };
  auto pack_t = [n, d, dh](std::span<const T> m, std::size_t h) {
    std::vector<T> p(dh * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < dh; ++c) p[c * n + i] = m[i * d + h * dh + c];
    return p;
  };
  auto probs = std::make_shared<std::vector<T>>(n_heads * n * n);
  std::vector<T> out(n * d, T(0));
  std::vector<T> logits(n * n), oh(n * dh);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto qh = pack(qv, h);
    const auto kt = pack_t(kv, h);
    std::fill(logits.begin(), logits.end(), T(0));
    detail::gemm_acc(qh.data(), kt.data(), logits.data(), n, dh, n);
    T* ph = probs->data() + h * n * n;
    for (std::size_t r = 0; r < n; ++r)
      if (!detail::softmax_row(logits.data() + r * n, bv.data() + r * n, inv, ph + r * n, n))
        throw NumericError("attention: row " + std::to_string(r) + " is fully masked");
    const auto vh = pack(vv, h);
    std::fill(oh.begin(), oh.end(), T(0));
    detail::gemm_acc(ph, vh.data(), oh.data(), n, n, dh);
    for (std::size_t i = 0; i < n; ++i)
      std::copy(oh.begin() + static_cast<long>(i * dh), oh.begin() + static_cast<long>(i * dh + dh),
                out.begin() + static_cast<long>(i * d + h * dh));
  }
  auto nq = q.node();
  auto nk = k.node();
  auto nv = v.node();
  return detail::make_result<T>(
      "attention", Shape{n, d}, std::move(out), {&q, &k, &v},
      [nq, nk, nv, probs, n, d, dh, n_heads, inv, pack, pack_t](Node<T>& self) {
        std::span<const T> g(self.grad);
        std::vector<T> dp(n * n), tmp;
        auto scatter = [n, d, dh](std::vector<T>& dst, const std::vector<T>& src, std::size_t h, bool transposed) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < dh; ++c)
              dst[i * d + h * dh + c] += transposed ? src[c * n + i] : src[i * dh + c];
        };
        for (std::size_t h = 0; h < n_heads; ++h) {
          const T* ph = probs->data() + h * n * n;
          const auto go = pack(g, h);
          if (nv->requires_grad) {
            // dV_h = P^T dO = (dO^T P)^T
            const auto got = pack_t(g, h);
            tmp.assign(dh * n, T(0));
            detail::gemm_acc(got.data(), ph, tmp.data(), dh, n, n);
            scatter(nv->grad_buffer(), tmp, h, true);
          }
          if (!nq->requires_grad && !nk->requires_grad) continue;
          const auto vt = pack_t(nv->value, h);
          std::fill(dp.begin(), dp.end(), T(0));
          detail::gemm_acc(go.data(), vt.data(), dp.data(), n, dh, n);
          // dp becomes dL/dlogits scaled by 1/sqrt(d_h).
          for (std::size_t r = 0; r < n; ++r) {
            T* row = dp.data() + r * n;
            const T* y = ph + r * n;
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += row[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) row[j] = inv * (y[j] * (row[j] - dot));
          }
          if (nq->requires_grad) {
            const auto kh = pack(nk->value, h);
            tmp.assign(n * dh, T(0));
            detail::gemm_acc(dp.data(), kh.data(), tmp.data(), n, n, dh);
            scatter(nq->grad_buffer(), tmp, h, false);
          }
          if (nk->requires_grad) {
            // dK_h = dS^T Q = (Q^T dS)^T
            const auto qt = pack_t(nq->value, h);
            tmp.assign(dh * n, T(0));
            detail::gemm_acc(qt.data(), dp.data(), tmp.data(), dh, n, n);
            scatter(nk->grad_buffer(), tmp, h, true);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Graph traversal
// ---------------------------------------------------------------------------

/// The differentiable part of the graph reachable from a scalar loss,
/// in topological order (inputs before consumers).
template <typename T>
class Graph {
 public:
  static Graph record(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
      throw ShapeError("backward: loss must be a scalar, got " +
                       (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    Graph g;
    g.root_ = loss.node();
    if (!g.root_->requires_grad) return g;
    std::unordered_set<const Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(g.root_.get(), 0);
    seen.insert(g.root_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node<T>* in = node->inputs[next++].get();
        if (in->requires_grad && seen.insert(in).second) stack.emplace_back(in, 0);
      } else {
        g.order_.push_back(node);
        stack.pop_back();
      }
    }
    return g;
  }

  std::span<Node<T>* const> nodes() const { return order_; }

  /// Seeds d(loss)/d(loss) = 1 and runs every node's backward once, in
  /// reverse topological order. Leaf gradients accumulate across calls;
  /// interior gradients are released as soon as they are consumed.
  void backward() {
    if (order_.empty()) return;
    root_->grad_buffer()[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node<T>* node = *it;
      if (node->leaf) continue;
      if (!node->grad.empty() && node->backward) node->backward(*node);
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }

 private:
  std::shared_ptr<Node<T>> root_;
  std::vector<Node<T>*> order_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  Graph<T>::record(loss).backward();
}

}  // namespace stylecomp
