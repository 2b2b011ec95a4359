#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace essm {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl;

/// Dense row-major n-d array with reverse-mode automatic differentiation.
///
/// Handles are cheap to copy (shared storage). Every operation materializes
/// a fresh output buffer, so tensors are immutable after construction; the
/// only sanctioned mutation is `mutable_data()` on leaves (optimizer updates)
/// and gradient accumulation during `backward()`.
///
/// When any input of an operation requires a gradient, the op records a
/// graph node holding its inputs and a vector-Jacobian rule. `backward()`
/// on a scalar walks those nodes in reverse topological order, accumulating
/// additively into shared inputs. The graph is confined to one thread.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);
  static Tensor from_data(Shape shape, std::vector<T> values);
  /// Leaf with requires_grad set; the unit of trainable state.
  static Tensor leaf(Shape shape, std::vector<T> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const;
  std::size_t size() const;
  std::size_t extent(std::size_t axis) const;

  const T* data() const;
  /// Shared handle to the value buffer (e.g. for VJP closures that need the
  /// forward output without keeping the whole graph node alive).
  std::shared_ptr<const std::vector<T>> shared_data() const;
  /// Writable buffer; only legal on tensors without a creator node.
  T* mutable_data();
  std::vector<T> to_vector() const;
  /// Value of a single-element tensor.
  T item() const;
  T operator[](std::size_t flat_index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool has_grad() const;
  /// Accumulated gradient; zeros of the same shape when none was reached.
  Tensor grad() const;
  const std::vector<T>* grad_data() const;
  void zero_grad();

  /// Reverse-mode pass from a scalar. Populates grads of every reachable
  /// tensor that requires one.
  void backward() const;

  std::shared_ptr<TensorImpl<T>> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Scoped suppression of graph recording (inference / evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// ---------------------------------------------------------------------------
// Primitive operations. Elementwise binaries broadcast numpy-style
// (right-aligned; extents must match or be 1).
// ---------------------------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> exp_op(const Tensor<T>& x);
template <typename T> Tensor<T> log_op(const Tensor<T>& x);
template <typename T> Tensor<T> abs_op(const Tensor<T>& x);
/// Elementwise x^p for a constant exponent.
template <typename T> Tensor<T> pow_op(const Tensor<T>& x, T exponent);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
/// x * sigmoid(x).
template <typename T> Tensor<T> silu(const Tensor<T>& x);
/// log(1 + exp(x)) with an overflow-safe branch for large x.
template <typename T> Tensor<T> softplus(const Tensor<T>& x);

/// (..., m, k) x (k, n) -> (..., m, n); leading axes of `a` are collapsed.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// Permutes axes; empty perm reverses them.
template <typename T> Tensor<T> transpose(const Tensor<T>& x, std::vector<std::size_t> perm = {});
template <typename T> Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t stop);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> broadcast_to(const Tensor<T>& x, Shape shape);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x, std::size_t axis, bool keepdims = false);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x, std::size_t axis, bool keepdims = false);

template <typename T>
struct MaxResult {
  Tensor<T> values;
  std::vector<std::size_t> argmax;  // per output element; ties -> lowest index
};
template <typename T> MaxResult<T> max_reduce(const Tensor<T>& x, std::size_t axis, bool keepdims = false);

/// Elementwise max/min with broadcasting; ties route the gradient to `a`.
template <typename T> Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b);

// 0/1 masks; never tracked by the graph.
template <typename T> Tensor<T> greater(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> less(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> equal(const Tensor<T>& a, const Tensor<T>& b);

/// Real-input DFT of the last axis, zero-padded to `pad_to` (a power of two
/// >= the axis length). Returns bins 0..pad_to/2 as a trailing axis of
/// interleaved (re, im) pairs: (..., L) -> (..., pad_to/2 + 1, 2).
/// Radix-2 iterative Cooley-Tukey; butterflies run in double internally.
template <typename T> Tensor<T> rdft(const Tensor<T>& x, std::size_t pad_to);

/// (..., 2) -> (...): sqrt(re^2 + im^2), gradient 0 at exact zeros.
template <typename T> Tensor<T> complex_magnitude(const Tensor<T>& x);

/// Magnitudes of the zero-padded real DFT: (..., L) -> (..., pad_to/2 + 1).
template <typename T> Tensor<T> rfft_magnitude(const Tensor<T>& x, std::size_t pad_to);

template <typename T> bool all_finite(const Tensor<T>& x);

// ---------------------------------------------------------------------------
// Operators.
// ---------------------------------------------------------------------------

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return divide(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& x) { return neg(x); }
template <typename T> Tensor<T> operator+(const Tensor<T>& a, T c) { return add(a, Tensor<T>::scalar(c)); }
template <typename T> Tensor<T> operator+(T c, const Tensor<T>& a) { return add(Tensor<T>::scalar(c), a); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, T c) { return sub(a, Tensor<T>::scalar(c)); }
template <typename T> Tensor<T> operator-(T c, const Tensor<T>& a) { return sub(Tensor<T>::scalar(c), a); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, T c) { return mul(a, Tensor<T>::scalar(c)); }
template <typename T> Tensor<T> operator*(T c, const Tensor<T>& a) { return mul(Tensor<T>::scalar(c), a); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, T c) { return divide(a, Tensor<T>::scalar(c)); }
template <typename T> Tensor<T> operator/(T c, const Tensor<T>& a) { return divide(Tensor<T>::scalar(c), a); }

namespace detail {

/// Registers a graph node on `out`: `parents` are kept alive for the
/// traversal, `backward` receives d(loss)/d(out) and must accumulate into
/// the parents' grads. No-op while gradients are disabled.
template <typename T>
void attach(Tensor<T>& out, std::vector<Tensor<T>> parents,
            std::function<void(const std::vector<T>&)> backward);

/// Adds `contribution` (same shape as t) into t's grad if t requires one.
template <typename T>
void accumulate(const Tensor<T>& t, const T* contribution);

/// Adds `full` (of shape full_shape, broadcast-compatible with t) into t's
/// grad, summing over broadcast axes.
template <typename T>
void accumulate_reduce(const Tensor<T>& t, const std::vector<T>& full, const Shape& full_shape);

template <typename T>
bool any_requires_grad(const std::vector<Tensor<T>>& ts);

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace essm
