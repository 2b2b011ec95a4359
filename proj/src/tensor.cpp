#include "essm/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "essm/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialization and raw buffer code assume a little-endian host");

namespace essm {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

template <typename T>
struct GradNode {
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  std::function<void(const std::vector<T>&)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  bool requires_grad = false;
  std::unique_ptr<std::vector<T>> grad;
  std::unique_ptr<GradNode<T>> node;
};

namespace {

#if defined(__GLIBC__)
#include <malloc.h>
// Training allocates and frees multi-megabyte activation buffers every step;
// glibc's default mmap threshold would turn each into an mmap/munmap cycle
// with full page-fault cost. Keep big blocks in the arena instead.
[[maybe_unused]] const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
  return true;
}();
#endif

thread_local int g_no_grad_depth = 0;

template <typename T>
using EArr = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CEArr = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
void check_defined(const Tensor<T>& t, const char* op) {
  if (!t.defined()) throw Error(std::string(op) + ": undefined tensor operand");
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                       shape_str(b) + " are not broadcastable");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

std::vector<std::size_t> natural_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size());
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

/// Strides of `in` viewed through `out` (right-aligned); 0 on broadcast axes.
std::vector<std::size_t> bcast_strides(const Shape& in, const Shape& out) {
  if (in.size() > out.size())
    throw ShapeError("broadcast: shape " + shape_str(in) +
                     " has higher rank than target " + shape_str(out));
  std::vector<std::size_t> st(out.size(), 0);
  const auto nat = natural_strides(in);
  const std::size_t off = out.size() - in.size();
  for (std::size_t i = out.size(); i-- > off;) {
    const std::size_t ext = in[i - off];
    if (ext == out[i] && ext != 1) {
      st[i] = nat[i - off];
    } else if (ext == 1) {
      st[i] = 0;
    } else {
      throw ShapeError("broadcast: shape " + shape_str(in) +
                       " incompatible with " + shape_str(out));
    }
  }
  return st;
}

template <typename T, typename F>
std::vector<T> ew_binary(const T* a, const Shape& as, const T* b,
                         const Shape& bs, const Shape& out, F f) {
  const std::size_t n = shape_size(out);
  std::vector<T> res(n);
  if (as == bs && as == out) {
    for (std::size_t i = 0; i < n; ++i) res[i] = f(a[i], b[i]);
    return res;
  }
  if (shape_size(as) == 1) {  // scalar lhs
    const T av = a[0];
    const T* bp = b;
    if (bs == out) {
      for (std::size_t i = 0; i < n; ++i) res[i] = f(av, bp[i]);
      return res;
    }
  }
  if (shape_size(bs) == 1) {  // scalar rhs
    const T bv = b[0];
    if (as == out) {
      for (std::size_t i = 0; i < n; ++i) res[i] = f(a[i], bv);
      return res;
    }
  }
  const auto sa = bcast_strides(as, out);
  const auto sb = bcast_strides(bs, out);
  const std::size_t rank = out.size();
  if (rank == 0 || n == 0) {
    if (n) res[0] = f(a[0], b[0]);
    return res;
  }
  // Rank-specialized nested loops; the generic odometer only handles rank > 4.
  std::size_t pos = 0;
  if (rank == 1) {
    for (std::size_t i = 0; i < out[0]; ++i) res[pos++] = f(a[i * sa[0]], b[i * sb[0]]);
    return res;
  }
  if (rank == 2) {
    for (std::size_t i = 0; i < out[0]; ++i) {
      const T* pa = a + i * sa[0];
      const T* pb = b + i * sb[0];
      for (std::size_t j = 0; j < out[1]; ++j) res[pos++] = f(pa[j * sa[1]], pb[j * sb[1]]);
    }
    return res;
  }
  if (rank == 3) {
    for (std::size_t i = 0; i < out[0]; ++i)
      for (std::size_t j = 0; j < out[1]; ++j) {
        const T* pa = a + i * sa[0] + j * sa[1];
        const T* pb = b + i * sb[0] + j * sb[1];
        for (std::size_t k = 0; k < out[2]; ++k)
          res[pos++] = f(pa[k * sa[2]], pb[k * sb[2]]);
      }
    return res;
  }
  if (rank == 4) {
    for (std::size_t i = 0; i < out[0]; ++i)
      for (std::size_t j = 0; j < out[1]; ++j)
        for (std::size_t k = 0; k < out[2]; ++k) {
          const T* pa = a + i * sa[0] + j * sa[1] + k * sa[2];
          const T* pb = b + i * sb[0] + j * sb[1] + k * sb[2];
          for (std::size_t l = 0; l < out[3]; ++l)
            res[pos++] = f(pa[l * sa[3]], pb[l * sb[3]]);
        }
    return res;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offa = 0, offb = 0;
  const std::size_t inner = out[rank - 1];
  const std::size_t ia = sa[rank - 1], ib = sb[rank - 1];
  for (;;) {
    const T* pa = a + offa;
    const T* pb = b + offb;
    for (std::size_t k = 0; k < inner; ++k) res[pos++] = f(pa[k * ia], pb[k * ib]);
    std::size_t ax = rank - 2;
    for (;;) {
      ++idx[ax];
      offa += sa[ax];
      offb += sb[ax];
      if (idx[ax] < out[ax]) break;
      offa -= sa[ax] * out[ax];
      offb -= sb[ax] * out[ax];
      idx[ax] = 0;
      if (ax == 0) return res;
      --ax;
    }
  }
  return res;
}

template <typename T>
void ensure_grad(TensorImpl<T>* impl) {
  if (!impl->grad)
    impl->grad = std::make_unique<std::vector<T>>(shape_size(impl->shape), T(0));
}

template <typename T>
Tensor<T> make_tensor(Shape shape, std::vector<T> values) {
  return Tensor<T>::from_data(std::move(shape), std::move(values));
}

/// Scatter-adds distinct-shape `g` into x.grad on a [start, stop) range of
/// `axis`.
template <typename T>
void accumulate_slice(const Tensor<T>& x, const std::vector<T>& g,
                      std::size_t axis, std::size_t start, std::size_t stop) {
  if (!x.requires_grad()) return;
  ensure_grad(x.impl_.get());
  auto& grad = *x.impl_->grad;
  const Shape& xs = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t span = stop - start;
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = g.data() + o * span * inner;
    T* dst = grad.data() + (o * xs[axis] + start) * inner;
    for (std::size_t i = 0; i < span * inner; ++i) dst[i] += src[i];
  }
}

// ---------------------------------------------------------------------------
// FFT (radix-2, iterative, double-precision butterflies).
// ---------------------------------------------------------------------------

constexpr double kTwoPi = 6.283185307179586476925286766559;

void fft_inplace(std::vector<double>& re, std::vector<double>& im, bool inverse_sign) {
  const std::size_t n = re.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j |= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse_sign ? kTwoPi : -kTwoPi) / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::size_t u = i + j, v = i + j + len / 2;
        const double tr = re[v] * cr - im[v] * ci;
        const double ti = re[v] * ci + im[v] * cr;
        re[v] = re[u] - tr;
        im[v] = im[u] - ti;
        re[u] += tr;
        im[u] += ti;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

bool is_pow2(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace

// ---------------------------------------------------------------------------
// Tensor methods.
// ---------------------------------------------------------------------------

template <typename T>
static Tensor<T> build(Shape shape, std::shared_ptr<std::vector<T>> data) {
  Tensor<T> t;
  t.impl_ = std::make_shared<TensorImpl<T>>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  auto n = shape_size(shape);
  return build(std::move(shape), std::make_shared<std::vector<T>>(n, T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::ones(Shape shape) {
  auto n = shape_size(shape);
  return build(std::move(shape), std::make_shared<std::vector<T>>(n, T(1)));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  auto n = shape_size(shape);
  return build(std::move(shape), std::make_shared<std::vector<T>>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return build(Shape{}, std::make_shared<std::vector<T>>(1, value));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> values) {
  if (values.size() != shape_size(shape))
    throw ShapeError("from_data: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  return build(std::move(shape), std::make_shared<std::vector<T>>(std::move(values)));
}

template <typename T>
Tensor<T> Tensor<T>::leaf(Shape shape, std::vector<T> values) {
  auto t = from_data(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  return t;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  return impl_->shape;
}

template <typename T>
std::size_t Tensor<T>::rank() const {
  return impl_->shape.size();
}

template <typename T>
std::size_t Tensor<T>::size() const {
  return impl_->data->size();
}

template <typename T>
std::size_t Tensor<T>::extent(std::size_t axis) const {
  return impl_->shape.at(axis);
}

template <typename T>
const T* Tensor<T>::data() const {
  return impl_->data->data();
}

template <typename T>
std::shared_ptr<const std::vector<T>> Tensor<T>::shared_data() const {
  return impl_->data;
}

template <typename T>
T* Tensor<T>::mutable_data() {
  if (impl_->node)
    throw Error("mutable_data: only leaf tensors may be mutated in place");
  return impl_->data->data();
}

template <typename T>
std::vector<T> Tensor<T>::to_vector() const {
  return *impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1)
    throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
  return (*impl_->data)[0];
}

template <typename T>
T Tensor<T>::operator[](std::size_t flat_index) const {
  return (*impl_->data)[flat_index];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return impl_ && impl_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  if (impl_->node) throw Error("set_requires_grad: only valid on leaf tensors");
  impl_->requires_grad = value;
  return *this;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return impl_ && impl_->grad != nullptr;
}

template <typename T>
Tensor<T> Tensor<T>::grad() const {
  if (impl_->grad) return from_data(impl_->shape, *impl_->grad);
  return zeros(impl_->shape);
}

template <typename T>
const std::vector<T>* Tensor<T>::grad_data() const {
  return impl_->grad.get();
}

template <typename T>
void Tensor<T>::zero_grad() {
  impl_->grad.reset();
}

template <typename T>
void Tensor<T>::backward() const {
  if (!impl_) throw Error("backward: undefined tensor");
  if (size() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(shape()));

  // Reverse topological order via iterative post-order DFS: a tensor is
  // emitted only after everything it depends on, so the reversed list
  // visits every consumer before its producers.
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> visited;
  struct Frame {
    TensorImpl<T>* impl;
    std::size_t next;
  };
  std::vector<Frame> stack;
  visited.insert(impl_.get());
  stack.push_back({impl_.get(), 0});
  while (!stack.empty()) {
    Frame& fr = stack.back();
    if (!fr.impl->node || fr.next >= fr.impl->node->parents.size()) {
      order.push_back(fr.impl);
      stack.pop_back();
      continue;
    }
    TensorImpl<T>* parent = fr.impl->node->parents[fr.next++].get();
    if (visited.insert(parent).second) stack.push_back({parent, 0});
  }

  ensure_grad(impl_.get());
  (*impl_->grad)[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* impl = *it;
    if (impl->node && impl->grad) impl->node->backward(*impl->grad);
  }
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

// ---------------------------------------------------------------------------
// Graph plumbing.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void attach(Tensor<T>& out, std::vector<Tensor<T>> parents,
            std::function<void(const std::vector<T>&)> backward) {
  if (!grad_enabled()) return;
  auto node = std::make_unique<GradNode<T>>();
  node->parents.reserve(parents.size());
  for (auto& p : parents) node->parents.push_back(p.impl_);
  node->backward = std::move(backward);
  out.impl_->node = std::move(node);
  out.impl_->requires_grad = true;
}

template <typename T>
void accumulate(const Tensor<T>& t, const T* contribution) {
  if (!t.requires_grad()) return;
  ensure_grad(t.impl_.get());
  auto& g = *t.impl_->grad;
  EArr<T>(g.data(), g.size()) += CEArr<T>(contribution, g.size());
}

template <typename T>
void accumulate_reduce(const Tensor<T>& t, const std::vector<T>& full,
                       const Shape& full_shape) {
  if (!t.requires_grad()) return;
  ensure_grad(t.impl_.get());
  auto& grad = *t.impl_->grad;
  if (t.shape() == full_shape) {
    EArr<T>(grad.data(), grad.size()) += CEArr<T>(full.data(), full.size());
    return;
  }
  if (grad.size() == 1) {
    double acc = 0.0;
    for (const T v : full) acc += static_cast<double>(v);
    grad[0] += static_cast<T>(acc);
    return;
  }
  const auto st = bcast_strides(t.shape(), full_shape);
  const std::size_t rank = full_shape.size();
  if (rank == 0) {
    grad[0] += full[0];
    return;
  }
  std::size_t pos = 0;
  if (rank == 1) {
    for (std::size_t i = 0; i < full_shape[0]; ++i) grad[i * st[0]] += full[pos++];
    return;
  }
  if (rank == 2) {
    for (std::size_t i = 0; i < full_shape[0]; ++i) {
      T* dst = grad.data() + i * st[0];
      for (std::size_t j = 0; j < full_shape[1]; ++j) dst[j * st[1]] += full[pos++];
    }
    return;
  }
  if (rank == 3) {
    for (std::size_t i = 0; i < full_shape[0]; ++i)
      for (std::size_t j = 0; j < full_shape[1]; ++j) {
        T* dst = grad.data() + i * st[0] + j * st[1];
        for (std::size_t k = 0; k < full_shape[2]; ++k) dst[k * st[2]] += full[pos++];
      }
    return;
  }
  if (rank == 4) {
    for (std::size_t i = 0; i < full_shape[0]; ++i)
      for (std::size_t j = 0; j < full_shape[1]; ++j)
        for (std::size_t k = 0; k < full_shape[2]; ++k) {
          T* dst = grad.data() + i * st[0] + j * st[1] + k * st[2];
          for (std::size_t l = 0; l < full_shape[3]; ++l) dst[l * st[3]] += full[pos++];
        }
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  const std::size_t inner = full_shape[rank - 1], is = st[rank - 1];
  for (;;) {
    T* dst = grad.data() + off;
    for (std::size_t k = 0; k < inner; ++k) dst[k * is] += full[pos++];
    std::size_t ax = rank - 2;
    for (;;) {
      ++idx[ax];
      off += st[ax];
      if (idx[ax] < full_shape[ax]) break;
      off -= st[ax] * full_shape[ax];
      idx[ax] = 0;
      if (ax == 0) return;
      --ax;
    }
  }
}

template <typename T>
bool any_requires_grad(const std::vector<Tensor<T>>& ts) {
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binaries.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_defined(a, "add");
  check_defined(b, "add");
  Shape os = broadcast_shape(a.shape(), b.shape(), "add");
  auto out = make_tensor(os, ew_binary(a.data(), a.shape(), b.data(), b.shape(), os,
                                       [](T x, T y) { return x + y; }));
  if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    detail::attach<T>(out, {a, b}, [a, b, os](const std::vector<T>& g) {
      detail::accumulate_reduce(a, g, os);
      detail::accumulate_reduce(b, g, os);
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_defined(a, "sub");
  check_defined(b, "sub");
  Shape os = broadcast_shape(a.shape(), b.shape(), "sub");
  auto out = make_tensor(os, ew_binary(a.data(), a.shape(), b.data(), b.shape(), os,
                                       [](T x, T y) { return x - y; }));
  if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    detail::attach<T>(out, {a, b}, [a, b, os](const std::vector<T>& g) {
      detail::accumulate_reduce(a, g, os);
      std::vector<T> gneg(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gneg[i] = -g[i];
      detail::accumulate_reduce(b, gneg, os);
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_defined(a, "mul");
  check_defined(b, "mul");
  Shape os = broadcast_shape(a.shape(), b.shape(), "mul");
  auto out = make_tensor(os, ew_binary(a.data(), a.shape(), b.data(), b.shape(), os,
                                       [](T x, T y) { return x * y; }));
  if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    detail::attach<T>(out, {a, b}, [a, b, os](const std::vector<T>& g) {
      if (a.requires_grad()) {
        auto ga = ew_binary(g.data(), os, b.data(), b.shape(), os,
                            [](T x, T y) { return x * y; });
        detail::accumulate_reduce(a, ga, os);
      }
      if (b.requires_grad()) {
        auto gb = ew_binary(g.data(), os, a.data(), a.shape(), os,
                            [](T x, T y) { return x * y; });
        detail::accumulate_reduce(b, gb, os);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) {
  check_defined(a, "div");
  check_defined(b, "div");
  Shape os = broadcast_shape(a.shape(), b.shape(), "div");
  auto out = make_tensor(os, ew_binary(a.data(), a.shape(), b.data(), b.shape(), os,
                                       [](T x, T y) { return x / y; }));
  if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    detail::attach<T>(out, {a, b}, [a, b, os](const std::vector<T>& g) {
      auto g_over_b = ew_binary(g.data(), os, b.data(), b.shape(), os,
                                [](T x, T y) { return x / y; });
      if (a.requires_grad()) detail::accumulate_reduce(a, g_over_b, os);
      if (b.requires_grad()) {
        auto t = ew_binary(g_over_b.data(), os, b.data(), b.shape(), os,
                           [](T x, T y) { return x / y; });
        auto gb = ew_binary(t.data(), os, a.data(), a.shape(), os,
                            [](T x, T y) { return -x * y; });
        detail::accumulate_reduce(b, gb, os);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
  check_defined(a, "maximum");
  check_defined(b, "maximum");
  Shape os = broadcast_shape(a.shape(), b.shape(), "maximum");
  auto out = make_tensor(os, ew_binary(a.data(), a.shape(), b.data(), b.shape(), os,
                                       [](T x, T y) { return x >= y ? x : y; }));
  if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    detail::attach<T>(out, {a, b}, [a, b, os](const std::vector<T>& g) {
      auto mask = ew_binary(a.data(), a.shape(), b.data(), b.shape(), os,
                            [](T x, T y) { return x >= y ? T(1) : T(0); });
      std::vector<T> ga(g.size()), gb(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] = g[i] * mask[i];
        gb[i] = g[i] * (T(1) - mask[i]);
      }
      detail::accumulate_reduce(a, ga, os);
      detail::accumulate_reduce(b, gb, os);
    });
  }
  return out;
}

template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
  check_defined(a, "minimum");
  check_defined(b, "minimum");
  Shape os = broadcast_shape(a.shape(), b.shape(), "minimum");
  auto out = make_tensor(os, ew_binary(a.data(), a.shape(), b.data(), b.shape(), os,
                                       [](T x, T y) { return x <= y ? x : y; }));
  if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    detail::attach<T>(out, {a, b}, [a, b, os](const std::vector<T>& g) {
      auto mask = ew_binary(a.data(), a.shape(), b.data(), b.shape(), os,
                            [](T x, T y) { return x <= y ? T(1) : T(0); });
      std::vector<T> ga(g.size()), gb(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] = g[i] * mask[i];
        gb[i] = g[i] * (T(1) - mask[i]);
      }
      detail::accumulate_reduce(a, ga, os);
      detail::accumulate_reduce(b, gb, os);
    });
  }
  return out;
}

template <typename T>
Tensor<T> greater(const Tensor<T>& a, const Tensor<T>& b) {
  Shape os = broadcast_shape(a.shape(), b.shape(), "greater");
  return make_tensor(os, ew_binary(a.data(), a.shape(), b.data(), b.shape(), os,
                                   [](T x, T y) { return x > y ? T(1) : T(0); }));
}

template <typename T>
Tensor<T> less(const Tensor<T>& a, const Tensor<T>& b) {
  Shape os = broadcast_shape(a.shape(), b.shape(), "less");
  return make_tensor(os, ew_binary(a.data(), a.shape(), b.data(), b.shape(), os,
                                   [](T x, T y) { return x < y ? T(1) : T(0); }));
}

template <typename T>
Tensor<T> equal(const Tensor<T>& a, const Tensor<T>& b) {
  Shape os = broadcast_shape(a.shape(), b.shape(), "equal");
  return make_tensor(os, ew_binary(a.data(), a.shape(), b.data(), b.shape(), os,
                                   [](T x, T y) { return x == y ? T(1) : T(0); }));
}

// ---------------------------------------------------------------------------
// Unaries.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  check_defined(x, "neg");
  std::vector<T> v(x.size());
  EArr<T>(v.data(), v.size()) = -CEArr<T>(x.data(), x.size());
  auto out = make_tensor(x.shape(), std::move(v));
  if (grad_enabled() && x.requires_grad()) {
    detail::attach<T>(out, {x}, [x](const std::vector<T>& g) {
      std::vector<T> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = -g[i];
      detail::accumulate(x, gx.data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> exp_op(const Tensor<T>& x) {
  check_defined(x, "exp");
  std::vector<T> v(x.size());
  EArr<T>(v.data(), v.size()) = CEArr<T>(x.data(), x.size()).exp();
  auto out = make_tensor(x.shape(), std::move(v));
  if (grad_enabled() && x.requires_grad()) {
    auto out_data = out.impl_->data;
    detail::attach<T>(out, {x}, [x, out_data](const std::vector<T>& g) {
      std::vector<T> gx(g.size());
      const auto& ov = *out_data;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * ov[i];
      detail::accumulate(x, gx.data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& x) {
  check_defined(x, "log");
  std::vector<T> v(x.size());
  EArr<T>(v.data(), v.size()) = CEArr<T>(x.data(), x.size()).log();
  auto out = make_tensor(x.shape(), std::move(v));
  if (grad_enabled() && x.requires_grad()) {
    detail::attach<T>(out, {x}, [x](const std::vector<T>& g) {
      std::vector<T> gx(g.size());
      const T* xv = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] / xv[i];
      detail::accumulate(x, gx.data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> abs_op(const Tensor<T>& x) {
  check_defined(x, "abs");
  std::vector<T> v(x.size());
  EArr<T>(v.data(), v.size()) = CEArr<T>(x.data(), x.size()).abs();
  auto out = make_tensor(x.shape(), std::move(v));
  if (grad_enabled() && x.requires_grad()) {
    detail::attach<T>(out, {x}, [x](const std::vector<T>& g) {
      std::vector<T> gx(g.size());
      const T* xv = x.data();
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] = g[i] * (xv[i] > T(0) ? T(1) : (xv[i] < T(0) ? T(-1) : T(0)));
      detail::accumulate(x, gx.data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> pow_op(const Tensor<T>& x, T exponent) {
  check_defined(x, "pow");
  std::vector<T> v(x.size());
  const T* xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::pow(xv[i], exponent);
  auto out = make_tensor(x.shape(), std::move(v));
  if (grad_enabled() && x.requires_grad()) {
    detail::attach<T>(out, {x}, [x, exponent](const std::vector<T>& g) {
      std::vector<T> gx(g.size(), T(0));
      if (exponent != T(0)) {
        const T* xp = x.data();
        for (std::size_t i = 0; i < g.size(); ++i)
          gx[i] = g[i] * exponent * std::pow(xp[i], exponent - T(1));
      }
      detail::accumulate(x, gx.data());
    });
  }
  return out;
}

namespace {
template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}
}  // namespace

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  check_defined(x, "sigmoid");
  std::vector<T> v(x.size());
  const T* xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = sigmoid_scalar(xv[i]);
  auto out = make_tensor(x.shape(), std::move(v));
  if (grad_enabled() && x.requires_grad()) {
    auto out_data = out.impl_->data;
    detail::attach<T>(out, {x}, [x, out_data](const std::vector<T>& g) {
      std::vector<T> gx(g.size());
      const auto& s = *out_data;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * s[i] * (T(1) - s[i]);
      detail::accumulate(x, gx.data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  check_defined(x, "silu");
  std::vector<T> v(x.size());
  const T* xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = xv[i] * sigmoid_scalar(xv[i]);
  auto out = make_tensor(x.shape(), std::move(v));
  if (grad_enabled() && x.requires_grad()) {
    detail::attach<T>(out, {x}, [x](const std::vector<T>& g) {
      std::vector<T> gx(g.size());
      const T* xp = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T s = sigmoid_scalar(xp[i]);
        gx[i] = g[i] * s * (T(1) + xp[i] * (T(1) - s));
      }
      detail::accumulate(x, gx.data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  check_defined(x, "softplus");
  std::vector<T> v(x.size());
  const T* xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = xv[i] > T(30) ? xv[i] : std::log1p(std::exp(xv[i]));
  auto out = make_tensor(x.shape(), std::move(v));
  if (grad_enabled() && x.requires_grad()) {
    detail::attach<T>(out, {x}, [x](const std::vector<T>& g) {
      std::vector<T> gx(g.size());
      const T* xp = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * sigmoid_scalar(xp[i]);
      detail::accumulate(x, gx.data());
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matmul.
// ---------------------------------------------------------------------------

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (a.rank() < 2 || b.rank() != 2)
    throw ShapeError("matmul: need (...,m,k) x (k,n), got " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  const std::size_t k = a.shape().back();
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  const std::size_t m = a.size() / k;
  const std::size_t n = b.shape()[1];
  Shape os(a.shape().begin(), a.shape().end() - 1);
  os.push_back(n);
  std::vector<T> v(m * n);
  MapMat<T>(v.data(), m, n).noalias() =
      CMapMat<T>(a.data(), m, k) * CMapMat<T>(b.data(), k, n);
  auto out = make_tensor(std::move(os), std::move(v));
  if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    detail::attach<T>(out, {a, b}, [a, b, m, k, n](const std::vector<T>& g) {
      CMapMat<T> G(g.data(), m, n);
      if (a.requires_grad()) {
        std::vector<T> ga(m * k);
        MapMat<T>(ga.data(), m, k).noalias() = G * CMapMat<T>(b.data(), k, n).transpose();
        detail::accumulate(a, ga.data());
      }
      if (b.requires_grad()) {
        std::vector<T> gb(k * n);
        MapMat<T>(gb.data(), k, n).noalias() = CMapMat<T>(a.data(), m, k).transpose() * G;
        detail::accumulate(b, gb.data());
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Movement ops.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  check_defined(x, "reshape");
  if (shape_size(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  // Row-major reshape shares storage; ops never mutate buffers, so the alias
  // is safe (in-place leaf updates legitimately show through views).
  Tensor<T> out = build<T>(std::move(shape), x.impl_->data);
  if (grad_enabled() && x.requires_grad()) {
    detail::attach<T>(out, {x}, [x](const std::vector<T>& g) {
      detail::accumulate(x, g.data());
    });
  }
  return out;
}

namespace {
template <typename T>
std::vector<T> permute_data(const T* src, const Shape& in,
                            const std::vector<std::size_t>& perm, Shape& out_shape) {
  const std::size_t rank = in.size();
  out_shape.resize(rank);
  const auto nat = natural_strides(in);
  std::vector<std::size_t> gather(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in[perm[i]];
    gather[i] = nat[perm[i]];
  }
  const std::size_t n = shape_size(in);
  std::vector<T> res(n);
  if (rank == 0) {
    res[0] = src[0];
    return res;
  }
  std::size_t pos = 0;
  if (rank == 1) {
    std::copy(src, src + n, res.begin());
    return res;
  }
  if (rank == 2) {
    for (std::size_t i = 0; i < out_shape[0]; ++i) {
      const T* p = src + i * gather[0];
      for (std::size_t j = 0; j < out_shape[1]; ++j) res[pos++] = p[j * gather[1]];
    }
    return res;
  }
  if (rank == 3) {
    for (std::size_t i = 0; i < out_shape[0]; ++i)
      for (std::size_t j = 0; j < out_shape[1]; ++j) {
        const T* p = src + i * gather[0] + j * gather[1];
        for (std::size_t k = 0; k < out_shape[2]; ++k) res[pos++] = p[k * gather[2]];
      }
    return res;
  }
  if (rank == 4) {
    for (std::size_t i = 0; i < out_shape[0]; ++i)
      for (std::size_t j = 0; j < out_shape[1]; ++j)
        for (std::size_t k = 0; k < out_shape[2]; ++k) {
          const T* p = src + i * gather[0] + j * gather[1] + k * gather[2];
          for (std::size_t l = 0; l < out_shape[3]; ++l) res[pos++] = p[l * gather[3]];
        }
    return res;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  const std::size_t inner = out_shape[rank - 1], is = gather[rank - 1];
  for (;;) {
    const T* p = src + off;
    for (std::size_t kk = 0; kk < inner; ++kk) res[pos++] = p[kk * is];
    std::size_t ax = rank - 2;
    for (;;) {
      ++idx[ax];
      off += gather[ax];
      if (idx[ax] < out_shape[ax]) break;
      off -= gather[ax] * out_shape[ax];
      idx[ax] = 0;
      if (ax == 0) return res;
      --ax;
    }
  }
  return res;
}
}  // namespace

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::vector<std::size_t> perm) {
  check_defined(x, "transpose");
  const std::size_t rank = x.rank();
  if (perm.empty()) {
    perm.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) perm[i] = rank - 1 - i;
  }
  if (perm.size() != rank)
    throw ShapeError("transpose: perm rank mismatch for " + shape_str(x.shape()));
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    if (p >= rank || seen[p]) throw ShapeError("transpose: invalid permutation");
    seen[p] = true;
  }
  Shape os;
  auto v = permute_data(x.data(), x.shape(), perm, os);
  auto out = make_tensor(std::move(os), std::move(v));
  if (grad_enabled() && x.requires_grad()) {
    std::vector<std::size_t> inv(rank);
    for (std::size_t i = 0; i < rank; ++i) inv[perm[i]] = i;
    Shape out_shape = out.shape();
    detail::attach<T>(out, {x}, [x, inv, out_shape](const std::vector<T>& g) {
      Shape back;
      auto gx = permute_data(g.data(), out_shape, inv, back);
      detail::accumulate(x, gx.data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t stop) {
  check_defined(x, "slice");
  if (axis >= x.rank() || start >= stop || stop > x.extent(axis))
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(stop) + ") on axis " + std::to_string(axis) +
                     " invalid for " + shape_str(x.shape()));
  const Shape& xs = x.shape();
  Shape os = xs;
  os[axis] = stop - start;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t span = stop - start;
  std::vector<T> v(outer * span * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = x.data() + (o * xs[axis] + start) * inner;
    std::memcpy(v.data() + o * span * inner, src, span * inner * sizeof(T));
  }
  auto out = make_tensor(std::move(os), std::move(v));
  if (grad_enabled() && x.requires_grad()) {
    detail::attach<T>(out, {x}, [x, axis, start, stop](const std::vector<T>& g) {
      accumulate_slice(x, g, axis, start, stop);
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const auto& p : parts) check_defined(p, "concat");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size())
      throw ShapeError("concat: rank mismatch between parts");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.shape()[i] != first[i])
        throw ShapeError("concat: extents differ off-axis: " + shape_str(p.shape()) +
                         " vs " + shape_str(first));
    }
    total += p.extent(axis);
  }
  Shape os = first;
  os[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<T> v(shape_size(os));
  std::size_t written = 0;
  for (const auto& p : parts) {
    const std::size_t span = p.extent(axis);
    for (std::size_t o = 0; o < outer; ++o) {
      std::memcpy(v.data() + (o * total + written) * inner,
                  p.data() + o * span * inner, span * inner * sizeof(T));
    }
    written += span;
  }
  auto out = make_tensor(std::move(os), std::move(v));
  if (grad_enabled() && detail::any_requires_grad(parts)) {
    detail::attach<T>(out, parts, [parts, axis, total, outer, inner](const std::vector<T>& g) {
      std::size_t offset = 0;
      for (const auto& p : parts) {
        const std::size_t span = p.shape()[axis];
        if (p.requires_grad()) {
          std::vector<T> gp(p.impl_->data->size());
          for (std::size_t o = 0; o < outer; ++o) {
            std::memcpy(gp.data() + o * span * inner,
                        g.data() + (o * total + offset) * inner,
                        span * inner * sizeof(T));
          }
          detail::accumulate(p, gp.data());
        }
        offset += span;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, Shape shape) {
  check_defined(x, "broadcast_to");
  auto v = ew_binary(x.data(), x.shape(), x.data(), x.shape(), shape,
                     [](T a, T) { return a; });
  auto out = make_tensor(shape, std::move(v));
  if (grad_enabled() && x.requires_grad()) {
    Shape os = out.shape();
    detail::attach<T>(out, {x}, [x, os](const std::vector<T>& g) {
      detail::accumulate_reduce(x, g, os);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions. Accumulation runs in double regardless of T.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  check_defined(x, "sum");
  double acc = 0.0;
  const T* xv = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(xv[i]);
  auto out = Tensor<T>::scalar(static_cast<T>(acc));
  if (grad_enabled() && x.requires_grad()) {
    detail::attach<T>(out, {x}, [x](const std::vector<T>& g) {
      std::vector<T> gx(x.impl_->data->size(), g[0]);
      detail::accumulate(x, gx.data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  check_defined(x, "mean");
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  const T scale = static_cast<T>(1.0 / static_cast<double>(x.size()));
  auto s = sum(x);
  return mul(s, Tensor<T>::scalar(scale));
}

namespace {
struct AxisDims {
  std::size_t outer, axis, inner;
};

AxisDims axis_dims(const Shape& s, std::size_t axis) {
  AxisDims d{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) d.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) d.inner *= s[i];
  return d;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdims) {
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i == axis) {
      if (keepdims) os.push_back(1);
    } else {
      os.push_back(s[i]);
    }
  }
  return os;
}
}  // namespace

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis, bool keepdims) {
  check_defined(x, "sum");
  if (axis >= x.rank()) throw ShapeError("sum: axis out of range for " + shape_str(x.shape()));
  const auto d = axis_dims(x.shape(), axis);
  std::vector<T> v(d.outer * d.inner, T(0));
  const T* xv = x.data();
  for (std::size_t o = 0; o < d.outer; ++o) {
    for (std::size_t a = 0; a < d.axis; ++a) {
      const T* src = xv + (o * d.axis + a) * d.inner;
      T* dst = v.data() + o * d.inner;
      for (std::size_t i = 0; i < d.inner; ++i) dst[i] += src[i];
    }
  }
  auto out = make_tensor(reduced_shape(x.shape(), axis, keepdims), std::move(v));
  if (grad_enabled() && x.requires_grad()) {
    detail::attach<T>(out, {x}, [x, d](const std::vector<T>& g) {
      std::vector<T> gx(x.impl_->data->size());
      if (d.inner == 1) {
        for (std::size_t o = 0; o < d.outer; ++o) {
          T* dst = gx.data() + o * d.axis;
          const T gv = g[o];
          for (std::size_t a = 0; a < d.axis; ++a) dst[a] = gv;
        }
      } else {
        for (std::size_t o = 0; o < d.outer; ++o) {
          const T* src = g.data() + o * d.inner;
          for (std::size_t a = 0; a < d.axis; ++a) {
            T* dst = gx.data() + (o * d.axis + a) * d.inner;
            std::memcpy(dst, src, d.inner * sizeof(T));
          }
        }
      }
      detail::accumulate(x, gx.data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis, bool keepdims) {
  check_defined(x, "mean");
  if (axis >= x.rank()) throw ShapeError("mean: axis out of range for " + shape_str(x.shape()));
  const T scale = static_cast<T>(1.0 / static_cast<double>(x.extent(axis)));
  return mul(sum(x, axis, keepdims), Tensor<T>::scalar(scale));
}

template <typename T>
MaxResult<T> max_reduce(const Tensor<T>& x, std::size_t axis, bool keepdims) {
  check_defined(x, "max");
  if (axis >= x.rank()) throw ShapeError("max: axis out of range for " + shape_str(x.shape()));
  const auto d = axis_dims(x.shape(), axis);
  if (d.axis == 0) throw ShapeError("max: empty reduction axis");
  std::vector<T> v(d.outer * d.inner);
  std::vector<std::size_t> arg(d.outer * d.inner, 0);
  const T* xv = x.data();
  for (std::size_t o = 0; o < d.outer; ++o) {
    for (std::size_t i = 0; i < d.inner; ++i) {
      T best = xv[(o * d.axis) * d.inner + i];
      std::size_t bi = 0;
      for (std::size_t a = 1; a < d.axis; ++a) {
        const T val = xv[(o * d.axis + a) * d.inner + i];
        if (val > best) {  // strict: ties keep the lowest index
          best = val;
          bi = a;
        }
      }
      v[o * d.inner + i] = best;
      arg[o * d.inner + i] = bi;
    }
  }
  MaxResult<T> res;
  res.values = make_tensor(reduced_shape(x.shape(), axis, keepdims), std::move(v));
  res.argmax = arg;
  if (grad_enabled() && x.requires_grad()) {
    detail::attach<T>(res.values, {x}, [x, d, arg](const std::vector<T>& g) {
      std::vector<T> gx(x.impl_->data->size(), T(0));
      for (std::size_t o = 0; o < d.outer; ++o)
        for (std::size_t i = 0; i < d.inner; ++i)
          gx[(o * d.axis + arg[o * d.inner + i]) * d.inner + i] = g[o * d.inner + i];
      detail::accumulate(x, gx.data());
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Real DFT and magnitudes.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> rdft(const Tensor<T>& x, std::size_t pad_to) {
  check_defined(x, "rdft");
  if (x.rank() == 0) throw ShapeError("rdft: scalar input");
  const std::size_t len = x.shape().back();
  if (len == 0) throw ShapeError("rdft: zero-length transform axis");
  if (!is_pow2(pad_to))
    throw ShapeError("rdft: pad_to=" + std::to_string(pad_to) + " is not a power of two");
  if (pad_to < len)
    throw ShapeError("rdft: pad_to=" + std::to_string(pad_to) + " < input length " +
                     std::to_string(len));
  const std::size_t bins = pad_to / 2 + 1;
  const std::size_t rows = x.size() / len;
  Shape os(x.shape().begin(), x.shape().end() - 1);
  os.push_back(bins);
  os.push_back(2);
  std::vector<T> v(rows * bins * 2);
  std::vector<double> re(pad_to), im(pad_to);
  const T* xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    for (std::size_t t = 0; t < len; ++t) re[t] = static_cast<double>(xv[r * len + t]);
    fft_inplace(re, im, false);
    T* dst = v.data() + r * bins * 2;
    for (std::size_t k = 0; k < bins; ++k) {
      dst[2 * k] = static_cast<T>(re[k]);
      dst[2 * k + 1] = static_cast<T>(im[k]);
    }
  }
  auto out = make_tensor(std::move(os), std::move(v));
  if (grad_enabled() && x.requires_grad()) {
    detail::attach<T>(out, {x}, [x, pad_to, bins, rows, len](const std::vector<T>& g) {
      // Adjoint of "real DFT keeping bins 0..n/2": zero-extend the bin
      // gradients and run the opposite-sign transform; the real part of the
      // first `len` samples is the input gradient.
      std::vector<T> gx(rows * len);
      std::vector<double> re(pad_to), im(pad_to);
      for (std::size_t r = 0; r < rows; ++r) {
        std::fill(re.begin(), re.end(), 0.0);
        std::fill(im.begin(), im.end(), 0.0);
        const T* gr = g.data() + r * bins * 2;
        for (std::size_t k = 0; k < bins; ++k) {
          re[k] = static_cast<double>(gr[2 * k]);
          im[k] = static_cast<double>(gr[2 * k + 1]);
        }
        fft_inplace(re, im, true);
        for (std::size_t t = 0; t < len; ++t)
          gx[r * len + t] = static_cast<T>(re[t]);
      }
      detail::accumulate(x, gx.data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> complex_magnitude(const Tensor<T>& x) {
  check_defined(x, "complex_magnitude");
  if (x.rank() == 0 || x.shape().back() != 2)
    throw ShapeError("complex_magnitude: trailing axis must be (re,im) pairs, got " +
                     shape_str(x.shape()));
  const std::size_t n = x.size() / 2;
  Shape os(x.shape().begin(), x.shape().end() - 1);
  std::vector<T> v(n);
  const T* xv = x.data();
  for (std::size_t i = 0; i < n; ++i) v[i] = std::hypot(xv[2 * i], xv[2 * i + 1]);
  auto out = make_tensor(std::move(os), std::move(v));
  if (grad_enabled() && x.requires_grad()) {
    auto out_data = out.impl_->data;
    detail::attach<T>(out, {x}, [x, out_data, n](const std::vector<T>& g) {
      std::vector<T> gx(2 * n, T(0));
      const T* xv = x.data();
      const auto& m = *out_data;
      for (std::size_t i = 0; i < n; ++i) {
        if (m[i] > T(0)) {
          gx[2 * i] = g[i] * xv[2 * i] / m[i];
          gx[2 * i + 1] = g[i] * xv[2 * i + 1] / m[i];
        }
      }
      detail::accumulate(x, gx.data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> rfft_magnitude(const Tensor<T>& x, std::size_t pad_to) {
  return complex_magnitude(rdft(x, pad_to));
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  const T* v = x.data();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(v[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Explicit instantiations.
// ---------------------------------------------------------------------------

template class Tensor<float>;
template class Tensor<double>;

#define ESSM_INSTANTIATE(T)                                                            \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> divide<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> neg<T>(const Tensor<T>&);                                         \
  template Tensor<T> exp_op<T>(const Tensor<T>&);                                      \
  template Tensor<T> log_op<T>(const Tensor<T>&);                                      \
  template Tensor<T> abs_op<T>(const Tensor<T>&);                                      \
  template Tensor<T> pow_op<T>(const Tensor<T>&, T);                                   \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                     \
  template Tensor<T> silu<T>(const Tensor<T>&);                                        \
  template Tensor<T> softplus<T>(const Tensor<T>&);                                    \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                              \
  template Tensor<T> transpose<T>(const Tensor<T>&, std::vector<std::size_t>);         \
  template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);\
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);            \
  template Tensor<T> broadcast_to<T>(const Tensor<T>&, Shape);                         \
  template Tensor<T> sum<T>(const Tensor<T>&);                                         \
  template Tensor<T> sum<T>(const Tensor<T>&, std::size_t, bool);                      \
  template Tensor<T> mean<T>(const Tensor<T>&);                                        \
  template Tensor<T> mean<T>(const Tensor<T>&, std::size_t, bool);                     \
  template MaxResult<T> max_reduce<T>(const Tensor<T>&, std::size_t, bool);            \
  template Tensor<T> maximum<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> minimum<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> greater<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> less<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> equal<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> rdft<T>(const Tensor<T>&, std::size_t);                           \
  template Tensor<T> complex_magnitude<T>(const Tensor<T>&);                           \
  template Tensor<T> rfft_magnitude<T>(const Tensor<T>&, std::size_t);                 \
  template bool all_finite<T>(const Tensor<T>&);                                       \
  template void detail::attach<T>(Tensor<T>&, std::vector<Tensor<T>>,                  \
                                  std::function<void(const std::vector<T>&)>);         \
  template void detail::accumulate<T>(const Tensor<T>&, const T*);                     \
  template void detail::accumulate_reduce<T>(const Tensor<T>&, const std::vector<T>&,  \
                                             const Shape&);                            \
  template bool detail::any_requires_grad<T>(const std::vector<Tensor<T>>&);

ESSM_INSTANTIATE(float)
ESSM_INSTANTIATE(double)

#undef ESSM_INSTANTIATE

}  // namespace essm
