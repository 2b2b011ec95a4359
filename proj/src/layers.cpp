#include "essm/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstring>

#include "essm/errors.hpp"

namespace essm::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StrideDyn = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, StrideDyn>;
template <typename T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, StrideDyn>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvDims {
  std::size_t batch, cin, tin, cout, kernel, stride, pad, groups;
  std::size_t cig, cog, tpad, tout;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Conv1dParams<T>& p, const char* op) {
  if (x.rank() != 3)
    throw ShapeError(std::string(op) + ": input must be (B,C,T), got " + shape_str(x.shape()));
  if (p.weight.rank() != 3)
    throw ShapeError(std::string(op) + ": weight must be rank 3, got " + shape_str(p.weight.shape()));
  ConvDims d;
  d.batch = x.extent(0);
  d.cin = x.extent(1);
  d.tin = x.extent(2);
  d.cout = p.weight.extent(0);
  d.cig = p.weight.extent(1);
  d.kernel = p.weight.extent(2);
  d.stride = p.stride == 0 ? 1 : p.stride;
  d.pad = p.padding;
  d.groups = p.groups == 0 ? 1 : p.groups;
  if (d.kernel == 0) throw ShapeError(std::string(op) + ": zero-length kernel");
  if (d.cout % d.groups != 0)
    throw ShapeError(std::string(op) + ": out channels not divisible by groups");
  d.cog = d.cout / d.groups;
  return d;
}

// ---- forward-direction (in -> out) kernels --------------------------------

template <typename T>
using EVec = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CEVec = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

/// Large kernels with one group go through an explicit im2col GEMM; small
/// kernels accumulate per-tap GEMMs on strided views.
inline bool use_im2col(const ConvDims& d) { return d.groups == 1 && d.kernel >= 16; }

template <typename T>
void fill_im2col(const T* xpad, const ConvDims& d, std::vector<T>& col) {
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    const T* src = xpad + ci * d.tpad;
    for (std::size_t k = 0; k < d.kernel; ++k) {
      T* dst = col.data() + (ci * d.kernel + k) * d.tout;
      if (d.stride == 1) {
        std::memcpy(dst, src + k, d.tout * sizeof(T));
      } else {
        for (std::size_t t = 0; t < d.tout; ++t) dst[t] = src[k + t * d.stride];
      }
    }
  }
}

template <typename T>
std::vector<T> conv_forward_raw(const T* x, const ConvDims& d, const T* w, const T* bias) {
  std::vector<T> out(d.batch * d.cout * d.tout, T(0));
  std::vector<T> xpad(d.cin * d.tpad);
  const bool depthwise = d.cig == 1 && d.cog == 1 && d.stride == 1;
  std::vector<T> col;
  if (use_im2col(d)) col.resize(d.cin * d.kernel * d.tout);
  for (std::size_t b = 0; b < d.batch; ++b) {
    std::fill(xpad.begin(), xpad.end(), T(0));
    for (std::size_t c = 0; c < d.cin; ++c)
      std::memcpy(xpad.data() + c * d.tpad + d.pad, x + (b * d.cin + c) * d.tin,
                  d.tin * sizeof(T));
    if (use_im2col(d)) {
      fill_im2col(xpad.data(), d, col);
      MapMat<T> o(out.data() + b * d.cout * d.tout, d.cout, d.tout);
      o.noalias() = CMapMat<T>(w, d.cout, d.cin * d.kernel) *
                    CMapMat<T>(col.data(), d.cin * d.kernel, d.tout);
    } else if (depthwise) {
      for (std::size_t c = 0; c < d.cin; ++c) {
        EVec<T> orow(out.data() + (b * d.cout + c) * d.tout, d.tout);
        const T* xrow = xpad.data() + c * d.tpad;
        for (std::size_t k = 0; k < d.kernel; ++k)
          orow += w[c * d.kernel + k] * CEVec<T>(xrow + k, d.tout);
      }
    } else {
      for (std::size_t g = 0; g < d.groups; ++g) {
        MapMat<T> o(out.data() + (b * d.cout + g * d.cog) * d.tout, d.cog, d.tout);
        for (std::size_t k = 0; k < d.kernel; ++k) {
          CStridedMap<T> wk(w + (g * d.cog) * d.cig * d.kernel + k, d.cog, d.cig,
                            StrideDyn(d.cig * d.kernel, d.kernel));
          CStridedMap<T> xk(xpad.data() + (g * d.cig) * d.tpad + k, d.cig, d.tout,
                            StrideDyn(d.tpad, d.stride));
          o.noalias() += wk * xk;
        }
      }
    }
    if (bias) {
      for (std::size_t co = 0; co < d.cout; ++co) {
        T* row = out.data() + (b * d.cout + co) * d.tout;
        for (std::size_t t = 0; t < d.tout; ++t) row[t] += bias[co];
      }
    }
  }
  return out;
}

template <typename T>
std::vector<T> conv_backward_input_raw(const T* g, const ConvDims& d, const T* w) {
  std::vector<T> gx(d.batch * d.cin * d.tin, T(0));
  std::vector<T> gxpad(d.cin * d.tpad);
  const bool depthwise = d.cig == 1 && d.cog == 1 && d.stride == 1;
  std::vector<T> colgrad;
  if (use_im2col(d)) colgrad.resize(d.cin * d.kernel * d.tout);
  for (std::size_t b = 0; b < d.batch; ++b) {
    std::fill(gxpad.begin(), gxpad.end(), T(0));
    if (use_im2col(d)) {
      MapMat<T>(colgrad.data(), d.cin * d.kernel, d.tout).noalias() =
          CMapMat<T>(w, d.cout, d.cin * d.kernel).transpose() *
          CMapMat<T>(g + b * d.cout * d.tout, d.cout, d.tout);
      for (std::size_t ci = 0; ci < d.cin; ++ci) {
        T* dst = gxpad.data() + ci * d.tpad;
        for (std::size_t k = 0; k < d.kernel; ++k) {
          const T* src = colgrad.data() + (ci * d.kernel + k) * d.tout;
          if (d.stride == 1) {
            EVec<T>(dst + k, d.tout) += CEVec<T>(src, d.tout);
          } else {
            for (std::size_t t = 0; t < d.tout; ++t) dst[k + t * d.stride] += src[t];
          }
        }
      }
    } else if (depthwise) {
      for (std::size_t c = 0; c < d.cin; ++c) {
        CEVec<T> go(g + (b * d.cout + c) * d.tout, d.tout);
        T* grow = gxpad.data() + c * d.tpad;
        for (std::size_t k = 0; k < d.kernel; ++k)
          EVec<T>(grow + k, d.tout) += w[c * d.kernel + k] * go;
      }
    } else {
      for (std::size_t gr = 0; gr < d.groups; ++gr) {
        CMapMat<T> go(g + (b * d.cout + gr * d.cog) * d.tout, d.cog, d.tout);
        for (std::size_t k = 0; k < d.kernel; ++k) {
          CStridedMap<T> wk(w + (gr * d.cog) * d.cig * d.kernel + k, d.cog, d.cig,
                            StrideDyn(d.cig * d.kernel, d.kernel));
          StridedMap<T> dst(gxpad.data() + (gr * d.cig) * d.tpad + k, d.cig, d.tout,
                            StrideDyn(d.tpad, d.stride));
          dst.noalias() += wk.transpose() * go;
        }
      }
    }
    for (std::size_t c = 0; c < d.cin; ++c) {
      const T* src = gxpad.data() + c * d.tpad + d.pad;
      T* dst = gx.data() + (b * d.cin + c) * d.tin;
      for (std::size_t t = 0; t < d.tin; ++t) dst[t] += src[t];
    }
  }
  return gx;
}

template <typename T>
std::vector<T> conv_backward_weight_raw(const T* x, const T* g, const ConvDims& d) {
  std::vector<T> gw(d.cout * d.cig * d.kernel, T(0));
  std::vector<T> xpad(d.cin * d.tpad);
  const bool depthwise = d.cig == 1 && d.cog == 1 && d.stride == 1;
  std::vector<T> col;
  if (use_im2col(d)) col.resize(d.cin * d.kernel * d.tout);
  for (std::size_t b = 0; b < d.batch; ++b) {
    std::fill(xpad.begin(), xpad.end(), T(0));
    for (std::size_t c = 0; c < d.cin; ++c)
      std::memcpy(xpad.data() + c * d.tpad + d.pad, x + (b * d.cin + c) * d.tin,
                  d.tin * sizeof(T));
    if (use_im2col(d)) {
      fill_im2col(xpad.data(), d, col);
      MapMat<T>(gw.data(), d.cout, d.cin * d.kernel).noalias() +=
          CMapMat<T>(g + b * d.cout * d.tout, d.cout, d.tout) *
          CMapMat<T>(col.data(), d.cin * d.kernel, d.tout).transpose();
    } else if (depthwise) {
      for (std::size_t c = 0; c < d.cin; ++c) {
        CEVec<T> go(g + (b * d.cout + c) * d.tout, d.tout);
        const T* xrow = xpad.data() + c * d.tpad;
        for (std::size_t k = 0; k < d.kernel; ++k)
          gw[c * d.kernel + k] += (go * CEVec<T>(xrow + k, d.tout)).sum();
      }
    } else {
      for (std::size_t gr = 0; gr < d.groups; ++gr) {
        CMapMat<T> go(g + (b * d.cout + gr * d.cog) * d.tout, d.cog, d.tout);
        for (std::size_t k = 0; k < d.kernel; ++k) {
          CStridedMap<T> xk(xpad.data() + (gr * d.cig) * d.tpad + k, d.cig, d.tout,
                            StrideDyn(d.tpad, d.stride));
          StridedMap<T> dst(gw.data() + (gr * d.cog) * d.cig * d.kernel + k, d.cog, d.cig,
                            StrideDyn(d.cig * d.kernel, d.kernel));
          dst.noalias() += go * xk.transpose();
        }
      }
    }
  }
  return gw;
}

// ---- transpose-direction (out -> in) kernels ------------------------------

template <typename T>
std::vector<T> convT_forward_raw(const T* x, const ConvDims& d, const T* w, const T* bias,
                                 std::size_t tout, std::size_t tpad_out) {
  const std::size_t cin_out = d.cig * d.groups;
  std::vector<T> out(d.batch * cin_out * tout);
  std::vector<T> ypad(cin_out * tpad_out);
  for (std::size_t b = 0; b < d.batch; ++b) {
    std::fill(ypad.begin(), ypad.end(), T(0));
    for (std::size_t gr = 0; gr < d.groups; ++gr) {
      CMapMat<T> xb(x + (b * d.cout + gr * d.cog) * d.tin, d.cog, d.tin);
      for (std::size_t k = 0; k < d.kernel; ++k) {
        CStridedMap<T> wk(w + (gr * d.cog) * d.cig * d.kernel + k, d.cog, d.cig,
                          StrideDyn(d.cig * d.kernel, d.kernel));
        StridedMap<T> dst(ypad.data() + (gr * d.cig) * tpad_out + k, d.cig, d.tin,
                          StrideDyn(tpad_out, d.stride));
        dst.noalias() += wk.transpose() * xb;
      }
    }
    for (std::size_t c = 0; c < cin_out; ++c) {
      const T* src = ypad.data() + c * tpad_out + d.pad;
      T* dst = out.data() + (b * cin_out + c) * tout;
      const T bv = bias ? bias[c] : T(0);
      for (std::size_t t = 0; t < tout; ++t) dst[t] = src[t] + bv;
    }
  }
  return out;
}

template <typename T>
std::vector<T> convT_backward_weight_raw(const T* x, const T* g, const ConvDims& d,
                                         std::size_t tout, std::size_t tpad_out) {
  const std::size_t cin_out = d.cig * d.groups;
  std::vector<T> gw(d.cout * d.cig * d.kernel, T(0));
  std::vector<T> gpad(cin_out * tpad_out);
  for (std::size_t b = 0; b < d.batch; ++b) {
    std::fill(gpad.begin(), gpad.end(), T(0));
    for (std::size_t c = 0; c < cin_out; ++c)
      std::memcpy(gpad.data() + c * tpad_out + d.pad, g + (b * cin_out + c) * tout,
                  tout * sizeof(T));
    for (std::size_t gr = 0; gr < d.groups; ++gr) {
      CMapMat<T> xb(x + (b * d.cout + gr * d.cog) * d.tin, d.cog, d.tin);
      for (std::size_t k = 0; k < d.kernel; ++k) {
        CStridedMap<T> gk(gpad.data() + (gr * d.cig) * tpad_out + k, d.cig, d.tin,
                          StrideDyn(tpad_out, d.stride));
        StridedMap<T> dst(gw.data() + (gr * d.cog) * d.cig * d.kernel + k, d.cog, d.cig,
                          StrideDyn(d.cig * d.kernel, d.kernel));
        dst.noalias() += xb * gk.transpose();
      }
    }
  }
  return gw;
}

}  // namespace

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Conv1dParams<T>& p) {
  ConvDims d = conv_dims(x, p, "conv1d");
  if (d.cin != d.cig * d.groups)
    throw ShapeError("conv1d: input channels " + std::to_string(d.cin) +
                     " do not match weight " + shape_str(p.weight.shape()) + " with " +
                     std::to_string(d.groups) + " group(s)");
  if (p.bias.defined() && p.bias.size() != d.cout)
    throw ShapeError("conv1d: bias size " + std::to_string(p.bias.size()) +
                     " != out channels " + std::to_string(d.cout));
  d.tpad = d.tin + 2 * d.pad;
  if (d.tpad < d.kernel)
    throw ShapeError("conv1d: padded length " + std::to_string(d.tpad) +
                     " shorter than kernel " + std::to_string(d.kernel));
  d.tout = (d.tpad - d.kernel) / d.stride + 1;

  auto v = conv_forward_raw(x.data(), d, p.weight.data(),
                            p.bias.defined() ? p.bias.data() : nullptr);
  auto out = Tensor<T>::from_data({d.batch, d.cout, d.tout}, std::move(v));
  std::vector<Tensor<T>> parents{x, p.weight};
  if (p.bias.defined()) parents.push_back(p.bias);
  if (grad_enabled() && detail::any_requires_grad(parents)) {
    auto w = p.weight;
    auto bias = p.bias;
    detail::attach<T>(out, parents, [x, w, bias, d](const std::vector<T>& g) {
      if (x.requires_grad()) {
        auto gx = conv_backward_input_raw(g.data(), d, w.data());
        detail::accumulate(x, gx.data());
      }
      if (w.requires_grad()) {
        auto gw = conv_backward_weight_raw(x.data(), g.data(), d);
        detail::accumulate(w, gw.data());
      }
      if (bias.defined() && bias.requires_grad()) {
        std::vector<T> gb(d.cout, T(0));
        for (std::size_t b = 0; b < d.batch; ++b)
          for (std::size_t co = 0; co < d.cout; ++co) {
            const T* row = g.data() + (b * d.cout + co) * d.tout;
            T acc = T(0);
            for (std::size_t t = 0; t < d.tout; ++t) acc += row[t];
            gb[co] += acc;
          }
        detail::accumulate(bias, gb.data());
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv1d_transpose(const Tensor<T>& x, const Conv1dParams<T>& p) {
  ConvDims d = conv_dims(x, p, "conv1d_transpose");
  if (d.cin != d.cout)
    throw ShapeError("conv1d_transpose: input channels " + std::to_string(d.cin) +
                     " must equal weight out-channel extent " + std::to_string(d.cout));
  const std::size_t cin_out = d.cig * d.groups;
  if (p.bias.defined() && p.bias.size() != cin_out)
    throw ShapeError("conv1d_transpose: bias size " + std::to_string(p.bias.size()) +
                     " != output channels " + std::to_string(cin_out));
  const std::size_t tpad_out = (d.tin - 1) * d.stride + d.kernel;
  if (tpad_out <= 2 * d.pad)
    throw ShapeError("conv1d_transpose: output length would be non-positive");
  const std::size_t tout = tpad_out - 2 * d.pad;
  d.tpad = d.tin + 2 * d.pad;  // for the adjoint conv in backward
  d.tout = d.tin;

  auto v = convT_forward_raw(x.data(), d, p.weight.data(),
                             p.bias.defined() ? p.bias.data() : nullptr, tout, tpad_out);
  auto out = Tensor<T>::from_data({d.batch, cin_out, tout}, std::move(v));
  std::vector<Tensor<T>> parents{x, p.weight};
  if (p.bias.defined()) parents.push_back(p.bias);
  if (grad_enabled() && detail::any_requires_grad(parents)) {
    auto w = p.weight;
    auto bias = p.bias;
    detail::attach<T>(out, parents,
                      [x, w, bias, d, tout, tpad_out, cin_out](const std::vector<T>& g) {
      if (x.requires_grad()) {
        // Adjoint of the scatter is the forward-direction convolution of g.
        ConvDims cd = d;
        cd.cin = cin_out;
        cd.tin = tout;
        cd.tpad = tout + 2 * cd.pad;
        cd.tout = d.tin;
        auto gx = conv_forward_raw(g.data(), cd, w.data(), static_cast<const T*>(nullptr));
        detail::accumulate(x, gx.data());
      }
      if (w.requires_grad()) {
        auto gw = convT_backward_weight_raw(x.data(), g.data(), d, tout, tpad_out);
        detail::accumulate(w, gw.data());
      }
      if (bias.defined() && bias.requires_grad()) {
        std::vector<T> gb(cin_out, T(0));
        for (std::size_t b = 0; b < d.batch; ++b)
          for (std::size_t c = 0; c < cin_out; ++c) {
            const T* row = g.data() + (b * cin_out + c) * tout;
            T acc = T(0);
            for (std::size_t t = 0; t < tout; ++t) acc += row[t];
            gb[c] += acc;
          }
        detail::accumulate(bias, gb.data());
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
  if (p.weight.rank() != 2)
    throw ShapeError("linear: weight must be (out,in), got " + shape_str(p.weight.shape()));
  if (x.rank() < 1 || x.shape().back() != p.weight.extent(1))
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(p.weight.shape()));
  auto y = matmul(x, transpose(p.weight));
  if (p.bias.defined()) y = add(y, p.bias);
  return y;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t last = x.rank() - 1;
  const std::size_t d = x.extent(last);
  if (p.gamma.size() != d || p.beta.size() != d)
    throw ShapeError("layer_norm: feature extent " + std::to_string(d) +
                     " does not match gamma/beta");
  auto mu = mean(x, last, true);
  auto centered = sub(x, mu);
  auto var = mean(mul(centered, centered), last, true);
  auto inv = pow_op(add(var, Tensor<T>::scalar(p.epsilon)), T(-0.5));
  auto y = mul(centered, inv);
  return add(mul(y, p.gamma), p.beta);
}

template <typename T>
Tensor<T> pool1d(const Tensor<T>& x, std::size_t factor, PoolMode mode) {
  if (x.rank() != 3)
    throw ShapeError("pool1d: input must be (B,C,T), got " + shape_str(x.shape()));
  if (factor == 0) throw ShapeError("pool1d: zero factor");
  const std::size_t t = x.extent(2);
  if (t % factor != 0)
    throw ShapeError("pool1d: length " + std::to_string(t) + " not divisible by factor " +
                     std::to_string(factor));
  auto windows = reshape(x, {x.extent(0), x.extent(1), t / factor, factor});
  if (mode == PoolMode::kMean) return mean(windows, 3, false);
  return max_reduce(windows, 3, false).values;
}

template <typename T>
Tensor<T> double_conv(const Tensor<T>& x, const DoubleConvParams<T>& p) {
  return silu(conv1d(silu(conv1d(x, p.conv1)), p.conv2));
}

template <typename T>
Tensor<T> kaiming_uniform(Rng& rng, Shape shape, std::size_t fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<T> v(shape_size(shape));
  for (auto& w : v) w = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::leaf(std::move(shape), std::move(v));
}

template <typename T>
Conv1dParams<T> make_conv1d(Rng& rng, std::size_t out_channels, std::size_t in_channels,
                            std::size_t kernel, std::size_t stride, std::size_t padding,
                            std::size_t groups) {
  if (in_channels % groups != 0)
    throw ConfigError("conv1d: in_channels must divide by groups");
  Conv1dParams<T> p;
  const std::size_t cig = in_channels / groups;
  p.weight = kaiming_uniform<T>(rng, {out_channels, cig, kernel}, cig * kernel);
  p.bias = Tensor<T>::leaf({out_channels}, std::vector<T>(out_channels, T(0)));
  p.stride = stride;
  p.padding = padding;
  p.groups = groups;
  return p;
}

template <typename T>
Conv1dParams<T> make_conv1d_zero(std::size_t out_channels, std::size_t in_channels,
                                 std::size_t kernel, std::size_t stride,
                                 std::size_t padding, std::size_t groups) {
  Conv1dParams<T> p;
  const std::size_t cig = in_channels / groups;
  p.weight = Tensor<T>::leaf({out_channels, cig, kernel},
                             std::vector<T>(out_channels * cig * kernel, T(0)));
  p.bias = Tensor<T>::leaf({out_channels}, std::vector<T>(out_channels, T(0)));
  p.stride = stride;
  p.padding = padding;
  p.groups = groups;
  return p;
}

template <typename T>
Conv1dParams<T> make_conv1d_transpose(Rng& rng, std::size_t in_channels,
                                      std::size_t out_channels, std::size_t kernel,
                                      std::size_t stride, std::size_t padding) {
  Conv1dParams<T> p;
  p.weight = kaiming_uniform<T>(rng, {in_channels, out_channels, kernel},
                                in_channels * kernel);
  p.bias = Tensor<T>::leaf({out_channels}, std::vector<T>(out_channels, T(0)));
  p.stride = stride;
  p.padding = padding;
  p.groups = 1;
  return p;
}

template <typename T>
LinearParams<T> make_linear(Rng& rng, std::size_t out_features, std::size_t in_features) {
  LinearParams<T> p;
  p.weight = kaiming_uniform<T>(rng, {out_features, in_features}, in_features);
  p.bias = Tensor<T>::leaf({out_features}, std::vector<T>(out_features, T(0)));
  return p;
}

template <typename T>
LayerNormParams<T> make_layer_norm(std::size_t features, T epsilon) {
  LayerNormParams<T> p;
  p.gamma = Tensor<T>::leaf({features}, std::vector<T>(features, T(1)));
  p.beta = Tensor<T>::leaf({features}, std::vector<T>(features, T(0)));
  p.epsilon = epsilon;
  return p;
}

template <typename T>
DoubleConvParams<T> make_double_conv(Rng& rng, std::size_t in_channels,
                                     std::size_t out_channels, std::size_t kernel) {
  DoubleConvParams<T> p;
  const std::size_t pad = (kernel - 1) / 2;
  p.conv1 = make_conv1d<T>(rng, out_channels, in_channels, kernel, 1, pad, 1);
  p.conv2 = make_conv1d<T>(rng, out_channels, out_channels, kernel, 1, pad, 1);
  return p;
}

#define ESSM_NN_INSTANTIATE(T)                                                          \
  template Tensor<T> conv1d<T>(const Tensor<T>&, const Conv1dParams<T>&);               \
  template Tensor<T> conv1d_transpose<T>(const Tensor<T>&, const Conv1dParams<T>&);     \
  template Tensor<T> linear<T>(const Tensor<T>&, const LinearParams<T>&);               \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const LayerNormParams<T>&);        \
  template Tensor<T> pool1d<T>(const Tensor<T>&, std::size_t, PoolMode);                \
  template Tensor<T> double_conv<T>(const Tensor<T>&, const DoubleConvParams<T>&);      \
  template Tensor<T> kaiming_uniform<T>(Rng&, Shape, std::size_t);                      \
  template Conv1dParams<T> make_conv1d<T>(Rng&, std::size_t, std::size_t, std::size_t,  \
                                          std::size_t, std::size_t, std::size_t);       \
  template Conv1dParams<T> make_conv1d_zero<T>(std::size_t, std::size_t, std::size_t,   \
                                               std::size_t, std::size_t, std::size_t);  \
  template Conv1dParams<T> make_conv1d_transpose<T>(Rng&, std::size_t, std::size_t,     \
                                                    std::size_t, std::size_t,           \
                                                    std::size_t);                       \
  template LinearParams<T> make_linear<T>(Rng&, std::size_t, std::size_t);              \
  template LayerNormParams<T> make_layer_norm<T>(std::size_t, T);                       \
  template DoubleConvParams<T> make_double_conv<T>(Rng&, std::size_t, std::size_t,      \
                                                   std::size_t);

ESSM_NN_INSTANTIATE(float)
ESSM_NN_INSTANTIATE(double)

#undef ESSM_NN_INSTANTIATE

}  // namespace essm::nn
