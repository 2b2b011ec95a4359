#pragma once

#include "essm/rng.hpp"
#include "essm/tensor.hpp"

namespace essm::nn {

/// Cross-correlation convention. `weight` is (out_channels, in_channels/groups,
/// kernel); `padding` is a symmetric zero pad. The same parameter record drives
/// conv1d (in -> out) and conv1d_transpose (out -> in, the exact adjoint), in
/// which case `bias` must be sized for the transpose output channels.
template <typename T>
struct Conv1dParams {
  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // (out, in)
  Tensor<T> bias;    // (out)
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;  // (features)
  Tensor<T> beta;   // (features)
  T epsilon = T(1e-5);
};

/// Two kernel-5 same-padded convolutions, each followed by SiLU.
template <typename T>
struct DoubleConvParams {
  Conv1dParams<T> conv1;
  Conv1dParams<T> conv2;
};

enum class PoolMode { kMean, kMax };

/// (B, Cin, T) -> (B, Cout, T_out), T_out = (T + 2*pad - K)/stride + 1.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Conv1dParams<T>& p);

/// Adjoint map: (B, Cout, T) -> (B, Cin, T_out), T_out = (T-1)*stride - 2*pad + K.
/// Satisfies <conv1d(x), y> == <x, conv1d_transpose(y)> for zero bias.
template <typename T>
Tensor<T> conv1d_transpose(const Tensor<T>& x, const Conv1dParams<T>& p);

/// (..., in) -> (..., out): x W^T + b.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p);

/// Standardizes the last axis to mean 0 / variance 1 (population), then
/// applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p);

/// Non-overlapping window reduction along T; T must divide by factor.
template <typename T>
Tensor<T> pool1d(const Tensor<T>& x, std::size_t factor, PoolMode mode);

template <typename T>
Tensor<T> double_conv(const Tensor<T>& x, const DoubleConvParams<T>& p);

// Parameter construction. Weights are Kaiming-uniform (bound sqrt(6/fan_in)),
// biases zero, gamma one / beta zero. All returned tensors are grad leaves.

template <typename T>
Tensor<T> kaiming_uniform(Rng& rng, Shape shape, std::size_t fan_in);

template <typename T>
Conv1dParams<T> make_conv1d(Rng& rng, std::size_t out_channels, std::size_t in_channels,
                            std::size_t kernel, std::size_t stride = 1,
                            std::size_t padding = 0, std::size_t groups = 1);

/// Zero-initialized variant (weight and bias exactly zero).
template <typename T>
Conv1dParams<T> make_conv1d_zero(std::size_t out_channels, std::size_t in_channels,
                                 std::size_t kernel, std::size_t stride = 1,
                                 std::size_t padding = 0, std::size_t groups = 1);

/// Transpose-direction parameters: weight (in_channels, out_channels, kernel),
/// bias sized out_channels.
template <typename T>
Conv1dParams<T> make_conv1d_transpose(Rng& rng, std::size_t in_channels,
                                      std::size_t out_channels, std::size_t kernel,
                                      std::size_t stride, std::size_t padding = 0);

template <typename T>
LinearParams<T> make_linear(Rng& rng, std::size_t out_features, std::size_t in_features);

template <typename T>
LayerNormParams<T> make_layer_norm(std::size_t features, T epsilon = T(1e-5));

template <typename T>
DoubleConvParams<T> make_double_conv(Rng& rng, std::size_t in_channels,
                                     std::size_t out_channels, std::size_t kernel = 5);

}  // namespace essm::nn
