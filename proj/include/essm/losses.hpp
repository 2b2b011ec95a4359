#pragma once

#include <cstdint>
#include <vector>

#include "essm/tensor.hpp"

namespace essm::loss {

struct LossConfig {
  double lambda_spectral = 1.0;  // weight on the spectral term, >= 0
  std::size_t spectral_pad = 2048;
  double spectral_scale = 1.0 / 2048.0;  // applied to magnitudes before the MSE

  static LossConfig with_pad(std::size_t pad, double lambda = 1.0) {
    return LossConfig{lambda, pad, 1.0 / static_cast<double>(pad)};
  }
};

/// Mean of squared differences over all elements.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Mean over (batch, channel) of the MSE between scaled magnitude spectra of
/// the last axis, zero-padded to cfg.spectral_pad.
template <typename T>
Tensor<T> spectral_loss(const Tensor<T>& pred, const Tensor<T>& target,
                        const LossConfig& cfg);

/// mse + lambda_spectral * spectral.
template <typename T>
Tensor<T> combined_recon_loss(const Tensor<T>& pred, const Tensor<T>& target,
                              const LossConfig& cfg);

/// -mean(y log p + (1-y) log(1-p)); probabilities are clamped at 1e-7.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& prob, const Tensor<T>& label);

// ---------------------------------------------------------------------------
// Adam.
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers mirror the parameter list they were built from (by index).
template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

template <typename T>
AdamState<T> make_adam(const std::vector<Tensor<T>>& params, AdamConfig cfg = {});

/// One bias-corrected update, in place, from the parameters' accumulated
/// grads (missing grads count as zero). Clears the grads afterwards.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state);

// ---------------------------------------------------------------------------
// AUROC.
// ---------------------------------------------------------------------------

/// Mann-Whitney statistic: P(score_pos > score_neg) with ties counted 0.5,
/// computed via midrank sums in O(n log n). Throws NumericError when either
/// class is absent (the AUROC is undefined).
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace essm::loss
