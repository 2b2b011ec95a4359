#pragma once

#include <vector>

#include "essm/layers.hpp"
#include "essm/rng.hpp"
#include "essm/tensor.hpp"

namespace essm::ssm {

/// One selective state-space block. The state matrix is A = -exp(A_log),
/// elementwise negative, so the discretized transition exp(dt*A) stays in
/// (0,1) for any dt > 0.
template <typename T>
struct SsmBlockParams {
  nn::LinearParams<T> in_proj;    // d_model -> 2*d_inner
  Tensor<T> conv_weight;          // (d_inner, 1, conv_kernel), depthwise causal
  Tensor<T> conv_bias;            // (d_inner)
  Tensor<T> a_log;                // (d_inner, n_state)
  nn::LinearParams<T> x_to_bc;    // d_inner -> 2*n_state
  Tensor<T> dt_lowrank;           // (dt_rank, d_inner), no bias
  nn::LinearParams<T> dt_proj;    // dt_rank -> d_inner, bias sets the dt floor
  Tensor<T> d_skip;               // (d_inner)
  nn::LinearParams<T> out_proj;   // d_inner -> d_model
  nn::LayerNormParams<T> norm;    // d_model

  std::size_t d_model = 0;
  std::size_t d_inner = 0;
  std::size_t n_state = 0;
  std::size_t dt_rank = 0;
  std::size_t conv_kernel = 0;
};

enum class ScanKind { kSequential, kParallel };

/// dt_rank = ceil(d_model / 16); d_inner = expand * d_model.
/// A_log rows are log(1..n_state); dt_proj bias is drawn so that
/// softplus(bias) lands in [1e-3, 1e-1].
template <typename T>
SsmBlockParams<T> make_ssm_block(Rng& rng, std::size_t d_model, std::size_t n_state,
                                 std::size_t expand = 2, std::size_t conv_kernel = 4);

/// Input-dependent discretization of the activated inner signal x (T, d_inner):
///   dt    = softplus(dt_proj(dt_lowrank(x)))            (T, d_inner), > 0
///   a_bar = exp(dt (x) A)                               (T, d_inner, n_state), in (0,1)
///   b     = x_to_bc(x)[:, :n]                           (T, n_state)
///   c     = x_to_bc(x)[:, n:]                           (T, n_state)
template <typename T>
struct Discretized {
  Tensor<T> dt;
  Tensor<T> a_bar;
  Tensor<T> b;
  Tensor<T> c;
};

template <typename T>
Discretized<T> discretize(const Tensor<T>& x, const SsmBlockParams<T>& p);

/// h_t = a_t o h_{t-1} + b_t with h_{-1} = 0; shapes (T, D, N).
template <typename T>
Tensor<T> scan_sequential(const Tensor<T>& a, const Tensor<T>& b);

/// Same contract, computed as a Blelloch-style work-efficient prefix scan
/// over (a, b) pairs with combine (a1,b1)*(a2,b2) = (a1*a2, a2*b1 + b2).
/// The tree reduction order is fixed, so results are deterministic no matter
/// how many worker threads run the per-level combines.
template <typename T>
Tensor<T> scan_parallel(const Tensor<T>& a, const Tensor<T>& b);

/// Full block: out = u + layer_norm(mamba_inner(u)), where
///   (x, z) = split(in_proj(u));
///   xa     = SiLU(causal_depthwise_conv(x));
///   y      = sum_n c_n * scan(a_bar, dt*b*xa)_n + d_skip o xa;
///   inner  = out_proj(y o SiLU(z)).
template <typename T>
Tensor<T> mamba_block(const Tensor<T>& u, const SsmBlockParams<T>& p,
                      ScanKind scan = ScanKind::kSequential);

/// Batched variant, (B, T, d_model) -> (B, T, d_model): all projections run
/// as one GEMM over B*T rows and the recurrence runs as one scan with B*D
/// independent lanes. Each sequence sees exactly the per-sequence recurrence.
template <typename T>
Tensor<T> mamba_block_batched(const Tensor<T>& u, const SsmBlockParams<T>& p,
                              ScanKind scan = ScanKind::kSequential);

template <typename T>
Tensor<T> mamba_stack(const Tensor<T>& u, const std::vector<SsmBlockParams<T>>& blocks,
                      ScanKind scan = ScanKind::kSequential);

}  // namespace essm::ssm
