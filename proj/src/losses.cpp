#include "essm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "essm/errors.hpp"

namespace essm::loss {

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  auto d = sub(pred, target);
  return mean(mul(d, d));
}

template <typename T>
Tensor<T> spectral_loss(const Tensor<T>& pred, const Tensor<T>& target,
                        const LossConfig& cfg) {
  if (pred.shape() != target.shape())
    throw ShapeError("spectral_loss: shape mismatch " + shape_str(pred.shape()) +
                     " vs " + shape_str(target.shape()));
  if (pred.rank() == 0) throw ShapeError("spectral_loss: scalar input");
  const T scale = static_cast<T>(cfg.spectral_scale);
  auto mp = mul(rfft_magnitude(pred, cfg.spectral_pad), Tensor<T>::scalar(scale));
  auto mt = mul(rfft_magnitude(target, cfg.spectral_pad), Tensor<T>::scalar(scale));
  auto d = sub(mp, mt);
  return mean(mul(d, d));
}

template <typename T>
Tensor<T> combined_recon_loss(const Tensor<T>& pred, const Tensor<T>& target,
                              const LossConfig& cfg) {
  if (cfg.lambda_spectral < 0)
    throw ConfigError("combined_recon_loss: lambda_spectral must be >= 0");
  auto m = mse_loss(pred, target);
  if (cfg.lambda_spectral == 0.0) return m;
  auto s = spectral_loss(pred, target, cfg);
  return add(m, mul(s, Tensor<T>::scalar(static_cast<T>(cfg.lambda_spectral))));
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& prob, const Tensor<T>& label) {
  if (prob.shape() != label.shape())
    throw ShapeError("bce_loss: shape mismatch " + shape_str(prob.shape()) + " vs " +
                     shape_str(label.shape()));
  const T eps = static_cast<T>(1e-7);
  auto p = maximum(minimum(prob, Tensor<T>::scalar(T(1) - eps)), Tensor<T>::scalar(eps));
  auto one = Tensor<T>::scalar(T(1));
  auto pos = mul(label, log_op(p));
  auto negt = mul(sub(one, label), log_op(sub(one, p)));
  return neg(mean(add(pos, negt)));
}

template <typename T>
AdamState<T> make_adam(const std::vector<Tensor<T>>& params, AdamConfig cfg) {
  AdamState<T> st;
  st.config = cfg;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const auto& p : params) {
    st.m.emplace_back(p.size(), T(0));
    st.v.emplace_back(p.size(), T(0));
  }
  return st;
}

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state) {
  if (params.size() != state.m.size())
    throw ConfigError("adam_step: state does not match parameter list");
  ++state.step;
  const double b1 = state.config.beta1, b2 = state.config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const std::vector<T>* g = p.grad_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    T* w = p.mutable_data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g ? static_cast<double>((*g)[j]) : 0.0;
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / c1;
      const double vhat = vj / c2;
      w[j] = static_cast<T>(w[j] - state.config.lr * mhat /
                                       (std::sqrt(vhat) + state.config.eps));
    }
    p.zero_grad();
  }
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw ShapeError("auroc: scores and labels differ in length");
  std::size_t n_pos = 0, n_neg = 0;
  for (int l : labels) (l ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw NumericError("auroc: undefined, needs at least one positive and one negative");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });

  // Midranks over tie groups, then the rank-sum form of Mann-Whitney U.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]]) rank_sum_pos += midrank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

#define ESSM_LOSS_INSTANTIATE(T)                                                         \
  template Tensor<T> mse_loss<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> spectral_loss<T>(const Tensor<T>&, const Tensor<T>&,                \
                                      const LossConfig&);                                \
  template Tensor<T> combined_recon_loss<T>(const Tensor<T>&, const Tensor<T>&,          \
                                            const LossConfig&);                          \
  template Tensor<T> bce_loss<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template struct AdamState<T>;                                                          \
  template AdamState<T> make_adam<T>(const std::vector<Tensor<T>>&, AdamConfig);         \
  template void adam_step<T>(std::vector<Tensor<T>>&, AdamState<T>&);

ESSM_LOSS_INSTANTIATE(float)
ESSM_LOSS_INSTANTIATE(double)

#undef ESSM_LOSS_INSTANTIATE

}  // namespace essm::loss
