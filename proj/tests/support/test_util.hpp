#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "essm/rng.hpp"
#include "essm/tensor.hpp"

namespace essm::test {

inline TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD::from_data(std::move(shape), std::move(v));
}

inline TensorF random_tensor_f(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(shape_size(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return TensorF::from_data(std::move(shape), std::move(v));
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string worst;  // description of the worst coordinate
};

/// Central finite-difference check of reverse-mode gradients.
///
/// `loss_fn` must rebuild its graph from the leaves on every call; it is
/// evaluated under NoGradGuard for the difference quotients. Relative error
/// uses max(|fd|, |analytic|, floor) as denominator so near-zero pairs do
/// not blow up.
inline GradCheckResult grad_check(std::vector<TensorD> leaves,
                                  const std::function<TensorD()>& loss_fn,
                                  double h = 1e-5, std::size_t max_coords = 4096,
                                  double denom_floor = 1e-5) {
  for (auto& l : leaves) l.zero_grad();
  TensorD loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) analytic.push_back(l.grad().to_vector());

  GradCheckResult res;
  Rng pick(12345);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    const std::size_t n = leaf.size();
    std::vector<std::size_t> coords;
    if (n <= max_coords) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (std::size_t i = 0; i < max_coords; ++i) coords.push_back(pick.uniform_int(n));
    }
    for (auto c : coords) {
      double* slot = leaf.mutable_data() + c;
      const double orig = *slot;
      double fplus, fminus;
      {
        NoGradGuard ng;
        *slot = orig + h;
        fplus = loss_fn().item();
        *slot = orig - h;
        fminus = loss_fn().item();
        *slot = orig;
      }
      const double fd = (fplus - fminus) / (2.0 * h);
      const double an = analytic[li][c];
      const double denom = std::max({std::abs(fd), std::abs(an), denom_floor});
      const double rel = std::abs(fd - an) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "leaf " + std::to_string(li) + " coord " + std::to_string(c) +
                    " fd=" + std::to_string(fd) + " an=" + std::to_string(an);
      }
      ++res.checked;
    }
  }
  return res;
}

/// O(n^2) reference DFT of a real sequence zero-padded to `pad`.
inline std::vector<std::complex<double>> naive_dft(const std::vector<double>& x,
                                                   std::size_t pad) {
  std::vector<std::complex<double>> out(pad);
  for (std::size_t k = 0; k < pad; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t t = 0; t < x.size(); ++t) {
      const double ang = -2.0 * M_PI * static_cast<double>(k) *
                         static_cast<double>(t) / static_cast<double>(pad);
      acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace essm::test
