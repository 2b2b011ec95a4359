#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "essm/errors.hpp"
#include "essm/losses.hpp"
#include "support/test_util.hpp"

using namespace essm;
using namespace essm::loss;
using essm::test::grad_check;
using essm::test::random_tensor;

namespace {

/// O(n^2) pair-counting AUROC oracle, ties 0.5.
double auroc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      ++pairs;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("mse_loss: trivial values and scalar-loop oracle") {
  Rng rng(201);
  auto t = random_tensor({3, 4}, rng);
  CHECK(mse_loss(t, t).item() == 0.0);
  auto shifted = add(t, TensorD::scalar(1.0));
  CHECK(mse_loss(shifted, t).item() == doctest::Approx(1.0).epsilon(1e-12));
  auto p = random_tensor({3, 4}, rng);
  double acc = 0;
  for (std::size_t i = 0; i < t.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  CHECK(std::abs(mse_loss(p, t).item() - acc / 12.0) < 1e-9);
  CHECK_THROWS_AS(mse_loss(TensorD::zeros({2}), TensorD::zeros({3})), ShapeError);
}

TEST_CASE("spectral_loss: zero for identical inputs; single-bin closed form") {
  const std::size_t pad = 256;
  auto cfg = LossConfig::with_pad(pad);
  Rng rng(203);
  auto x = random_tensor({2, 3, pad}, rng);
  CHECK(spectral_loss(x, x, cfg).item() == 0.0);

  // zero prediction vs a unit on-bin cosine target: the target spectrum has
  // a single magnitude pad/2 at bin k, so the loss is (pad/2*scale)^2/(pad/2+1).
  std::vector<double> cosv(pad);
  const std::size_t k = 9;
  for (std::size_t n = 0; n < pad; ++n)
    cosv[n] = std::cos(2.0 * M_PI * double(k) * double(n) / double(pad));
  auto target = TensorD::from_data({1, 1, pad}, cosv);
  const double expect = std::pow((pad / 2.0) * cfg.spectral_scale, 2) / (pad / 2.0 + 1.0);
  CHECK(spectral_loss(TensorD::zeros({1, 1, pad}), target, cfg).item() ==
        doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("spectral_loss: gradient matches finite differences") {
  Rng rng(207);
  auto cfg = LossConfig::with_pad(32);
  auto x = random_tensor({2, 2, 20}, rng);
  auto t = random_tensor({2, 2, 20}, rng);
  x.set_requires_grad(true);
  CHECK(grad_check({x}, [&] { return spectral_loss(x, t, cfg); }).max_rel_err < 1e-4);
}

TEST_CASE("spectral_loss: invariant to circular shifts of on-bin sinusoids") {
  const std::size_t pad = 128;
  auto cfg = LossConfig::with_pad(pad);
  std::vector<double> a(pad), b(pad);
  const std::size_t k = 7, shift = 13;
  for (std::size_t n = 0; n < pad; ++n) {
    a[n] = std::sin(2.0 * M_PI * double(k) * double(n) / double(pad));
    b[n] = std::sin(2.0 * M_PI * double(k) * double((n + shift) % pad) / double(pad));
  }
  auto loss = spectral_loss(TensorD::from_data({1, 1, pad}, a),
                            TensorD::from_data({1, 1, pad}, b), cfg);
  CHECK(loss.item() < 1e-18);
}

TEST_CASE("combined_recon_loss: additivity, lambda = 0, and non-negativity") {
  Rng rng(211);
  auto cfg = LossConfig::with_pad(64);
  auto p = random_tensor({1, 2, 50}, rng);
  auto t = random_tensor({1, 2, 50}, rng);
  const double mse = mse_loss(p, t).item();
  const double spec = spectral_loss(p, t, cfg).item();
  CHECK(std::abs(combined_recon_loss(p, t, cfg).item() - (mse + spec)) < 1e-12);
  cfg.lambda_spectral = 0.0;
  CHECK(combined_recon_loss(p, t, cfg).item() == doctest::Approx(mse).epsilon(1e-15));
  cfg.lambda_spectral = 2.5;
  CHECK(std::abs(combined_recon_loss(p, t, cfg).item() - (mse + 2.5 * spec)) < 1e-12);
  CHECK(combined_recon_loss(p, t, cfg).item() >= 0.0);
  CHECK(combined_recon_loss(t, t, cfg).item() < 1e-9);
}

TEST_CASE("bce_loss: trivial values and scalar oracle") {
  auto half = TensorD::full({4}, 0.5);
  auto y = TensorD::from_data({4}, {1.0, 0.0, 1.0, 0.0});
  CHECK(bce_loss(half, y).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  auto nearly = TensorD::from_data({2}, {1.0 - 1e-9, 1e-9});
  auto y2 = TensorD::from_data({2}, {1.0, 0.0});
  CHECK(bce_loss(nearly, y2).item() < 1e-6);

  Rng rng(213);
  std::vector<double> pv(8), yv(8);
  for (std::size_t i = 0; i < 8; ++i) {
    pv[i] = rng.uniform(0.05, 0.95);
    yv[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  double acc = 0;
  for (std::size_t i = 0; i < 8; ++i)
    acc += yv[i] * std::log(pv[i]) + (1 - yv[i]) * std::log(1 - pv[i]);
  acc = -acc / 8;
  CHECK(std::abs(bce_loss(TensorD::from_data({8}, pv), TensorD::from_data({8}, yv)).item() -
                 acc) < 1e-9);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  auto w = TensorD::leaf({3}, {1.0, -2.0, 3.0});
  std::vector<TensorD> params{w};
  auto st = make_adam(params);
  adam_step(params, st);  // no grad accumulated
  CHECK(w.to_vector() == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam: single step matches a scalar reference implementation") {
  auto w = TensorD::leaf({2}, {0.5, -0.25});
  std::vector<TensorD> params{w};
  AdamConfig cfg;
  auto st = make_adam(params, cfg);
  auto loss = sum(mul(w, TensorD::from_data({2}, {2.0, -3.0})));
  loss.backward();  // grad = [2, -3]
  adam_step(params, st);
  // reference: m = (1-b1)g, v = (1-b2)g^2, mhat = g, vhat = g^2
  // delta = -lr * g / (|g| + eps)
  const double d0 = -cfg.lr * 2.0 / (std::sqrt(4.0 * (1 - cfg.beta2) / (1 - cfg.beta2)) + cfg.eps);
  const double d1 = -cfg.lr * -3.0 / (std::sqrt(9.0) + cfg.eps);
  CHECK(w[0] == doctest::Approx(0.5 + d0).epsilon(1e-9));
  CHECK(w[1] == doctest::Approx(-0.25 + d1).epsilon(1e-9));
}

TEST_CASE("adam: quadratic bowl converges") {
  auto w = TensorD::leaf({1}, {5.0});
  std::vector<TensorD> params{w};
  AdamConfig cfg;
  cfg.lr = 1e-2;
  auto st = make_adam(params, cfg);
  for (int i = 0; i < 2000; ++i) {
    auto loss = sum(mul(w, w));
    loss.backward();
    adam_step(params, st);
  }
  CHECK(std::abs(w[0]) < 1e-3);
}

TEST_CASE("auroc: hand cases") {
  CHECK(auroc({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0}) == doctest::Approx(1.0));
  CHECK(auroc({0.8, 0.4, 0.6, 0.2}, {1, 1, 0, 0}) == doctest::Approx(0.75));
  CHECK(auroc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {1, 1}), NumericError);
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {0, 0}), NumericError);
}

TEST_CASE("auroc: rank-sum equals O(n^2) pair counting on 500 random instances with ties") {
  Rng rng(223);
  for (int inst = 0; inst < 500; ++inst) {
    const std::size_t n = 2 + rng.uniform_int(40);
    std::vector<double> s(n);
    std::vector<int> y(n);
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      // quantized scores force plenty of exact ties
      s[i] = std::round(rng.uniform(0, 1) * 8.0) / 8.0;
      y[i] = rng.bernoulli(0.4) ? 1 : 0;
      (y[i] ? has_pos : has_neg) = true;
    }
    if (!has_pos) y[0] = 1;
    if (!has_neg) y[n - 1] = 0;
    if (y[0] == 1 && y[n - 1] == 1 && n == 2) y[n - 1] = 0;
    CHECK(auroc(s, y) == doctest::Approx(auroc_oracle(s, y)).epsilon(1e-12));
  }
}

TEST_CASE("auroc: invariant under strictly monotone transforms") {
  Rng rng(227);
  std::vector<double> s(30);
  std::vector<int> y(30);
  for (std::size_t i = 0; i < 30; ++i) {
    s[i] = rng.uniform(-2, 2);
    y[i] = i % 3 == 0 ? 1 : 0;
  }
  const double base = auroc(s, y);
  std::vector<double> expd(30), affine(30);
  for (std::size_t i = 0; i < 30; ++i) {
    expd[i] = std::exp(s[i]);
    affine[i] = 7.0 * s[i] - 3.0;
  }
  CHECK(auroc(expd, y) == doctest::Approx(base).epsilon(1e-12));
  CHECK(auroc(affine, y) == doctest::Approx(base).epsilon(1e-12));
}
