#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "essm/errors.hpp"
#include "essm/serialize.hpp"
#include "essm/tensor.hpp"
#include "support/test_util.hpp"

using namespace essm;
using essm::test::grad_check;
using essm::test::naive_dft;
using essm::test::random_tensor;

TEST_CASE("factories and basic accessors") {
  auto z = TensorD::zeros({2, 3});
  CHECK(z.size() == 6);
  CHECK(z.rank() == 2);
  auto s = TensorD::scalar(4.0);
  CHECK(s.rank() == 0);
  CHECK(s.item() == 4.0);
  CHECK_THROWS_AS(TensorD::from_data({2, 2}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("analytic point values: softplus, sigmoid") {
  CHECK(softplus(TensorD::scalar(0.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(sigmoid(TensorD::scalar(0.0)).item() == doctest::Approx(0.5).epsilon(1e-12));
  // overflow-safe branch
  CHECK(softplus(TensorD::scalar(1000.0)).item() == doctest::Approx(1000.0));
  CHECK(std::isfinite(softplus(TensorF::scalar(80.0f)).item()));
}

TEST_CASE("DFT of an impulse is flat (1 + 0i in every bin)") {
  auto x = TensorD::from_data({4}, {1.0, 0.0, 0.0, 0.0});
  auto spec = rdft(x, 4);
  CHECK(spec.shape() == Shape{3, 2});
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(spec[2 * k] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(spec[2 * k + 1] == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("backward: sum(x*x) has gradient 2x") {
  auto x = TensorD::leaf({3}, {1.0, 2.0, 3.0});
  auto loss = sum(mul(x, x));
  loss.backward();
  auto g = x.grad().to_vector();
  CHECK(g[0] == doctest::Approx(2.0));
  CHECK(g[1] == doctest::Approx(4.0));
  CHECK(g[2] == doctest::Approx(6.0));
}

TEST_CASE("backward: mean(matmul(A,B)) matches finite differences") {
  Rng rng(7);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 5}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  auto res = grad_check({a, b}, [&] { return mean(matmul(a, b)); });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("backward: leaf not reached by the loss has zero grad") {
  auto x = TensorD::leaf({2}, {1.0, 2.0});
  auto y = TensorD::leaf({2}, {5.0, 6.0});
  auto loss = sum(mul(x, x));
  loss.backward();
  CHECK_FALSE(y.has_grad());
  auto gy = y.grad().to_vector();
  CHECK(gy[0] == 0.0);
  CHECK(gy[1] == 0.0);
}

TEST_CASE("backward requires a scalar") {
  auto x = TensorD::leaf({2}, {1.0, 2.0});
  auto y = mul(x, x);
  CHECK_THROWS_AS(y.backward(), ShapeError);
}

TEST_CASE("shared input accumulates both consumer contributions") {
  auto x = TensorD::leaf({2}, {1.0, 2.0});
  auto p = mul(x, x);            // d/dx = 2x
  auto q = mul(x, TensorD::scalar(3.0));  // d/dx = 3
  auto loss = sum(add(p, q));
  loss.backward();
  auto g = x.grad().to_vector();
  CHECK(g[0] == doctest::Approx(2.0 * 1.0 + 3.0));
  CHECK(g[1] == doctest::Approx(2.0 * 2.0 + 3.0));
}

TEST_CASE("rfft_magnitude: zeros, on-bin cosine, naive-DFT oracle") {
  SUBCASE("zero input -> zero magnitudes") {
    auto m = rfft_magnitude(TensorD::zeros({64}), 64);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(m[i] == 0.0);
  }
  SUBCASE("on-bin cosine peaks at pad/2") {
    const std::size_t pad = 64, k = 5;
    std::vector<double> v(pad);
    for (std::size_t n = 0; n < pad; ++n)
      v[n] = std::cos(2.0 * M_PI * double(k) * double(n) / double(pad));
    auto m = rfft_magnitude(TensorD::from_data({pad}, v), pad);
    CHECK(m[k] == doctest::Approx(double(pad) / 2.0).epsilon(1e-9));
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (i != k) CHECK(std::abs(m[i]) < 1e-9);
    }
  }
  SUBCASE("random input matches naive O(n^2) DFT within 1e-9") {
    Rng rng(11);
    const std::size_t len = 100, pad = 128;
    std::vector<double> v(len);
    for (auto& x : v) x = rng.uniform(-1, 1);
    auto m = rfft_magnitude(TensorD::from_data({len}, v), pad);
    auto ref = naive_dft(v, pad);
    for (std::size_t kk = 0; kk <= pad / 2; ++kk)
      CHECK(m[kk] == doctest::Approx(std::abs(ref[kk])).epsilon(0).scale(1).epsilon(1e-12));
    for (std::size_t kk = 0; kk <= pad / 2; ++kk)
      CHECK(std::abs(m[kk] - std::abs(ref[kk])) < 1e-9);
  }
  SUBCASE("pad_to smaller than input fails") {
    CHECK_THROWS_AS(rfft_magnitude(TensorD::zeros({64}), 32), ShapeError);
    CHECK_THROWS_AS(rfft_magnitude(TensorD::zeros({64}), 100), ShapeError);
  }
}

TEST_CASE("rdft adjoint matches finite differences") {
  Rng rng(13);
  auto x = random_tensor({12}, rng);
  x.set_requires_grad(true);
  auto res = grad_check({x}, [&] { return sum(rfft_magnitude(x, 16)); });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("broadcasting then reducing over the broadcast axes is the identity") {
  Rng rng(17);
  auto x = random_tensor({3, 1, 4}, rng);
  auto big = broadcast_to(x, {5, 3, 6, 4});
  auto back = mean(sum(big, 2, true) / 6.0, 0, false);  // undo axis 2 and axis 0
  CHECK(back.shape() == Shape{3, 1, 4});
  CHECK(essm::test::max_abs_diff(back.to_vector(), x.to_vector()) < 1e-12);
}

TEST_CASE("elementwise broadcasting shapes and errors") {
  auto a = TensorD::from_data({2, 1}, {1.0, 2.0});
  auto b = TensorD::from_data({3}, {10.0, 20.0, 30.0});
  auto c = add(a, b);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c[0] == 11.0);
  CHECK(c[5] == 32.0);
  CHECK_THROWS_AS(add(TensorD::zeros({2}), TensorD::zeros({3})), ShapeError);
}

TEST_CASE("finite-difference sweep over smooth primitives") {
  Rng rng(23);
  // Points kept away from non-smooth loci (abs at 0, max ties).
  auto x = random_tensor({4, 5}, rng, 0.2, 1.5);
  x.set_requires_grad(true);
  const double tol = 1e-4;

  CHECK(grad_check({x}, [&] { return sum(exp_op(x)); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(log_op(x)); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(abs_op(x)); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(pow_op(x, 2.5)); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(sigmoid(x)); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(silu(x)); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(softplus(x)); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return mean(neg(x)); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(divide(TensorD::scalar(1.0), x)); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(mul(slice(x, 1, 1, 4), 2.0 * TensorD::ones({4, 3}))); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(transpose(x)); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(reshape(x, {20})); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(concat(std::vector<TensorD>{x, x}, 0)); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(broadcast_to(x, {2, 4, 5})); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(mean(x, 1, true)); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(max_reduce(x, 0).values); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(maximum(x, TensorD::full({4, 5}, 0.9))); }).max_rel_err < tol);
  CHECK(grad_check({x}, [&] { return sum(minimum(x, TensorD::full({4, 5}, 0.9))); }).max_rel_err < tol);
}

TEST_CASE("max reduction breaks ties at the lowest index") {
  auto x = TensorD::from_data({4}, {1.0, 7.0, 7.0, 2.0});
  auto r = max_reduce(x, 0);
  CHECK(r.values.item() == 7.0);
  CHECK(r.argmax[0] == 1);
}

TEST_CASE("comparison masks are 0/1 and carry no gradient") {
  auto a = TensorD::leaf({3}, {1.0, 5.0, 3.0});
  auto b = TensorD::from_data({3}, {2.0, 2.0, 3.0});
  auto m = greater(a, b);
  CHECK(m.to_vector() == std::vector<double>{0.0, 1.0, 0.0});
  CHECK_FALSE(m.requires_grad());
  CHECK(equal(a, b).to_vector() == std::vector<double>{0.0, 0.0, 1.0});
  CHECK(less(a, b).to_vector() == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("NoGradGuard suppresses graph recording") {
  auto x = TensorD::leaf({2}, {1.0, 2.0});
  NoGradGuard ng;
  auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("tensor serialization round-trips bit-exactly") {
  Rng rng(31);
  auto t = random_tensor({3, 7}, rng);
  std::stringstream ss;
  save_tensor(ss, t);
  auto back = load_tensor<double>(ss);
  CHECK(back.shape() == t.shape());
  CHECK(back.to_vector() == t.to_vector());

  SUBCASE("bad magic") {
    std::stringstream bad("XXXXjunkjunkjunk");
    CHECK_THROWS_AS(load_tensor<double>(bad), DataError);
  }
  SUBCASE("dtype mismatch") {
    std::stringstream ss2;
    save_tensor(ss2, TensorF::zeros({2}));
    CHECK_THROWS_AS(load_tensor<double>(ss2), DataError);
  }
  SUBCASE("truncation") {
    std::stringstream ss3;
    save_tensor(ss3, t);
    std::string buf = ss3.str();
    buf.resize(buf.size() / 2);
    std::stringstream ss4(buf);
    CHECK_THROWS_AS(load_tensor<double>(ss4), DataError);
  }
}

TEST_CASE("mutable_data is rejected on non-leaves") {
  auto x = TensorD::leaf({2}, {1.0, 2.0});
  auto y = mul(x, x);
  CHECK_THROWS_AS(y.mutable_data(), Error);
}
