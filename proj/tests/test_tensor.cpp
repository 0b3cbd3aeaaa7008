#include <doctest.h>

#include <cmath>
#include <random>

#include "gmgan/error.hpp"
#include "gmgan/tensor.hpp"
#include "gmgan/verify.hpp"
#include "oracles.hpp"

using namespace gmgan;

namespace {

Tensor rand_param(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::parameter(std::move(shape), std::move(v));
}

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("elementwise forward values") {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({2, 2}, {4, 3, 2, 1});
  CHECK(vals(a + b) == std::vector<double>{5, 5, 5, 5});
  CHECK(vals(a - b) == std::vector<double>{-3, -1, 1, 3});
  CHECK(vals(a * b) == std::vector<double>{4, 6, 6, 4});
  CHECK(vals(a / b) == std::vector<double>{0.25, 2.0 / 3.0, 1.5, 4});
  CHECK(vals(-a) == std::vector<double>{-1, -2, -3, -4});
  CHECK(vals(a * 2.0) == std::vector<double>{2, 4, 6, 8});
  CHECK(vals(relu(Tensor({3}, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});
  CHECK(vals(leaky_relu(Tensor({2}, {-1, 2}), 0.2)) == std::vector<double>{-0.2, 2});
  CHECK(vals(clamp(Tensor({3}, {-2, 0.5, 2}), -1, 1)) == std::vector<double>{-1, 0.5, 1});
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(sigmoid(Tensor::scalar(-800.0)).item() >= 0.0);
  CHECK(sigmoid(Tensor::scalar(800.0)).item() == 1.0);
}

TEST_CASE("single-element operands broadcast, others must match") {
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(vals(a + Tensor::scalar(1.0)) == std::vector<double>{2, 3, 4, 5, 6, 7});
  CHECK(vals(Tensor({1}, {2.0}) * a) == std::vector<double>{2, 4, 6, 8, 10, 12});
  CHECK_THROWS_AS(a + Tensor({3}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(a + Tensor({3, 2}, {1, 2, 3, 4, 5, 6}), ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("constructing with mismatched sizes fails") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
  CHECK(Tensor::scalar(3.0).rank() == 0);
  CHECK(Tensor::scalar(3.0).numel() == 1);
}

TEST_CASE("reductions and shape ops") {
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(sum(a).item() == 21);
  CHECK(mean(a).item() == 3.5);
  CHECK(vals(sum_axis(a, 0)) == std::vector<double>{5, 7, 9});
  CHECK(vals(sum_axis(a, 1)) == std::vector<double>{6, 15});
  CHECK(sum_axis(a, 1).shape() == Shape{2});
  CHECK(vals(transpose(a)) == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(vals(column(a, 1)) == std::vector<double>{2, 5});
  CHECK(column(a, 1).shape() == Shape{2, 1});
  CHECK(vals(slice_rows(a, 1, 2)) == std::vector<double>{4, 5, 6});
  CHECK(vals(broadcast_rows(Tensor({2}, {1, 2}), 2)) == std::vector<double>{1, 2, 1, 2});
  CHECK(vals(broadcast_cols(Tensor({2}, {1, 2}), 2)) == std::vector<double>{1, 1, 2, 2});
  CHECK(vals(stack_cols({Tensor({2}, {1, 2}), Tensor({2}, {3, 4})})) == std::vector<double>{1, 3, 2, 4});
  CHECK(reshape(a, {3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeError);
  CHECK(vals(diag(Tensor({2, 2}, {1, 2, 3, 4}))) == std::vector<double>{1, 4});
  CHECK(vals(matmul(a, transpose(a))) == std::vector<double>{14, 32, 32, 77});
  CHECK(vals(affine(a, Tensor({3, 1}, {1, 1, 1}), Tensor({1}, {0.5}))) == std::vector<double>{6.5, 15.5});
}

TEST_CASE("softmax and logsumexp rows") {
  std::mt19937_64 rng(3);
  const Tensor x = rand_param(rng, {5, 4}, -30.0, 30.0);
  const Tensor s = softmax_rows(x);
  const Tensor l = logsumexp_rows(x);
  for (std::size_t i = 0; i < 5; ++i) {
    double row = 0.0, mx = -1e300;
    for (std::size_t j = 0; j < 4; ++j) {
      row += s.at(i, j);
      mx = std::max(mx, x.at(i, j));
    }
    CHECK(std::abs(row - 1.0) <= 1e-12);
    double acc = 0.0;
    for (std::size_t j = 0; j < 4; ++j) acc += std::exp(x.at(i, j) - mx);
    CHECK(l.values()[i] == doctest::Approx(mx + std::log(acc)).epsilon(1e-14));
  }
  // Large inputs stay finite.
  CHECK(std::isfinite(logsumexp_rows(Tensor({1, 2}, {1000, 1000})).item()));
}

TEST_CASE("spd inverse and log-determinant") {
  const Tensor s({2, 2}, {4, 1, 1, 3});
  const Tensor inv = inverse_spd(s);
  const Tensor eye = matmul(s, inv);
  CHECK(eye.at(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(eye.at(0, 1)) < 1e-14);
  CHECK(logdet_spd(s).item() == doctest::Approx(std::log(11.0)).epsilon(1e-14));
  CHECK_THROWS_AS(inverse_spd(Tensor({2, 2}, {1, 2, 2, 1})), NumericError);
  CHECK_THROWS_AS(logdet_spd(Tensor({2, 2}, {-1, 0, 0, 1})), NumericError);
}

TEST_CASE("non-finite forward results raise numeric errors") {
  CHECK_THROWS_AS(log(Tensor({2}, {1.0, 0.0})), NumericError);
  CHECK_THROWS_AS(log(Tensor({1}, {-1.0})), NumericError);
  CHECK_THROWS_AS(exp(Tensor({1}, {1000.0})), NumericError);
  CHECK_THROWS_AS(Tensor({1}, {1.0}) / Tensor({1}, {0.0}), NumericError);
}

TEST_CASE("backward requires a scalar and accumulates into leaves") {
  Tensor w = Tensor::parameter({2}, {1.0, 2.0});
  CHECK_THROWS_AS((w * 2.0).backward(), ShapeError);
  sum(w * w).backward();
  CHECK(vals(Tensor({2}, {w.grad()[0], w.grad()[1]})) == std::vector<double>{2, 4});
  sum(w * w).backward();
  CHECK(w.grad()[0] == 4.0);
  w.zero_grad();
  CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("shared subexpressions receive gradient from every use") {
  Tensor x = Tensor::parameter({}, {3.0});
  const Tensor y = x * x;
  (y + y * x).backward();  // d/dx (x^2 + x^3) = 2x + 3x^2
  CHECK(x.grad()[0] == doctest::Approx(6.0 + 27.0));
}

TEST_CASE("no-grad guard and frozen leaves stop the graph") {
  Tensor w = Tensor::parameter({2}, {1.0, 2.0});
  Tensor frozen = Tensor::parameter({2}, {3.0, 4.0});
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    CHECK_FALSE((w * 2.0).requires_grad());
  }
  CHECK(grad_enabled());
  frozen.set_requires_grad(false);
  sum(w * frozen).backward();
  CHECK(w.grad()[0] == 3.0);
  CHECK(frozen.grad().empty());
  CHECK_THROWS((w * 2.0).set_requires_grad(false));
  CHECK_FALSE(w.detach().requires_grad());
  Tensor c = w.clone();
  c.mutable_values()[0] = 9.0;
  CHECK(w.values()[0] == 1.0);
  CHECK(c.requires_grad());
}

TEST_CASE("distances") {
  const Tensor a({2, 2}, {0, 0, 1, 1});
  const Tensor b({2, 2}, {3, 4, 1, 1});
  CHECK(l1_distance(a, b).item() == 3.5);
  CHECK(l2_distance(a, b).item() == 2.5);
  CHECK(vals(row_l2_distance(a, b)) == std::vector<double>{5, 0});
  // Rank-1 inputs count as one sample.
  CHECK(l2_distance(Tensor({2}, {0, 0}), Tensor({2}, {3, 4})).item() == 5.0);
  // Zero distance has a zero (sub)gradient rather than NaN.
  Tensor p = Tensor::parameter({1, 2}, {1, 1});
  l2_distance(p, Tensor({1, 2}, {1, 1})).backward();
  CHECK(p.grad()[0] == 0.0);
  p.zero_grad();
  l1_distance(p, Tensor({1, 2}, {1, 1})).backward();
  CHECK(p.grad()[1] == 0.0);
}

TEST_CASE("analytic gradients match an independent finite-difference oracle") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor x = rand_param(rng, {4, 3});
    Tensor w = rand_param(rng, {3, 2});
    Tensor b = rand_param(rng, {2});
    const auto f = [](const std::vector<Tensor>& in) {
      const Tensor h = tanh(affine(in[0], in[1], in[2]));
      return sum(logsumexp_rows(h * 3.0)) + mean(square(softmax_rows(h)));
    };
    CHECK(oracle::max_fd_error(f, {x, w, b}) < 1e-7);

    Tensor s = rand_param(rng, {3, 3});
    {
      auto v = s.mutable_values();
      // Make it comfortably positive definite.
      const double off = (v[1] + v[3]) / 2.0;
      v[1] = v[3] = off;
      v[0] += 3.0;
      v[4] += 3.0;
      v[8] += 3.0;
    }
    const auto g = [](const std::vector<Tensor>& in) {
      return logdet_spd(in[0]) + sum(inverse_spd(in[0]) * in[0] * in[0]);
    };
    CHECK(oracle::max_fd_error(g, {s}) < 1e-7);
  }
}

TEST_CASE("library gradient checker agrees with the oracle and detects corruption") {
  std::mt19937_64 rng(5);
  for (const auto& c : gradient_cases()) {
    CAPTURE(c.name);
    auto p = c.make(rng);
    const double lib = gradient_check(p.f, p.inputs);
    const double ref = oracle::max_fd_error(p.f, p.inputs);
    CHECK(lib <= c.tolerance);
    CHECK(ref <= c.tolerance);
  }
  detail::set_gradient_fault("affine", 1.01);
  Tensor x = rand_param(rng, {3, 2});
  Tensor w = rand_param(rng, {2, 2});
  Tensor b = rand_param(rng, {2});
  const double err = gradient_check([](const std::vector<Tensor>& in) { return sum(affine(in[0], in[1], in[2])); },
                                    {x, w, b});
  detail::clear_gradient_fault();
  CHECK(err > 1e-3);
}
