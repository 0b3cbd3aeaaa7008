#include <doctest.h>

#include <cmath>
#include <random>

#include "gmgan/error.hpp"
#include "gmgan/losses.hpp"
#include "oracles.hpp"

using namespace gmgan;

TEST_CASE("reconstruction losses by hand") {
  const Tensor x({2, 3}, {0, 0, 0, 1, 1, 1});
  const Tensor y({2, 3}, {1, -2, 0, 1, 1, 4});
  CHECK(image_reconstruction_loss(x, y).item() == 3.0);  // (3 + 3) / 2
  const Tensor z({2, 2}, {0, 0, 1, 1});
  const Tensor zr({2, 2}, {3, 4, 1, 1});
  CHECK(latent_representation_loss(z, zr).item() == 2.5);
  CHECK(image_reconstruction_loss(x, x).item() == 0.0);
  CHECK_THROWS_AS(image_reconstruction_loss(x, z), ShapeError);
}

TEST_CASE("adversarial losses by hand") {
  const Tensor half({2, 1}, {0.5, 0.5});
  CHECK(generator_adversarial_loss(half).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(discriminator_adversarial_loss(half, half).item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
  const Tensor real({2, 1}, {0.9, 0.8});
  const Tensor fake({2, 1}, {0.1, 0.3});
  const double d = -(std::log(0.9) + std::log(0.8)) / 2.0 - (std::log(0.9) + std::log(0.7)) / 2.0;
  const double g = -(std::log(0.1) + std::log(0.3)) / 2.0;
  const AdversarialLosses both = adversarial_losses(real, fake);
  CHECK(both.discriminator.item() == doctest::Approx(d).epsilon(1e-14));
  CHECK(both.generator.item() == doctest::Approx(g).epsilon(1e-14));
}

TEST_CASE("saturated probabilities stay finite") {
  const Tensor zeros({3, 1}, {0, 0, 0});
  const Tensor ones({3, 1}, {1, 1, 1});
  const double g = generator_adversarial_loss(zeros).item();
  CHECK(std::isfinite(g));
  CHECK(g == doctest::Approx(-std::log(kProbClamp)));
  CHECK(std::isfinite(discriminator_adversarial_loss(zeros, ones).item()));
  CHECK(discriminator_adversarial_loss(ones, zeros).item() == doctest::Approx(-2.0 * std::log1p(-kProbClamp)));
  CHECK_THROWS_AS(generator_adversarial_loss(Tensor({1, 1}, {std::nan("")})), NumericError);
}

TEST_CASE("weighted total equals the sum of weighted terms") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-10.0, 10.0), w(0.0, 5.0);
  for (int rep = 0; rep < 100; ++rep) {
    const LossBreakdown b{u(rng), u(rng), u(rng), u(rng), u(rng), 0.0};
    const LossWeights lw{w(rng), w(rng), w(rng), w(rng)};
    const double expect = lw.w_i * b.l_irec + lw.w_a * b.l_adv_g + lw.w_z * b.l_zrec + lw.w_e * b.l_es;
    CHECK(std::abs(total_generator_loss(b, lw) - expect) <= 1e-12 * std::max(1.0, std::abs(expect)));
    const Tensor t = total_generator_loss(Tensor::scalar(b.l_irec), Tensor::scalar(b.l_adv_g),
                                          Tensor::scalar(b.l_zrec), Tensor::scalar(b.l_es), lw);
    CHECK(std::abs(t.item() - expect) <= 1e-12 * std::max(1.0, std::abs(expect)));
  }
  const LossWeights d;
  CHECK(d.w_i == 1.0);
  CHECK(d.w_a == 5.0);
  CHECK(d.w_z == 1.0);
  CHECK(d.w_e == 0.05);
}

TEST_CASE("weights must be finite and nonnegative") {
  CHECK_NOTHROW(LossWeights{}.validate());
  CHECK_NOTHROW((LossWeights{0, 0, 0, 0}.validate()));
  CHECK_THROWS_AS((LossWeights{-1, 1, 1, 1}.validate()), InvalidConfigError);
  CHECK_THROWS_AS((LossWeights{1, 1, std::nan(""), 1}.validate()), InvalidConfigError);
  CHECK_THROWS_AS((LossWeights{1, 1, 1, INFINITY}.validate()), InvalidConfigError);
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.05, 0.95), v(-2.0, 2.0);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> a(6), b(6), c(6), e(6);
    for (auto* vec : {&a, &b})
      for (double& x : *vec) x = u(rng);
    for (auto* vec : {&c, &e})
      for (double& x : *vec) x = v(rng);
    Tensor pr = Tensor::parameter({6, 1}, a), pf = Tensor::parameter({6, 1}, b);
    Tensor x = Tensor::parameter({2, 3}, c), y = Tensor::parameter({2, 3}, e);
    CHECK(oracle::max_fd_error([](const std::vector<Tensor>& in) { return discriminator_adversarial_loss(in[0], in[1]); },
                               {pr, pf}) < 1e-6);
    CHECK(oracle::max_fd_error([](const std::vector<Tensor>& in) { return generator_adversarial_loss(in[0]); }, {pf}) <
          1e-6);
    CHECK(oracle::max_fd_error([](const std::vector<Tensor>& in) { return image_reconstruction_loss(in[0], in[1]); },
                               {x, y}) < 1e-6);
    CHECK(oracle::max_fd_error([](const std::vector<Tensor>& in) { return latent_representation_loss(in[0], in[1]); },
                               {x, y}) < 1e-6);
  }
}
