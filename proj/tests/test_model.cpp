#include <doctest.h>

#include <cmath>

#include "gmgan/error.hpp"
#include "gmgan/model.hpp"

using namespace gmgan;

namespace {

ArchConfig small_arch() {
  ArchConfig a;
  a.input_dim = 12;
  a.encoder_hidden = {7, 5};
  a.latent_dim = 3;
  a.disc_hidden = {6};
  a.est_hidden = {4};
  a.mixtures = 3;
  return a;
}

void zero_all(const NetworkParams& p) {
  for (auto& [name, t] : p.named_parameters()) {
    auto v = const_cast<Tensor&>(t).mutable_values();
    std::fill(v.begin(), v.end(), 0.0);
  }
}

Tensor batch(std::size_t n, std::size_t d, double base = 0.1) {
  std::vector<double> v(n * d);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = base * std::sin(static_cast<double>(i));
  return Tensor({n, d}, v);
}

}  // namespace

TEST_CASE("zero weights give zero latents and an undecided discriminator") {
  const NetworkParams p = init_params(small_arch(), 1);
  zero_all(p);
  const Tensor x = batch(4, 12);
  const Tensor z = encode(p, x);
  CHECK(z.shape() == Shape{4, 3});
  const Tensor xr = decode(p, z), d = discriminate(p, x), g = membership(p, z);
  for (double v : z.values()) CHECK(v == 0.0);
  for (double v : xr.values()) CHECK(v == 0.0);
  for (double v : d.values()) CHECK(v == 0.5);
  for (double v : g.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("one mixture gives membership one everywhere") {
  ArchConfig a = small_arch();
  a.mixtures = 1;
  const NetworkParams p = init_params(a, 2);
  const Tensor g = membership(p, batch(5, 3, 4.0));
  for (double v : g.values()) CHECK(v == 1.0);
}

TEST_CASE("memberships are row distributions") {
  const NetworkParams p = init_params(small_arch(), 3);
  const Tensor g = membership(p, batch(6, 3, 50.0));
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(g.at(i, k) >= 0.0);
      s += g.at(i, k);
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("a single identity layer passes its input through") {
  Mlp m({3, 3}, Activation::leaky_relu, Activation::identity);
  auto w = m.layers()[0].weight.mutable_values();
  w[0] = w[4] = w[8] = 1.0;
  const Tensor x({2, 3}, {1, -2, 3, 0.5, 0, -7});
  const Tensor y = m.forward(x);
  CHECK(std::vector<double>(y.values().begin(), y.values().end()) ==
        std::vector<double>(x.values().begin(), x.values().end()));
}

TEST_CASE("identical rows map to identical outputs") {
  const NetworkParams p = init_params(small_arch(), 4);
  std::vector<double> v;
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 12; ++j) v.push_back(0.3 * j - 1.0);
  const Tensor x({3, 12}, v);
  for (const Tensor& out : {encode(p, x), discriminate(p, x), decode(p, encode(p, x))}) {
    const std::size_t c = out.dim(1);
    for (std::size_t r = 1; r < 3; ++r)
      for (std::size_t j = 0; j < c; ++j) CHECK(out.at(r, j) == out.at(0, j));
  }
}

TEST_CASE("initialisation is seeded and Xavier bounded") {
  const ArchConfig a = small_arch();
  const NetworkParams p = init_params(a, 7), q = init_params(a, 7), r = init_params(a, 8);
  const auto pn = p.named_parameters(), qn = q.named_parameters(), rn = r.named_parameters();
  REQUIRE(pn.size() == qn.size());
  bool differs = false;
  for (std::size_t i = 0; i < pn.size(); ++i) {
    CHECK(pn[i].first == qn[i].first);
    const auto a1 = pn[i].second.values(), b1 = qn[i].second.values(), c1 = rn[i].second.values();
    CHECK(std::equal(a1.begin(), a1.end(), b1.begin()));
    if (!std::equal(a1.begin(), a1.end(), c1.begin())) differs = true;
    const Tensor& t = pn[i].second;
    if (t.rank() == 2) {
      const double lim = std::sqrt(6.0 / static_cast<double>(t.dim(0) + t.dim(1)));
      for (double w : a1) CHECK(std::abs(w) <= lim);
    } else {
      for (double b : a1) CHECK(b == 0.0);
    }
  }
  CHECK(differs);
  CHECK(pn.front().first == "encoder.0.weight");
  CHECK(pn.back().first == "estimator.1.bias");
  // 3 layers for each of encoder, decoder and aux encoder, 2 each for D and the estimator.
  CHECK(pn.size() == 2 * (3 + 3 + 3 + 2 + 2));
  CHECK(p.generator_parameters().size() == 2 * (3 + 3 + 3 + 2));
  CHECK(p.discriminator_parameters().size() == 4);
}

TEST_CASE("shape contracts hold across architectures") {
  ArchConfig tiny = small_arch();
  ArchConfig flat;
  flat.input_dim = 16;
  flat.encoder_hidden = {};
  flat.latent_dim = 2;
  flat.disc_hidden = {};
  flat.est_hidden = {};
  flat.mixtures = 2;
  ArchConfig deep;
  deep.input_dim = 64;
  deep.encoder_hidden = {32, 16, 8};
  deep.latent_dim = 4;
  deep.disc_hidden = {16, 8};
  deep.est_hidden = {10, 6};
  deep.mixtures = 5;
  for (const ArchConfig& a : {tiny, flat, deep}) {
    const NetworkParams p = init_params(a, 11);
    for (std::size_t n : {1u, 5u}) {
      const Tensor x = batch(n, a.input_dim);
      const Tensor z = encode(p, x);
      CHECK(z.shape() == Shape{n, a.latent_dim});
      const Tensor xr = decode(p, z);
      CHECK(xr.shape() == x.shape());
      for (double v : xr.values()) CHECK(std::abs(v) <= a.decoder_scale);
      CHECK(encode_aux(p, xr).shape() == z.shape());
      CHECK(discriminate(p, x).shape() == Shape{n, 1});
      CHECK(membership(p, z).shape() == Shape{n, a.mixtures});
    }
    CHECK_THROWS_AS(encode(p, batch(2, a.input_dim + 1)), ShapeError);
    CHECK_THROWS_AS(decode(p, batch(2, a.latent_dim + 1)), ShapeError);
    CHECK_THROWS_AS(membership(p, Tensor({a.latent_dim}, std::vector<double>(a.latent_dim))), ShapeError);
  }
}

TEST_CASE("architecture validation and serialisation") {
  ArchConfig a = small_arch();
  CHECK(ArchConfig::from_map(a.to_map()).to_map() == a.to_map());
  ArchConfig bad = a;
  bad.latent_dim = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidConfigError);
  bad = a;
  bad.decoder_scale = 0.0;
  CHECK_THROWS_AS(init_params(bad, 1), InvalidConfigError);
  bad = a;
  bad.encoder_hidden = {4, 0};
  CHECK_THROWS_AS(bad.validate(), InvalidConfigError);
}

TEST_CASE("clone is deep and freezing stops gradients") {
  const NetworkParams p = init_params(small_arch(), 5);
  NetworkParams c = p.clone();
  c.encoder.layers()[0].weight.mutable_values()[0] += 1.0;
  CHECK(p.encoder.layers()[0].weight.values()[0] != c.encoder.layers()[0].weight.values()[0]);

  c.discriminator.set_trainable(false);
  const Tensor x = batch(3, 12);
  sum(discriminate(c, decode(c, encode(c, x)))).backward();
  for (const Tensor& t : c.discriminator_parameters()) CHECK(t.grad().empty());
  CHECK_FALSE(c.encoder.layers()[0].weight.grad().empty());
}
