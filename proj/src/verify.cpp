#include "gmgan/verify.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "gmgan/error.hpp"
#include "gmgan/evaluation.hpp"
#include "gmgan/gmm.hpp"
#include "gmgan/losses.hpp"
#include "gmgan/model.hpp"
#include "gmgan/random.hpp"

namespace gmgan {

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::string VerifyReport::to_string() const {
  std::string out;
  char line[256];
  std::size_t failed = 0;
  for (const auto& c : checks) {
    std::snprintf(line, sizeof line, "%-4s %-44s max_err %.3e  tol %.0e  n=%zu\n", c.passed ? "ok" : "FAIL",
                  c.name.c_str(), c.max_error, c.tolerance, c.instances);
    out += line;
    if (!c.passed) ++failed;
  }
  std::snprintf(line, sizeof line, "%zu checks, %zu failed\n", checks.size(), failed);
  out += line;
  return out;
}

double gradient_check(const ScalarFn& f, std::vector<Tensor> inputs, double h) {
  for (auto& t : inputs) {
    if (!t.requires_grad()) throw InvalidInputError("gradient_check: every input must require a gradient");
    t.zero_grad();
  }
  f(inputs).backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) {
    const auto g = t.grad();
    analytic.emplace_back(g.size() == t.numel() ? std::vector<double>(g.begin(), g.end())
                                                : std::vector<double>(t.numel(), 0.0));
  }
  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double v = values[i];
      values[i] = v + h;
      const double fp = f(inputs).item();
      values[i] = v - h;
      const double fm = f(inputs).item();
      values[i] = v;
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

namespace {

using Rng = std::mt19937_64;

constexpr double kGradTol = 1e-5;
constexpr double kMixtureGradTol = 1e-4;

std::vector<double> uniform_values(Rng& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

Tensor param(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const auto n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), uniform_values(rng, n, lo, hi));
}

/// Magnitudes in [lo, hi] with random sign, keeping clear of kinks at zero.
Tensor param_away(Rng& rng, Shape shape, double lo = 0.2, double hi = 1.5) {
  auto v = uniform_values(rng, shape_numel(shape), lo, hi);
  std::bernoulli_distribution sign(0.5);
  for (double& x : v) x = sign(rng) ? x : -x;
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor constant(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), uniform_values(rng, n, lo, hi));
}

Tensor spd_param(Rng& rng, std::size_t d) {
  Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d),
                                                   [&rng]() { return std::uniform_real_distribution<double>(-1, 1)(rng); });
  Eigen::MatrixXd s = a * a.transpose() + static_cast<double>(d) * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  std::vector<double> v(d * d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] = s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return Tensor::parameter({d, d}, std::move(v));
}

/// Random projection to a scalar, so every output element contributes.
Tensor project(const Tensor& y, const Tensor& weights) {
  if (y.numel() == 1) return sum(y);
  return sum(reshape(y, {y.numel()}) * weights);
}

using Case = GradientProblem;
using GradSpec = GradientCase;

/// Wraps f(inputs) -> tensor into a random scalar projection.
Case projected(Rng& rng, std::vector<Tensor> inputs, std::function<Tensor(const std::vector<Tensor>&)> op) {
  const Tensor probe = [&] {
    NoGradGuard no_grad;
    return op(inputs);
  }();
  const Tensor w({probe.numel()}, uniform_values(rng, probe.numel(), -1.0, 1.0));
  return {std::move(inputs), [op, w](const std::vector<Tensor>& in) { return project(op(in), w); }};
}

std::vector<GradSpec> op_specs() {
  using V = const std::vector<Tensor>&;
  std::vector<GradSpec> s;
  auto unary = [&s](std::string name, std::function<Tensor(const Tensor&)> op,
                    std::function<Tensor(Rng&)> make_input) {
    s.push_back({"grad: " + name, kGradTol, [op, make_input](Rng& rng) {
                   return projected(rng, {make_input(rng)}, [op](V in) { return op(in[0]); });
                 }});
  };
  auto binary = [&s](std::string name, std::function<Tensor(const Tensor&, const Tensor&)> op,
                     std::function<Tensor(Rng&)> make_a, std::function<Tensor(Rng&)> make_b) {
    s.push_back({"grad: " + name, kGradTol, [op, make_a, make_b](Rng& rng) {
                   Tensor a = make_a(rng);
                   Tensor b = make_b(rng);
                   return projected(rng, {a, b}, [op](V in) { return op(in[0], in[1]); });
                 }});
  };
  const auto m34 = [](Rng& r) { return param(r, {3, 4}); };
  const auto away34 = [](Rng& r) { return param_away(r, {3, 4}); };
  const auto pos34 = [](Rng& r) { return param(r, {3, 4}, 0.3, 2.0); };

  binary("add", [](auto& a, auto& b) { return a + b; }, m34, m34);
  binary("add (single-element operand)", [](auto& a, auto& b) { return a + b; }, m34,
         [](Rng& r) { return param(r, {}); });
  binary("sub", [](auto& a, auto& b) { return a - b; }, m34, m34);
  binary("mul", [](auto& a, auto& b) { return a * b; }, m34, m34);
  binary("mul (single-element operand)", [](auto& a, auto& b) { return a * b; },
         [](Rng& r) { return param(r, {1}); }, m34);
  binary("div", [](auto& a, auto& b) { return a / b; }, m34, away34);
  unary("neg", [](auto& x) { return -x; }, m34);
  unary("exp", [](auto& x) { return exp(x); }, m34);
  unary("log", [](auto& x) { return log(x); }, pos34);
  unary("abs", [](auto& x) { return abs(x); }, away34);
  unary("square", [](auto& x) { return square(x); }, m34);
  unary("sqrt", [](auto& x) { return sqrt(x); }, pos34);
  unary("reciprocal", [](auto& x) { return reciprocal(x); }, away34);
  unary("relu", [](auto& x) { return relu(x); }, away34);
  unary("leaky_relu", [](auto& x) { return leaky_relu(x, 0.2); }, away34);
  unary("tanh", [](auto& x) { return tanh(x); }, m34);
  unary("sigmoid", [](auto& x) { return sigmoid(x * 4.0); }, m34);
  unary("clamp", [](auto& x) { return clamp(x, -0.5, 0.5); }, [](Rng& r) {
    // Values either well inside or well outside the clamp range.
    auto t = param_away(r, {3, 4}, 0.0, 1.2);
    for (double& v : t.mutable_values()) {
      if (std::abs(std::abs(v) - 0.5) < 0.1) v *= 1.5;
    }
    return t;
  });
  binary("matmul", [](auto& a, auto& b) { return matmul(a, b); }, m34, [](Rng& r) { return param(r, {4, 2}); });
  unary("transpose", [](auto& x) { return transpose(x); }, m34);
  s.push_back({"grad: affine", kGradTol, [](Rng& rng) {
                 return projected(rng, {param(rng, {3, 4}), param(rng, {4, 2}), param(rng, {2})},
                                  [](V in) { return affine(in[0], in[1], in[2]); });
               }});
  unary("inverse_spd", [](auto& x) { return inverse_spd(x); }, [](Rng& r) { return spd_param(r, 3); });
  unary("logdet_spd", [](auto& x) { return logdet_spd(x); }, [](Rng& r) { return spd_param(r, 3); });
  unary("diag", [](auto& x) { return diag(x); }, [](Rng& r) { return param(r, {3, 3}); });
  unary("sum", [](auto& x) { return sum(x); }, m34);
  unary("mean", [](auto& x) { return mean(x); }, m34);
  unary("sum_axis 0", [](auto& x) { return sum_axis(x, 0); }, m34);
  unary("sum_axis 1", [](auto& x) { return sum_axis(x, 1); }, m34);
  unary("sum_axis (rank 3)", [](auto& x) { return sum_axis(x, 1); }, [](Rng& r) { return param(r, {2, 3, 2}); });
  unary("softmax_rows", [](auto& x) { return softmax_rows(x * 2.0); }, m34);
  unary("logsumexp_rows", [](auto& x) { return logsumexp_rows(x * 2.0); }, m34);
  binary("l1_distance", [](auto& a, auto& b) { return l1_distance(a, b); }, m34, m34);
  binary("l2_distance", [](auto& a, auto& b) { return l2_distance(a, b); }, m34, m34);
  binary("row_l2_distance", [](auto& a, auto& b) { return row_l2_distance(a, b); }, m34, m34);
  unary("reshape", [](auto& x) { return reshape(x, {2, 6}); }, m34);
  unary("column", [](auto& x) { return column(x, 2); }, m34);
  unary("slice_rows", [](auto& x) { return slice_rows(x, 1, 3); }, m34);
  unary("broadcast_rows", [](auto& x) { return broadcast_rows(x, 3); }, [](Rng& r) { return param(r, {4}); });
  unary("broadcast_cols", [](auto& x) { return broadcast_cols(x, 3); }, [](Rng& r) { return param(r, {4}); });
  s.push_back({"grad: stack_cols", kGradTol, [](Rng& rng) {
                 return projected(rng, {param(rng, {4}), param(rng, {4}), param(rng, {4})},
                                  [](V in) { return stack_cols({in[0], in[1], in[2]}); });
               }});
  return s;
}

// l1 is non-differentiable where a == b, so keep the pair apart.
Case l1_case(Rng& rng) {
  Tensor a = param(rng, {4, 5});
  std::vector<double> b(a.values().begin(), a.values().end());
  const auto off = param_away(rng, {4, 5}, 0.1, 0.8);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += off.values()[i];
  return {{a, Tensor::parameter({4, 5}, b)},
          [](const std::vector<Tensor>& in) { return image_reconstruction_loss(in[0], in[1]); }};
}

Tensor random_memberships(Rng& rng, std::size_t n, std::size_t k) {
  NoGradGuard no_grad;
  return softmax_rows(constant(rng, {n, k}, -2.0, 2.0)).detach();
}

ArchConfig tiny_arch() {
  ArchConfig a;
  a.input_dim = 6;
  a.encoder_hidden = {5};
  a.latent_dim = 2;
  a.disc_hidden = {4};
  a.est_hidden = {3};
  a.mixtures = 2;
  return a;
}

std::vector<GradSpec> loss_specs() {
  using V = const std::vector<Tensor>&;
  std::vector<GradSpec> s;
  s.push_back({"grad: loss reconstruction (L1)", kGradTol, l1_case});
  s.push_back({"grad: loss adversarial generator", kGradTol, [](Rng& rng) {
                 return Case{{param(rng, {6, 1}, 0.05, 0.95)}, [](V in) { return generator_adversarial_loss(in[0]); }};
               }});
  s.push_back({"grad: loss adversarial discriminator", kGradTol, [](Rng& rng) {
                 return Case{{param(rng, {6, 1}, 0.05, 0.95), param(rng, {6, 1}, 0.05, 0.95)},
                             [](V in) { return discriminator_adversarial_loss(in[0], in[1]); }};
               }});
  s.push_back({"grad: loss latent (L2)", kGradTol, [](Rng& rng) {
                 return Case{{param(rng, {5, 3}), param(rng, {5, 3})},
                             [](V in) { return latent_representation_loss(in[0], in[1]); }};
               }});
  s.push_back({"grad: mixture estimate", kMixtureGradTol, [](Rng& rng) {
                 Tensor z = param(rng, {8, 3});
                 Tensor logits = param(rng, {8, 2}, -2.0, 2.0);
                 std::vector<Tensor> wa, wm, ws;
                 for (int k = 0; k < 2; ++k) {
                   wa.push_back(constant(rng, {}));
                   wm.push_back(constant(rng, {1, 3}));
                   ws.push_back(constant(rng, {3, 3}));
                 }
                 return Case{{z, logits}, [wa, wm, ws](V in) {
                               const auto g = estimate_gmm(in[0], softmax_rows(in[1]));
                               Tensor acc = Tensor::scalar(0.0);
                               for (std::size_t k = 0; k < 2; ++k) {
                                 acc = acc + g.alpha[k] * wa[k] + sum(g.mu[k] * wm[k]) + sum(g.sigma[k] * ws[k]);
                               }
                               return acc;
                             }};
               }});
  s.push_back({"grad: energy", kMixtureGradTol, [](Rng& rng) {
                 Tensor z = param(rng, {8, 3});
                 const Tensor gamma = random_memberships(rng, 8, 3);
                 return projected(rng, {z}, [gamma](V in) { return sample_energies(in[0], estimate_gmm(in[0], gamma)); });
               }});
  s.push_back({"grad: loss estimation wrt latents", kMixtureGradTol, [](Rng& rng) {
                 Tensor z = param(rng, {8, 3});
                 const Tensor gamma = random_memberships(rng, 8, 2);
                 return Case{{z}, [gamma](V in) {
                               return estimation_loss(in[0], estimate_gmm(in[0], gamma), 0.1, 0.005).total;
                             }};
               }});
  s.push_back({"grad: loss estimation wrt memberships", kMixtureGradTol, [](Rng& rng) {
                 const Tensor z = constant(rng, {8, 3});
                 Tensor logits = param(rng, {8, 2}, -2.0, 2.0);
                 return Case{{logits}, [z](V in) {
                               return estimation_loss(z, estimate_gmm(z, softmax_rows(in[0])), 0.1, 0.005).total;
                             }};
               }});
  s.push_back({"grad: discriminator wrt input", kGradTol, [](Rng& rng) {
                 auto p = init_params(tiny_arch(), rng());
                 return Case{{param(rng, {4, 6})}, [p](V in) { return sum(discriminate(p, in[0])); }};
               }});
  s.push_back({"grad: total generator objective", kMixtureGradTol, [](Rng& rng) {
                 auto p = init_params(tiny_arch(), rng());
                 const Tensor x = constant(rng, {6, 6}, -2.0, 2.0);
                 LossWeights w;
                 auto inputs = p.generator_parameters();
                 return Case{std::move(inputs), [p, x, w](V) {
                               const Tensor z = encode(p, x);
                               const Tensor xr = decode(p, z);
                               const Tensor zr = encode_aux(p, xr);
                               const auto g = estimate_gmm(z, membership(p, z));
                               return total_generator_loss(image_reconstruction_loss(x, xr),
                                                           generator_adversarial_loss(discriminate(p, xr)),
                                                           latent_representation_loss(z, zr),
                                                           estimation_loss(z, g, 0.1, 0.005).total, w);
                             }};
               }});
  return s;
}

// ---------------------------------------------------------------------------
// Direct loop oracles

struct PlainGmm {
  std::vector<double> alpha;
  std::vector<std::vector<double>> mu;
  std::vector<std::vector<std::vector<double>>> sigma;
};

PlainGmm direct_estimate(const Eigen::MatrixXd& z, const Eigen::MatrixXd& gamma, double eps) {
  const auto n = static_cast<std::size_t>(z.rows()), d = static_cast<std::size_t>(z.cols());
  const auto k_count = static_cast<std::size_t>(gamma.cols());
  PlainGmm g;
  std::vector<double> global(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < d; ++a) global[a] += z(i, a);
  }
  for (double& v : global) v /= static_cast<double>(n);
  for (std::size_t k = 0; k < k_count; ++k) {
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) mass += gamma(i, k);
    g.alpha.push_back(mass / static_cast<double>(n));
    std::vector<double> mu(d, 0.0);
    std::vector<std::vector<double>> sig(d, std::vector<double>(d, 0.0));
    if (mass < kDegenerateMass) {
      mu = global;
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < d; ++a) mu[a] += gamma(i, k) * z(i, a);
      }
      for (double& v : mu) v /= mass;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < d; ++a) {
          for (std::size_t b = 0; b < d; ++b) sig[a][b] += gamma(i, k) * (z(i, a) - mu[a]) * (z(i, b) - mu[b]);
        }
      }
      for (auto& row : sig) {
        for (double& v : row) v /= mass;
      }
    }
    for (std::size_t a = 0; a < d; ++a) sig[a][a] += eps;
    g.mu.push_back(mu);
    g.sigma.push_back(sig);
  }
  return g;
}

double plain_diff(const PlainGmm& a, const GmmParams& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.alpha.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    worst = std::max(worst, std::abs(a.alpha[k] - b.alpha(kk)));
    for (std::size_t i = 0; i < a.mu[k].size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      worst = std::max(worst, std::abs(a.mu[k][i] - b.mu[k](ii)));
      for (std::size_t j = 0; j < a.mu[k].size(); ++j) {
        worst = std::max(worst, std::abs(a.sigma[k][i][j] - b.sigma[k](ii, static_cast<Eigen::Index>(j))));
      }
    }
  }
  return worst;
}

/// Determinant and inverse by Gauss-Jordan elimination with partial pivoting.
double gauss_jordan(std::vector<std::vector<double>> a, std::vector<std::vector<double>>& inv) {
  const std::size_t n = a.size();
  inv.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  double det = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    }
    if (p != c) {
      std::swap(a[p], a[c]);
      std::swap(inv[p], inv[c]);
      det = -det;
    }
    const double piv = a[c][c];
    det *= piv;
    for (std::size_t j = 0; j < n; ++j) {
      a[c][j] /= piv;
      inv[c][j] /= piv;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r][c];
      for (std::size_t j = 0; j < n; ++j) {
        a[r][j] -= f * a[c][j];
        inv[r][j] -= f * inv[c][j];
      }
    }
  }
  return det;
}

double naive_energy(const Eigen::VectorXd& z, const GmmParams& g) {
  const std::size_t d = g.dim();
  double p = 0.0;
  for (std::size_t k = 0; k < g.components(); ++k) {
    std::vector<std::vector<double>> s(d, std::vector<double>(d)), inv;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) s[i][j] = g.sigma[k](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    const double det = gauss_jordan(s, inv);
    double q = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        q += (z(static_cast<Eigen::Index>(i)) - g.mu[k](static_cast<Eigen::Index>(i))) * inv[i][j] *
             (z(static_cast<Eigen::Index>(j)) - g.mu[k](static_cast<Eigen::Index>(j)));
      }
    }
    p += g.alpha(static_cast<Eigen::Index>(k)) * std::exp(-0.5 * q) /
         std::sqrt(std::pow(2.0 * std::numbers::pi, static_cast<double>(d)) * det);
  }
  return -std::log(p);
}

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return Eigen::MatrixXd::NullaryExpr(r, c, [&]() { return u(rng); });
}

Eigen::MatrixXd random_gamma(Rng& rng, Eigen::Index n, Eigen::Index k) {
  Eigen::MatrixXd g = random_matrix(rng, n, k, 0.0, 1.0).array().square();
  for (Eigen::Index i = 0; i < n; ++i) g.row(i) /= g.row(i).sum();
  return g;
}

GmmParams random_gmm(Rng& rng, std::size_t k, std::size_t d) {
  GmmParams g;
  g.alpha = random_matrix(rng, static_cast<Eigen::Index>(k), 1, 0.2, 1.0);
  g.alpha /= g.alpha.sum();
  for (std::size_t c = 0; c < k; ++c) {
    g.mu.push_back(random_matrix(rng, static_cast<Eigen::Index>(d), 1, -2.0, 2.0));
    const Eigen::MatrixXd a = random_matrix(rng, static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d), -1.0, 1.0);
    g.sigma.push_back(a * a.transpose() + 0.3 * Eigen::MatrixXd::Identity(a.rows(), a.cols()));
  }
  return g;
}

CheckResult finish(std::string name, double tol, double worst, std::size_t n) {
  return {std::move(name), tol, worst, n, worst <= tol};
}

}  // namespace

std::vector<GradientCase> gradient_cases() {
  auto specs = op_specs();
  auto losses = loss_specs();
  specs.insert(specs.end(), losses.begin(), losses.end());
  return specs;
}

std::vector<CheckResult> verify_gradients(const VerifyOptions& options) {
  std::vector<CheckResult> out;
  const auto specs = gradient_cases();
  std::uint64_t stream = 0;
  for (const auto& spec : specs) {
    auto rng = stream_rng(options.seed, stream++);
    double worst = 0.0;
    for (std::size_t i = 0; i < options.instances; ++i) {
      Case c = spec.make(rng);
      worst = std::max(worst, gradient_check(c.f, c.inputs));
    }
    out.push_back(finish(spec.name, spec.tolerance, worst, options.instances));
  }
  return out;
}

std::vector<CheckResult> verify_estimation(const VerifyOptions& options) {
  auto rng = stream_rng(options.seed, 1000);
  std::uniform_int_distribution<int> n_dist(2, 50), d_dist(1, 4), k_dist(1, 4);
  const std::size_t count = options.instances * 10;
  double worst_direct = 0.0, worst_em = 0.0;
  for (std::size_t t = 0; t < count; ++t) {
    const int n = n_dist(rng), d = d_dist(rng), k = k_dist(rng);
    const Eigen::MatrixXd z = random_matrix(rng, n, d, -3.0, 3.0);
    Eigen::MatrixXd gamma = random_gamma(rng, n, k);
    if (t % 10 == 9 && k > 1) {
      // Exercise the degenerate-component rule.
      gamma.col(0).setZero();
      for (Eigen::Index i = 0; i < n; ++i) gamma.row(i) /= gamma.row(i).sum();
    }
    const GmmParams est = estimate_gmm(z, gamma);
    worst_direct = std::max(worst_direct, plain_diff(direct_estimate(z, gamma, kDefaultCovEps), est));
    worst_em = std::max(worst_em, max_param_diff(est, em_m_step(z, gamma)));
  }
  return {finish("mixture estimate vs direct evaluation", 1e-12, worst_direct, count),
          finish("mixture estimate vs EM M-step", 1e-12, worst_em, count)};
}

std::vector<CheckResult> verify_energy(const VerifyOptions& options) {
  auto rng = stream_rng(options.seed, 2000);
  std::uniform_int_distribution<int> d_dist(1, 4), k_dist(1, 4);
  const std::size_t count = options.instances * 10;
  double worst = 0.0;
  for (std::size_t t = 0; t < count; ++t) {
    const auto d = static_cast<std::size_t>(d_dist(rng)), k = static_cast<std::size_t>(k_dist(rng));
    const GmmParams g = random_gmm(rng, k, d);
    std::uniform_int_distribution<std::size_t> pick(0, k - 1);
    const Eigen::VectorXd z = g.mu[pick(rng)] + random_matrix(rng, static_cast<Eigen::Index>(d), 1, -1.0, 1.0);
    worst = std::max(worst, std::abs(energy(z, g) - naive_energy(z, g)));
  }
  double worst_mode = 0.0;
  for (std::size_t d = 1; d <= 8; ++d) {
    GmmParams g;
    g.alpha = Eigen::VectorXd::Ones(1);
    g.mu = {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d))};
    g.sigma = {Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))};
    const double expected = 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
    worst_mode = std::max(worst_mode, std::abs(energy(g.mu[0], g) - expected));
  }
  return {finish("energy vs naive mixture density", 1e-10, worst, count),
          finish("energy at standard-normal mode", 1e-12, worst_mode, 8)};
}

std::vector<CheckResult> verify_auc(const VerifyOptions& options) {
  auto rng = stream_rng(options.seed, 3000);
  std::uniform_int_distribution<int> n_dist(2, 200);
  const std::size_t count = options.instances * 10;
  double worst = 0.0;
  for (std::size_t t = 0; t < count; ++t) {
    const int n = n_dist(rng);
    // Coarse scores on every other instance so ties are common.
    const bool coarse = t % 2 == 0;
    std::vector<ScoredSample> s(static_cast<std::size_t>(n));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
      const double v = u(rng);
      s[static_cast<std::size_t>(i)] = {"s" + std::to_string(i), coarse ? std::floor(v * 5.0) : v,
                                        i % 2 == 0 ? Label::anomalous : Label::normal};
    }
    double pairs = 0.0, wins = 0.0;
    for (const auto& a : s) {
      if (a.label != Label::anomalous) continue;
      for (const auto& b : s) {
        if (b.label != Label::normal) continue;
        pairs += 1.0;
        wins += a.score > b.score ? 1.0 : (a.score == b.score ? 0.5 : 0.0);
      }
    }
    worst = std::max(worst, std::abs(auc(s).auc - wins / pairs));
  }
  return {finish("AUC rank statistic vs pairwise count", 0.0, worst, count)};
}

VerifyReport run_verification(const VerifyOptions& options) {
  VerifyReport r;
  for (auto* part : {&verify_gradients, &verify_estimation, &verify_energy, &verify_auc}) {
    auto checks = part(options);
    r.checks.insert(r.checks.end(), checks.begin(), checks.end());
  }
  return r;
}

}  // namespace gmgan
