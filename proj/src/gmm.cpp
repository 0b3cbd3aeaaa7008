#include "gmgan/gmm.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "gmgan/error.hpp"
#include "gmgan/random.hpp"

namespace gmgan {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

void check_inputs(std::size_t n, std::size_t gamma_rows, const char* what) {
  if (n < 2) throw InvalidInputError(std::string(what) + ": at least two samples are required");
  if (gamma_rows != n) throw ShapeError(std::string(what) + ": memberships and latents differ in row count");
}

void check_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + ": non-finite input");
}

// Cholesky factors of every component covariance, or NumericError.
std::vector<Eigen::LLT<Eigen::MatrixXd>> factor_all(const GmmParams& params) {
  std::vector<Eigen::LLT<Eigen::MatrixXd>> out;
  out.reserve(params.components());
  for (std::size_t k = 0; k < params.components(); ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(params.sigma[k]);
    if (llt.info() != Eigen::Success) {
      throw NumericError("gmm: covariance of component " + std::to_string(k) + " is not positive definite");
    }
    out.push_back(std::move(llt));
  }
  return out;
}

// log(alpha_k) + log N(z | mu_k, sigma_k) for every component; -inf for
// components with zero weight.
Eigen::VectorXd component_log_densities(const Eigen::VectorXd& z, const GmmParams& params,
                                        const std::vector<Eigen::LLT<Eigen::MatrixXd>>& factors) {
  const std::size_t k_count = params.components();
  const double d = static_cast<double>(params.dim());
  Eigen::VectorXd out(static_cast<Eigen::Index>(k_count));
  for (std::size_t k = 0; k < k_count; ++k) {
    const double a = params.alpha(static_cast<Eigen::Index>(k));
    if (!(a > 0.0)) {
      out(static_cast<Eigen::Index>(k)) = -std::numeric_limits<double>::infinity();
      continue;
    }
    const Eigen::MatrixXd l = factors[k].matrixL();
    const Eigen::VectorXd y = factors[k].matrixL().solve(z - params.mu[k]);
    const double maha = y.squaredNorm();
    const double logdet = 2.0 * l.diagonal().array().log().sum();
    out(static_cast<Eigen::Index>(k)) = std::log(a) - 0.5 * maha - 0.5 * logdet - 0.5 * d * kLog2Pi;
  }
  return out;
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) throw NumericError("gmm: every component has zero weight");
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor to_tensor(const Eigen::MatrixXd& m) {
  const auto r = static_cast<std::size_t>(m.rows()), c = static_cast<std::size_t>(m.cols());
  std::vector<double> v(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return Tensor({r, c}, std::move(v));
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("to_matrix: expected a matrix, got " + shape_str(t.shape()));
  const std::size_t r = t.dim(0), c = t.dim(1);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  const auto v = t.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i * c + j];
  }
  return m;
}

void GmmParams::validate() const {
  const std::size_t k_count = components();
  if (mu.size() != k_count || sigma.size() != k_count || k_count == 0) {
    throw NumericError("gmm: inconsistent component count");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    const double a = alpha(static_cast<Eigen::Index>(k));
    if (!(a >= 0.0)) throw NumericError("gmm: negative mixture weight");
    total += a;
  }
  if (std::abs(total - 1.0) > 1e-9) throw NumericError("gmm: mixture weights do not sum to one");
  for (std::size_t k = 0; k < k_count; ++k) {
    const auto& s = sigma[k];
    if (!s.allFinite() || !mu[k].allFinite()) throw NumericError("gmm: non-finite parameters");
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-9) throw NumericError("gmm: covariance is not symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) throw NumericError("gmm: covariance is not positive definite");
  }
}

GmmParams GmmTensors::to_params() const {
  GmmParams p;
  const std::size_t k_count = alpha.size();
  p.alpha.resize(static_cast<Eigen::Index>(k_count));
  for (std::size_t k = 0; k < k_count; ++k) {
    p.alpha(static_cast<Eigen::Index>(k)) = alpha[k].item();
    p.mu.push_back(to_matrix(mu[k]).row(0).transpose());
    p.sigma.push_back(to_matrix(sigma[k]));
  }
  return p;
}

void validate_membership(const Eigen::MatrixXd& gamma) {
  if (!gamma.allFinite()) throw NumericError("membership: non-finite entries");
  if (gamma.minCoeff() < 0.0 || gamma.maxCoeff() > 1.0) throw InvalidInputError("membership: entries outside [0, 1]");
  for (Eigen::Index i = 0; i < gamma.rows(); ++i) {
    if (std::abs(gamma.row(i).sum() - 1.0) > 1e-9) throw InvalidInputError("membership: row does not sum to one");
  }
}

// ---------------------------------------------------------------------------
// Differentiable estimation

GmmTensors estimate_gmm(const Tensor& z, const Tensor& gamma, double eps) {
  if (z.rank() != 2 || gamma.rank() != 2) throw ShapeError("estimate_gmm: z and gamma must be matrices");
  const std::size_t n = z.dim(0), d = z.dim(1), k_count = gamma.dim(1);
  check_inputs(n, gamma.dim(0), "estimate_gmm");
  if (!(eps >= 0.0)) throw InvalidInputError("estimate_gmm: eps must be nonnegative");
  for (double v : z.values()) {
    if (!std::isfinite(v)) throw NumericError("estimate_gmm: non-finite latent");
  }

  const Tensor eps_eye = Tensor::identity(d) * eps;
  GmmTensors out;
  for (std::size_t k = 0; k < k_count; ++k) {
    const Tensor g = column(gamma, k);
    const Tensor mass = sum(g);
    out.alpha.push_back(mass * (1.0 / static_cast<double>(n)));
    if (mass.item() < kDegenerateMass) {
      // Degenerate component: global mean, eps·I covariance.
      out.mu.push_back(reshape(sum_axis(z, 0) * (1.0 / static_cast<double>(n)), {1, d}).detach());
      out.sigma.push_back(eps_eye.detach());
      continue;
    }
    const Tensor mu = matmul(transpose(g), z) / mass;
    const Tensor diff = z - broadcast_rows(mu, n);
    const Tensor weighted = diff * broadcast_cols(g, d);
    out.mu.push_back(mu);
    // The product is symmetric only up to rounding; average with the
    // transpose so the result is exactly symmetric.
    const Tensor scatter = matmul(transpose(weighted), diff) / mass;
    out.sigma.push_back((scatter + transpose(scatter)) * 0.5 + eps_eye);
  }
  return out;
}

GmmParams estimate_gmm(const Eigen::MatrixXd& z, const Eigen::MatrixXd& gamma, double eps) {
  check_inputs(static_cast<std::size_t>(z.rows()), static_cast<std::size_t>(gamma.rows()), "estimate_gmm");
  check_finite(z, "estimate_gmm");
  validate_membership(gamma);
  return estimate_gmm(to_tensor(z), to_tensor(gamma), eps).to_params();
}

Tensor sample_energies(const Tensor& z, const GmmTensors& params) {
  if (z.rank() != 2) throw ShapeError("energy: z must be [n x d]");
  const std::size_t n = z.dim(0), d = z.dim(1);
  std::vector<Tensor> log_terms;
  for (std::size_t k = 0; k < params.alpha.size(); ++k) {
    if (!(params.alpha[k].item() > 0.0)) continue;
    if (params.mu[k].numel() != d) throw ShapeError("energy: mean dimension does not match latents");
    const Tensor diff = z - broadcast_rows(params.mu[k], n);
    const Tensor maha = sum_axis(diff * matmul(diff, inverse_spd(params.sigma[k])), 1);
    const Tensor log_norm = log(params.alpha[k]) - 0.5 * logdet_spd(params.sigma[k]) -
                            Tensor::scalar(0.5 * static_cast<double>(d) * kLog2Pi);
    log_terms.push_back(log_norm - 0.5 * maha);
  }
  if (log_terms.empty()) throw NumericError("energy: every component has zero weight");
  return -logsumexp_rows(stack_cols(log_terms));
}

double energy(const Eigen::VectorXd& z, const GmmParams& params) {
  if (static_cast<std::size_t>(z.size()) != params.dim()) throw ShapeError("energy: dimension mismatch");
  const auto factors = factor_all(params);
  return -log_sum_exp(component_log_densities(z, params, factors));
}

Eigen::VectorXd energies(const Eigen::MatrixXd& z, const GmmParams& params) {
  if (static_cast<std::size_t>(z.cols()) != params.dim()) throw ShapeError("energy: dimension mismatch");
  const auto factors = factor_all(params);
  Eigen::VectorXd out(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    out(i) = -log_sum_exp(component_log_densities(z.row(i).transpose(), params, factors));
  }
  return out;
}

EstimationLoss estimation_loss(const Tensor& z, const GmmTensors& params, double lambda1, double lambda2) {
  EstimationLoss out;
  out.energy_sum = sum(sample_energies(z, params));
  Tensor penalty = Tensor::scalar(0.0);
  for (const Tensor& s : params.sigma) {
    for (double v : diag(s).values()) {
      if (v == 0.0) throw NumericError("estimation loss: zero covariance diagonal");
    }
    penalty = penalty + sum(reciprocal(diag(s)));
  }
  out.cov_penalty = penalty;
  out.total = lambda1 * out.energy_sum + lambda2 * out.cov_penalty;
  return out;
}

// ---------------------------------------------------------------------------
// EM

GmmParams em_m_step(const Eigen::MatrixXd& z, const Eigen::MatrixXd& gamma, double eps) {
  const auto n = z.rows();
  const auto d = z.cols();
  const auto k_count = gamma.cols();
  check_inputs(static_cast<std::size_t>(n), static_cast<std::size_t>(gamma.rows()), "em_m_step");
  check_finite(z, "em_m_step");

  GmmParams p;
  p.alpha.resize(k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    double mass = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) mass += gamma(i, k);
    p.alpha(k) = mass / static_cast<double>(n);

    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(d, d);
    if (mass < kDegenerateMass) {
      for (Eigen::Index i = 0; i < n; ++i) mu += z.row(i).transpose();
      mu /= static_cast<double>(n);
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) mu(j) += gamma(i, k) * z(i, j);
      }
      mu /= mass;
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index a = 0; a < d; ++a) {
          const double da = z(i, a) - mu(a);
          for (Eigen::Index b = 0; b <= a; ++b) sigma(a, b) += gamma(i, k) * da * (z(i, b) - mu(b));
        }
      }
      for (Eigen::Index a = 0; a < d; ++a) {
        for (Eigen::Index b = 0; b <= a; ++b) {
          sigma(a, b) /= mass;
          sigma(b, a) = sigma(a, b);
        }
      }
    }
    for (Eigen::Index j = 0; j < d; ++j) sigma(j, j) += eps;
    p.mu.push_back(std::move(mu));
    p.sigma.push_back(std::move(sigma));
  }
  return p;
}

Eigen::MatrixXd em_e_step(const Eigen::MatrixXd& z, const GmmParams& params) {
  const auto factors = factor_all(params);
  Eigen::MatrixXd gamma(z.rows(), static_cast<Eigen::Index>(params.components()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const Eigen::VectorXd lp = component_log_densities(z.row(i).transpose(), params, factors);
    const double lse = log_sum_exp(lp);
    gamma.row(i) = (lp.array() - lse).exp().matrix().transpose();
  }
  return gamma;
}

double log_likelihood(const Eigen::MatrixXd& z, const GmmParams& params) { return -energies(z, params).sum(); }

EmResult em_fit(const Eigen::MatrixXd& z, std::size_t k, std::uint64_t seed, std::size_t iters, double eps) {
  const auto n = static_cast<std::size_t>(z.rows());
  if (k == 0 || n <= k) throw InvalidInputError("em_fit: need more samples than components");
  if (iters == 0) throw InvalidInputError("em_fit: at least one iteration is required");
  check_finite(z, "em_fit");

  // k-means++ seeding.
  auto rng = stream_rng(seed, 0);
  std::vector<Eigen::Index> centers;
  centers.push_back(static_cast<Eigen::Index>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)));
  Eigen::VectorXd dist2(static_cast<Eigen::Index>(n));
  while (centers.size() < k) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (auto c : centers) best = std::min(best, (z.row(i) - z.row(c)).squaredNorm());
      dist2(i) = best;
    }
    Eigen::Index pick = 0;
    if (dist2.sum() > 0.0) {
      std::discrete_distribution<Eigen::Index> choose(dist2.data(), dist2.data() + dist2.size());
      pick = choose(rng);
    } else {
      pick = static_cast<Eigen::Index>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
    }
    centers.push_back(pick);
  }
  Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(z.rows(), static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    std::size_t best_c = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double dd = (z.row(i) - z.row(centers[c])).squaredNorm();
      if (dd < best) {
        best = dd;
        best_c = c;
      }
    }
    gamma(i, static_cast<Eigen::Index>(best_c)) = 1.0;
  }

  EmResult result;
  result.params = em_m_step(z, gamma, eps);
  result.log_likelihood.push_back(log_likelihood(z, result.params));
  for (std::size_t it = 0; it < iters; ++it) {
    gamma = em_e_step(z, result.params);
    result.params = em_m_step(z, gamma, eps);
    const double ll = log_likelihood(z, result.params);
    const double prev = result.log_likelihood.back();
    if (ll < prev - 1e-9 * std::max(1.0, std::abs(prev))) result.monotone = false;
    result.log_likelihood.push_back(ll);
  }
  return result;
}

double max_param_diff(const GmmParams& a, const GmmParams& b) {
  if (a.components() != b.components() || a.dim() != b.dim()) return std::numeric_limits<double>::infinity();
  double m = (a.alpha - b.alpha).cwiseAbs().maxCoeff();
  for (std::size_t k = 0; k < a.components(); ++k) {
    m = std::max(m, (a.mu[k] - b.mu[k]).cwiseAbs().maxCoeff());
    m = std::max(m, (a.sigma[k] - b.sigma[k]).cwiseAbs().maxCoeff());
  }
  return m;
}

std::string CrossCheckReport::to_string() const {
  std::ostringstream os;
  os << (match ? "match" : "MISMATCH") << ": max |estimate_gmm - em_m_step| = " << max_abs_diff
     << " (tolerance " << tolerance << ")";
  return os.str();
}

CrossCheckReport cross_check_estimation(const Eigen::MatrixXd& z, const Eigen::MatrixXd& gamma, double eps,
                                        double tolerance) {
  CrossCheckReport report;
  report.tolerance = tolerance;
  report.max_abs_diff = max_param_diff(estimate_gmm(z, gamma, eps), em_m_step(z, gamma, eps));
  report.match = report.max_abs_diff <= tolerance;
  return report;
}

}  // namespace gmgan
