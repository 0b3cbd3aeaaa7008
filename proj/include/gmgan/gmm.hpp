#pragma once

// Gaussian-mixture estimation from soft memberships, sample energy and the
// estimation loss, plus a classical EM fitter that serves as an independent
// reference for the M-step.

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "gmgan/tensor.hpp"

namespace gmgan {

inline constexpr double kDefaultCovEps = 1e-6;
/// A component whose responsibility mass falls below this is degenerate.
inline constexpr double kDegenerateMass = 1e-12;

struct GmmParams {
  Eigen::VectorXd alpha;
  std::vector<Eigen::VectorXd> mu;
  std::vector<Eigen::MatrixXd> sigma;

  std::size_t components() const { return static_cast<std::size_t>(alpha.size()); }
  std::size_t dim() const { return mu.empty() ? 0 : static_cast<std::size_t>(mu.front().size()); }
  /// Throws NumericError unless weights are a distribution and every
  /// covariance is symmetric and admits a Cholesky factorisation.
  void validate() const;
};

/// Differentiable view of the same parameters.
struct GmmTensors {
  std::vector<Tensor> alpha;  // K scalars
  std::vector<Tensor> mu;     // K × [1 × d]
  std::vector<Tensor> sigma;  // K × [d × d]

  GmmParams to_params() const;
};

/// Mixture weights, means and covariances implied by memberships gamma
/// [n × K] over latents z [n × d], with eps·I added to every covariance.
/// Differentiable in both z and gamma.
GmmTensors estimate_gmm(const Tensor& z, const Tensor& gamma, double eps = kDefaultCovEps);
GmmParams estimate_gmm(const Eigen::MatrixXd& z, const Eigen::MatrixXd& gamma, double eps = kDefaultCovEps);

/// Rows must be distributions: entries in [0, 1], sums within 1e-9 of one.
void validate_membership(const Eigen::MatrixXd& gamma);

/// Per-sample energy -log p(z_i) under the mixture, as a length-n vector.
Tensor sample_energies(const Tensor& z, const GmmTensors& params);
/// Negative log mixture density at z, evaluated in log space.
double energy(const Eigen::VectorXd& z, const GmmParams& params);
Eigen::VectorXd energies(const Eigen::MatrixXd& z, const GmmParams& params);

struct EstimationLoss {
  Tensor total;        // lambda1 * energy_sum + lambda2 * cov_penalty
  Tensor energy_sum;   // sum_i E(z_i)
  Tensor cov_penalty;  // sum_k sum_j 1 / sigma_k[j][j]
};

/// `params` must come from estimate_gmm on the same batch so that gradients
/// reach both z and the memberships.
EstimationLoss estimation_loss(const Tensor& z, const GmmTensors& params, double lambda1, double lambda2);

// ---------------------------------------------------------------------------
// Classical EM

/// M-step written directly over Eigen matrices; same degenerate-component rule.
GmmParams em_m_step(const Eigen::MatrixXd& z, const Eigen::MatrixXd& gamma, double eps = kDefaultCovEps);
/// Posterior responsibilities under `params`.
Eigen::MatrixXd em_e_step(const Eigen::MatrixXd& z, const GmmParams& params);
double log_likelihood(const Eigen::MatrixXd& z, const GmmParams& params);

struct EmResult {
  GmmParams params;
  /// Log-likelihood before the first iteration and after each one.
  std::vector<double> log_likelihood;
  bool monotone = true;
};

/// k-means++ seeding from `seed`, then `iters` EM iterations.
EmResult em_fit(const Eigen::MatrixXd& z, std::size_t k, std::uint64_t seed, std::size_t iters,
                double eps = kDefaultCovEps);

struct CrossCheckReport {
  double max_abs_diff = 0.0;
  double tolerance = 1e-12;
  bool match = false;
  std::string to_string() const;
};

/// Runs estimate_gmm and em_m_step on identical memberships and compares.
CrossCheckReport cross_check_estimation(const Eigen::MatrixXd& z, const Eigen::MatrixXd& gamma,
                                        double eps = kDefaultCovEps, double tolerance = 1e-12);

/// Largest absolute entry-wise difference between two parameter sets.
double max_param_diff(const GmmParams& a, const GmmParams& b);

/// Conversions between row-major tensors and Eigen matrices.
Tensor to_tensor(const Eigen::MatrixXd& m);
Eigen::MatrixXd to_matrix(const Tensor& t);

}  // namespace gmgan
