#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gmgan/tensor.hpp"

namespace gmgan {

struct CheckResult {
  std::string name;
  double tolerance = 0.0;
  double max_error = 0.0;
  std::size_t instances = 0;
  bool passed = false;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  bool passed() const;
  std::string to_string() const;
};

struct VerifyOptions {
  std::uint64_t seed = 7;
  /// Random instances per check.
  std::size_t instances = 10;
};

/// Scalar function of a list of tensors, rebuilt on every call.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Largest mixed error |analytic - numeric| / max(1, |numeric|) over every
/// input element, using central differences with step `h`. Inputs are
/// perturbed in place and restored.
double gradient_check(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-6);

/// One random differentiation problem: a scalar function and the leaves to
/// differentiate it with respect to.
struct GradientProblem {
  std::vector<Tensor> inputs;
  ScalarFn f;
};

struct GradientCase {
  std::string name;
  double tolerance;
  std::function<GradientProblem(std::mt19937_64&)> make;
};

/// Every tensor op and every loss term, with its tolerance.
std::vector<GradientCase> gradient_cases();

/// Gradient checks for every tensor op and every loss term.
std::vector<CheckResult> verify_gradients(const VerifyOptions& options);
/// Mixture estimation against a direct loop evaluation and against the EM M-step.
std::vector<CheckResult> verify_estimation(const VerifyOptions& options);
/// Energy against -log of a naive mixture density, plus the standard-normal mode value.
std::vector<CheckResult> verify_energy(const VerifyOptions& options);
/// Rank-statistic AUC against the pairwise count.
std::vector<CheckResult> verify_auc(const VerifyOptions& options);

VerifyReport run_verification(const VerifyOptions& options = {});

}  // namespace gmgan
