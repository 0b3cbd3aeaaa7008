#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gmgan/audio_features.hpp"
#include "gmgan/checkpoint.hpp"
#include "gmgan/gmm.hpp"
#include "gmgan/losses.hpp"
#include "gmgan/model.hpp"

namespace gmgan {

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  double lr_g = 1e-3;
  double lr_d = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossWeights weights;
  double lambda1 = 0.1;
  double lambda2 = 0.005;
  double cov_eps = kDefaultCovEps;
  /// Global gradient-norm clip for the generator step; 0 disables clipping.
  double clip_norm = 5.0;
  /// Steps between checkpoints (and mixture spot checks); 0 disables both.
  std::size_t checkpoint_every = 0;
  /// input_dim is overwritten with the patch size by fit().
  ArchConfig arch;

  void validate() const;
};

/// First and second moment estimates for one parameter group.
struct AdamMoments {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamMoments zeros_like(const std::vector<Tensor>& params);
};

struct AdamSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam step on every tensor in `params` using its current
/// gradient (an absent gradient counts as zero). `step` is 1-based.
void adam_update(std::vector<Tensor>& params, AdamMoments& moments, const AdamSettings& settings, std::uint64_t step);

struct TrainState {
  NetworkParams params;
  AdamMoments adam_g;
  AdamMoments adam_d;
  std::uint64_t step = 0;
  std::mt19937_64 rng;

  static TrainState initial(const TrainConfig& config);
};

/// One discriminator update followed by one generator update on a batch of
/// normalised patches [n × input_dim], n ≥ 2. Returns the losses measured
/// during the two forward passes.
LossBreakdown train_step(TrainState& state, const TrainConfig& config, const Tensor& batch);

struct StepMetrics {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  LossBreakdown losses;
};

struct FitOptions {
  /// Periodic checkpoints and the final model are written here when set.
  std::optional<std::filesystem::path> checkpoint_path;
  std::optional<std::filesystem::path> metrics_path;
  /// Called after every step; used for progress output.
  std::function<void(const StepMetrics&)> on_step;
};

struct FitResult {
  TrainState state;
  Model model;
  std::vector<StepMetrics> history;
};

/// Trains on normal (or unlabelled) patches. Band statistics stored with the
/// patch set are used when present, otherwise they are computed from it.
FitResult fit(const TrainConfig& config, const PatchSet& train, const FitOptions& options = {});

/// Latents of every patch in `x` [n × input_dim], computed without a graph.
Eigen::MatrixXd encode_all(const NetworkParams& params, const Eigen::MatrixXd& x, std::size_t chunk = 256);
/// Mixture over the whole training set implied by the estimation network.
GmmParams full_dataset_gmm(const NetworkParams& params, const Eigen::MatrixXd& x, double cov_eps);

/// Row-major patch matrix [n × rows·cols] after band normalisation.
Eigen::MatrixXd normalized_matrix(const PatchSet& patches, const NormStats& stats);

void write_metrics_csv(const std::vector<StepMetrics>& history, const std::filesystem::path& path);

}  // namespace gmgan
