#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gmgan/audio_features.hpp"
#include "gmgan/checkpoint.hpp"

namespace gmgan {

enum class ScoreMode { latent, energy };
enum class Aggregator { max, mean };

ScoreMode parse_score_mode(const std::string& text);
Aggregator parse_aggregator(const std::string& text);
const char* score_mode_name(ScoreMode mode);
const char* aggregator_name(Aggregator agg);

struct ScoredSample {
  std::string source_id;
  double score = 0.0;
  Label label = Label::unknown;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  double auc = 0.0;
  std::vector<RocPoint> roc;
};

/// Scores of already-normalised patches x [n × input_dim].
std::vector<double> score_matrix(const Model& model, const Eigen::MatrixXd& x, ScoreMode mode = ScoreMode::latent);
/// Score of one raw patch; the model's band statistics are applied first.
double anomaly_score(const Model& model, std::span<const double> raw_patch, ScoreMode mode = ScoreMode::latent);
/// Scores every raw patch of the set.
std::vector<double> score_patches(const Model& model, const PatchSet& patches, ScoreMode mode = ScoreMode::latent);

double aggregate(std::span<const double> patch_scores, Aggregator agg);

/// One sample per patch.
std::vector<ScoredSample> score_per_patch(const Model& model, const PatchSet& patches,
                                          ScoreMode mode = ScoreMode::latent);
/// One sample per source id, in order of first appearance. A clip is anomalous
/// if any of its patches is, normal if all are normal, unknown otherwise.
std::vector<ScoredSample> score_per_clip(const Model& model, const PatchSet& patches,
                                         ScoreMode mode = ScoreMode::latent, Aggregator agg = Aggregator::max);

/// Mann-Whitney AUC with ties counted one half. Unknown labels are ignored.
double auc_rank(std::span<const ScoredSample> samples);
/// ROC by sweeping every distinct score as a threshold; auc is the trapezoid area.
RocResult roc_curve(std::span<const ScoredSample> samples);
/// Rank-statistic AUC plus the swept curve; throws NumericError if the two
/// areas disagree by more than 1e-12.
RocResult auc(std::span<const ScoredSample> samples);

void write_scores_csv(std::span<const ScoredSample> samples, const std::filesystem::path& path);
std::vector<ScoredSample> read_scores_csv(const std::filesystem::path& path);

/// `source_id,label,z_1..z_d,score`, one row per patch.
void export_latents(const Model& model, const PatchSet& patches, const std::filesystem::path& path);

}  // namespace gmgan
