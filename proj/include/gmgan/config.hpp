#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gmgan/audio_features.hpp"
#include "gmgan/evaluation.hpp"
#include "gmgan/trainer.hpp"

namespace gmgan {

/// Everything a run can be configured with. Files are flat `key = value`
/// lines; `#` starts a comment. Unknown keys are rejected.
struct RunConfig {
  TrainConfig train;
  FeatureConfig features;
  SyntheticConfig synthetic;
  ScoreMode score_mode = ScoreMode::latent;
  Aggregator aggregator = Aggregator::max;
  /// Score each patch separately instead of aggregating per source clip.
  bool per_patch = false;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  void validate() const;

  /// Applies a file's settings on top of the current values.
  void load_file(const std::filesystem::path& path);
  /// Parses `key=value`.
  void apply_override(const std::string& assignment);
};

struct ConfigKeyInfo {
  std::string key;
  std::string help;
};

/// Every accepted key with a one-line description, in documentation order.
const std::vector<ConfigKeyInfo>& config_keys();

/// The full key list with the values held by `config`, as a config file.
std::string describe_config(const RunConfig& config);

}  // namespace gmgan
