#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gmgan/audio_features.hpp"
#include "gmgan/gmm.hpp"
#include "gmgan/model.hpp"

namespace gmgan {

/// Everything needed to score new patches: network weights, the band
/// normalisation fitted on training data and, after a full fit, the mixture
/// estimated over the whole training set.
struct Model {
  NetworkParams params;
  std::size_t patch_rows = 0;
  std::size_t patch_cols = 0;
  NormStats norm;
  std::optional<GmmParams> gmm;
  /// Free-form provenance (training step, config echo), stored in the text block.
  std::map<std::string, std::string> meta;
};

/// GMGC container, see docs/formats.md.
std::vector<std::uint8_t> encode_checkpoint(const Model& model);
Model decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes via a temporary file and rename, so an existing checkpoint is only
/// replaced by a complete one.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace gmgan
