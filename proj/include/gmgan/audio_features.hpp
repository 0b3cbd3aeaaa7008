#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gmgan {

struct AudioClip {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate_hz = 0;
};

enum class Label : std::uint8_t { normal = 0, anomalous = 1, unknown = 2 };

const char* label_name(Label label);
Label parse_label(const std::string& text);

/// Per-band z-score statistics. A band is one row of a patch.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Fixed-shape log-mel patches, stored patch-major and row-major within a
/// patch (rows are mel bands, columns are frames).
struct PatchSet {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<std::string> source_ids;
  std::vector<Label> labels;
  std::optional<NormStats> norm_stats;

  std::size_t size() const { return labels.size(); }
  std::size_t patch_size() const { return rows * cols; }
  std::span<const double> patch(std::size_t i) const;

  /// Appends every patch of `other`, which must have the same shape.
  void append(const PatchSet& other);
  /// Copies the selected patches into a new set (norm stats are kept).
  PatchSet subset(std::span<const std::size_t> indices) const;
  void validate() const;
};

struct FeatureConfig {
  int sample_rate_hz = 16000;
  std::size_t window = 1024;
  std::size_t hop = 512;
  std::size_t mel_bands = 64;
  std::size_t patch_frames = 64;
  std::size_t patch_hop = 32;
  double log_floor = 1e-10;
};

// ---------------------------------------------------------------------------
// WAV

/// Reads a RIFF/WAVE PCM 16-bit file; stereo is averaged to mono.
AudioClip decode_wav(const std::filesystem::path& path);
AudioClip decode_wav_bytes(std::span<const std::uint8_t> bytes);
/// Encodes 16-bit PCM samples as a canonical 44-byte-header WAV file.
std::vector<std::uint8_t> encode_wav_pcm16(std::span<const std::int16_t> interleaved, int sample_rate_hz,
                                           int channels = 1);

// ---------------------------------------------------------------------------
// Spectral front end

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// Magnitude of the Hann-windowed one-sided DFT; result is [window/2+1 × frames].
Eigen::MatrixXd stft_magnitude(const AudioClip& clip, std::size_t window_len, std::size_t hop);

/// Triangular HTK-mel filterbank, [mel_bands × (window_len/2+1)].
Eigen::MatrixXd mel_filterbank(int sample_rate_hz, std::size_t window_len, std::size_t mel_bands);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Projects magnitudes [bins × frames] onto the mel filterbank.
Eigen::MatrixXd mel_project(const Eigen::MatrixXd& magnitude, int sample_rate_hz, std::size_t mel_bands);

/// ln(max(mel, floor)) split into sliding patches; a trailing partial patch is dropped.
PatchSet log_compress_and_frame(const Eigen::MatrixXd& mel, double floor, std::size_t patch_frames,
                                std::size_t patch_hop, const std::string& source_id = "",
                                Label label = Label::unknown);

/// Whole pipeline for one clip.
PatchSet featurize_clip(const AudioClip& clip, const FeatureConfig& config, const std::string& source_id,
                        Label label);

// ---------------------------------------------------------------------------
// Normalisation

NormStats compute_norm_stats(const PatchSet& patches);
/// Returns a copy with every band z-scored by `stats`.
PatchSet apply_norm(const PatchSet& patches, const NormStats& stats);
void normalize_patch(std::span<double> patch, std::size_t cols, const NormStats& stats);

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticConfig {
  std::size_t rows = 16;
  std::size_t cols = 16;
  /// Seed of the fixed manifold (linear map and mixture layout). Sample draws
  /// are controlled separately, so train and test sets share the manifold.
  std::uint64_t structure_seed = 0x5EEDull;
  double noise_std = 0.05;
  /// Distance of the anomalous distribution from the normal manifold, measured
  /// along a unit direction orthogonal to it.
  double anomaly_shift = 1.0;
  /// Offset of the anomalous latent mixture along the first latent axis,
  /// applied after the rotation.
  double anomaly_translation = 4.0;
  /// Rotation of the anomalous latent mixture about the latent origin, radians.
  double anomaly_rotation = 0.0;
};

/// Normal patches come from a 2-D Gaussian mixture mapped linearly into patch
/// space plus noise; anomalous patches come from the rotated and translated
/// mixture, additionally shifted off the manifold. Patch i uses its own RNG stream keyed by (seed, i).
PatchSet gen_synthetic_dataset(std::uint64_t seed, std::size_t n_normal, std::size_t n_anomalous,
                               const SyntheticConfig& config = {});

// ---------------------------------------------------------------------------
// GMGP container

void write_patchset(const PatchSet& patches, const std::filesystem::path& path);
PatchSet read_patchset(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_patchset(const PatchSet& patches);
PatchSet decode_patchset(std::span<const std::uint8_t> bytes);

}  // namespace gmgan
