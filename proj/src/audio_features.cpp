#include "gmgan/audio_features.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "binary_io.hpp"
#include "gmgan/error.hpp"
#include "gmgan/random.hpp"

namespace gmgan {

const char* label_name(Label label) {
  switch (label) {
    case Label::normal:
      return "normal";
    case Label::anomalous:
      return "anomalous";
    case Label::unknown:
      return "unknown";
  }
  return "unknown";
}

Label parse_label(const std::string& text) {
  if (text == "normal" || text == "0") return Label::normal;
  if (text == "anomalous" || text == "anomaly" || text == "abnormal" || text == "1") return Label::anomalous;
  if (text == "unknown" || text.empty()) return Label::unknown;
  throw InvalidInputError("unrecognised label '" + text + "'");
}

// ---------------------------------------------------------------------------
// PatchSet

std::span<const double> PatchSet::patch(std::size_t i) const {
  if (i >= size()) throw InvalidInputError("patch index out of range");
  return std::span<const double>(values).subspan(i * patch_size(), patch_size());
}

void PatchSet::append(const PatchSet& other) {
  if (other.size() == 0) return;
  if (size() == 0 && values.empty()) {
    rows = other.rows;
    cols = other.cols;
  }
  if (other.rows != rows || other.cols != cols) {
    throw ShapeError("PatchSet::append: patch shapes differ");
  }
  values.insert(values.end(), other.values.begin(), other.values.end());
  source_ids.insert(source_ids.end(), other.source_ids.begin(), other.source_ids.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

PatchSet PatchSet::subset(std::span<const std::size_t> indices) const {
  PatchSet out;
  out.rows = rows;
  out.cols = cols;
  out.norm_stats = norm_stats;
  out.values.reserve(indices.size() * patch_size());
  for (std::size_t i : indices) {
    const auto p = patch(i);
    out.values.insert(out.values.end(), p.begin(), p.end());
    out.source_ids.push_back(source_ids[i]);
    out.labels.push_back(labels[i]);
  }
  return out;
}

void PatchSet::validate() const {
  if (values.size() != size() * patch_size() || source_ids.size() != size()) {
    throw FormatError("PatchSet: inconsistent sizes");
  }
  if (norm_stats && (norm_stats->mean.size() != rows || norm_stats->stddev.size() != rows)) {
    throw FormatError("PatchSet: normalisation stats do not match band count");
  }
}

// ---------------------------------------------------------------------------
// WAV

AudioClip decode_wav(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return decode_wav_bytes(bytes);
}

AudioClip decode_wav_bytes(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "wav");
  if (bytes.size() < 12) throw FormatError("wav: file too short for a RIFF header");
  if (r.bytes(4) != "RIFF") throw FormatError("wav: missing RIFF tag");
  r.u32();
  if (r.bytes(4) != "WAVE") throw FormatError("wav: missing WAVE tag");

  bool have_fmt = false;
  int channels = 0;
  int sample_rate = 0;
  while (r.remaining() >= 8) {
    const std::string id = r.bytes(4);
    const std::uint32_t size = r.u32();
    if (size > r.remaining()) throw FormatError("wav: chunk '" + id + "' overruns the file");
    if (id == "fmt ") {
      if (size < 16) throw FormatError("wav: fmt chunk too short");
      const std::uint16_t format = r.u16();
      channels = r.u16();
      sample_rate = static_cast<int>(r.u32());
      r.u32();  // byte rate
      r.u16();  // block align
      const int bits = r.u16();
      r.bytes(size - 16 + (size & 1u));
      if (format != 1) throw UnsupportedFormatError("wav: only PCM encoding is supported");
      if (bits != 16) throw UnsupportedFormatError("wav: only 16-bit samples are supported");
      if (channels < 1 || channels > 2) throw UnsupportedFormatError("wav: only mono or stereo is supported");
      if (sample_rate <= 0) throw FormatError("wav: invalid sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
      const std::size_t frame_bytes = 2 * static_cast<std::size_t>(channels);
      const std::size_t frames = size / frame_bytes;
      AudioClip clip;
      clip.sample_rate_hz = sample_rate;
      clip.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
          acc += static_cast<double>(static_cast<std::int16_t>(r.u16()));
        }
        clip.samples[i] = acc / channels / 32768.0;
      }
      return clip;
    } else {
      r.bytes(size + ((size & 1u) && r.remaining() > size ? 1 : 0));
    }
  }
  throw FormatError(have_fmt ? "wav: missing data chunk" : "wav: missing fmt chunk");
}

std::vector<std::uint8_t> encode_wav_pcm16(std::span<const std::int16_t> interleaved, int sample_rate_hz,
                                           int channels) {
  io::ByteWriter w;
  const auto data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
  w.bytes("RIFF");
  w.u32(36 + data_bytes);
  w.bytes("WAVE");
  w.bytes("fmt ");
  w.u32(16);
  w.u16(1);
  w.u16(static_cast<std::uint16_t>(channels));
  w.u32(static_cast<std::uint32_t>(sample_rate_hz));
  w.u32(static_cast<std::uint32_t>(sample_rate_hz * channels * 2));
  w.u16(static_cast<std::uint16_t>(channels * 2));
  w.u16(16);
  w.bytes("data");
  w.u32(data_bytes);
  for (std::int16_t s : interleaved) w.u16(static_cast<std::uint16_t>(s));
  return std::move(w.buffer());
}

// ---------------------------------------------------------------------------
// STFT

namespace {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT.
void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
      const std::complex<double> w(std::cos(angle), std::sin(angle));
      for (std::size_t i = 0; i < n; i += len) {
        const auto u = a[i + k];
        const auto v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

}  // namespace

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

Eigen::MatrixXd stft_magnitude(const AudioClip& clip, std::size_t window_len, std::size_t hop) {
  if (!is_power_of_two(window_len)) throw InvalidConfigError("stft: window length must be a power of two");
  if (hop == 0 || hop > window_len) throw InvalidConfigError("stft: hop must be in [1, window]");
  if (clip.samples.size() < window_len) {
    throw InsufficientAudioError("stft: clip has " + std::to_string(clip.samples.size()) +
                                 " samples, fewer than one window of " + std::to_string(window_len));
  }
  for (double s : clip.samples) {
    if (!std::isfinite(s)) throw NumericError("stft: non-finite sample");
  }
  const std::size_t frames = (clip.samples.size() - window_len) / hop + 1;
  const std::size_t bins = window_len / 2 + 1;
  const auto window = hann_window(window_len);
  Eigen::MatrixXd out(bins, frames);
  std::vector<std::complex<double>> buf(window_len);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* frame = clip.samples.data() + t * hop;
    for (std::size_t i = 0; i < window_len; ++i) buf[i] = frame[i] * window[i];
    fft(buf);
    for (std::size_t b = 0; b < bins; ++b) out(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(t)) = std::abs(buf[b]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mel

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Eigen::MatrixXd mel_filterbank(int sample_rate_hz, std::size_t window_len, std::size_t mel_bands) {
  if (sample_rate_hz <= 0) throw InvalidConfigError("mel: sample rate must be positive");
  const std::size_t bins = window_len / 2 + 1;
  if (mel_bands < 2) throw InvalidConfigError("mel: at least two bands are required");
  if (mel_bands > bins) {
    throw InvalidConfigError("mel: " + std::to_string(mel_bands) + " bands exceed " + std::to_string(bins) +
                             " frequency bins");
  }
  const double nyquist = sample_rate_hz / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  std::vector<double> edges(mel_bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(mel_bands + 1));
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mel_bands), static_cast<Eigen::Index>(bins));
  for (std::size_t m = 0; m < mel_bands; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    double row_sum = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate_hz / static_cast<double>(window_len);
      double w = 0.0;
      if (f > lo && f <= center) {
        w = (f - lo) / (center - lo);
      } else if (f > center && f < hi) {
        w = (hi - f) / (hi - center);
      }
      fb(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(b)) = w;
      row_sum += w;
    }
    if (!(row_sum > 0.0)) {
      throw InvalidConfigError("mel: band " + std::to_string(m) + " covers no frequency bin; use fewer bands");
    }
  }
  return fb;
}

Eigen::MatrixXd mel_project(const Eigen::MatrixXd& magnitude, int sample_rate_hz, std::size_t mel_bands) {
  const auto bins = static_cast<std::size_t>(magnitude.rows());
  if (bins < 2) throw InvalidConfigError("mel: magnitude needs at least two bins");
  const std::size_t window_len = 2 * (bins - 1);
  return mel_filterbank(sample_rate_hz, window_len, mel_bands) * magnitude;
}

PatchSet log_compress_and_frame(const Eigen::MatrixXd& mel, double floor, std::size_t patch_frames,
                                std::size_t patch_hop, const std::string& source_id, Label label) {
  if (!(floor > 0.0)) throw InvalidConfigError("log floor must be positive");
  if (patch_frames == 0) throw InvalidConfigError("patch_frames must be positive");
  if (patch_hop == 0 || patch_hop > patch_frames) throw InvalidConfigError("patch_hop must be in [1, patch_frames]");
  const auto bands = static_cast<std::size_t>(mel.rows());
  const auto frames = static_cast<std::size_t>(mel.cols());
  if (frames < patch_frames) {
    throw InsufficientAudioError("framing: " + std::to_string(frames) + " frames, fewer than one patch of " +
                                 std::to_string(patch_frames));
  }
  const std::size_t count = (frames - patch_frames) / patch_hop + 1;
  PatchSet out;
  out.rows = bands;
  out.cols = patch_frames;
  out.values.reserve(count * bands * patch_frames);
  for (std::size_t p = 0; p < count; ++p) {
    const std::size_t start = p * patch_hop;
    for (std::size_t r = 0; r < bands; ++r) {
      for (std::size_t c = 0; c < patch_frames; ++c) {
        const double v = mel(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(start + c));
        if (!std::isfinite(v)) throw NumericError("framing: non-finite mel energy");
        out.values.push_back(std::log(std::max(v, floor)));
      }
    }
    out.source_ids.push_back(source_id);
    out.labels.push_back(label);
  }
  return out;
}

PatchSet featurize_clip(const AudioClip& clip, const FeatureConfig& config, const std::string& source_id,
                        Label label) {
  if (clip.sample_rate_hz != config.sample_rate_hz) {
    throw InvalidInputError("sample rate " + std::to_string(clip.sample_rate_hz) + " Hz does not match configured " +
                            std::to_string(config.sample_rate_hz) + " Hz (no resampling)");
  }
  const auto mag = stft_magnitude(clip, config.window, config.hop);
  const auto mel = mel_project(mag, config.sample_rate_hz, config.mel_bands);
  return log_compress_and_frame(mel, config.log_floor, config.patch_frames, config.patch_hop, source_id, label);
}

// ---------------------------------------------------------------------------
// Normalisation

NormStats compute_norm_stats(const PatchSet& patches) {
  if (patches.size() == 0) throw InvalidInputError("normalisation: empty patch set");
  const std::size_t rows = patches.rows, cols = patches.cols;
  NormStats stats;
  stats.mean.assign(rows, 0.0);
  stats.stddev.assign(rows, 0.0);
  const double count = static_cast<double>(patches.size() * cols);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto p = patches.patch(i);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) stats.mean[r] += p[r * cols + c];
    }
  }
  for (double& m : stats.mean) m /= count;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto p = patches.patch(i);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = p[r * cols + c] - stats.mean[r];
        stats.stddev[r] += d * d;
      }
    }
  }
  for (double& s : stats.stddev) {
    s = std::sqrt(s / count);
    if (s < 1e-12) s = 1.0;  // constant band
  }
  return stats;
}

void normalize_patch(std::span<double> patch, std::size_t cols, const NormStats& stats) {
  const std::size_t rows = stats.mean.size();
  if (patch.size() != rows * cols) throw ShapeError("normalisation: patch does not match stats");
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      patch[r * cols + c] = (patch[r * cols + c] - stats.mean[r]) / stats.stddev[r];
    }
  }
}

PatchSet apply_norm(const PatchSet& patches, const NormStats& stats) {
  if (stats.mean.size() != patches.rows) throw ShapeError("normalisation: band count mismatch");
  PatchSet out = patches;
  for (std::size_t i = 0; i < out.size(); ++i) {
    normalize_patch(std::span<double>(out.values).subspan(i * out.patch_size(), out.patch_size()), out.cols, stats);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

struct Manifold {
  std::size_t dim = 0;
  std::vector<double> map;  // [dim × 2] row-major
  std::vector<double> off_direction;
  std::vector<std::array<double, 2>> means;
  double component_std = 0.3;
};

Manifold build_manifold(const SyntheticConfig& config) {
  Manifold m;
  m.dim = config.rows * config.cols;
  auto rng = stream_rng(config.structure_seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(2.0);
  m.map.resize(m.dim * 2);
  for (double& v : m.map) v = scale * normal(rng);

  // Unit direction orthogonal to both map columns (Gram-Schmidt).
  std::vector<double> v(m.dim);
  for (double& x : v) x = normal(rng);
  for (int pass = 0; pass < 2; ++pass) {
    for (int c = 0; c < 2; ++c) {
      double dot = 0.0, norm2 = 0.0;
      for (std::size_t i = 0; i < m.dim; ++i) {
        dot += v[i] * m.map[i * 2 + c];
        norm2 += m.map[i * 2 + c] * m.map[i * 2 + c];
      }
      for (std::size_t i = 0; i < m.dim; ++i) v[i] -= dot / norm2 * m.map[i * 2 + c];
    }
  }
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  m.off_direction = std::move(v);

  const std::array<double, 2> center{1.0, 0.5};
  for (int k = 0; k < 3; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 3.0;
    m.means.push_back({center[0] + 2.0 * std::cos(a), center[1] + 2.0 * std::sin(a)});
  }
  return m;
}

}  // namespace

PatchSet gen_synthetic_dataset(std::uint64_t seed, std::size_t n_normal, std::size_t n_anomalous,
                               const SyntheticConfig& config) {
  if (config.rows == 0 || config.cols == 0) throw InvalidConfigError("synthetic: patch shape must be positive");
  const Manifold m = build_manifold(config);
  const double cr = std::cos(config.anomaly_rotation), sr = std::sin(config.anomaly_rotation);

  PatchSet out;
  out.rows = config.rows;
  out.cols = config.cols;
  const std::size_t total = n_normal + n_anomalous;
  out.values.resize(total * m.dim);
  for (std::size_t i = 0; i < total; ++i) {
    const bool anomalous = i >= n_normal;
    auto rng = stream_rng(seed, i);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, m.means.size() - 1);
    const auto& mu = m.means[pick(rng)];
    double u0 = mu[0] + m.component_std * normal(rng);
    double u1 = mu[1] + m.component_std * normal(rng);
    if (anomalous) {
      const double r0 = cr * u0 - sr * u1;
      const double r1 = sr * u0 + cr * u1;
      u0 = r0 + config.anomaly_translation;
      u1 = r1;
    }
    double* x = out.values.data() + i * m.dim;
    for (std::size_t j = 0; j < m.dim; ++j) {
      x[j] = m.map[j * 2] * u0 + m.map[j * 2 + 1] * u1 + config.noise_std * normal(rng);
      if (anomalous) x[j] += config.anomaly_shift * m.off_direction[j];
    }
    out.source_ids.push_back("synth-" + std::to_string(seed) + "-" + std::to_string(i));
    out.labels.push_back(anomalous ? Label::anomalous : Label::normal);
  }
  return out;
}

// ---------------------------------------------------------------------------
// GMGP container

namespace {
constexpr std::uint32_t kPatchsetVersion = 1;
}

std::vector<std::uint8_t> encode_patchset(const PatchSet& patches) {
  patches.validate();
  io::ByteWriter w;
  w.bytes("GMGP");
  w.u32(kPatchsetVersion);
  w.u32(static_cast<std::uint32_t>(patches.size()));
  w.u32(static_cast<std::uint32_t>(patches.rows));
  w.u32(static_cast<std::uint32_t>(patches.cols));
  for (double v : patches.values) w.f32(static_cast<float>(v));
  for (Label l : patches.labels) w.u8(static_cast<std::uint8_t>(l));
  for (const auto& id : patches.source_ids) w.str(id);
  if (patches.norm_stats) {
    w.u8(1);
    for (double v : patches.norm_stats->mean) w.f64(v);
    for (double v : patches.norm_stats->stddev) w.f64(v);
  } else {
    w.u8(0);
  }
  return std::move(w.buffer());
}

PatchSet decode_patchset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "GMGP");
  if (r.bytes(4) != "GMGP") throw FormatError("GMGP: bad magic");
  const auto version = r.u32();
  if (version != kPatchsetVersion) throw UnsupportedFormatError("GMGP: unsupported version " + std::to_string(version));
  PatchSet out;
  const std::size_t n = r.u32();
  out.rows = r.u32();
  out.cols = r.u32();
  const std::size_t count = n * out.rows * out.cols;
  if (r.remaining() < count * 4 + n) throw FormatError("GMGP: truncated data");
  out.values.resize(count);
  for (double& v : out.values) v = static_cast<double>(r.f32());
  out.labels.resize(n);
  for (Label& l : out.labels) {
    const auto raw = r.u8();
    if (raw > 2) throw FormatError("GMGP: invalid label byte");
    l = static_cast<Label>(raw);
  }
  out.source_ids.resize(n);
  for (auto& id : out.source_ids) id = r.str();
  if (r.u8() == 1) {
    NormStats stats;
    stats.mean.resize(out.rows);
    stats.stddev.resize(out.rows);
    for (double& v : stats.mean) v = r.f64();
    for (double& v : stats.stddev) v = r.f64();
    out.norm_stats = std::move(stats);
  }
  if (!r.done()) throw FormatError("GMGP: trailing bytes");
  return out;
}

void write_patchset(const PatchSet& patches, const std::filesystem::path& path) {
  io::write_file(path, encode_patchset(patches));
}

PatchSet read_patchset(const std::filesystem::path& path) { return decode_patchset(io::read_file(path)); }

}  // namespace gmgan
