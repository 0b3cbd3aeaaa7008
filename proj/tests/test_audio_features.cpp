#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>

#include "gmgan/audio_features.hpp"
#include "gmgan/error.hpp"
#include "oracles.hpp"

using namespace gmgan;

namespace {

std::vector<std::uint8_t> le32(std::vector<std::uint8_t> v, std::size_t at, std::uint32_t x) {
  for (int b = 0; b < 4; ++b) v[at + b] = static_cast<std::uint8_t>(x >> (8 * b));
  return v;
}

AudioClip tone(std::size_t n, int sr, double hz) {
  AudioClip c;
  c.sample_rate_hz = sr;
  for (std::size_t t = 0; t < n; ++t) c.samples.push_back(0.5 * std::sin(2.0 * std::numbers::pi * hz * t / sr));
  return c;
}

}  // namespace

TEST_CASE("wav round trip is exact for 16-bit mono") {
  const std::vector<std::int16_t> pcm{0, 1, -1, 32767, -32768, 1234};
  const auto bytes = encode_wav_pcm16(pcm, 8000);
  CHECK(bytes.size() == 44 + 2 * pcm.size());
  const AudioClip clip = decode_wav_bytes(bytes);
  CHECK(clip.sample_rate_hz == 8000);
  REQUIRE(clip.samples.size() == pcm.size());
  for (std::size_t i = 0; i < pcm.size(); ++i) CHECK(clip.samples[i] == pcm[i] / 32768.0);

  const auto dir = oracle::temp_dir("wav");
  const auto path = dir / "a.wav";
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                               static_cast<std::streamsize>(bytes.size()));
  CHECK(decode_wav(path).samples == clip.samples);
  CHECK_THROWS_AS(decode_wav(dir / "missing.wav"), IoError);
}

TEST_CASE("stereo is averaged to mono") {
  const std::vector<std::int16_t> pcm{100, 300, -200, 0};
  const AudioClip clip = decode_wav_bytes(encode_wav_pcm16(pcm, 16000, 2));
  REQUIRE(clip.samples.size() == 2);
  CHECK(clip.samples[0] == 200.0 / 32768.0);
  CHECK(clip.samples[1] == -100.0 / 32768.0);
}

TEST_CASE("unsupported and malformed wav files are rejected") {
  const std::vector<std::int16_t> pcm{1, 2, 3, 4};
  const auto good = encode_wav_pcm16(pcm, 16000);
  auto bad = good;
  bad[20] = 3;  // IEEE float format tag
  CHECK_THROWS_AS(decode_wav_bytes(bad), UnsupportedFormatError);
  bad = good;
  bad[34] = 8;  // 8-bit samples
  CHECK_THROWS_AS(decode_wav_bytes(bad), UnsupportedFormatError);
  bad = good;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_wav_bytes(bad), FormatError);
  // Data chunk claims more bytes than the file holds.
  bad = le32(good, 40, 1000);
  CHECK_THROWS_AS(decode_wav_bytes(bad), FormatError);
  CHECK_THROWS_AS(decode_wav_bytes(std::vector<std::uint8_t>(good.begin(), good.begin() + 30)), FormatError);
  CHECK_THROWS_AS(decode_wav_bytes(std::vector<std::uint8_t>{}), FormatError);
}

TEST_CASE("stft magnitude matches the direct DFT of a Hann-windowed frame") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t n : {8u, 16u, 32u, 64u}) {
    AudioClip clip;
    clip.sample_rate_hz = 16000;
    for (std::size_t t = 0; t < 3 * n; ++t) clip.samples.push_back(g(rng));
    const std::size_t hop = n / 2;
    const Eigen::MatrixXd mag = stft_magnitude(clip, n, hop);
    REQUIRE(mag.rows() == static_cast<Eigen::Index>(n / 2 + 1));
    REQUIRE(mag.cols() == static_cast<Eigen::Index>((3 * n - n) / hop + 1));
    for (Eigen::Index f = 0; f < mag.cols(); ++f) {
      std::vector<double> frame(n);
      for (std::size_t t = 0; t < n; ++t) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * t / n);
        frame[t] = w * clip.samples[f * hop + t];
      }
      const auto ref = oracle::dft_magnitude(frame);
      for (std::size_t k = 0; k < ref.size(); ++k) CHECK(std::abs(mag(k, f) - ref[k]) <= 1e-9);
    }
  }
}

TEST_CASE("stft rejects short clips and bad window settings") {
  const AudioClip clip = tone(100, 16000, 440);
  CHECK_THROWS_AS(stft_magnitude(clip, 128, 64), InsufficientAudioError);
  CHECK_THROWS_AS(stft_magnitude(clip, 48, 24), InvalidConfigError);
  CHECK_THROWS_AS(stft_magnitude(clip, 64, 0), InvalidConfigError);
}

TEST_CASE("mel filterbank matches the triangle definition") {
  const Eigen::MatrixXd fb = mel_filterbank(16000, 1024, 64);
  const Eigen::MatrixXd ref = oracle::mel_filterbank(16000, 1024, 64);
  REQUIRE(fb.rows() == 64);
  REQUIRE(fb.cols() == 513);
  CHECK((fb - ref).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(fb.minCoeff() >= 0.0);
  CHECK(fb.maxCoeff() <= 1.0);
  CHECK(hz_to_mel(mel_to_hz(1234.5)) == doctest::Approx(1234.5).epsilon(1e-14));
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
  CHECK_THROWS_AS(mel_filterbank(16000, 16, 64), InvalidConfigError);
}

TEST_CASE("mel projection is linear") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd a(129, 5), b(129, 5);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a(i) = u(rng);
    b(i) = u(rng);
  }
  const Eigen::MatrixXd lhs = mel_project(2.0 * a + 3.0 * b, 8000, 16);
  const Eigen::MatrixXd rhs = 2.0 * mel_project(a, 8000, 16) + 3.0 * mel_project(b, 8000, 16);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("framing produces the expected patch count and values") {
  Eigen::MatrixXd mel(3, 10);
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < 10; ++c) mel(r, c) = std::exp(static_cast<double>(r * 10 + c));
  mel(0, 0) = 0.0;
  for (std::size_t pf = 1; pf <= 10; ++pf) {
    for (std::size_t ph = 1; ph <= pf; ++ph) {
      const PatchSet p = log_compress_and_frame(mel, 1e-10, pf, ph, "x", Label::normal);
      CHECK(p.size() == (10 - pf) / ph + 1);
      CHECK(p.rows == 3);
      CHECK(p.cols == pf);
    }
  }
  const PatchSet p = log_compress_and_frame(mel, 1e-10, 4, 3, "clip", Label::anomalous);
  REQUIRE(p.size() == 3);
  CHECK(p.patch(0)[0] == doctest::Approx(std::log(1e-10)));
  CHECK(p.patch(1)[1 * 4 + 2] == doctest::Approx(15.0));  // band 1, frame 3 + 2
  CHECK(p.source_ids == std::vector<std::string>{"clip", "clip", "clip"});
  CHECK(p.labels[2] == Label::anomalous);
  CHECK_THROWS_AS(log_compress_and_frame(mel, 1e-10, 11, 1), InsufficientAudioError);
  CHECK_THROWS_AS(log_compress_and_frame(mel, 1e-10, 4, 5), InvalidConfigError);
  CHECK_THROWS_AS(log_compress_and_frame(mel, 0.0, 4, 2), InvalidConfigError);
}

TEST_CASE("full clip featurisation") {
  FeatureConfig cfg;
  const AudioClip clip = tone(16000 * 3, 16000, 1000);
  const PatchSet p = featurize_clip(clip, cfg, "tone.wav", Label::normal);
  const std::size_t frames = (clip.samples.size() - cfg.window) / cfg.hop + 1;
  CHECK(p.size() == (frames - cfg.patch_frames) / cfg.patch_hop + 1);
  CHECK(p.rows == cfg.mel_bands);
  CHECK(p.cols == cfg.patch_frames);
  // The loudest band sits at the tone frequency.
  const auto x = p.patch(0);
  std::size_t best = 0;
  for (std::size_t r = 0; r < p.rows; ++r)
    if (x[r * p.cols] > x[best * p.cols]) best = r;
  const Eigen::MatrixXd fb = oracle::mel_filterbank(16000, 1024, 64);
  CHECK(fb(static_cast<Eigen::Index>(best), 64) > 0.0);  // bin 64 = 1000 Hz
  CHECK_THROWS_AS(featurize_clip(tone(500, 16000, 100), cfg, "s", Label::normal), InsufficientAudioError);
  CHECK_THROWS_AS(featurize_clip(tone(50000, 8000, 100), cfg, "s", Label::normal), InvalidInputError);
}

TEST_CASE("normalisation gives zero mean and unit deviation per band") {
  const PatchSet raw = gen_synthetic_dataset(3, 300, 0);
  const NormStats s = compute_norm_stats(raw);
  const PatchSet z = apply_norm(raw, s);
  for (std::size_t r = 0; r < z.rows; ++r) {
    double m = 0.0, v = 0.0, n = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i)
      for (std::size_t c = 0; c < z.cols; ++c) {
        m += z.patch(i)[r * z.cols + c];
        n += 1.0;
      }
    m /= n;
    for (std::size_t i = 0; i < z.size(); ++i)
      for (std::size_t c = 0; c < z.cols; ++c) v += std::pow(z.patch(i)[r * z.cols + c] - m, 2);
    CHECK(std::abs(m) <= 1e-6);
    CHECK(std::abs(std::sqrt(v / n) - 1.0) <= 1e-6);
  }
  PatchSet constant = raw;
  std::fill(constant.values.begin(), constant.values.end(), 2.0);
  CHECK(compute_norm_stats(constant).stddev[0] == 1.0);
  CHECK_THROWS_AS(compute_norm_stats(PatchSet{}), InvalidInputError);
}

TEST_CASE("synthetic data is deterministic per seed") {
  const PatchSet a = gen_synthetic_dataset(9, 20, 5);
  const PatchSet b = gen_synthetic_dataset(9, 20, 5);
  const PatchSet c = gen_synthetic_dataset(10, 20, 5);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  CHECK(a.size() == 25);
  CHECK(a.labels[19] == Label::normal);
  CHECK(a.labels[20] == Label::anomalous);
  // Patch i does not depend on how many patches are drawn.
  const PatchSet prefix = gen_synthetic_dataset(9, 10, 0);
  CHECK(std::equal(prefix.values.begin(), prefix.values.end(), a.values.begin()));
  const PatchSet none = gen_synthetic_dataset(9, 7, 0);
  CHECK(std::all_of(none.labels.begin(), none.labels.end(), [](Label l) { return l == Label::normal; }));
}

TEST_CASE("anomalies sit off the normal manifold by the configured distance") {
  SyntheticConfig cfg;
  cfg.anomaly_translation = 0.0;
  cfg.anomaly_shift = 1.5;
  const std::size_t n = 2000;
  const PatchSet p = gen_synthetic_dataset(5, n, n, cfg);
  const Eigen::Index d = static_cast<Eigen::Index>(p.patch_size());
  Eigen::MatrixXd normal(n, d), anom(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      normal(i, j) = p.patch(i)[j];
      anom(i, j) = p.patch(n + i)[j];
    }
  }
  // The normal data spans a plane; recover it from the top two principal axes.
  const Eigen::RowVectorXd mean = normal.colwise().mean();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(normal.rowwise() - mean, Eigen::ComputeThinV);
  const Eigen::MatrixXd basis = svd.matrixV().leftCols(2);
  const Eigen::VectorXd diff = (anom.colwise().mean() - mean).transpose();
  const Eigen::VectorXd off = diff - basis * (basis.transpose() * diff);
  CHECK(std::abs(off.norm() - cfg.anomaly_shift) < 0.1);
}

TEST_CASE("patch container round trip and corruption") {
  PatchSet p = gen_synthetic_dataset(2, 4, 2);
  p.norm_stats = compute_norm_stats(p);
  const auto bytes = encode_patchset(p);
  const PatchSet q = decode_patchset(bytes);
  CHECK(q.rows == p.rows);
  CHECK(q.labels == p.labels);
  CHECK(q.source_ids == p.source_ids);
  REQUIRE(q.norm_stats.has_value());
  CHECK(q.norm_stats->mean == p.norm_stats->mean);
  for (std::size_t i = 0; i < p.values.size(); ++i)
    CHECK(q.values[i] == static_cast<double>(static_cast<float>(p.values[i])));
  CHECK(encode_patchset(q) == bytes);

  const auto dir = oracle::temp_dir("gmgp");
  write_patchset(p, dir / "p.gmgp");
  CHECK(oracle::file_bytes(dir / "p.gmgp") == bytes);
  CHECK(read_patchset(dir / "p.gmgp").values == q.values);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_patchset(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  CHECK_THROWS_AS(decode_patchset(bad), UnsupportedFormatError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_patchset(bad), FormatError);
  CHECK_THROWS_AS(decode_patchset(std::span(bytes).first(bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_patchset(std::span(bytes).first(40)), FormatError);
  bad = bytes;
  bad[20 + 4 * p.values.size()] = 7;  // first label byte
  CHECK_THROWS_AS(decode_patchset(bad), FormatError);
}

TEST_CASE("patch set helpers") {
  const PatchSet a = gen_synthetic_dataset(1, 3, 1);
  PatchSet b = a;
  b.append(a);
  CHECK(b.size() == 8);
  const std::vector<std::size_t> idx{3, 0};
  const PatchSet s = a.subset(idx);
  CHECK(s.labels == std::vector<Label>{Label::anomalous, Label::normal});
  CHECK(std::equal(s.patch(1).begin(), s.patch(1).end(), a.patch(0).begin()));
  CHECK_THROWS_AS(a.patch(4), InvalidInputError);
  PatchSet other = gen_synthetic_dataset(1, 1, 0, SyntheticConfig{.rows = 4, .cols = 4});
  CHECK_THROWS_AS(b.append(other), ShapeError);
  CHECK(parse_label("anomalous") == Label::anomalous);
  CHECK(std::string(label_name(Label::normal)) == "normal");
  CHECK_THROWS_AS(parse_label("weird"), InvalidInputError);
}
