#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "gmgan/audio_features.hpp"
#include "gmgan/checkpoint.hpp"
#include "gmgan/cli.hpp"
#include "gmgan/config.hpp"
#include "gmgan/error.hpp"
#include "gmgan/evaluation.hpp"
#include "oracles.hpp"

using namespace gmgan;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "gmgan");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string p(const fs::path& path) { return path.string(); }

const std::vector<std::string> kTiny{"--set", "synth_rows=4",     "--set", "synth_cols=4",     "--set",
                                     "encoder_hidden=8",          "--set", "latent_dim=2",     "--set",
                                     "disc_hidden=4",             "--set", "est_hidden=3",     "--set",
                                     "mixtures=2",                "--set", "batch_size=4",     "--set",
                                     "epochs=1"};

std::vector<std::string> with_tiny(std::vector<std::string> a) {
  a.insert(a.end(), kTiny.begin(), kTiny.end());
  return a;
}

void write_wav(const fs::path& path, std::size_t n, double hz, int sr = 16000) {
  std::vector<std::int16_t> pcm(n);
  for (std::size_t t = 0; t < n; ++t)
    pcm[t] = static_cast<std::int16_t>(8000.0 * std::sin(2.0 * std::numbers::pi * hz * t / sr));
  const auto bytes = encode_wav_pcm16(pcm, sr);
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                               static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("help and usage errors") {
  const Run help = cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("gen-synth") != std::string::npos);
  const Run sub = cli({"gen-synth", "--help"});
  CHECK(sub.code == 0);
  CHECK(sub.out.find("2000") != std::string::npos);  // defaults are shown
  CHECK(cli({}).code == 1);
  CHECK(cli({"bogus"}).code == 1);
  CHECK(cli({"train"}).code == 1);  // --data is required
  CHECK(cli({"print-config", "--set", "no_such_key=1"}).code == 1);
  CHECK(cli({"print-config", "--set", "epochs"}).code == 1);
  CHECK(cli({"print-config", "--set", "lr_g=-1"}).code == 1);
  CHECK(cli({"print-config", "--config", "/nonexistent/file.cfg"}).code == 1);
}

TEST_CASE("print-config lists every key") {
  const Run r = cli({"print-config", "--set", "epochs=7"});
  CHECK(r.code == 0);
  for (const auto& k : config_keys()) CHECK(r.out.find(k.key + " = ") != std::string::npos);
  CHECK(r.out.find("epochs = 7") != std::string::npos);

  // The printed text is itself a valid config file.
  const auto dir = oracle::temp_dir("cli-config");
  std::ofstream(dir / "a.cfg") << r.out;
  const Run again = cli({"print-config", "--config", p(dir / "a.cfg")});
  CHECK(again.code == 0);
  CHECK(again.out == r.out);
}

TEST_CASE("gen-synth writes deterministic patch files") {
  const auto dir = oracle::temp_dir("cli-gen");
  REQUIRE(cli({"gen-synth", "--seed", "3", "--n-normal", "10", "--n-anom", "4", "--out", p(dir / "a.gmgp")}).code == 0);
  REQUIRE(cli({"gen-synth", "--seed", "3", "--n-normal", "10", "--n-anom", "4", "--out", p(dir / "b.gmgp")}).code == 0);
  CHECK(oracle::file_bytes(dir / "a.gmgp") == oracle::file_bytes(dir / "b.gmgp"));
  const PatchSet ps = read_patchset(dir / "a.gmgp");
  CHECK(ps.size() == 14);
  CHECK(ps.rows == 16);
  CHECK(ps.labels.back() == Label::anomalous);

  const fs::path cwd = fs::current_path();
  fs::current_path(dir);
  const Run d = cli({"gen-synth"});
  fs::current_path(cwd);
  CHECK(d.code == 0);
  const PatchSet def = read_patchset(dir / "synth.gmgp");
  CHECK(def.size() == 2000);
  CHECK(std::all_of(def.labels.begin(), def.labels.end(), [](Label l) { return l == Label::normal; }));
}

TEST_CASE("featurize a directory of wav files") {
  const auto dir = oracle::temp_dir("cli-feat");
  fs::create_directories(dir / "empty");
  CHECK(cli({"featurize", "--wav-dir", p(dir / "empty"), "--out", p(dir / "x.gmgp")}).code == 2);
  CHECK(cli({"featurize", "--wav-dir", p(dir / "nope"), "--out", p(dir / "x.gmgp")}).code == 2);

  fs::create_directories(dir / "wavs");
  write_wav(dir / "wavs" / "b.wav", 16000 * 3, 440.0);
  write_wav(dir / "wavs" / "a.wav", 16000 * 3, 2000.0);
  write_wav(dir / "wavs" / "short.wav", 300, 440.0);
  std::ofstream(dir / "wavs" / "broken.wav") << "not a wav";
  std::ofstream(dir / "wavs" / "labels.csv") << "filename,label\na.wav,anomalous\nb.wav,normal\n";
  const Run r = cli({"featurize", "--wav-dir", p(dir / "wavs"), "--out", p(dir / "f1.gmgp")});
  CHECK(r.code == 0);
  CHECK(r.err.find("short.wav") != std::string::npos);
  CHECK(r.err.find("broken.wav") != std::string::npos);
  const PatchSet ps = read_patchset(dir / "f1.gmgp");
  CHECK(ps.size() >= 2);
  CHECK(ps.rows == 64);
  CHECK(ps.source_ids.front() == "a.wav");
  CHECK(ps.labels.front() == Label::anomalous);
  CHECK(ps.labels.back() == Label::normal);
  CHECK(ps.norm_stats.has_value());
  REQUIRE(cli({"featurize", "--wav-dir", p(dir / "wavs"), "--out", p(dir / "f2.gmgp")}).code == 0);
  CHECK(oracle::file_bytes(dir / "f1.gmgp") == oracle::file_bytes(dir / "f2.gmgp"));

  std::ofstream(dir / "bad_labels.csv") << "a.wav,maybe\n";
  CHECK(cli({"featurize", "--wav-dir", p(dir / "wavs"), "--labels", p(dir / "bad_labels.csv"), "--out",
             p(dir / "f3.gmgp")})
            .code == 2);
}

TEST_CASE("train, eval and export on a tiny run") {
  const auto dir = oracle::temp_dir("cli-train");
  REQUIRE(cli(with_tiny({"gen-synth", "--seed", "1", "--n-normal", "8", "--out", p(dir / "train.gmgp")})).code == 0);
  const Run t1 = cli(with_tiny({"train", "--data", p(dir / "train.gmgp"), "--out-ckpt", p(dir / "a.gmgc"),
                                "--metrics", p(dir / "a.csv")}));
  REQUIRE(t1.code == 0);
  CHECK(t1.err.find("epoch 1") != std::string::npos);
  const Model m = load_checkpoint(dir / "a.gmgc");
  CHECK(m.meta.at("train.step") == "2");
  std::ifstream metrics(dir / "a.csv");
  std::size_t lines = 0;
  for (std::string l; std::getline(metrics, l);) ++lines;
  CHECK(lines == 1 + 2);

  REQUIRE(cli(with_tiny({"train", "--quiet", "--data", p(dir / "train.gmgp"), "--out-ckpt", p(dir / "b.gmgc"),
                         "--metrics", p(dir / "b.csv")}))
              .code == 0);
  CHECK(oracle::file_bytes(dir / "a.gmgc") == oracle::file_bytes(dir / "b.gmgc"));

  REQUIRE(cli(with_tiny({"gen-synth", "--seed", "2", "--n-normal", "6", "--n-anom", "6", "--out",
                         p(dir / "test.gmgp")}))
              .code == 0);
  const Run e = cli({"eval", "--data", p(dir / "test.gmgp"), "--ckpt", p(dir / "a.gmgc"), "--scores-out",
                     p(dir / "s.csv"), "--mode", "energy", "--agg", "mean"});
  CHECK(e.code == 0);
  CHECK(e.out.find("AUC ") != std::string::npos);
  CHECK(read_scores_csv(dir / "s.csv").size() == 12);

  const Run x = cli({"export-latents", "--data", p(dir / "test.gmgp"), "--ckpt", p(dir / "a.gmgc"), "--out",
                     p(dir / "z.csv")});
  CHECK(x.code == 0);
  std::ifstream zin(dir / "z.csv");
  std::string header;
  std::getline(zin, header);
  CHECK(header == "source_id,label,z_1,z_2,score");

  // Mismatched patch shape, missing checkpoint, corrupt checkpoint.
  REQUIRE(cli({"gen-synth", "--n-normal", "2", "--n-anom", "2", "--out", p(dir / "big.gmgp")}).code == 0);
  CHECK(cli({"eval", "--data", p(dir / "big.gmgp"), "--ckpt", p(dir / "a.gmgc"), "--scores-out", p(dir / "s2.csv")})
            .code == 2);
  CHECK(cli({"eval", "--data", p(dir / "test.gmgp"), "--ckpt", p(dir / "none.gmgc")}).code == 2);
  std::ofstream(dir / "junk.gmgc") << "GMGCjunk";
  CHECK(cli({"eval", "--data", p(dir / "test.gmgp"), "--ckpt", p(dir / "junk.gmgc")}).code == 2);
  CHECK(cli({"eval", "--data", p(dir / "test.gmgp"), "--ckpt", p(dir / "a.gmgc"), "--mode", "psychic"}).code == 1);
}

TEST_CASE("eval reports a perfect separation and rejects a single class") {
  const auto dir = oracle::temp_dir("cli-eval");
  // A fixture where anomalous patches carry huge values in one band, far
  // outside anything the network saw during training.
  REQUIRE(cli(with_tiny({"gen-synth", "--seed", "4", "--n-normal", "8", "--out", p(dir / "train.gmgp")})).code == 0);
  REQUIRE(cli(with_tiny({"train", "--quiet", "--data", p(dir / "train.gmgp"), "--out-ckpt", p(dir / "m.gmgc"),
                         "--metrics", p(dir / "m.csv")}))
              .code == 0);
  const Model m = load_checkpoint(dir / "m.gmgc");
  PatchSet fixture = read_patchset(dir / "train.gmgp");
  fixture.norm_stats.reset();
  PatchSet anom = fixture;
  for (std::size_t i = 0; i < anom.size(); ++i) {
    anom.labels[i] = Label::anomalous;
    anom.source_ids[i] += "-anom";
  }
  // Pick the direction that separates under this particular network: score
  // both candidate shifts and keep the larger.
  PatchSet up = anom, down = anom;
  for (std::size_t i = 0; i < anom.values.size(); ++i) {
    up.values[i] += 1e3;
    down.values[i] -= 1e3;
  }
  const auto su = score_patches(m, up), sd = score_patches(m, down), sn = score_patches(m, fixture);
  const double max_normal = *std::max_element(sn.begin(), sn.end());
  const bool use_up = *std::min_element(su.begin(), su.end()) > max_normal;
  const bool use_down = *std::min_element(sd.begin(), sd.end()) > max_normal;
  REQUIRE((use_up || use_down));
  fixture.append(use_up ? up : down);
  write_patchset(fixture, dir / "fixture.gmgp");
  const Run r = cli({"eval", "--data", p(dir / "fixture.gmgp"), "--ckpt", p(dir / "m.gmgc"), "--scores-out",
                     p(dir / "s.csv"), "--per-patch"});
  CHECK(r.code == 0);
  CHECK(r.out.find("AUC 1.000000") != std::string::npos);

  const Run single = cli({"eval", "--data", p(dir / "train.gmgp"), "--ckpt", p(dir / "m.gmgc"), "--scores-out",
                          p(dir / "s1.csv")});
  CHECK(single.code == 2);
  CHECK(single.err.find("anomalous") != std::string::npos);
}

TEST_CASE("verify passes and catches an injected gradient fault") {
  const Run ok = cli({"verify", "--instances", "3"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("FAIL") == std::string::npos);
  const Run bad = cli({"verify", "--instances", "3", "--inject-fault", "logdet_spd"});
  CHECK(bad.code == 4);
  CHECK(bad.out.find("FAIL") != std::string::npos);
  // The fault does not leak into later runs.
  CHECK(cli({"verify", "--instances", "2"}).code == 0);
}
