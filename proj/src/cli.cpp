#include "gmgan/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "gmgan/audio_features.hpp"
#include "gmgan/checkpoint.hpp"
#include "gmgan/config.hpp"
#include "gmgan/error.hpp"
#include "gmgan/evaluation.hpp"
#include "gmgan/trainer.hpp"
#include "gmgan/verify.hpp"

namespace gmgan {

namespace {

namespace fs = std::filesystem;

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> overrides;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file (see print-config)");
    cmd->add_option("--set", overrides, "override one config key, e.g. --set epochs=5 (repeatable)");
  }

  RunConfig load() const {
    RunConfig c;
    if (!config_path.empty()) c.load_file(config_path);
    for (const auto& o : overrides) c.apply_override(o);
    c.validate();
    return c;
  }
};

std::map<std::string, Label> read_label_sidecar(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read labels file " + path.string());
  std::map<std::string, Label> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected filename,label");
    }
    const std::string name = line.substr(0, comma), label = line.substr(comma + 1);
    if (lineno == 1 && name == "filename" && label == "label") continue;
    try {
      out[name] = parse_label(label);
    } catch (const Error& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

PatchSet featurize_directory(const fs::path& dir, const std::optional<fs::path>& labels_path,
                             const FeatureConfig& features, std::ostream& err) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".wav") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InvalidInputError("no .wav files in " + dir.string());

  std::map<std::string, Label> labels;
  if (labels_path) {
    labels = read_label_sidecar(*labels_path);
  } else if (fs::exists(dir / "labels.csv")) {
    labels = read_label_sidecar(dir / "labels.csv");
  }

  PatchSet all;
  std::size_t ok = 0;
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    const auto it = labels.find(name);
    const Label label = it == labels.end() ? Label::unknown : it->second;
    try {
      PatchSet p = featurize_clip(decode_wav(f), features, name, label);
      if (all.size() == 0) {
        all = std::move(p);
      } else {
        all.append(p);
      }
      ++ok;
    } catch (const Error& e) {
      err << "warning: skipping " << name << ": " << e.what() << "\n";
    }
  }
  if (ok == 0) throw InvalidInputError("none of the " + std::to_string(files.size()) + " WAV files could be used");
  all.norm_stats = compute_norm_stats(all);
  return all;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-supervised acoustic anomaly detection: adversarial autoencoder with a mixture-density head."};
  app.name(args.empty() ? "gmgan" : fs::path(args.front()).filename().string());
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  // gen-synth
  struct {
    std::uint64_t seed = 1;
    std::size_t n_normal = 2000;
    std::size_t n_anom = 0;
    std::string out = "synth.gmgp";
    ConfigFlags cfg;
  } gs;
  auto* gen = app.add_subcommand("gen-synth", "write a synthetic patch set");
  gen->add_option("--seed", gs.seed, "sample seed");
  gen->add_option("--n-normal", gs.n_normal, "normal patches");
  gen->add_option("--n-anom", gs.n_anom, "anomalous patches");
  gen->add_option("--out", gs.out, "output patch file");
  gs.cfg.add_to(gen);

  // featurize
  struct {
    std::string wav_dir;
    std::string out = "features.gmgp";
    std::string labels;
    ConfigFlags cfg;
  } fz;
  auto* feat = app.add_subcommand("featurize", "turn a directory of WAV files into log-mel patches");
  feat->add_option("--wav-dir", fz.wav_dir, "directory of 16-bit PCM WAV files")->required();
  feat->add_option("--out", fz.out, "output patch file");
  feat->add_option("--labels", fz.labels, "filename,label CSV (default: <wav-dir>/labels.csv if present)");
  fz.cfg.add_to(feat);

  // train
  struct {
    std::string data;
    std::string out_ckpt = "model.gmgc";
    std::string metrics = "metrics.csv";
    bool quiet = false;
    ConfigFlags cfg;
  } tr;
  auto* train = app.add_subcommand("train", "train on normal patches");
  train->add_option("--data", tr.data, "training patch file")->required();
  train->add_option("--out-ckpt", tr.out_ckpt, "checkpoint to write");
  train->add_option("--metrics", tr.metrics, "per-step metrics CSV");
  train->add_flag("--quiet", tr.quiet, "no per-epoch progress");
  tr.cfg.add_to(train);

  // eval
  struct {
    std::string data;
    std::string ckpt = "model.gmgc";
    std::string scores_out = "scores.csv";
    std::string mode;
    std::string agg;
    bool per_patch = false;
    ConfigFlags cfg;
  } ev;
  auto* eval = app.add_subcommand("eval", "score labelled patches and report AUC");
  eval->add_option("--data", ev.data, "patch file with labels")->required();
  eval->add_option("--ckpt", ev.ckpt, "trained checkpoint");
  eval->add_option("--scores-out", ev.scores_out, "scores CSV to write");
  eval->add_option("--mode", ev.mode, "latent or energy (default: config score_mode = latent)");
  eval->add_option("--agg", ev.agg, "max or mean (default: config aggregator = max)");
  eval->add_flag("--per-patch", ev.per_patch, "score patches instead of clips");
  ev.cfg.add_to(eval);

  // verify
  struct {
    std::uint64_t seed = 7;
    std::size_t instances = 10;
    std::string fault_op;
  } vf;
  auto* verify = app.add_subcommand("verify", "run the built-in gradient and formula checks");
  verify->add_option("--seed", vf.seed, "seed for the random instances");
  verify->add_option("--instances", vf.instances, "random instances per gradient check");
  verify->add_option("--inject-fault", vf.fault_op, "corrupt the gradient of one op (negative control)")
      ->group("");

  // export-latents
  struct {
    std::string data;
    std::string ckpt = "model.gmgc";
    std::string out = "latents.csv";
  } ex;
  auto* exp = app.add_subcommand("export-latents", "write per-patch latents and scores as CSV");
  exp->add_option("--data", ex.data, "patch file")->required();
  exp->add_option("--ckpt", ex.ckpt, "trained checkpoint");
  exp->add_option("--out", ex.out, "latents CSV to write");

  // print-config
  ConfigFlags pc;
  auto* print = app.add_subcommand("print-config", "print every config key with its value and meaning");
  pc.add_to(print);

  std::vector<std::string> rev(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  try {
    if (gen->parsed()) {
      const RunConfig c = gs.cfg.load();
      const PatchSet p = gen_synthetic_dataset(gs.seed, gs.n_normal, gs.n_anom, c.synthetic);
      write_patchset(p, gs.out);
      out << "wrote " << p.size() << " patches (" << gs.n_normal << " normal, " << gs.n_anom << " anomalous, "
          << p.rows << "x" << p.cols << ") to " << gs.out << "\n";
    } else if (feat->parsed()) {
      const RunConfig c = fz.cfg.load();
      const auto labels = fz.labels.empty() ? std::nullopt : std::optional<fs::path>(fz.labels);
      const PatchSet p = featurize_directory(fz.wav_dir, labels, c.features, err);
      write_patchset(p, fz.out);
      out << "wrote " << p.size() << " patches (" << p.rows << "x" << p.cols << ") to " << fz.out << "\n";
    } else if (train->parsed()) {
      const RunConfig c = tr.cfg.load();
      const PatchSet data = read_patchset(tr.data);
      FitOptions opts;
      opts.checkpoint_path = fs::path(tr.out_ckpt);
      opts.metrics_path = fs::path(tr.metrics);
      const std::size_t batch = std::min(c.train.batch_size, data.size());
      const std::size_t per_epoch = batch == 0 ? 0 : data.size() / batch;
      if (!tr.quiet) {
        opts.on_step = [&err, per_epoch](const StepMetrics& m) {
          if (per_epoch == 0 || m.step % per_epoch != 0) return;
          err << "epoch " << (m.epoch + 1) << " step " << m.step << "  total " << fmt("%.5f", m.losses.total)
              << "  l_irec " << fmt("%.4f", m.losses.l_irec) << "  l_zrec " << fmt("%.4f", m.losses.l_zrec)
              << "  l_es " << fmt("%.3f", m.losses.l_es) << "  l_adv_d " << fmt("%.4f", m.losses.l_adv_d) << "\n";
        };
      }
      const FitResult r = fit(c.train, data, opts);
      out << "trained " << r.state.step << " steps on " << data.size() << " patches; checkpoint " << tr.out_ckpt
          << ", metrics " << tr.metrics << "\n";
    } else if (eval->parsed()) {
      RunConfig c = ev.cfg.load();
      if (!ev.mode.empty()) c.score_mode = parse_score_mode(ev.mode);
      if (!ev.agg.empty()) c.aggregator = parse_aggregator(ev.agg);
      if (ev.per_patch) c.per_patch = true;
      const Model model = load_checkpoint(ev.ckpt);
      const PatchSet data = read_patchset(ev.data);
      const auto samples = c.per_patch ? score_per_patch(model, data, c.score_mode)
                                       : score_per_clip(model, data, c.score_mode, c.aggregator);
      write_scores_csv(samples, ev.scores_out);
      const RocResult roc = auc(samples);
      out << "scored " << samples.size() << (c.per_patch ? " patches" : " clips") << " (mode "
          << score_mode_name(c.score_mode) << (c.per_patch ? "" : std::string(", ") + aggregator_name(c.aggregator))
          << ")\n";
      out << "AUC " << fmt("%.6f", roc.auc) << "\n";
    } else if (verify->parsed()) {
      if (!vf.fault_op.empty()) detail::set_gradient_fault(vf.fault_op, 1.001);
      struct Reset {
        ~Reset() { detail::clear_gradient_fault(); }
      } reset;
      VerifyOptions o;
      o.seed = vf.seed;
      o.instances = vf.instances;
      const VerifyReport report = run_verification(o);
      out << report.to_string();
      if (!report.passed()) throw VerificationError("verification failed");
    } else if (exp->parsed()) {
      const Model model = load_checkpoint(ex.ckpt);
      const PatchSet data = read_patchset(ex.data);
      export_latents(model, data, ex.out);
      out << "wrote " << data.size() << " rows to " << ex.out << "\n";
    } else if (print->parsed()) {
      out << describe_config(pc.load());
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::data);
  }
  return 0;
}

}  // namespace gmgan
