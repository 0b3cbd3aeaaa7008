#include "gmgan/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "gmgan/error.hpp"

namespace gmgan {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end || v.empty()) {
    throw InvalidConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  }
  return out;
}

double parse_f64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw InvalidConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, trim(item)));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest text that reads back identically.
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[64];
    std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Entry {
  std::string key;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define GMGAN_U64(KEY, FIELD, HELP)                                                         \
  Entry {                                                                                   \
    KEY, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = parse_u64(KEY, v); },    \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                          \
  }
#define GMGAN_INT(KEY, FIELD, HELP)                                                                    \
  Entry {                                                                                              \
    KEY, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = static_cast<int>(parse_u64(KEY, v)); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                     \
  }
#define GMGAN_F64(KEY, FIELD, HELP)                                                      \
  Entry {                                                                                \
    KEY, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = parse_f64(KEY, v); }, \
        [](const RunConfig& c) { return fmt(c.FIELD); }                                  \
  }
#define GMGAN_LIST(KEY, FIELD, HELP)                                                      \
  Entry {                                                                                 \
    KEY, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = parse_list(KEY, v); }, \
        [](const RunConfig& c) { return fmt_list(c.FIELD); }                              \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      GMGAN_U64("epochs", train.epochs, "passes over the training set"),
      GMGAN_U64("batch_size", train.batch_size, "patches per step (>= 2)"),
      GMGAN_U64("seed", train.seed, "seed for initialisation and shuffling"),
      GMGAN_F64("lr_g", train.lr_g, "Adam step size for encoders, decoder and estimation net"),
      GMGAN_F64("lr_d", train.lr_d, "Adam step size for the discriminator"),
      GMGAN_F64("beta1", train.beta1, "Adam first-moment decay"),
      GMGAN_F64("beta2", train.beta2, "Adam second-moment decay"),
      GMGAN_F64("adam_eps", train.adam_eps, "Adam denominator offset"),
      GMGAN_F64("w_i", train.weights.w_i, "weight of the reconstruction loss"),
      GMGAN_F64("w_a", train.weights.w_a, "weight of the generator adversarial loss"),
      GMGAN_F64("w_z", train.weights.w_z, "weight of the latent loss"),
      GMGAN_F64("w_e", train.weights.w_e, "weight of the estimation loss"),
      GMGAN_F64("lambda1", train.lambda1, "energy term inside the estimation loss"),
      GMGAN_F64("lambda2", train.lambda2, "covariance-diagonal penalty inside the estimation loss"),
      GMGAN_F64("cov_eps", train.cov_eps, "ridge added to every mixture covariance"),
      GMGAN_F64("clip_norm", train.clip_norm, "global gradient norm clip, 0 disables"),
      GMGAN_U64("checkpoint_every", train.checkpoint_every, "steps between checkpoints, 0 disables"),
      GMGAN_LIST("encoder_hidden", train.arch.encoder_hidden, "hidden widths of both encoders"),
      GMGAN_U64("latent_dim", train.arch.latent_dim, "latent width"),
      GMGAN_LIST("disc_hidden", train.arch.disc_hidden, "hidden widths of the discriminator"),
      GMGAN_LIST("est_hidden", train.arch.est_hidden, "hidden widths of the estimation net"),
      GMGAN_U64("mixtures", train.arch.mixtures, "mixture components"),
      GMGAN_F64("leaky_slope", train.arch.leaky_slope, "negative slope of leaky ReLU"),
      GMGAN_F64("decoder_scale", train.arch.decoder_scale, "decoder output range (scale of tanh)"),
      GMGAN_INT("sample_rate", features.sample_rate_hz, "required WAV sample rate, Hz"),
      GMGAN_U64("window", features.window, "STFT window length (power of two)"),
      GMGAN_U64("hop", features.hop, "STFT hop"),
      GMGAN_U64("mel_bands", features.mel_bands, "mel filterbank size"),
      GMGAN_U64("patch_frames", features.patch_frames, "frames per patch"),
      GMGAN_U64("patch_hop", features.patch_hop, "frames between patch starts"),
      GMGAN_F64("log_floor", features.log_floor, "floor applied before the log"),
      GMGAN_U64("synth_rows", synthetic.rows, "synthetic patch rows"),
      GMGAN_U64("synth_cols", synthetic.cols, "synthetic patch columns"),
      GMGAN_U64("synth_structure_seed", synthetic.structure_seed, "seed of the synthetic manifold"),
      GMGAN_F64("synth_noise_std", synthetic.noise_std, "synthetic isotropic noise"),
      GMGAN_F64("synth_anomaly_shift", synthetic.anomaly_shift, "off-manifold offset of anomalies"),
      GMGAN_F64("synth_anomaly_translation", synthetic.anomaly_translation,
                "latent offset of anomalies, in latent units"),
      GMGAN_F64("synth_anomaly_rotation", synthetic.anomaly_rotation, "rotation of anomalous latents, radians"),
      Entry{"score_mode", "latent or energy",
            [](RunConfig& c, const std::string& v) { c.score_mode = parse_score_mode(v); },
            [](const RunConfig& c) { return std::string(score_mode_name(c.score_mode)); }},
      Entry{"aggregator", "per-clip aggregation of patch scores: max or mean",
            [](RunConfig& c, const std::string& v) { c.aggregator = parse_aggregator(v); },
            [](const RunConfig& c) { return std::string(aggregator_name(c.aggregator)); }},
      Entry{"per_patch", "score patches individually instead of per source clip",
            [](RunConfig& c, const std::string& v) { c.per_patch = parse_bool("per_patch", v); },
            [](const RunConfig& c) { return std::string(c.per_patch ? "true" : "false"); }},
  };
  return table;
}

#undef GMGAN_U64
#undef GMGAN_INT
#undef GMGAN_F64
#undef GMGAN_LIST

const Entry& find_entry(const std::string& key) {
  for (const auto& e : entries()) {
    if (e.key == key) return e;
  }
  throw InvalidConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { find_entry(key).set(*this, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return find_entry(key).get(*this); }

void RunConfig::validate() const {
  TrainConfig t = train;
  // input_dim follows the data; only the declared widths are checked here.
  t.arch.input_dim = std::max<std::size_t>(t.arch.input_dim, 1);
  t.validate();
  if (features.sample_rate_hz <= 0) throw InvalidConfigError("sample_rate must be positive");
  if (features.window < 2 || (features.window & (features.window - 1)) != 0) {
    throw InvalidConfigError("window must be a power of two >= 2");
  }
  if (features.hop == 0 || features.patch_frames == 0 || features.patch_hop == 0 || features.mel_bands < 2) {
    throw InvalidConfigError("hop, patch_frames and patch_hop must be positive and mel_bands >= 2");
  }
  if (!(features.log_floor > 0.0)) throw InvalidConfigError("log_floor must be positive");
  if (synthetic.rows == 0 || synthetic.cols == 0) throw InvalidConfigError("synthetic patch shape must be positive");
  if (!(synthetic.noise_std >= 0.0)) throw InvalidConfigError("synth_noise_std must be nonnegative");
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InvalidConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfigError("cannot read config file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_override(line);
    } catch (const InvalidConfigError& e) {
      throw InvalidConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

const std::vector<ConfigKeyInfo>& config_keys() {
  static const std::vector<ConfigKeyInfo> keys = [] {
    std::vector<ConfigKeyInfo> out;
    for (const auto& e : entries()) out.push_back({e.key, e.help});
    return out;
  }();
  return keys;
}

std::string describe_config(const RunConfig& config) {
  std::string out;
  for (const auto& e : entries()) out += "# " + e.help + "\n" + e.key + " = " + e.get(config) + "\n";
  return out;
}

}  // namespace gmgan
