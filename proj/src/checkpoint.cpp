#include "gmgan/checkpoint.hpp"

#include <charconv>
#include <sstream>

#include "binary_io.hpp"
#include "gmgan/error.hpp"

namespace gmgan {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

void write_array(io::ByteWriter& w, const std::string& name, const Shape& shape, std::span<const double> data) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.u64(d);
  for (double v : data) w.f64(v);
}

NamedArray read_array(io::ByteReader& r) {
  NamedArray a;
  a.name = r.str();
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw FormatError("GMGC: implausible array rank for '" + a.name + "'");
  for (std::uint32_t i = 0; i < rank; ++i) a.shape.push_back(static_cast<std::size_t>(r.u64()));
  const std::size_t n = shape_numel(a.shape);
  if (n > r.remaining() / 8) throw FormatError("GMGC: truncated array '" + a.name + "'");
  a.data.resize(n);
  for (double& v : a.data) v = r.f64();
  return a;
}

std::string encode_text(const std::map<std::string, std::string>& kv) {
  std::string text;
  for (const auto& [k, v] : kv) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw InvalidConfigError("checkpoint metadata key or value contains a reserved character: " + k);
    }
    text += k + "=" + v + "\n";
  }
  return text;
}

std::uint64_t parse_u64(const std::string& text) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) throw FormatError("GMGC: bad integer '" + text + "'");
  return v;
}

std::map<std::string, std::string> decode_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("GMGC: malformed text line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model& model) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : model.params.arch.to_map()) kv["arch." + k] = v;
  kv["init_seed"] = std::to_string(model.params.init_seed);
  kv["patch_rows"] = std::to_string(model.patch_rows);
  kv["patch_cols"] = std::to_string(model.patch_cols);
  for (const auto& [k, v] : model.meta) kv["meta." + k] = v;

  io::ByteWriter w;
  w.bytes("GMGC");
  w.u32(kCheckpointVersion);
  w.str(encode_text(kv));

  const auto named = model.params.named_parameters();
  std::uint32_t count = static_cast<std::uint32_t>(named.size()) + 2;
  if (model.gmm) count += 3;
  w.u32(count);
  for (const auto& [name, t] : named) write_array(w, name, t.shape(), t.values());
  write_array(w, "norm.mean", {model.norm.mean.size()}, model.norm.mean);
  write_array(w, "norm.std", {model.norm.stddev.size()}, model.norm.stddev);
  if (model.gmm) {
    const auto& g = *model.gmm;
    const std::size_t k = g.components(), d = g.dim();
    std::vector<double> alpha(g.alpha.data(), g.alpha.data() + k);
    std::vector<double> mu, sigma;
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < d; ++i) mu.push_back(g.mu[c](static_cast<Eigen::Index>(i)));
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          sigma.push_back(g.sigma[c](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        }
      }
    }
    write_array(w, "gmm.alpha", {k}, alpha);
    write_array(w, "gmm.mu", {k, d}, mu);
    write_array(w, "gmm.sigma", {k, d, d}, sigma);
  }
  return std::move(w.buffer());
}

Model decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "GMGC");
  if (r.bytes(4) != "GMGC") throw FormatError("GMGC: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw UnsupportedFormatError("GMGC: unsupported version " + std::to_string(version));
  const auto kv = decode_text(r.str());

  std::map<std::string, std::string> arch_kv;
  Model model;
  for (const auto& [k, v] : kv) {
    if (k.rfind("arch.", 0) == 0) arch_kv[k.substr(5)] = v;
    if (k.rfind("meta.", 0) == 0) model.meta[k.substr(5)] = v;
  }
  auto get = [&kv](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("GMGC: missing key '" + key + "'");
    return it->second;
  };
  // Bad numbers or an invalid architecture in the text block mean a corrupt file.
  try {
    const ArchConfig arch = ArchConfig::from_map(arch_kv);
    model.params = init_params(arch, parse_u64(get("init_seed")));
    model.patch_rows = parse_u64(get("patch_rows"));
    model.patch_cols = parse_u64(get("patch_cols"));
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("GMGC: bad header: ") + e.what());
  }
  if (model.patch_rows * model.patch_cols != model.params.arch.input_dim) {
    throw FormatError("GMGC: patch shape does not match the network input");
  }

  std::map<std::string, NamedArray> arrays;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto a = read_array(r);
    arrays[a.name] = std::move(a);
  }
  if (!r.done()) throw FormatError("GMGC: trailing bytes");

  auto take = [&arrays](const std::string& name) -> NamedArray& {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw FormatError("GMGC: missing array '" + name + "'");
    return it->second;
  };
  for (auto& [name, t] : model.params.named_parameters()) {
    auto& a = take(name);
    if (a.shape != t.shape()) throw FormatError("GMGC: array '" + name + "' has shape " + shape_str(a.shape));
    auto dst = t.mutable_values();
    std::copy(a.data.begin(), a.data.end(), dst.begin());
  }
  model.norm.mean = take("norm.mean").data;
  model.norm.stddev = take("norm.std").data;
  if (model.norm.mean.size() != model.patch_rows || model.norm.stddev.size() != model.patch_rows) {
    throw FormatError("GMGC: normalisation stats do not match patch rows");
  }
  if (arrays.count("gmm.alpha")) {
    const auto& alpha = take("gmm.alpha");
    const auto& mu = take("gmm.mu");
    const auto& sigma = take("gmm.sigma");
    const std::size_t k = alpha.data.size();
    if (mu.shape.size() != 2 || mu.shape[0] != k) throw FormatError("GMGC: bad gmm.mu shape");
    const std::size_t d = mu.shape[1];
    if (sigma.shape != Shape{k, d, d}) throw FormatError("GMGC: bad gmm.sigma shape");
    GmmParams g;
    g.alpha = Eigen::Map<const Eigen::VectorXd>(alpha.data.data(), static_cast<Eigen::Index>(k));
    for (std::size_t c = 0; c < k; ++c) {
      g.mu.push_back(Eigen::Map<const Eigen::VectorXd>(mu.data.data() + c * d, static_cast<Eigen::Index>(d)));
      Eigen::MatrixXd s(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sigma.data[(c * d + i) * d + j];
        }
      }
      g.sigma.push_back(std::move(s));
    }
    try {
      g.validate();
    } catch (const NumericError& e) {
      throw FormatError(std::string("GMGC: stored mixture is invalid: ") + e.what());
    }
    model.gmm = std::move(g);
  }
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  auto tmp = path;
  tmp += ".tmp";
  io::write_file(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Model load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace gmgan
