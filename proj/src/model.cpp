#include "gmgan/model.hpp"

#include <cmath>
#include <sstream>

#include "gmgan/error.hpp"
#include "gmgan/random.hpp"

namespace gmgan {

namespace {

std::string join_widths(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(w[i]);
  }
  return s;
}

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(item, &pos);
    if (pos != item.size() || v == 0) throw InvalidConfigError("invalid layer width '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

const std::string& lookup(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("architecture is missing key '" + key + "'");
  return it->second;
}

std::vector<std::size_t> concat(std::size_t first, const std::vector<std::size_t>& mid, std::size_t last) {
  std::vector<std::size_t> w{first};
  w.insert(w.end(), mid.begin(), mid.end());
  w.push_back(last);
  return w;
}

Tensor activate(const Tensor& x, Activation a, double slope) {
  switch (a) {
    case Activation::identity:
      return x;
    case Activation::leaky_relu:
      return leaky_relu(x, slope);
    case Activation::tanh:
      return tanh(x);
    case Activation::sigmoid:
      return sigmoid(x);
  }
  return x;
}

void check_input(const Tensor& x, std::size_t width, const char* what) {
  if (!x.defined() || x.rank() != 2 || x.dim(1) != width) {
    throw ShapeError(std::string(what) + ": expected [batch x " + std::to_string(width) + "], got " +
                     (x.defined() ? shape_str(x.shape()) : std::string("undefined")));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void ArchConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw InvalidConfigError(std::string(name) + " must be positive");
  };
  positive(input_dim, "input_dim");
  positive(latent_dim, "latent_dim");
  positive(mixtures, "mixtures");
  for (auto w : encoder_hidden) positive(w, "encoder_hidden");
  for (auto w : disc_hidden) positive(w, "disc_hidden");
  for (auto w : est_hidden) positive(w, "est_hidden");
  if (!(decoder_scale > 0.0)) throw InvalidConfigError("decoder_scale must be positive");
  if (!(leaky_slope >= 0.0)) throw InvalidConfigError("leaky_slope must be nonnegative");
}

std::map<std::string, std::string> ArchConfig::to_map() const {
  return {
      {"input_dim", std::to_string(input_dim)},
      {"encoder_hidden", join_widths(encoder_hidden)},
      {"latent_dim", std::to_string(latent_dim)},
      {"disc_hidden", join_widths(disc_hidden)},
      {"est_hidden", join_widths(est_hidden)},
      {"mixtures", std::to_string(mixtures)},
      {"leaky_slope", format_double(leaky_slope)},
      {"decoder_scale", format_double(decoder_scale)},
  };
}

ArchConfig ArchConfig::from_map(const std::map<std::string, std::string>& kv) {
  ArchConfig a;
  a.input_dim = std::stoull(lookup(kv, "input_dim"));
  a.encoder_hidden = parse_widths(lookup(kv, "encoder_hidden"));
  a.latent_dim = std::stoull(lookup(kv, "latent_dim"));
  a.disc_hidden = parse_widths(lookup(kv, "disc_hidden"));
  a.est_hidden = parse_widths(lookup(kv, "est_hidden"));
  a.mixtures = std::stoull(lookup(kv, "mixtures"));
  a.leaky_slope = std::stod(lookup(kv, "leaky_slope"));
  a.decoder_scale = std::stod(lookup(kv, "decoder_scale"));
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------

Mlp::Mlp(std::vector<std::size_t> widths, Activation hidden, Activation output, double leaky_slope,
         double output_scale)
    : widths_(std::move(widths)),
      hidden_(hidden),
      output_(output),
      leaky_slope_(leaky_slope),
      output_scale_(output_scale) {
  if (widths_.size() < 2) throw InvalidConfigError("an MLP needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    const std::size_t in = widths_[i], out = widths_[i + 1];
    layers_.push_back({Tensor::parameter({in, out}, std::vector<double>(in * out, 0.0)),
                       Tensor::parameter({out}, std::vector<double>(out, 0.0))});
  }
}

void Mlp::init_xavier(std::mt19937_64& rng) {
  for (auto& layer : layers_) {
    const double fan_in = static_cast<double>(layer.weight.dim(0));
    const double fan_out = static_cast<double>(layer.weight.dim(1));
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : layer.weight.mutable_values()) w = dist(rng);
    for (double& b : layer.bias.mutable_values()) b = 0.0;
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = affine(h, layers_[i].weight, layers_[i].bias);
    const bool last = i + 1 == layers_.size();
    h = activate(h, last ? output_ : hidden_, leaky_slope_);
  }
  if (output_scale_ != 1.0) h = h * output_scale_;
  return h;
}

Mlp Mlp::clone() const {
  Mlp m = *this;
  for (auto& layer : m.layers_) {
    layer.weight = layer.weight.clone();
    layer.bias = layer.bias.clone();
  }
  return m;
}

void Mlp::set_trainable(bool on) {
  for (auto& layer : layers_) {
    layer.weight.set_requires_grad(on);
    layer.bias.set_requires_grad(on);
  }
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Tensor>> NetworkParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto add = [&out](const std::string& prefix, const Mlp& net) {
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
      out.emplace_back(prefix + "." + std::to_string(i) + ".weight", net.layers()[i].weight);
      out.emplace_back(prefix + "." + std::to_string(i) + ".bias", net.layers()[i].bias);
    }
  };
  add("encoder", encoder);
  add("decoder", decoder);
  add("aux_encoder", aux_encoder);
  add("discriminator", discriminator);
  add("estimator", estimator);
  return out;
}

std::vector<Tensor> NetworkParams::generator_parameters() const {
  std::vector<Tensor> out;
  for (const Mlp* net : {&encoder, &decoder, &aux_encoder, &estimator}) {
    for (const auto& layer : net->layers()) {
      out.push_back(layer.weight);
      out.push_back(layer.bias);
    }
  }
  return out;
}

std::vector<Tensor> NetworkParams::discriminator_parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : discriminator.layers()) {
    out.push_back(layer.weight);
    out.push_back(layer.bias);
  }
  return out;
}

NetworkParams NetworkParams::clone() const {
  NetworkParams p;
  p.arch = arch;
  p.init_seed = init_seed;
  p.encoder = encoder.clone();
  p.decoder = decoder.clone();
  p.aux_encoder = aux_encoder.clone();
  p.discriminator = discriminator.clone();
  p.estimator = estimator.clone();
  return p;
}

NetworkParams init_params(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  std::vector<std::size_t> decoder_hidden(arch.encoder_hidden.rbegin(), arch.encoder_hidden.rend());
  NetworkParams p;
  p.arch = arch;
  p.init_seed = seed;
  p.encoder = Mlp(concat(arch.input_dim, arch.encoder_hidden, arch.latent_dim), Activation::leaky_relu,
                  Activation::identity, arch.leaky_slope);
  p.decoder = Mlp(concat(arch.latent_dim, decoder_hidden, arch.input_dim), Activation::leaky_relu,
                  Activation::tanh, arch.leaky_slope, arch.decoder_scale);
  p.aux_encoder = Mlp(concat(arch.input_dim, arch.encoder_hidden, arch.latent_dim), Activation::leaky_relu,
                      Activation::identity, arch.leaky_slope);
  p.discriminator = Mlp(concat(arch.input_dim, arch.disc_hidden, 1), Activation::leaky_relu, Activation::sigmoid,
                        arch.leaky_slope);
  p.estimator = Mlp(concat(arch.latent_dim, arch.est_hidden, arch.mixtures), Activation::tanh,
                    Activation::identity, arch.leaky_slope);
  std::uint64_t stream = 0;
  for (Mlp* net : {&p.encoder, &p.decoder, &p.aux_encoder, &p.discriminator, &p.estimator}) {
    auto rng = stream_rng(seed, stream++);
    net->init_xavier(rng);
  }
  return p;
}

Tensor encode(const NetworkParams& params, const Tensor& x) {
  check_input(x, params.arch.input_dim, "encode");
  return params.encoder.forward(x);
}

Tensor decode(const NetworkParams& params, const Tensor& z) {
  check_input(z, params.arch.latent_dim, "decode");
  return params.decoder.forward(z);
}

Tensor encode_aux(const NetworkParams& params, const Tensor& x_rec) {
  check_input(x_rec, params.arch.input_dim, "encode_aux");
  return params.aux_encoder.forward(x_rec);
}

Tensor discriminate(const NetworkParams& params, const Tensor& x) {
  check_input(x, params.arch.input_dim, "discriminate");
  return params.discriminator.forward(x);
}

Tensor membership(const NetworkParams& params, const Tensor& z) {
  check_input(z, params.arch.latent_dim, "membership");
  return softmax_rows(params.estimator.forward(z));
}

}  // namespace gmgan
