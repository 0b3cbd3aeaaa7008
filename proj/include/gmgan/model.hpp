#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gmgan/tensor.hpp"

namespace gmgan {

/// Layer widths of the five networks. The encoder, decoder and auxiliary
/// encoder are MLPs with leaky-ReLU hidden layers; the decoder mirrors the
/// encoder and ends in decoder_scale * tanh.
struct ArchConfig {
  std::size_t input_dim = 64 * 64;
  std::vector<std::size_t> encoder_hidden{512, 128};
  std::size_t latent_dim = 8;
  std::vector<std::size_t> disc_hidden{256, 64};
  std::vector<std::size_t> est_hidden{16};
  std::size_t mixtures = 4;
  double leaky_slope = 0.2;
  double decoder_scale = 3.0;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static ArchConfig from_map(const std::map<std::string, std::string>& kv);
};

enum class Activation { identity, leaky_relu, tanh, sigmoid };

struct DenseLayer {
  Tensor weight;  // [in × out]
  Tensor bias;    // [out]
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> widths, Activation hidden, Activation output, double leaky_slope = 0.2,
      double output_scale = 1.0);

  /// Xavier-uniform weights, zero biases.
  void init_xavier(std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;

  std::size_t input_dim() const { return widths_.front(); }
  std::size_t output_dim() const { return widths_.back(); }
  const std::vector<std::size_t>& widths() const { return widths_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Mlp clone() const;
  void set_trainable(bool on);

 private:
  std::vector<std::size_t> widths_;
  Activation hidden_ = Activation::leaky_relu;
  Activation output_ = Activation::identity;
  double leaky_slope_ = 0.2;
  double output_scale_ = 1.0;
  std::vector<DenseLayer> layers_;
};

struct NetworkParams {
  ArchConfig arch;
  std::uint64_t init_seed = 0;
  Mlp encoder;
  Mlp decoder;
  Mlp aux_encoder;
  Mlp discriminator;
  Mlp estimator;

  /// Stable names such as "encoder.0.weight", in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  /// Encoder, decoder, auxiliary encoder and estimation network.
  std::vector<Tensor> generator_parameters() const;
  std::vector<Tensor> discriminator_parameters() const;
  NetworkParams clone() const;
};

NetworkParams init_params(const ArchConfig& arch, std::uint64_t seed);

/// x [batch × input_dim] -> z [batch × latent_dim]
Tensor encode(const NetworkParams& params, const Tensor& x);
/// z [batch × latent_dim] -> x' [batch × input_dim]
Tensor decode(const NetworkParams& params, const Tensor& z);
/// x' -> z'
Tensor encode_aux(const NetworkParams& params, const Tensor& x_rec);
/// x -> D(x) in (0, 1), [batch × 1]
Tensor discriminate(const NetworkParams& params, const Tensor& x);
/// z -> soft mixture memberships [batch × K]
Tensor membership(const NetworkParams& params, const Tensor& z);

}  // namespace gmgan
