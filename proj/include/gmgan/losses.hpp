#pragma once

#include "gmgan/tensor.hpp"

namespace gmgan {

struct LossWeights {
  double w_i = 1.0;   // image reconstruction
  double w_a = 5.0;   // adversarial (generator side)
  double w_z = 1.0;   // latent representation
  double w_e = 0.05;  // estimation

  void validate() const;
};

/// Scalar loss values for one batch.
struct LossBreakdown {
  double l_irec = 0.0;
  double l_adv_g = 0.0;
  double l_adv_d = 0.0;
  double l_zrec = 0.0;
  double l_es = 0.0;
  double total = 0.0;
};

/// Probabilities are clamped into [kProbClamp, 1 - kProbClamp] before log.
inline constexpr double kProbClamp = 1e-7;

/// Batch mean of per-sample L1 distance between x and its reconstruction.
Tensor image_reconstruction_loss(const Tensor& x, const Tensor& x_rec);
/// Batch mean of per-sample Euclidean distance between z and z'.
Tensor latent_representation_loss(const Tensor& z, const Tensor& z_rec);

struct AdversarialLosses {
  Tensor discriminator;  // -mean log D(x) - mean log(1 - D(x'))
  Tensor generator;      // -mean log D(x'), non-saturating form
};

AdversarialLosses adversarial_losses(const Tensor& d_real, const Tensor& d_fake);
/// Generator side only; skips building the discriminator term.
Tensor generator_adversarial_loss(const Tensor& d_fake);
Tensor discriminator_adversarial_loss(const Tensor& d_real, const Tensor& d_fake);

/// w_i·l_irec + w_a·l_adv_g + w_z·l_zrec + w_e·l_es
double total_generator_loss(const LossBreakdown& breakdown, const LossWeights& weights);
Tensor total_generator_loss(const Tensor& l_irec, const Tensor& l_adv_g, const Tensor& l_zrec, const Tensor& l_es,
                            const LossWeights& weights);

}  // namespace gmgan
