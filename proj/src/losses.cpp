#include "gmgan/losses.hpp"

#include <cmath>

#include "gmgan/error.hpp"

namespace gmgan {

void LossWeights::validate() const {
  for (double w : {w_i, w_a, w_z, w_e}) {
    if (!std::isfinite(w) || w < 0.0) throw InvalidConfigError("loss weights must be finite and nonnegative");
  }
}

Tensor image_reconstruction_loss(const Tensor& x, const Tensor& x_rec) { return l1_distance(x, x_rec); }

Tensor latent_representation_loss(const Tensor& z, const Tensor& z_rec) { return l2_distance(z, z_rec); }

namespace {
void check_probabilities(const Tensor& p, const char* what) {
  for (double v : p.values()) {
    if (std::isnan(v)) throw NumericError(std::string(what) + ": NaN discriminator output");
  }
}

Tensor safe_log(const Tensor& p) { return log(clamp(p, kProbClamp, 1.0 - kProbClamp)); }
}  // namespace

Tensor generator_adversarial_loss(const Tensor& d_fake) {
  check_probabilities(d_fake, "adversarial loss");
  return -mean(safe_log(d_fake));
}

Tensor discriminator_adversarial_loss(const Tensor& d_real, const Tensor& d_fake) {
  check_probabilities(d_real, "adversarial loss");
  check_probabilities(d_fake, "adversarial loss");
  return -mean(safe_log(d_real)) - mean(safe_log(Tensor::scalar(1.0) - d_fake));
}

AdversarialLosses adversarial_losses(const Tensor& d_real, const Tensor& d_fake) {
  return {discriminator_adversarial_loss(d_real, d_fake), generator_adversarial_loss(d_fake)};
}

double total_generator_loss(const LossBreakdown& b, const LossWeights& w) {
  return w.w_i * b.l_irec + w.w_a * b.l_adv_g + w.w_z * b.l_zrec + w.w_e * b.l_es;
}

Tensor total_generator_loss(const Tensor& l_irec, const Tensor& l_adv_g, const Tensor& l_zrec, const Tensor& l_es,
                            const LossWeights& w) {
  return w.w_i * l_irec + w.w_a * l_adv_g + w.w_z * l_zrec + w.w_e * l_es;
}

}  // namespace gmgan
