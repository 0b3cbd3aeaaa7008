#include "gmgan/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "gmgan/error.hpp"
#include "gmgan/random.hpp"

namespace gmgan {

void TrainConfig::validate() const {
  if (epochs > 1'000'000) throw InvalidConfigError("epochs is implausibly large");
  if (batch_size < 2) throw InvalidConfigError("batch_size must be at least 2");
  if (!(lr_g > 0.0) || !(lr_d > 0.0)) throw InvalidConfigError("learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw InvalidConfigError("adam_eps must be positive");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw InvalidConfigError("lambda1 and lambda2 must be nonnegative");
  if (!(cov_eps >= 0.0)) throw InvalidConfigError("cov_eps must be nonnegative");
  if (!(clip_norm >= 0.0)) throw InvalidConfigError("clip_norm must be nonnegative");
  weights.validate();
  arch.validate();
}

AdamMoments AdamMoments::zeros_like(const std::vector<Tensor>& params) {
  AdamMoments out;
  for (const auto& p : params) {
    out.m.emplace_back(p.numel(), 0.0);
    out.v.emplace_back(p.numel(), 0.0);
  }
  return out;
}

void adam_update(std::vector<Tensor>& params, AdamMoments& moments, const AdamSettings& s, std::uint64_t step) {
  if (moments.m.size() != params.size() || moments.v.size() != params.size()) {
    throw ShapeError("adam_update: moment buffers do not match parameter count");
  }
  if (step == 0) throw InvalidConfigError("adam_update: step is 1-based");
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto value = params[k].mutable_values();
    auto grad = params[k].grad();
    auto& m = moments.m[k];
    auto& v = moments.v[k];
    if (m.size() != value.size() || v.size() != value.size()) {
      throw ShapeError("adam_update: moment buffer shape mismatch");
    }
    const bool has_grad = grad.size() == value.size();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = has_grad ? grad[i] : 0.0;
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      value[i] -= s.lr * m_hat / (std::sqrt(v_hat) + s.eps);
    }
  }
}

TrainState TrainState::initial(const TrainConfig& config) {
  TrainState st;
  st.params = init_params(config.arch, config.seed);
  st.adam_g = AdamMoments::zeros_like(st.params.generator_parameters());
  st.adam_d = AdamMoments::zeros_like(st.params.discriminator_parameters());
  st.rng = stream_rng(config.seed, 0xBA7C4);
  return st;
}

namespace {

void zero_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

void clip_global_norm(std::vector<Tensor>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (norm <= max_norm) return;
  const double scale = max_norm / norm;
  for (auto& p : params) {
    if (p.grad().empty()) continue;
    for (double& g : p.mutable_grad()) g *= scale;
  }
}

void check_finite_params(const NetworkParams& params, std::uint64_t step) {
  for (const auto& [name, t] : params.named_parameters()) {
    for (double v : t.values()) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite value in " + name + " after step " + std::to_string(step));
      }
    }
  }
}

struct StepOutput {
  LossBreakdown losses;
  GmmParams batch_gmm;
};

StepOutput run_step(TrainState& state, const TrainConfig& config, const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) < 2) throw InvalidInputError("train_step: batch must hold at least 2 samples");
  NetworkParams& p = state.params;
  StepOutput out;
  const std::uint64_t step = state.step + 1;

  // Discriminator update with the generator held fixed.
  {
    Tensor x_fake;
    {
      NoGradGuard no_grad;
      x_fake = decode(p, encode(p, x));
    }
    auto d_params = p.discriminator_parameters();
    const Tensor loss_d = discriminator_adversarial_loss(discriminate(p, x), discriminate(p, x_fake));
    zero_grads(d_params);
    loss_d.backward();
    adam_update(d_params, state.adam_d, {config.lr_d, config.beta1, config.beta2, config.adam_eps}, step);
    out.losses.l_adv_d = loss_d.item();
  }

  // Generator update with the discriminator frozen.
  {
    p.discriminator.set_trainable(false);
    struct Restore {
      Mlp& mlp;
      ~Restore() { mlp.set_trainable(true); }
    } restore{p.discriminator};

    const Tensor z = encode(p, x);
    const Tensor x_rec = decode(p, z);
    const Tensor z_rec = encode_aux(p, x_rec);
    const Tensor gamma = membership(p, z);
    const GmmTensors gmm = estimate_gmm(z, gamma, config.cov_eps);
    const EstimationLoss es = estimation_loss(z, gmm, config.lambda1, config.lambda2);

    const Tensor l_irec = image_reconstruction_loss(x, x_rec);
    const Tensor l_adv_g = generator_adversarial_loss(discriminate(p, x_rec));
    const Tensor l_zrec = latent_representation_loss(z, z_rec);
    const Tensor total = total_generator_loss(l_irec, l_adv_g, l_zrec, es.total, config.weights);

    auto g_params = p.generator_parameters();
    zero_grads(g_params);
    total.backward();
    clip_global_norm(g_params, config.clip_norm);
    adam_update(g_params, state.adam_g, {config.lr_g, config.beta1, config.beta2, config.adam_eps}, step);

    out.losses.l_irec = l_irec.item();
    out.losses.l_adv_g = l_adv_g.item();
    out.losses.l_zrec = l_zrec.item();
    out.losses.l_es = es.total.item();
    out.losses.total = total.item();
    out.batch_gmm = gmm.to_params();
  }

  check_finite_params(p, step);
  state.step = step;
  return out;
}

// Fisher-Yates driven by raw engine output, so the permutation does not depend
// on the standard library's distribution implementations.
void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto r = static_cast<unsigned __int128>(rng()) * i;
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(r >> 64)]);
  }
}

Tensor gather_rows(const Eigen::MatrixXd& x, std::span<const std::size_t> rows) {
  const auto cols = static_cast<std::size_t>(x.cols());
  std::vector<double> v(rows.size() * cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = static_cast<Eigen::Index>(rows[r]);
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] = x(src, static_cast<Eigen::Index>(c));
  }
  return Tensor({rows.size(), cols}, std::move(v));
}

Model snapshot(const FitResult& fr, const TrainConfig& config, std::size_t epoch, const PatchSet& train) {
  Model m;
  m.params = fr.state.params;
  m.patch_rows = train.rows;
  m.patch_cols = train.cols;
  m.norm = fr.model.norm;
  m.meta["train.step"] = std::to_string(fr.state.step);
  m.meta["train.epoch"] = std::to_string(epoch);
  m.meta["train.seed"] = std::to_string(config.seed);
  m.meta["train.samples"] = std::to_string(train.size());
  return m;
}

}  // namespace

LossBreakdown train_step(TrainState& state, const TrainConfig& config, const Tensor& batch) {
  return run_step(state, config, batch).losses;
}

Eigen::MatrixXd normalized_matrix(const PatchSet& patches, const NormStats& stats) {
  patches.validate();
  const std::size_t dim = patches.patch_size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(patches.size()), static_cast<Eigen::Index>(dim));
  std::vector<double> buf(dim);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto src = patches.patch(i);
    std::copy(src.begin(), src.end(), buf.begin());
    normalize_patch(buf, patches.cols, stats);
    for (std::size_t j = 0; j < dim; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = buf[j];
  }
  return x;
}

Eigen::MatrixXd encode_all(const NetworkParams& params, const Eigen::MatrixXd& x, std::size_t chunk) {
  NoGradGuard no_grad;
  const auto n = static_cast<std::size_t>(x.rows());
  Eigen::MatrixXd z(x.rows(), static_cast<Eigen::Index>(params.arch.latent_dim));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    const Tensor zb = encode(params, gather_rows(x, std::span(idx).subspan(begin, end - begin)));
    const auto zm = to_matrix(zb);
    z.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) = zm;
  }
  return z;
}

GmmParams full_dataset_gmm(const NetworkParams& params, const Eigen::MatrixXd& x, double cov_eps) {
  const Eigen::MatrixXd z = encode_all(params, x);
  Eigen::MatrixXd gamma;
  {
    NoGradGuard no_grad;
    gamma = to_matrix(membership(params, to_tensor(z)));
  }
  GmmParams g = em_m_step(z, gamma, cov_eps);
  g.validate();
  return g;
}

void write_metrics_csv(const std::vector<StepMetrics>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open metrics file " + path.string());
  out << "step,epoch,l_irec,l_adv_g,l_adv_d,l_zrec,l_es,total\n";
  char line[512];
  for (const auto& h : history) {
    const auto& l = h.losses;
    std::snprintf(line, sizeof line, "%llu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<unsigned long long>(h.step), h.epoch, l.l_irec, l.l_adv_g, l.l_adv_d, l.l_zrec, l.l_es,
                  l.total);
    out << line;
  }
  if (!out) throw IoError("failed writing metrics file " + path.string());
}

FitResult fit(const TrainConfig& config_in, const PatchSet& train, const FitOptions& options) {
  if (train.size() == 0) throw InvalidInputError("training set is empty");
  train.validate();
  for (Label l : train.labels) {
    if (l == Label::anomalous) throw InvalidInputError("training set contains anomalous patches");
  }
  if (train.size() < 2) throw InvalidInputError("training needs at least 2 patches");

  TrainConfig config = config_in;
  config.arch.input_dim = train.patch_size();
  config.validate();

  FitResult fr;
  fr.state = TrainState::initial(config);
  fr.model.norm = train.norm_stats ? *train.norm_stats : compute_norm_stats(train);
  const Eigen::MatrixXd x = normalized_matrix(train, fr.model.norm);

  const std::size_t n = train.size();
  const std::size_t batch = std::min(config.batch_size, n);
  const std::size_t steps_per_epoch = n / batch;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_indices(order, fr.state.rng);
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const Tensor xb = gather_rows(x, std::span(order).subspan(s * batch, batch));
      const StepOutput so = run_step(fr.state, config, xb);
      StepMetrics sm{fr.state.step, epoch, so.losses};
      fr.history.push_back(sm);
      if (options.on_step) options.on_step(sm);
      if (config.checkpoint_every > 0 && fr.state.step % config.checkpoint_every == 0) {
        so.batch_gmm.validate();
        if (options.checkpoint_path) save_checkpoint(snapshot(fr, config, epoch, train), *options.checkpoint_path);
      }
    }
  }

  Model final_model = snapshot(fr, config, config.epochs, train);
  final_model.gmm = full_dataset_gmm(fr.state.params, x, config.cov_eps);
  fr.model = std::move(final_model);
  if (options.checkpoint_path) save_checkpoint(fr.model, *options.checkpoint_path);
  if (options.metrics_path) write_metrics_csv(fr.history, *options.metrics_path);
  return fr;
}

}  // namespace gmgan
