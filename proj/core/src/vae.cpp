#include "pasf/vae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "pasf/errors.hpp"

namespace pasf::vae {

VaeParams VaeParams::create(const Architecture& arch, double beta, Rng& rng) {
  if (arch.obs_dim < 1 || arch.latent_dim < 1 || arch.num_envs < 1)
    throw ConfigError("vae architecture dims must be >= 1");
  if (beta < 0.0) throw ConfigError("vae.beta must be >= 0");
  std::vector<int> enc{arch.obs_dim};
  enc.insert(enc.end(), arch.hidden.begin(), arch.hidden.end());
  enc.push_back(2 * arch.latent_dim);
  std::vector<int> dec{arch.latent_dim + arch.num_envs};
  dec.insert(dec.end(), arch.hidden.begin(), arch.hidden.end());
  dec.push_back(arch.obs_dim);

  VaeParams p;
  p.encoder = nn::Mlp::create(enc, arch.activation, nn::Activation::Identity, rng);
  p.decoder = nn::Mlp::create(dec, arch.activation, nn::Activation::Identity, rng);
  p.latent_dim = arch.latent_dim;
  p.num_envs = arch.num_envs;
  p.beta = beta;
  return p;
}

Encoding encode(const VaeParams& params, const Eigen::MatrixXd& obs) {
  const Eigen::MatrixXd out = nn::predict(params.encoder, obs);
  Encoding enc;
  enc.mean = out.topRows(params.latent_dim);
  enc.log_var = out.bottomRows(params.latent_dim).cwiseMax(-kLogVarClamp).cwiseMin(kLogVarClamp);
  return enc;
}

Eigen::MatrixXd embed(const VaeParams& params, const Eigen::MatrixXd& obs) {
  return nn::predict(params.encoder, obs).topRows(params.latent_dim);
}

Eigen::VectorXd embed(const VaeParams& params, const Eigen::VectorXd& obs) {
  return embed(params, Eigen::MatrixXd(obs)).col(0);
}

Eigen::MatrixXd reparameterize(const Encoding& enc, const Eigen::MatrixXd& noise) {
  return enc.mean + ((0.5 * enc.log_var.array()).exp() * noise.array()).matrix();
}

namespace {

Eigen::MatrixXd decoder_input(const VaeParams& params, const Eigen::MatrixXd& latents, int env) {
  if (env < 0 || env >= params.num_envs)
    throw std::out_of_range("decode: unknown env index " + std::to_string(env));
  if (latents.rows() != params.latent_dim) throw ShapeError("decode: latent dimension mismatch");
  Eigen::MatrixXd in = Eigen::MatrixXd::Zero(params.latent_dim + params.num_envs, latents.cols());
  in.topRows(params.latent_dim) = latents;
  in.row(params.latent_dim + env).setOnes();
  return in;
}

}  // namespace

Eigen::MatrixXd decode(const VaeParams& params, const Eigen::MatrixXd& latents, int env) {
  return nn::predict(params.decoder, decoder_input(params, latents, env));
}

double kl_divergence(const Eigen::MatrixXd& mean, const Eigen::MatrixXd& log_var) {
  if (mean.cols() == 0) return 0.0;
  return 0.5 *
         (mean.array().square() + log_var.array().exp() - 1.0 - log_var.array()).sum() /
         static_cast<double>(mean.cols());
}

LossResult vae_loss(const VaeParams& params, const VaeBatch& batch, const LossWeights& w,
                    const repr::RandomExpansion& expansion) {
  const int d = params.latent_dim;
  const std::size_t n_env = batch.replay.size();
  if (n_env == 0) throw std::invalid_argument("vae_loss: empty replay batch");
  if (static_cast<int>(n_env) > params.num_envs)
    throw std::invalid_argument("vae_loss: more replay batches than training envs");
  if (batch.noise.size() != n_env) throw ShapeError("vae_loss: noise/replay count mismatch");
  const bool use_mmd = w.alpha_mmd > 0.0;
  if (use_mmd && batch.aligned.size() != n_env)
    throw std::invalid_argument("vae_loss: alpha_mmd > 0 requires an aligned batch per env");

  // One encoder pass over [replay_0 .. replay_{N-1}, aligned_0 .. aligned_{N-1}].
  std::vector<Eigen::Index> r_off(n_env + 1, 0), a_off(n_env + 1, 0);
  for (std::size_t e = 0; e < n_env; ++e) {
    if (batch.replay[e].cols() == 0) throw std::invalid_argument("vae_loss: empty replay batch");
    if (batch.noise[e].rows() != d || batch.noise[e].cols() != batch.replay[e].cols())
      throw ShapeError("vae_loss: noise shape mismatch");
    r_off[e + 1] = r_off[e] + batch.replay[e].cols();
  }
  const Eigen::Index n_replay = r_off[n_env];
  for (std::size_t e = 0; e < n_env; ++e)
    a_off[e + 1] = a_off[e] + (use_mmd ? batch.aligned[e].cols() : 0);
  const Eigen::Index n_aligned = a_off[n_env];

  Eigen::MatrixXd x(params.obs_dim(), n_replay + n_aligned);
  for (std::size_t e = 0; e < n_env; ++e) {
    x.middleCols(r_off[e], batch.replay[e].cols()) = batch.replay[e];
    if (use_mmd) x.middleCols(n_replay + a_off[e], batch.aligned[e].cols()) = batch.aligned[e];
  }
  const auto enc = nn::forward(params.encoder, x);
  const Eigen::MatrixXd mean = enc.output.topRows(d);
  const Eigen::MatrixXd raw_lv = enc.output.bottomRows(d).leftCols(n_replay);
  const Eigen::MatrixXd lv = raw_lv.cwiseMax(-kLogVarClamp).cwiseMin(kLogVarClamp);
  const Eigen::ArrayXXd lv_mask =
      (raw_lv.array().abs() <= kLogVarClamp).cast<double>();

  Eigen::MatrixXd noise(d, n_replay);
  for (std::size_t e = 0; e < n_env; ++e) noise.middleCols(r_off[e], batch.noise[e].cols()) = batch.noise[e];
  const Eigen::ArrayXXd sigma = (0.5 * lv.array()).exp();
  const Eigen::MatrixXd z = mean.leftCols(n_replay) + (sigma * noise.array()).matrix();

  LossResult out;
  Eigen::MatrixXd d_mean = Eigen::MatrixXd::Zero(d, n_replay + n_aligned);
  Eigen::MatrixXd d_lv = Eigen::MatrixXd::Zero(d, n_replay);
  const double inv_n = 1.0 / static_cast<double>(n_replay);

  // Reconstruction through the env-indexed decoder.
  Eigen::MatrixXd dec_in = Eigen::MatrixXd::Zero(d + params.num_envs, n_replay);
  dec_in.topRows(d) = z;
  for (std::size_t e = 0; e < n_env; ++e)
    dec_in.block(d + static_cast<Eigen::Index>(e), r_off[e], 1, batch.replay[e].cols()).setOnes();
  const auto dec = nn::forward(params.decoder, dec_in);
  const Eigen::MatrixXd resid = dec.output - x.leftCols(n_replay);
  out.terms.recon = resid.squaredNorm() * inv_n;
  const auto dec_back = nn::backward(params.decoder, dec.cache, (2.0 * w.recon * inv_n) * resid);
  out.decoder_grads = dec_back.grads;
  const Eigen::MatrixXd dz = dec_back.input_grad.topRows(d);
  d_mean.leftCols(n_replay) += dz;
  d_lv.array() += dz.array() * noise.array() * 0.5 * sigma;

  // Closed-form KL to N(0, I).
  out.terms.kl = kl_divergence(mean.leftCols(n_replay), lv);
  d_mean.leftCols(n_replay) += params.beta * inv_n * mean.leftCols(n_replay);
  d_lv.array() += params.beta * inv_n * 0.5 * (lv.array().exp() - 1.0);

  if (w.alpha_diff > 0.0) {
    std::vector<Eigen::MatrixXd> per_env;
    for (std::size_t e = 0; e < n_env; ++e)
      per_env.push_back(mean.middleCols(r_off[e], batch.replay[e].cols()));
    auto diff = repr::diff_loss(per_env);
    out.terms.diff = diff.value;
    for (std::size_t e = 0; e < n_env; ++e)
      d_mean.middleCols(r_off[e], batch.replay[e].cols()) += w.alpha_diff * diff.grads[e];
  }

  if (use_mmd) {
    std::vector<Eigen::MatrixXd> per_env;
    for (std::size_t e = 0; e < n_env; ++e)
      per_env.push_back(mean.middleCols(n_replay + a_off[e], batch.aligned[e].cols()));
    auto mmd = repr::mmd_loss(expansion, per_env);
    out.terms.mmd = mmd.value;
    for (std::size_t e = 0; e < n_env; ++e)
      d_mean.middleCols(n_replay + a_off[e], batch.aligned[e].cols()) += w.alpha_mmd * mmd.grads[e];
  }

  Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(2 * d, n_replay + n_aligned);
  d_out.topRows(d) = d_mean;
  d_out.bottomRows(d).leftCols(n_replay) = (d_lv.array() * lv_mask).matrix();
  out.encoder_grads = nn::backward(params.encoder, enc.cache, d_out).grads;

  out.terms.total = w.recon * out.terms.recon + params.beta * out.terms.kl +
                    w.alpha_mmd * out.terms.mmd + w.alpha_diff * out.terms.diff;
  return out;
}

Embedder embedder(const VaeParams& params) {
  return [&params](const Eigen::MatrixXd& obs) { return embed(params, obs); };
}

LerResult latent_error_rate(const Embedder& phi, const gbmdp::GbmdpFamily& family,
                            std::span<const int> envs, int n_states, Rng& rng) {
  if (envs.empty()) throw std::invalid_argument("latent_error_rate: empty env set");
  if (n_states < 1) throw std::invalid_argument("latent_error_rate: n_states must be >= 1");
  const auto& ref = family.env(envs[0]);
  const int n_env = static_cast<int>(envs.size());
  // Columns: for each draw, the reference observation then one per env.
  Eigen::MatrixXd obs(family.obs_dim, n_states * (n_env + 1));
  for (int k = 0; k < n_states; ++k) {
    const int s = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(family.spec.num_states())));
    const Eigen::VectorXd x0 = gbmdp::observe(ref, s, gbmdp::sample_factor(ref, rng));
    obs.col(k * (n_env + 1)) = x0;
    for (int i = 0; i < n_env; ++i) {
      const auto& env = family.env(envs[static_cast<std::size_t>(i)]);
      obs.col(k * (n_env + 1) + 1 + i) =
          i == 0 ? x0 : gbmdp::observe(env, s, gbmdp::sample_factor(env, rng));
    }
  }
  const Eigen::MatrixXd z = phi(obs);
  LerResult r;
  double total = 0.0;
  for (int k = 0; k < n_states; ++k) {
    const auto z0 = z.col(k * (n_env + 1));
    for (int i = 0; i < n_env; ++i) {
      const auto ze = z.col(k * (n_env + 1) + 1 + i);
      const double norm = ze.norm();
      if (norm == 0.0) {
        ++r.excluded;
        continue;
      }
      total += (ze - z0).norm() / norm;
      ++r.evaluated;
    }
  }
  r.value = r.evaluated > 0 ? total / r.evaluated : 0.0;
  return r;
}

AlignmentMeasure measure_alignment(const Embedder& phi, const gbmdp::GbmdpFamily& family,
                                   std::span<const int> envs, Rng& rng, int factor_samples,
                                   int max_states) {
  if (envs.empty()) throw std::invalid_argument("measure_alignment: empty env set");
  const int n = family.spec.num_states();
  AlignmentMeasure m;
  std::vector<int> states(static_cast<std::size_t>(n));
  std::iota(states.begin(), states.end(), 0);
  if (n > max_states) {
    std::shuffle(states.begin(), states.end(), rng);
    states.resize(static_cast<std::size_t>(max_states));
    m.sampled = true;
  }
  std::vector<int> state_of;
  std::vector<Eigen::VectorXd> cols;
  for (int e : envs) {
    const auto& env = family.env(e);
    const int reps = env.mode == gbmdp::FactorMode::Static ? 1 : std::max(1, factor_samples);
    for (int s : states)
      for (int k = 0; k < reps; ++k) {
        cols.push_back(gbmdp::observe(env, s, gbmdp::sample_factor(env, rng)));
        state_of.push_back(s);
      }
  }
  Eigen::MatrixXd obs(family.obs_dim, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) obs.col(static_cast<Eigen::Index>(i)) = cols[i];
  const Eigen::MatrixXd z = phi(obs);

  m.psi = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < z.cols(); ++i)
    for (Eigen::Index j = i + 1; j < z.cols(); ++j) {
      const double dz = (z.col(i) - z.col(j)).norm();
      const int si = state_of[static_cast<std::size_t>(i)];
      const int sj = state_of[static_cast<std::size_t>(j)];
      if (si == sj) {
        m.eta = std::max(m.eta, dz);
      } else {
        const double ds = (family.spec.states.embedding(si) - family.spec.states.embedding(sj)).norm();
        m.psi = std::min(m.psi, dz / ds);
      }
    }
  if (!std::isfinite(m.psi)) m.psi = 0.0;
  return m;
}

double shuffled_reconstruction_accuracy(const VaeParams& params,
                                        const gbmdp::GbmdpFamily& family) {
  const int n = family.spec.num_states();
  int hits = 0, total = 0;
  for (int e = 0; e < family.num_train(); ++e) {
    const auto& env = family.train[static_cast<std::size_t>(e)];
    Eigen::MatrixXd obs(family.obs_dim, n);
    for (int s = 0; s < n; ++s) obs.col(s) = gbmdp::observe(env, s, env.initial_factor);
    const Eigen::MatrixXd z = embed(params, obs);
    for (int e2 = 0; e2 < family.num_train(); ++e2) {
      if (e2 == e) continue;
      const Eigen::MatrixXd rec = decode(params, z, e2);
      const auto& target = family.train[static_cast<std::size_t>(e2)];
      for (int s = 0; s < n; ++s) {
        hits += gbmdp::decode_state(target, rec.col(s)) == s ? 1 : 0;
        ++total;
      }
    }
  }
  return total > 0 ? static_cast<double>(hits) / total : 1.0;
}

double max_local_distortion(const Embedder& phi, const gbmdp::GbmdpFamily& family,
                            std::span<const int> envs) {
  const int n = family.spec.num_states();
  double worst = 0.0;
  for (int e : envs) {
    const auto& env = family.env(e);
    Eigen::MatrixXd obs(family.obs_dim, n);
    for (int s = 0; s < n; ++s) obs.col(s) = gbmdp::observe(env, s, env.initial_factor);
    const Eigen::MatrixXd z = phi(obs);
    for (int s = 0; s < n; ++s)
      for (int t = s + 1; t < n; ++t) {
        const double dx = (obs.col(s) - obs.col(t)).norm();
        if (dx > 0.0) worst = std::max(worst, (z.col(s) - z.col(t)).norm() / dx);
      }
  }
  return worst;
}

void write_vae(io::BinaryWriter& w, const VaeParams& p) {
  w.str("VAE1");
  w.i64(p.latent_dim);
  w.i64(p.num_envs);
  w.f64(p.beta);
  nn::write_mlp(w, p.encoder);
  nn::write_mlp(w, p.decoder);
}

VaeParams read_vae(io::BinaryReader& r) {
  if (r.str() != "VAE1") throw IoError("unsupported VAE record");
  VaeParams p;
  p.latent_dim = static_cast<int>(r.i64());
  p.num_envs = static_cast<int>(r.i64());
  p.beta = r.f64();
  p.encoder = nn::read_mlp(r);
  p.decoder = nn::read_mlp(r);
  if (p.encoder.output_dim() != 2 * p.latent_dim ||
      p.decoder.input_dim() != p.latent_dim + p.num_envs)
    throw IoError("corrupt VAE record");
  return p;
}

}  // namespace pasf::vae
