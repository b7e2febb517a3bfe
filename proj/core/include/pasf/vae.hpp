#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pasf/binary_io.hpp"
#include "pasf/gbmdp.hpp"
#include "pasf/nn.hpp"
#include "pasf/repr_losses.hpp"
#include "pasf/rng.hpp"

namespace pasf::vae {

inline constexpr double kLogVarClamp = 10.0;

struct Architecture {
  int obs_dim = 0;
  int latent_dim = 8;
  int num_envs = 1;  // training envs; decoder gets a one-hot of this size
  std::vector<int> hidden = {64, 64};
  nn::Activation activation = nn::Activation::Tanh;
};

struct VaeParams {
  nn::Mlp encoder;  // obs -> [mean; log_var]
  nn::Mlp decoder;  // [z; onehot(e)] -> obs
  int latent_dim = 0;
  int num_envs = 0;
  double beta = 1.0;

  static VaeParams create(const Architecture& arch, double beta, Rng& rng);
  int obs_dim() const { return encoder.input_dim(); }
};

struct Encoding {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd log_var;  // clamped to [-kLogVarClamp, kLogVarClamp]
};

Encoding encode(const VaeParams& params, const Eigen::MatrixXd& obs);
Eigen::MatrixXd embed(const VaeParams& params, const Eigen::MatrixXd& obs);
Eigen::VectorXd embed(const VaeParams& params, const Eigen::VectorXd& obs);
Eigen::MatrixXd reparameterize(const Encoding& enc, const Eigen::MatrixXd& noise);
Eigen::MatrixXd decode(const VaeParams& params, const Eigen::MatrixXd& latents, int env);

struct VaeBatch {
  std::vector<Eigen::MatrixXd> replay;   // per training env: obs_dim x B_r
  std::vector<Eigen::MatrixXd> noise;    // per training env: latent_dim x B_r
  std::vector<Eigen::MatrixXd> aligned;  // per training env: obs_dim x B_a, columns aligned
};

struct LossWeights {
  double recon = 1.0;  // 1 in training; other values isolate terms in diagnostics
  double alpha_mmd = 0.0;
  double alpha_diff = 0.0;
};

struct LossTerms {
  double recon = 0.0;
  double kl = 0.0;
  double mmd = 0.0;
  double diff = 0.0;
  double total = 0.0;
};

struct LossResult {
  LossTerms terms;
  nn::MlpGrads encoder_grads;
  nn::MlpGrads decoder_grads;
};

// recon * MSE(z sampled) + beta * KL + alpha_mmd * MMD(mean on aligned) +
// alpha_diff * DIFF(mean on replay). MSE is the per-sample squared error
// summed over coordinates, averaged over samples.
LossResult vae_loss(const VaeParams& params, const VaeBatch& batch, const LossWeights& weights,
                    const repr::RandomExpansion& expansion);

// Mean over samples of 0.5 * sum(mean^2 + exp(log_var) - 1 - log_var).
double kl_divergence(const Eigen::MatrixXd& mean, const Eigen::MatrixXd& log_var);

// Batched encoder used by the metrics below; columns are observations.
using Embedder = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;
Embedder embedder(const VaeParams& params);

struct LerResult {
  double value = 0.0;
  int evaluated = 0;
  int excluded = 0;  // zero-norm embeddings skipped
};

// Mean of ||z_e(s) - z_e0(s)|| / ||z_e(s)|| over envs in `envs` and uniformly
// drawn states; envs[0] is the reference.
LerResult latent_error_rate(const Embedder& phi, const gbmdp::GbmdpFamily& family,
                            std::span<const int> envs, int n_states, Rng& rng);

struct AlignmentMeasure {
  double eta = 0.0;  // max same-state latent distance across envs
  double psi = 0.0;  // min latent distance / state distance over distinct states
  bool sampled = false;
};

AlignmentMeasure measure_alignment(const Embedder& phi, const gbmdp::GbmdpFamily& family,
                                   std::span<const int> envs, Rng& rng,
                                   int factor_samples = 3, int max_states = 400);

// Fraction of (s, e, e'), e != e' over training envs, for which
// decode(embed(x^e(s)), e') maps back to s under the nearest one-hot oracle.
double shuffled_reconstruction_accuracy(const VaeParams& params,
                                        const gbmdp::GbmdpFamily& family);

// Largest ||phi(x) - phi(x')|| / ||x - x'|| over distinct states within each
// env, at the env's initial factor.
double max_local_distortion(const Embedder& phi, const gbmdp::GbmdpFamily& family,
                            std::span<const int> envs);

void write_vae(io::BinaryWriter& w, const VaeParams& params);
VaeParams read_vae(io::BinaryReader& r);

}  // namespace pasf::vae
