#include "pasf/repr_losses.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "pasf/errors.hpp"
#include "pasf/rng.hpp"

namespace pasf::repr {

RandomExpansion RandomExpansion::sample(int feature_dim, int latent_dim, double gamma_psi,
                                        std::uint64_t seed) {
  if (feature_dim < 1 || latent_dim < 1) throw ConfigError("random expansion dims must be >= 1");
  if (!(gamma_psi > 0.0)) throw ConfigError("gamma_psi must be > 0");
  Rng rng(seed);
  RandomExpansion exp;
  exp.weight = standard_normal_matrix(rng, feature_dim, latent_dim);
  exp.bias.resize(feature_dim);
  for (int k = 0; k < feature_dim; ++k) exp.bias(k) = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  exp.gamma_psi = gamma_psi;
  exp.seed = seed;
  return exp;
}

namespace {

double feature_scale(const RandomExpansion& exp) {
  return std::sqrt(2.0 / static_cast<double>(exp.feature_dim()));
}

double input_scale(const RandomExpansion& exp) { return std::sqrt(2.0 / exp.gamma_psi); }

Eigen::MatrixXd phases(const RandomExpansion& exp, const Eigen::MatrixXd& latents) {
  if (latents.rows() != exp.latent_dim()) throw ShapeError("psi: latent dimension mismatch");
  Eigen::MatrixXd u = input_scale(exp) * (exp.weight * latents);
  u.colwise() += exp.bias;
  return u;
}

}  // namespace

Eigen::MatrixXd psi_batch(const RandomExpansion& exp, const Eigen::MatrixXd& latents) {
  return feature_scale(exp) * phases(exp, latents).array().cos().matrix();
}

Eigen::VectorXd psi(const RandomExpansion& exp, const Eigen::VectorXd& z) {
  return psi_batch(exp, z).col(0);
}

LossWithGrads mmd_pair(const RandomExpansion& exp, const Eigen::MatrixXd& a,
                       const Eigen::MatrixXd& b) {
  if (a.cols() == 0 || b.cols() == 0) throw std::invalid_argument("mmd_loss: empty batch");
  if (a.cols() != b.cols()) throw ShapeError("mmd_loss: batch sizes differ");
  const Eigen::MatrixXd ua = phases(exp, a);
  const Eigen::MatrixXd ub = phases(exp, b);
  const double s = feature_scale(exp);
  const double inv_b = 1.0 / static_cast<double>(a.cols());
  const Eigen::VectorXd diff =
      s * inv_b * (ua.array().cos().matrix().rowwise().sum() - ub.array().cos().matrix().rowwise().sum());

  LossWithGrads out;
  out.value = diff.squaredNorm();
  // d/dz of psi_k(z) = -s c sin(u_k) W_k.
  const double coef = -2.0 * inv_b * s * input_scale(exp);
  const Eigen::MatrixXd ga = (ua.array().sin().colwise() * diff.array()).matrix();
  const Eigen::MatrixXd gb = (ub.array().sin().colwise() * diff.array()).matrix();
  out.grads.push_back(coef * exp.weight.transpose() * ga);
  out.grads.push_back(-coef * exp.weight.transpose() * gb);
  return out;
}

LossWithGrads mmd_loss(const RandomExpansion& exp, std::span<const Eigen::MatrixXd> latents) {
  LossWithGrads out;
  for (const auto& z : latents) {
    if (z.cols() == 0) throw std::invalid_argument("mmd_loss: empty batch");
    out.grads.push_back(Eigen::MatrixXd::Zero(z.rows(), z.cols()));
  }
  const std::size_t n = latents.size();
  if (n < 2) return out;
  const Eigen::Index B = latents[0].cols();
  for (const auto& z : latents)
    if (z.cols() != B) throw ShapeError("mmd_loss: batch sizes differ");

  // Phases are shared by every pair an env takes part in, so the trig work is
  // done once per env.
  const double s = feature_scale(exp);
  const double inv_b = 1.0 / static_cast<double>(B);
  const double w = 2.0 / static_cast<double>(n * (n - 1));
  std::vector<Eigen::MatrixXd> u(n);
  std::vector<Eigen::VectorXd> mean(n);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = phases(exp, latents[i]);
    mean[i] = s * inv_b * u[i].array().cos().matrix().rowwise().sum();
  }
  // Loss derivative w.r.t. each env's feature mean.
  std::vector<Eigen::VectorXd> dmean(n, Eigen::VectorXd::Zero(exp.feature_dim()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const Eigen::VectorXd diff = mean[i] - mean[j];
      out.value += w * diff.squaredNorm();
      dmean[i] += w * diff;
      dmean[j] -= w * diff;
    }
  const double coef = -2.0 * inv_b * s * input_scale(exp);
  for (std::size_t i = 0; i < n; ++i)
    out.grads[i] = coef * exp.weight.transpose() *
                   (u[i].array().sin().colwise() * dmean[i].array()).matrix();
  return out;
}

LossWithGrads diff_loss(std::span<const Eigen::MatrixXd> latents) {
  if (latents.empty()) throw std::invalid_argument("diff_loss: no batches");
  LossWithGrads out;
  const double inv_n = 1.0 / static_cast<double>(latents.size());
  for (const auto& z : latents) {
    if (z.cols() == 0) throw std::invalid_argument("diff_loss: empty batch");
    const double bsz = static_cast<double>(z.cols());
    const Eigen::VectorXd mean = z.rowwise().mean();
    const Eigen::MatrixXd centered = z.colwise() - mean;
    // (1/B^2) sum_ij ||z_i - z_j||^2 = (2/B) sum_i ||z_i - mean||^2.
    out.value -= inv_n * 2.0 / bsz * centered.squaredNorm();
    out.grads.push_back(-inv_n * 4.0 / bsz * centered);
  }
  return out;
}

double pa_loss(double alpha_mmd, double alpha_diff, double mmd, double diff) {
  if (alpha_mmd < 0.0 || alpha_diff < 0.0)
    throw std::invalid_argument("pa_loss: coefficients must be >= 0");
  return alpha_mmd * mmd + alpha_diff * diff;
}

double paired_feature_distance(const RandomExpansion& exp, const Eigen::MatrixXd& a,
                               const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols() || a.cols() == 0) throw ShapeError("paired batches must match");
  return (psi_batch(exp, a) - psi_batch(exp, b)).colwise().squaredNorm().mean();
}

void write_expansion(io::BinaryWriter& w, const RandomExpansion& exp) {
  w.str("PSI1");
  w.matrix(exp.weight);
  w.vector(exp.bias);
  w.f64(exp.gamma_psi);
  w.u64(exp.seed);
}

RandomExpansion read_expansion(io::BinaryReader& r) {
  if (r.str() != "PSI1") throw IoError("unsupported random expansion record");
  RandomExpansion exp;
  exp.weight = r.matrix();
  exp.bias = r.vector();
  exp.gamma_psi = r.f64();
  exp.seed = r.u64();
  if (exp.bias.size() != exp.weight.rows()) throw IoError("corrupt random expansion");
  return exp;
}

}  // namespace pasf::repr
