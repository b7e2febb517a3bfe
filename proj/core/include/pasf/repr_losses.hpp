#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pasf/binary_io.hpp"

namespace pasf::repr {

// Random cosine features psi(z) = sqrt(2/D) cos(sqrt(2/gamma) W z + b). Frozen
// once sampled.
struct RandomExpansion {
  Eigen::MatrixXd weight;  // D x d, iid standard normal
  Eigen::VectorXd bias;    // D, uniform on [0, 2 pi)
  double gamma_psi = 1.0;
  std::uint64_t seed = 0;

  int feature_dim() const { return static_cast<int>(weight.rows()); }
  int latent_dim() const { return static_cast<int>(weight.cols()); }

  static RandomExpansion sample(int feature_dim, int latent_dim, double gamma_psi,
                                std::uint64_t seed);
};

Eigen::VectorXd psi(const RandomExpansion& exp, const Eigen::VectorXd& z);
Eigen::MatrixXd psi_batch(const RandomExpansion& exp, const Eigen::MatrixXd& latents);

struct LossWithGrads {
  double value = 0.0;
  std::vector<Eigen::MatrixXd> grads;  // one per input batch, same shape
};

// ||mean psi(a) - mean psi(b)||^2 for one env pair.
LossWithGrads mmd_pair(const RandomExpansion& exp, const Eigen::MatrixXd& a,
                       const Eigen::MatrixXd& b);

// Average of mmd_pair over all unordered pairs of per-env batches. Batches
// must share the same size B > 0. Fewer than two envs gives zero.
LossWithGrads mmd_loss(const RandomExpansion& exp, std::span<const Eigen::MatrixXd> latents);

// Negative mean squared distance over all ordered pairs (with replacement)
// inside each env batch, averaged over envs.
LossWithGrads diff_loss(std::span<const Eigen::MatrixXd> latents);

double pa_loss(double alpha_mmd, double alpha_diff, double mmd, double diff);

// (1/B) sum_b ||psi(a_b) - psi(b_b)||^2 over column-aligned batches.
double paired_feature_distance(const RandomExpansion& exp, const Eigen::MatrixXd& a,
                               const Eigen::MatrixXd& b);

void write_expansion(io::BinaryWriter& w, const RandomExpansion& exp);
RandomExpansion read_expansion(io::BinaryReader& r);

}  // namespace pasf::repr
