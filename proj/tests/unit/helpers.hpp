#pragma once

#include <Eigen/Dense>

#include "pasf/gbmdp.hpp"
#include "pasf/nn.hpp"
#include "pasf/vae.hpp"

namespace testutil {

inline pasf::gbmdp::FamilyConfig small_grid(int w = 3, int h = 3) {
  pasf::gbmdp::FamilyConfig c;
  c.width = w;
  c.height = h;
  c.num_train = 3;
  c.num_test = 2;
  return c;
}

// State behind an observation: nearest noiseless state block over every env.
inline int oracle_state(const pasf::gbmdp::GbmdpFamily& family, const Eigen::VectorXd& obs) {
  int best_s = -1;
  double best = 1e300;
  for (int e = 0; e < family.num_train() + family.num_test(); ++e) {
    const auto& env = family.env(e);
    const Eigen::VectorXd block = obs.head(env.state_block_dim());
    for (int s = 0; s < family.spec.num_states(); ++s) {
      const double d = (env.obs_map.col(s) + env.offset - block).norm();
      if (d < best) {
        best = d;
        best_s = s;
      }
    }
  }
  return best_s;
}

// Perfectly aligned embedder: grid coordinates (shifted off the origin) of
// the oracle state.
inline pasf::vae::Embedder oracle_embedder(const pasf::gbmdp::GbmdpFamily& family) {
  return [&family](const Eigen::MatrixXd& obs) {
    Eigen::MatrixXd z(2, obs.cols());
    for (Eigen::Index i = 0; i < obs.cols(); ++i)
      z.col(i) = family.spec.states.embedding(oracle_state(family, obs.col(i))) +
                 Eigen::Vector2d(1.0, 1.0);
    return z;
  };
}

inline double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace testutil
