#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>

#include <Eigen/Dense>

namespace pasf {

// All randomness in the library flows through one engine type. Distributions
// are constructed per call so that the engine state alone determines the
// remaining stream, which keeps checkpoint/resume exact.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

// Uniform integer in [0, n). n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// Draws an index with probability proportional to weights[i].
std::size_t sample_categorical(Rng& rng, std::span<const double> weights);

Eigen::MatrixXd standard_normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols);

// Dirichlet(1, ..., 1) sample of length n.
Eigen::VectorXd flat_dirichlet(Rng& rng, Eigen::Index n);

// Stream splitting: mixes (base, stream) with splitmix64.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

std::string serialize_rng(const Rng& rng);
void deserialize_rng(Rng& rng, const std::string& text);

}  // namespace pasf
