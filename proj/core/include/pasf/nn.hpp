#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pasf/binary_io.hpp"
#include "pasf/rng.hpp"

namespace pasf::nn {

enum class Activation { Tanh, Relu, Identity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation activation = Activation::Identity;
};

// Fully connected network. Batches are column-major: one sample per column.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<Layer> layers);

  // Glorot-uniform weights (He-uniform for relu layers), zero biases.
  static Mlp create(std::span<const int> sizes, Activation hidden, Activation output, Rng& rng);
  static Mlp zeros(std::span<const int> sizes, Activation hidden, Activation output);

  int input_dim() const;
  int output_dim() const;
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t num_params() const;
  std::vector<int> sizes() const;

  const std::vector<Layer>& layers() const { return layers_; }
  // Mutable access invalidates outstanding forward caches.
  std::vector<Layer>& mutable_layers() {
    ++generation_;
    return layers_;
  }
  std::uint64_t generation() const { return generation_; }

  Eigen::VectorXd flat() const;
  void set_flat(const Eigen::VectorXd& params);

 private:
  std::vector<Layer> layers_;
  std::uint64_t generation_ = 0;
};

struct ForwardCache {
  const Mlp* owner = nullptr;
  std::uint64_t generation = 0;
  std::vector<Eigen::MatrixXd> activations;  // [0] is the input, [i + 1] the output of layer i
};

struct ForwardResult {
  Eigen::MatrixXd output;
  ForwardCache cache;
};

ForwardResult forward(const Mlp& mlp, const Eigen::MatrixXd& input);
Eigen::MatrixXd predict(const Mlp& mlp, const Eigen::MatrixXd& input);

struct MlpGrads {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;

  static MlpGrads zeros_like(const Mlp& mlp);
  Eigen::VectorXd flat() const;
  MlpGrads& operator+=(const MlpGrads& other);
};

struct BackwardResult {
  MlpGrads grads;
  Eigen::MatrixXd input_grad;
};

// Throws std::logic_error if cache did not come from forward on this exact
// parameter set.
BackwardResult backward(const Mlp& mlp, const ForwardCache& cache,
                        const Eigen::MatrixXd& output_grad);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;

  static AdamState for_size(Eigen::Index n, const AdamConfig& config);
};

void adam_update(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad,
                 AdamState& state);
void adam_step(Mlp& mlp, const MlpGrads& grads, AdamState& state);

struct GradCheckOptions {
  double step = 1e-5;
  double rtol = 1e-4;
  double atol = 1e-8;
  std::size_t max_coords = 0;  // 0 checks every coordinate
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  bool passed = true;
  std::size_t coords_checked = 0;
  std::size_t worst_index = 0;
  double worst_excess = 0.0;  // |a - n| / (atol + rtol * max(|a|, |n|)); passes when <= 1
  double analytic = 0.0;
  double numeric = 0.0;
};

// Loss returns its value and, when grad is non-null, writes the analytic gradient.
using LossFn = std::function<double(const Eigen::VectorXd& params, Eigen::VectorXd* grad)>;

GradCheckReport grad_check(const LossFn& loss, const Eigen::VectorXd& params,
                           const GradCheckOptions& options = {});

void write_mlp(io::BinaryWriter& w, const Mlp& mlp);
Mlp read_mlp(io::BinaryReader& r);
void save_mlp(const Mlp& mlp, const std::string& path);
Mlp load_mlp(const std::string& path);

void write_adam(io::BinaryWriter& w, const AdamState& state);
AdamState read_adam(io::BinaryReader& r);

}  // namespace pasf::nn
