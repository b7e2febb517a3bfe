#include "pasf/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "pasf/errors.hpp"

namespace pasf::nn {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
  }
  return "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

Mlp::Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.size() != l.weight.rows()) throw ShapeError("layer bias/weight mismatch");
    if (i > 0 && l.weight.cols() != layers_[i - 1].weight.rows())
      throw ShapeError("layer shape chain broken at layer " + std::to_string(i));
  }
}

namespace {

std::vector<Layer> blank_layers(std::span<const int> sizes, Activation hidden, Activation output) {
  if (sizes.size() < 2) throw ShapeError("an MLP needs at least input and output sizes");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    if (sizes[i] < 1 || sizes[i + 1] < 1) throw ShapeError("layer sizes must be positive");
    Layer l;
    l.weight = Eigen::MatrixXd::Zero(sizes[i + 1], sizes[i]);
    l.bias = Eigen::VectorXd::Zero(sizes[i + 1]);
    l.activation = i + 2 == sizes.size() ? output : hidden;
    layers.push_back(std::move(l));
  }
  return layers;
}

}  // namespace

Mlp Mlp::create(std::span<const int> sizes, Activation hidden, Activation output, Rng& rng) {
  auto layers = blank_layers(sizes, hidden, output);
  for (auto& l : layers) {
    const double fan_in = static_cast<double>(l.weight.cols());
    const double fan_out = static_cast<double>(l.weight.rows());
    const double limit = l.activation == Activation::Relu ? std::sqrt(6.0 / fan_in)
                                                          : std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i) l.weight(i, j) = uniform(rng, -limit, limit);
  }
  return Mlp(std::move(layers));
}

Mlp Mlp::zeros(std::span<const int> sizes, Activation hidden, Activation output) {
  return Mlp(blank_layers(sizes, hidden, output));
}

int Mlp::input_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols());
}

int Mlp::output_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows());
}

std::size_t Mlp::num_params() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::vector<int> Mlp::sizes() const {
  std::vector<int> s;
  if (layers_.empty()) return s;
  s.push_back(input_dim());
  for (const auto& l : layers_) s.push_back(static_cast<int>(l.weight.rows()));
  return s;
}

Eigen::VectorXd Mlp::flat() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(num_params()));
  Eigen::Index k = 0;
  for (const auto& l : layers_) {
    out.segment(k, l.weight.size()) = Eigen::Map<const Eigen::VectorXd>(l.weight.data(), l.weight.size());
    k += l.weight.size();
    out.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return out;
}

void Mlp::set_flat(const Eigen::VectorXd& params) {
  if (params.size() != static_cast<Eigen::Index>(num_params()))
    throw ShapeError("set_flat: parameter count mismatch");
  ++generation_;
  Eigen::Index k = 0;
  for (auto& l : layers_) {
    Eigen::Map<Eigen::VectorXd>(l.weight.data(), l.weight.size()) = params.segment(k, l.weight.size());
    k += l.weight.size();
    l.bias = params.segment(k, l.bias.size());
    k += l.bias.size();
  }
}

namespace {

void apply_activation(Eigen::MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::Tanh: z = z.array().tanh().matrix(); break;
    case Activation::Relu: z = z.cwiseMax(0.0); break;
    case Activation::Identity: break;
  }
}

// Multiplies the upstream gradient by the activation derivative, expressed
// through the post-activation value y.
void activation_backward(Eigen::MatrixXd& grad, const Eigen::MatrixXd& y, Activation a) {
  switch (a) {
    case Activation::Tanh: grad.array() *= 1.0 - y.array().square(); break;
    case Activation::Relu: grad.array() *= (y.array() > 0.0).cast<double>(); break;
    case Activation::Identity: break;
  }
}

}  // namespace

ForwardResult forward(const Mlp& mlp, const Eigen::MatrixXd& input) {
  if (input.rows() != mlp.input_dim())
    throw ShapeError("forward: input has " + std::to_string(input.rows()) + " rows, expected " +
                     std::to_string(mlp.input_dim()));
  ForwardResult r;
  r.cache.owner = &mlp;
  r.cache.generation = mlp.generation();
  r.cache.activations.reserve(mlp.num_layers() + 1);
  r.cache.activations.push_back(input);
  for (const auto& l : mlp.layers()) {
    Eigen::MatrixXd z = l.weight * r.cache.activations.back();
    z.colwise() += l.bias;
    apply_activation(z, l.activation);
    r.cache.activations.push_back(std::move(z));
  }
  r.output = r.cache.activations.back();
  return r;
}

Eigen::MatrixXd predict(const Mlp& mlp, const Eigen::MatrixXd& input) {
  if (input.rows() != mlp.input_dim()) throw ShapeError("predict: input dimension mismatch");
  Eigen::MatrixXd h = input;
  for (const auto& l : mlp.layers()) {
    Eigen::MatrixXd z = l.weight * h;
    z.colwise() += l.bias;
    apply_activation(z, l.activation);
    h = std::move(z);
  }
  return h;
}

MlpGrads MlpGrads::zeros_like(const Mlp& mlp) {
  MlpGrads g;
  for (const auto& l : mlp.layers()) {
    g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return g;
}

Eigen::VectorXd MlpGrads::flat() const {
  Eigen::Index n = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) n += weight[i].size() + bias[i].size();
  Eigen::VectorXd out(n);
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    out.segment(k, weight[i].size()) =
        Eigen::Map<const Eigen::VectorXd>(weight[i].data(), weight[i].size());
    k += weight[i].size();
    out.segment(k, bias[i].size()) = bias[i];
    k += bias[i].size();
  }
  return out;
}

MlpGrads& MlpGrads::operator+=(const MlpGrads& other) {
  if (other.weight.size() != weight.size()) throw ShapeError("MlpGrads: layer count mismatch");
  for (std::size_t i = 0; i < weight.size(); ++i) {
    weight[i] += other.weight[i];
    bias[i] += other.bias[i];
  }
  return *this;
}

BackwardResult backward(const Mlp& mlp, const ForwardCache& cache,
                        const Eigen::MatrixXd& output_grad) {
  if (cache.owner != &mlp || cache.generation != mlp.generation() ||
      cache.activations.size() != mlp.num_layers() + 1)
    throw std::logic_error("backward: stale forward cache");
  const auto& out = cache.activations.back();
  if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols())
    throw ShapeError("backward: output gradient shape mismatch");

  BackwardResult r;
  r.grads.weight.resize(mlp.num_layers());
  r.grads.bias.resize(mlp.num_layers());
  Eigen::MatrixXd grad = output_grad;
  for (std::size_t i = mlp.num_layers(); i-- > 0;) {
    const auto& l = mlp.layers()[i];
    activation_backward(grad, cache.activations[i + 1], l.activation);
    r.grads.weight[i] = grad * cache.activations[i].transpose();
    r.grads.bias[i] = grad.rowwise().sum();
    grad = l.weight.transpose() * grad;
  }
  r.input_grad = std::move(grad);
  return r;
}

AdamState AdamState::for_size(Eigen::Index n, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  s.m = Eigen::VectorXd::Zero(n);
  s.v = Eigen::VectorXd::Zero(n);
  return s;
}

void adam_update(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad,
                 AdamState& s) {
  if (grad.size() != params.size() || s.m.size() != params.size())
    throw ShapeError("adam: parameter/gradient/state size mismatch");
  const auto& c = s.config;
  ++s.step;
  s.m = c.beta1 * s.m + (1.0 - c.beta1) * grad;
  s.v = c.beta2 * s.v + (1.0 - c.beta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  params.array() -= c.lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + c.eps);
}

void adam_step(Mlp& mlp, const MlpGrads& grads, AdamState& state) {
  Eigen::VectorXd p = mlp.flat();
  adam_update(p, grads.flat(), state);
  mlp.set_flat(p);
}

GradCheckReport grad_check(const LossFn& loss, const Eigen::VectorXd& params,
                           const GradCheckOptions& opt) {
  Eigen::VectorXd analytic(params.size());
  const double base = loss(params, &analytic);
  if (!std::isfinite(base)) throw std::domain_error("grad_check: non-finite loss");
  if (analytic.size() != params.size()) throw ShapeError("grad_check: gradient size mismatch");

  std::vector<std::size_t> coords(static_cast<std::size_t>(params.size()));
  std::iota(coords.begin(), coords.end(), 0);
  if (opt.max_coords > 0 && opt.max_coords < coords.size()) {
    Rng rng(opt.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opt.max_coords);
  }

  GradCheckReport report;
  Eigen::VectorXd p = params;
  for (std::size_t idx : coords) {
    const auto i = static_cast<Eigen::Index>(idx);
    p(i) = params(i) + opt.step;
    const double up = loss(p, nullptr);
    p(i) = params(i) - opt.step;
    const double down = loss(p, nullptr);
    p(i) = params(i);
    if (!std::isfinite(up) || !std::isfinite(down))
      throw std::domain_error("grad_check: non-finite loss");
    const double numeric = (up - down) / (2.0 * opt.step);
    const double a = analytic(i);
    const double excess =
        std::abs(a - numeric) / (opt.atol + opt.rtol * std::max(std::abs(a), std::abs(numeric)));
    ++report.coords_checked;
    if (report.coords_checked == 1 || excess > report.worst_excess) {
      report.worst_excess = excess;
      report.worst_index = idx;
      report.analytic = a;
      report.numeric = numeric;
    }
  }
  report.passed = report.worst_excess <= 1.0;
  return report;
}

void write_mlp(io::BinaryWriter& w, const Mlp& mlp) {
  w.str("MLP1");
  w.u64(mlp.num_layers());
  for (const auto& l : mlp.layers()) {
    w.str(std::string(to_string(l.activation)));
    w.matrix(l.weight);
    w.vector(l.bias);
  }
}

Mlp read_mlp(io::BinaryReader& r) {
  if (r.str() != "MLP1") throw IoError("unsupported network record");
  const auto n = r.u64();
  if (n > 1024) throw IoError("implausible layer count");
  std::vector<Layer> layers;
  for (std::uint64_t i = 0; i < n; ++i) {
    Layer l;
    try {
      l.activation = activation_from_string(r.str());
    } catch (const ConfigError& e) {
      throw IoError(e.what());
    }
    l.weight = r.matrix();
    l.bias = r.vector();
    layers.push_back(std::move(l));
  }
  try {
    return Mlp(std::move(layers));
  } catch (const ShapeError& e) {
    throw IoError(std::string("corrupt network: ") + e.what());
  }
}

void save_mlp(const Mlp& mlp, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  io::BinaryWriter w(out);
  w.str("PASF-MLP");
  w.u64(1);
  write_mlp(w, mlp);
}

Mlp load_mlp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  io::BinaryReader r(in);
  if (r.str() != "PASF-MLP") throw IoError(path + " is not a network file");
  if (r.u64() != 1) throw IoError(path + ": unsupported network file version");
  return read_mlp(r);
}

void write_adam(io::BinaryWriter& w, const AdamState& s) {
  w.f64(s.config.lr);
  w.f64(s.config.beta1);
  w.f64(s.config.beta2);
  w.f64(s.config.eps);
  w.vector(s.m);
  w.vector(s.v);
  w.i64(s.step);
}

AdamState read_adam(io::BinaryReader& r) {
  AdamState s;
  s.config.lr = r.f64();
  s.config.beta1 = r.f64();
  s.config.beta2 = r.f64();
  s.config.eps = r.f64();
  s.m = r.vector();
  s.v = r.vector();
  s.step = r.i64();
  return s;
}

}  // namespace pasf::nn
