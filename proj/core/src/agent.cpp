#include "pasf/agent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "pasf/errors.hpp"

namespace pasf::agent {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
    return;
  }
  data_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= data_.size()) throw std::out_of_range("ReplayBuffer::at");
  return data_[(head_ + i) % data_.size()];
}

const Transition& ReplayBuffer::sample(Rng& rng) const {
  if (data_.empty()) throw std::runtime_error("ReplayBuffer::sample: empty buffer");
  return data_[uniform_index(rng, data_.size())];
}

namespace {

// Observation vectors repeat heavily (static factors), so the serialized
// buffer interns them.
class VectorTable {
 public:
  std::uint64_t intern(const Eigen::VectorXd& v) {
    std::string key(reinterpret_cast<const char*>(v.data()),
                    sizeof(double) * static_cast<std::size_t>(v.size()));
    auto [it, inserted] = index_.try_emplace(std::move(key), values_.size());
    if (inserted) values_.push_back(v);
    return it->second;
  }
  const std::vector<Eigen::VectorXd>& values() const { return values_; }

 private:
  std::unordered_map<std::string, std::uint64_t> index_;
  std::vector<Eigen::VectorXd> values_;
};

}  // namespace

void ReplayBuffer::write(io::BinaryWriter& w) const {
  VectorTable table;
  std::vector<std::uint64_t> ids;
  ids.reserve(3 * data_.size());
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const auto& t = at(i);
    ids.push_back(table.intern(t.obs));
    ids.push_back(table.intern(t.next_obs));
    ids.push_back(table.intern(t.goal_obs));
  }
  w.str("REPLAY1");
  w.u64(capacity_);
  w.u64(table.values().size());
  for (const auto& v : table.values()) w.vector(v);
  w.u64(data_.size());
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const auto& t = at(i);
    w.u64(ids[3 * i]);
    w.u64(ids[3 * i + 1]);
    w.u64(ids[3 * i + 2]);
    w.i64(t.action);
    w.i64(t.env);
  }
}

ReplayBuffer ReplayBuffer::read(io::BinaryReader& r) {
  if (r.str() != "REPLAY1") throw IoError("unsupported replay buffer record");
  ReplayBuffer buf(r.u64());
  const auto n_vec = r.u64();
  std::vector<Eigen::VectorXd> table;
  table.reserve(n_vec);
  for (std::uint64_t i = 0; i < n_vec; ++i) table.push_back(r.vector());
  const auto n = r.u64();
  auto lookup = [&](std::uint64_t id) -> const Eigen::VectorXd& {
    if (id >= table.size()) throw IoError("corrupt replay buffer");
    return table[id];
  };
  for (std::uint64_t i = 0; i < n; ++i) {
    Transition t;
    t.obs = lookup(r.u64());
    t.next_obs = lookup(r.u64());
    t.goal_obs = lookup(r.u64());
    t.action = static_cast<int>(r.i64());
    t.env = static_cast<int>(r.i64());
    buf.push(std::move(t));
  }
  return buf;
}

DensityEstimator DensityEstimator::fit(const Eigen::MatrixXd& embeddings, double bandwidth) {
  if (embeddings.cols() == 0) throw std::invalid_argument("DensityEstimator: empty reference set");
  DensityEstimator est;
  est.reference = embeddings;
  if (bandwidth > 0.0) {
    est.bandwidth = bandwidth;
    return est;
  }
  const double n = static_cast<double>(embeddings.cols());
  const double d = static_cast<double>(embeddings.rows());
  const Eigen::MatrixXd centered = embeddings.colwise() - embeddings.rowwise().mean();
  const double denom = std::max(1.0, n - 1.0);
  const double sigma = (centered.rowwise().squaredNorm() / denom).cwiseSqrt().mean();
  est.bandwidth = std::max(sigma, 1e-6) * std::pow(n, -1.0 / (d + 4.0));
  return est;
}

Eigen::VectorXd DensityEstimator::log_density(const Eigen::MatrixXd& points) const {
  const double h2 = bandwidth * bandwidth;
  const double n = static_cast<double>(reference.cols());
  const double d = static_cast<double>(reference.rows());
  const double log_norm = -std::log(n) - 0.5 * d * std::log(2.0 * std::numbers::pi * h2);
  const Eigen::VectorXd ref_sq = reference.colwise().squaredNorm().transpose();
  Eigen::VectorXd out(points.cols());
  const Eigen::MatrixXd cross = reference.transpose() * points;  // n x m
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const double p_sq = points.col(j).squaredNorm();
    const Eigen::VectorXd expo =
        -(ref_sq.array() - 2.0 * cross.col(j).array() + p_sq).max(0.0) / (2.0 * h2);
    const double m = expo.maxCoeff();
    out(j) = m + std::log((expo.array() - m).exp().sum()) + log_norm;
  }
  return out;
}

std::vector<double> skewed_weights_from_log(std::span<const double> log_densities, double alpha) {
  if (log_densities.empty()) throw std::invalid_argument("skewed_weights: empty buffer");
  if (alpha > 0.0) throw std::invalid_argument("skewed_weights: alpha_skew must be <= 0");
  std::vector<double> w(log_densities.size());
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = alpha * log_densities[i];
    m = std::max(m, w[i]);
  }
  double total = 0.0;
  for (auto& x : w) {
    x = std::exp(x - m);
    total += x;
  }
  for (auto& x : w) x /= total;
  return w;
}

std::vector<double> skewed_weights(std::span<const double> densities, double alpha) {
  std::vector<double> logs(densities.size());
  for (std::size_t i = 0; i < densities.size(); ++i) {
    if (!(densities[i] > 0.0)) throw std::invalid_argument("skewed_weights: densities must be > 0");
    logs[i] = std::log(densities[i]);
  }
  return skewed_weights_from_log(logs, alpha);
}

std::vector<double> skewed_weights(const Eigen::MatrixXd& embeddings,
                                   const DensityEstimator& density, double alpha) {
  const Eigen::VectorXd logs = density.log_density(embeddings);
  return skewed_weights_from_log(std::span<const double>(logs.data(), static_cast<std::size_t>(logs.size())),
                                 alpha);
}

SkewedGoalPool build_goal_pool(const ReplayBuffer& buffer, const vae::VaeParams& params,
                               double alpha_skew, std::size_t pool_size, Rng& rng) {
  if (buffer.empty()) throw std::invalid_argument("build_goal_pool: empty buffer");
  std::vector<std::size_t> idx(buffer.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (pool_size > 0 && pool_size < idx.size()) {
    // Partial Fisher-Yates: the first pool_size entries become a uniform subset.
    for (std::size_t i = 0; i < pool_size; ++i)
      std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
    idx.resize(pool_size);
  }
  SkewedGoalPool pool;
  Eigen::MatrixXd obs(params.obs_dim(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    pool.observations.push_back(buffer.at(idx[i]).next_obs);
    obs.col(static_cast<Eigen::Index>(i)) = pool.observations.back();
  }
  const Eigen::MatrixXd z = vae::embed(params, obs);
  pool.weights = skewed_weights(z, DensityEstimator::fit(z), alpha_skew);
  return pool;
}

GoalSample sample_goal(const SkewedGoalPool& pool, const vae::VaeParams& params, Rng& rng) {
  if (pool.empty()) throw std::invalid_argument("sample_goal: empty pool");
  GoalSample g;
  g.index = sample_categorical(rng, pool.weights);
  g.obs = pool.observations[g.index];
  g.embedding = vae::embed(params, g.obs);
  return g;
}

double latent_reward(const Eigen::VectorXd& z_next, const Eigen::VectorXd& z_goal) {
  if (z_next.size() != z_goal.size()) throw ShapeError("latent_reward: dimension mismatch");
  return -(z_next - z_goal).norm();
}

std::vector<HindsightSample> relabel_hindsight(std::span<const Transition> traj, int J, Rng& rng) {
  if (J < 0) throw std::invalid_argument("relabel_hindsight: J must be >= 0");
  std::vector<HindsightSample> out;
  const int H = static_cast<int>(traj.size());
  for (int t = 0; t + 1 < H; ++t) {
    for (int j = 0; j < J; ++j) {
      const int h = t + 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(H - 1 - t)));
      HindsightSample s;
      s.step = t;
      s.goal_step = h;
      s.transition = traj[static_cast<std::size_t>(t)];
      s.transition.goal_obs = traj[static_cast<std::size_t>(h)].obs;
      out.push_back(std::move(s));
    }
  }
  return out;
}

QParams QParams::create(int latent_dim, int num_actions, std::span<const int> hidden, double lr,
                        int sync_period, Rng& rng) {
  if (sync_period < 1) throw ConfigError("agent.target_sync must be >= 1");
  std::vector<int> sizes{2 * latent_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(num_actions);
  QParams q;
  q.online = nn::Mlp::create(sizes, nn::Activation::Relu, nn::Activation::Identity, rng);
  q.target = q.online;
  nn::AdamConfig cfg;
  cfg.lr = lr;
  q.adam = nn::AdamState::for_size(static_cast<Eigen::Index>(q.online.num_params()), cfg);
  q.sync_period = sync_period;
  return q;
}

namespace {

Eigen::MatrixXd stack(const Eigen::MatrixXd& top, const Eigen::MatrixXd& bottom) {
  Eigen::MatrixXd out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

}  // namespace

TdLoss td_loss(const nn::Mlp& online, const nn::Mlp& target, const QBatch& batch, double gamma) {
  const Eigen::Index B = batch.z.cols();
  if (B == 0) throw std::invalid_argument("td_loss: empty batch");
  if (batch.z_next.cols() != B || batch.z_goal.cols() != B ||
      static_cast<Eigen::Index>(batch.actions.size()) != B || batch.rewards.size() != B)
    throw ShapeError("td_loss: batch fields disagree on size");
  const auto fwd = nn::forward(online, stack(batch.z, batch.z_goal));
  const Eigen::MatrixXd q_next = nn::predict(target, stack(batch.z_next, batch.z_goal));
  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(fwd.output.rows(), B);
  TdLoss out;
  for (Eigen::Index b = 0; b < B; ++b) {
    const int a = batch.actions[static_cast<std::size_t>(b)];
    if (a < 0 || a >= fwd.output.rows()) throw ShapeError("td_loss: action out of range");
    const double y = batch.rewards(b) + gamma * q_next.col(b).maxCoeff();
    const double err = fwd.output(a, b) - y;
    out.loss += err * err;
    dq(a, b) = 2.0 * err / static_cast<double>(B);
  }
  out.loss /= static_cast<double>(B);
  out.grads = nn::backward(online, fwd.cache, dq).grads;
  return out;
}

double q_update(QParams& q, const QBatch& batch, double gamma) {
  const auto td = td_loss(q.online, q.target, batch, gamma);
  nn::adam_step(q.online, td.grads, q.adam);
  ++q.updates;
  if (q.updates % q.sync_period == 0) q.target = q.online;
  return td.loss;
}

Eigen::VectorXd q_values(const QParams& q, const Eigen::VectorXd& z, const Eigen::VectorXd& z_goal) {
  Eigen::VectorXd in(z.size() + z_goal.size());
  in << z, z_goal;
  return nn::predict(q.online, in).col(0);
}

int greedy_action(const Eigen::VectorXd& values) {
  int best = 0;
  for (int a = 1; a < values.size(); ++a)
    if (values(a) > values(best)) best = a;
  return best;
}

int act(const QParams& q, const Eigen::VectorXd& z, const Eigen::VectorXd& z_goal, double epsilon,
        Rng& rng) {
  if (uniform01(rng) < epsilon)
    return static_cast<int>(uniform_index(rng, static_cast<std::size_t>(q.num_actions())));
  return greedy_action(q_values(q, z, z_goal));
}

QBatchDraw draw_q_batch(std::span<const ReplayBuffer> buffers, std::span<const SkewedGoalPool> pools,
                        int batch_size, double replace_prob, Rng& rng) {
  if (buffers.empty() || batch_size < 1) throw std::invalid_argument("draw_q_batch: nothing to draw");
  if (pools.size() != buffers.size()) throw ShapeError("draw_q_batch: one goal pool per buffer");
  const auto n_env = static_cast<int>(buffers.size());
  const Eigen::Index dim = buffers[0].at(0).obs.size();
  QBatchDraw d;
  d.obs.resize(dim, batch_size);
  d.next_obs.resize(dim, batch_size);
  d.goal_obs.resize(dim, batch_size);
  d.actions.resize(static_cast<std::size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    const int e = b % n_env;  // even split across envs
    const auto& t = buffers[static_cast<std::size_t>(e)].sample(rng);
    d.obs.col(b) = t.obs;
    d.next_obs.col(b) = t.next_obs;
    d.actions[static_cast<std::size_t>(b)] = t.action;
    const auto& pool = pools[static_cast<std::size_t>(e)];
    if (uniform01(rng) < replace_prob && !pool.empty()) {
      d.goal_obs.col(b) = pool.observations[sample_categorical(rng, pool.weights)];
      ++d.replaced_goals;
    } else {
      d.goal_obs.col(b) = t.goal_obs;
    }
  }
  return d;
}

QBatch embed_q_batch(const vae::VaeParams& params, const QBatchDraw& d) {
  const Eigen::Index B = d.obs.cols();
  Eigen::MatrixXd all(d.obs.rows(), 3 * B);
  all << d.obs, d.next_obs, d.goal_obs;
  const Eigen::MatrixXd z = vae::embed(params, all);
  QBatch q;
  q.z = z.leftCols(B);
  q.z_next = z.middleCols(B, B);
  q.z_goal = z.rightCols(B);
  q.actions = d.actions;
  q.rewards = -(q.z_next - q.z_goal).colwise().norm().transpose();
  return q;
}

EvalResult evaluate(const GoalPolicy& policy, const gbmdp::GbmdpSpec& spec,
                    const gbmdp::EnvInstance& env, int episodes, int horizon, Rng& rng) {
  if (episodes < 1 || horizon < 0) throw std::invalid_argument("evaluate: bad episode settings");
  EvalResult r;
  r.episodes = episodes;
  int successes = 0;
  double dist = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    const int g = spec.goals[uniform_index(rng, spec.goals.size())];
    auto cur = gbmdp::reset(spec, env, rng);
    const Eigen::VectorXd goal_obs = gbmdp::observe(env, g, cur.hidden.b);
    for (int t = 0; t < horizon; ++t)
      cur = gbmdp::step(spec, env, cur.hidden, policy(cur.obs, goal_obs, rng), rng);
    const double d = gbmdp::oracle_distance(spec, cur.hidden.s, g);
    successes += d == 0.0 ? 1 : 0;
    dist += d;
  }
  r.success_rate = static_cast<double>(successes) / episodes;
  r.mean_final_distance = dist / episodes;
  return r;
}

EvalResult evaluate(const QParams& q, const vae::VaeParams& params, const gbmdp::GbmdpSpec& spec,
                    const gbmdp::EnvInstance& env, int episodes, int horizon, Rng& rng) {
  Eigen::VectorXd cached_goal, cached_z;
  GoalPolicy policy = [&](const Eigen::VectorXd& obs, const Eigen::VectorXd& goal_obs, Rng& r) {
    if (cached_goal.size() != goal_obs.size() || cached_goal != goal_obs) {
      cached_goal = goal_obs;
      cached_z = vae::embed(params, goal_obs);
    }
    return act(q, vae::embed(params, obs), cached_z, 0.0, r);
  };
  return evaluate(policy, spec, env, episodes, horizon, rng);
}

void write_qparams(io::BinaryWriter& w, const QParams& q) {
  w.str("QNET1");
  nn::write_mlp(w, q.online);
  nn::write_mlp(w, q.target);
  nn::write_adam(w, q.adam);
  w.i64(q.sync_period);
  w.i64(q.updates);
}

QParams read_qparams(io::BinaryReader& r) {
  if (r.str() != "QNET1") throw IoError("unsupported Q-network record");
  QParams q;
  q.online = nn::read_mlp(r);
  q.target = nn::read_mlp(r);
  q.adam = nn::read_adam(r);
  q.sync_period = static_cast<int>(r.i64());
  q.updates = r.i64();
  return q;
}

}  // namespace pasf::agent
