#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pasf/binary_io.hpp"
#include "pasf/gbmdp.hpp"
#include "pasf/nn.hpp"
#include "pasf/rng.hpp"
#include "pasf/vae.hpp"

namespace pasf::agent {

struct Transition {
  Eigen::VectorXd obs;
  int action = 0;
  Eigen::VectorXd next_obs;
  Eigen::VectorXd goal_obs;
  int env = 0;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 50000);

  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return data_.empty(); }
  // i counts from the oldest stored transition.
  const Transition& at(std::size_t i) const;
  const Transition& sample(Rng& rng) const;

  void write(io::BinaryWriter& w) const;
  static ReplayBuffer read(io::BinaryReader& r);

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // next slot to overwrite once full
  std::vector<Transition> data_;
};

// Gaussian kernel density over latent embeddings (columns of reference).
struct DensityEstimator {
  Eigen::MatrixXd reference;
  double bandwidth = 1.0;

  // bandwidth <= 0 selects Scott's rule: mean per-dim std * n^(-1/(d+4)).
  static DensityEstimator fit(const Eigen::MatrixXd& embeddings, double bandwidth = 0.0);
  Eigen::VectorXd log_density(const Eigen::MatrixXd& points) const;
};

// w_i proportional to density_i^alpha, normalized. alpha must be <= 0.
std::vector<double> skewed_weights(std::span<const double> densities, double alpha);
std::vector<double> skewed_weights_from_log(std::span<const double> log_densities, double alpha);
std::vector<double> skewed_weights(const Eigen::MatrixXd& embeddings,
                                   const DensityEstimator& density, double alpha);

// Candidate goals drawn from one env's replay buffer with skewed weights.
struct SkewedGoalPool {
  std::vector<Eigen::VectorXd> observations;
  std::vector<double> weights;

  bool empty() const { return observations.empty(); }
};

SkewedGoalPool build_goal_pool(const ReplayBuffer& buffer, const vae::VaeParams& params,
                               double alpha_skew, std::size_t pool_size, Rng& rng);

struct GoalSample {
  Eigen::VectorXd obs;
  Eigen::VectorXd embedding;
  std::size_t index = 0;
};

GoalSample sample_goal(const SkewedGoalPool& pool, const vae::VaeParams& params, Rng& rng);

double latent_reward(const Eigen::VectorXd& z_next, const Eigen::VectorXd& z_goal);

struct HindsightSample {
  int step = 0;
  int goal_step = 0;
  Transition transition;
};

// For each step t, J goal indices drawn uniformly from (t, H-1]; the goal is
// the observation at that index. Steps with no future are skipped.
std::vector<HindsightSample> relabel_hindsight(std::span<const Transition> trajectory, int J,
                                               Rng& rng);

struct QParams {
  nn::Mlp online;
  nn::Mlp target;
  nn::AdamState adam;
  int sync_period = 100;
  std::int64_t updates = 0;

  static QParams create(int latent_dim, int num_actions, std::span<const int> hidden, double lr,
                        int sync_period, Rng& rng);
  int num_actions() const { return online.output_dim(); }
};

struct QBatch {
  Eigen::MatrixXd z;       // d x B
  Eigen::MatrixXd z_next;  // d x B
  Eigen::MatrixXd z_goal;  // d x B
  std::vector<int> actions;
  Eigen::VectorXd rewards;
};

struct TdLoss {
  double loss = 0.0;
  nn::MlpGrads grads;  // w.r.t. online parameters
};

TdLoss td_loss(const nn::Mlp& online, const nn::Mlp& target, const QBatch& batch, double gamma);

// One Adam step on the TD loss; the target copy syncs every sync_period updates.
double q_update(QParams& q, const QBatch& batch, double gamma);

Eigen::VectorXd q_values(const QParams& q, const Eigen::VectorXd& z, const Eigen::VectorXd& z_goal);
int greedy_action(const Eigen::VectorXd& values);
int act(const QParams& q, const Eigen::VectorXd& z, const Eigen::VectorXd& z_goal, double epsilon,
        Rng& rng);

// Raw observation batch for a Q update, before embedding.
struct QBatchDraw {
  Eigen::MatrixXd obs, next_obs, goal_obs;
  std::vector<int> actions;
  int replaced_goals = 0;
};

QBatchDraw draw_q_batch(std::span<const ReplayBuffer> buffers, std::span<const SkewedGoalPool> pools,
                        int batch_size, double replace_prob, Rng& rng);
QBatch embed_q_batch(const vae::VaeParams& params, const QBatchDraw& draw);

using GoalPolicy =
    std::function<int(const Eigen::VectorXd& obs, const Eigen::VectorXd& goal_obs, Rng& rng)>;

struct EvalResult {
  double success_rate = 0.0;
  double mean_final_distance = 0.0;
  int episodes = 0;
};

// Goals uniform over the goal space, shown as x^e(g) with the env's factor at
// episode start. Success means the final state equals the goal.
EvalResult evaluate(const GoalPolicy& policy, const gbmdp::GbmdpSpec& spec,
                    const gbmdp::EnvInstance& env, int episodes, int horizon, Rng& rng);
EvalResult evaluate(const QParams& q, const vae::VaeParams& params, const gbmdp::GbmdpSpec& spec,
                    const gbmdp::EnvInstance& env, int episodes, int horizon, Rng& rng);

void write_qparams(io::BinaryWriter& w, const QParams& q);
QParams read_qparams(io::BinaryReader& r);

}  // namespace pasf::agent
