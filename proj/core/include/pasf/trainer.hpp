#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pasf/agent.hpp"
#include "pasf/alignment.hpp"
#include "pasf/binary_io.hpp"
#include "pasf/gbmdp.hpp"
#include "pasf/repr_losses.hpp"
#include "pasf/vae.hpp"

namespace pasf::agent {

struct AgentConfig {
  double gamma = 0.9;
  double lr = 1e-3;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  double epsilon_decay_fraction = 0.2;  // share of all exploration steps spent annealing
  int relabels_per_step = 3;
  double goal_replace_prob = 0.5;
  double alpha_skew = -0.1;
  int replay_capacity = 50000;
  int steps_per_epoch = 900;
  int horizon = 50;
  int q_updates_per_epoch = 1500;
  int q_batch_size = 128;
  std::vector<int> q_hidden = {128, 128};
  int target_sync = 100;
  int skew_pool_size = 1024;
  int eval_episodes = 20;
  int eval_every = 1;
  int eval_horizon = 0;  // 0 reuses horizon
  int ler_states = 100;
};

struct VaeTrainConfig {
  int latent_dim = 8;
  std::vector<int> hidden = {64, 64};
  double beta = 20.0;
  double lr = 1e-3;
  int steps_per_epoch = 100;
  int pretrain_steps = 0;  // extra VAE steps on the first epoch's data before any Q update
  int replay_batch = 32;
  int aligned_batch = 32;
  double alpha_mmd = 1000.0;
  double alpha_diff = 0.1;
  int psi_dim = 1024;
  double gamma_psi = 1.0;
};

struct AlignmentConfig {
  double fraction = 1.0 / 6.0;
  int horizon = 50;
  align::ActionSource source = align::ActionSource::Policy;
  align::InitialState initial_state = align::InitialState::Auto;
  int buffer_capacity = 1000;
};

struct AblationFlags {
  bool no_mmd = false;
  bool no_diff = false;
  bool no_aligned_sampling = false;
};

struct PasfConfig {
  int epochs = 200;
  AgentConfig agent;
  VaeTrainConfig vae;
  AlignmentConfig alignment;
  AblationFlags ablation;
};

void validate(const PasfConfig& config);

struct EnvEval {
  int env = 0;
  double success = 0.0;
  double distance = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  std::int64_t env_steps = 0;
  double epsilon = 0.0;
  int aligned_records = 0;
  bool evaluated = false;
  std::vector<EnvEval> train_eval;
  std::vector<EnvEval> test_eval;
  double train_success = 0.0;
  double test_success = 0.0;
  double train_distance = 0.0;
  double test_distance = 0.0;
  double ler_train = 0.0;
  double ler_test = 0.0;
  int ler_excluded = 0;
  double eta_train = 0.0;
  double psi_train = 0.0;
  double eta_all = 0.0;
  double psi_all = 0.0;
  bool alignment_sampled = false;
  double max_local_distortion = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double mmd = 0.0;
  double diff = 0.0;
  double td = 0.0;
};

// Fills the evaluation fields of rec: goal success and final distance per
// env, LER, alignment measures.
void evaluate_agent(const QParams& q, const vae::VaeParams& params,
                    const gbmdp::GbmdpFamily& family, const AgentConfig& config, Rng& rng,
                    EpochRecord& rec);

struct TrainingReport {
  std::vector<EpochRecord> epochs;
};

class Trainer {
 public:
  Trainer(PasfConfig config, gbmdp::GbmdpFamily family, std::uint64_t seed);

  EpochRecord run_epoch();
  int epoch() const { return epoch_; }
  bool finished() const { return epoch_ >= config_.epochs; }

  const PasfConfig& config() const { return config_; }
  const gbmdp::GbmdpFamily& family() const { return family_; }
  const vae::VaeParams& vae() const { return vae_; }
  const QParams& q() const { return q_; }
  const repr::RandomExpansion& expansion() const { return psi_; }
  std::uint64_t seed() const { return seed_; }

  // Full training state, enough to continue bit-exactly.
  void write_state(io::BinaryWriter& w) const;
  static Trainer read_state(PasfConfig config, gbmdp::GbmdpFamily family, io::BinaryReader& r);

 private:
  Trainer() = default;

  double epsilon() const;
  double alpha_mmd() const;
  double alpha_diff() const;
  std::vector<std::vector<Transition>> explore();
  int aligned_sampling();
  double train_q();
  void relabel(const std::vector<std::vector<Transition>>& trajectories);
  void refresh_pools();
  vae::LossTerms train_vae(int steps);
  void evaluate_into(EpochRecord& rec);

  PasfConfig config_;
  gbmdp::GbmdpFamily family_;
  std::uint64_t seed_ = 0;
  Rng rng_;
  vae::VaeParams vae_;
  nn::AdamState enc_adam_;
  nn::AdamState dec_adam_;
  repr::RandomExpansion psi_;
  QParams q_;
  std::vector<ReplayBuffer> replay_;
  align::AlignedBuffer aligned_{1};
  std::vector<SkewedGoalPool> pools_;
  int epoch_ = 0;
  std::int64_t env_steps_ = 0;
};

using EpochCallback = std::function<void(const Trainer&, const EpochRecord&)>;

TrainingReport run_pasf(const PasfConfig& config, const gbmdp::GbmdpFamily& family,
                        std::uint64_t seed, const EpochCallback& on_epoch = {});

}  // namespace pasf::agent
