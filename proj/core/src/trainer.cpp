#include "pasf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "pasf/errors.hpp"

namespace pasf::agent {

void validate(const PasfConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  require(c.epochs >= 1, "epochs must be >= 1");
  const auto& a = c.agent;
  require(a.gamma > 0.0 && a.gamma < 1.0, "agent.gamma must lie in (0, 1)");
  require(a.lr > 0.0, "agent.lr must be > 0");
  require(a.epsilon_start >= 0.0 && a.epsilon_start <= 1.0, "agent.epsilon_start must lie in [0, 1]");
  require(a.epsilon_end >= 0.0 && a.epsilon_end <= 1.0, "agent.epsilon_end must lie in [0, 1]");
  require(a.epsilon_decay_fraction > 0.0 && a.epsilon_decay_fraction <= 1.0,
          "agent.epsilon_decay_fraction must lie in (0, 1]");
  require(a.relabels_per_step >= 0, "agent.relabels_per_step must be >= 0");
  require(a.goal_replace_prob >= 0.0 && a.goal_replace_prob <= 1.0,
          "agent.goal_replace_prob must lie in [0, 1]");
  require(a.alpha_skew <= 0.0, "agent.alpha_skew must be <= 0");
  require(a.replay_capacity >= 1, "agent.replay_capacity must be >= 1");
  require(a.steps_per_epoch >= 1, "agent.steps_per_epoch must be >= 1");
  require(a.horizon >= 1, "agent.horizon must be >= 1");
  require(a.q_updates_per_epoch >= 0, "agent.q_updates_per_epoch must be >= 0");
  require(a.q_batch_size >= 1, "agent.q_batch_size must be >= 1");
  for (int h : a.q_hidden) require(h >= 1, "agent.q_hidden entries must be >= 1");
  require(a.target_sync >= 1, "agent.target_sync must be >= 1");
  require(a.skew_pool_size >= 0, "agent.skew_pool_size must be >= 0");
  require(a.eval_episodes >= 1, "agent.eval_episodes must be >= 1");
  require(a.eval_every >= 1, "agent.eval_every must be >= 1");
  require(a.eval_horizon >= 0, "agent.eval_horizon must be >= 0");
  require(a.ler_states >= 1, "agent.ler_states must be >= 1");
  const auto& v = c.vae;
  require(v.latent_dim >= 1, "vae.latent_dim must be >= 1");
  for (int h : v.hidden) require(h >= 1, "vae.hidden entries must be >= 1");
  require(v.beta >= 0.0, "vae.beta must be >= 0");
  require(v.lr > 0.0, "vae.lr must be > 0");
  require(v.steps_per_epoch >= 0, "vae.steps_per_epoch must be >= 0");
  require(v.pretrain_steps >= 0, "vae.pretrain_steps must be >= 0");
  require(v.replay_batch >= 1, "vae.replay_batch must be >= 1");
  require(v.aligned_batch >= 1, "vae.aligned_batch must be >= 1");
  require(v.alpha_mmd >= 0.0, "vae.alpha_mmd must be >= 0");
  require(v.alpha_diff >= 0.0, "vae.alpha_diff must be >= 0");
  require(v.psi_dim >= 1, "vae.psi_dim must be >= 1");
  require(v.gamma_psi > 0.0, "vae.gamma_psi must be > 0");
  const auto& al = c.alignment;
  require(al.fraction >= 0.0 && al.fraction < 1.0, "alignment.fraction must lie in [0, 1)");
  require(al.horizon >= 1, "alignment.horizon must be >= 1");
  require(al.buffer_capacity >= 1, "alignment.buffer_capacity must be >= 1");
}

namespace {

enum Stream : std::uint64_t { kInit = 1, kExpansion = 2, kTrain = 3, kEval = 4 };

bool aligned_enabled(const PasfConfig& c, const gbmdp::GbmdpFamily& f) {
  return !c.ablation.no_aligned_sampling && f.num_train() >= 2 && c.alignment.fraction > 0.0;
}

int exploration_steps(const PasfConfig& c, const gbmdp::GbmdpFamily& f) {
  const double share = aligned_enabled(c, f) ? 1.0 - c.alignment.fraction : 1.0;
  return static_cast<int>(std::lround(c.agent.steps_per_epoch * share));
}

int episodes_per_env(const PasfConfig& c, const gbmdp::GbmdpFamily& f) {
  const double per = static_cast<double>(exploration_steps(c, f)) /
                     (static_cast<double>(f.num_train()) * c.agent.horizon);
  return std::max(1, static_cast<int>(std::lround(per)));
}

int aligned_records_per_epoch(const PasfConfig& c, const gbmdp::GbmdpFamily& f) {
  const double per = c.agent.steps_per_epoch * c.alignment.fraction /
                     (static_cast<double>(f.num_train()) * c.alignment.horizon);
  return std::max(1, static_cast<int>(std::lround(per)));
}

}  // namespace

Trainer::Trainer(PasfConfig config, gbmdp::GbmdpFamily family, std::uint64_t seed)
    : config_(std::move(config)), family_(std::move(family)), seed_(seed) {
  validate(config_);
  if (family_.num_train() < 1) throw ConfigError("family needs at least one training env");
  Rng init(derive_seed(seed_, kInit));
  vae::Architecture arch;
  arch.obs_dim = family_.obs_dim;
  arch.latent_dim = config_.vae.latent_dim;
  arch.num_envs = family_.num_train();
  arch.hidden = config_.vae.hidden;
  vae_ = vae::VaeParams::create(arch, config_.vae.beta, init);
  nn::AdamConfig vae_adam;
  vae_adam.lr = config_.vae.lr;
  enc_adam_ = nn::AdamState::for_size(static_cast<Eigen::Index>(vae_.encoder.num_params()), vae_adam);
  dec_adam_ = nn::AdamState::for_size(static_cast<Eigen::Index>(vae_.decoder.num_params()), vae_adam);
  psi_ = repr::RandomExpansion::sample(config_.vae.psi_dim, config_.vae.latent_dim,
                                       config_.vae.gamma_psi, derive_seed(seed_, kExpansion));
  q_ = QParams::create(config_.vae.latent_dim, family_.spec.num_actions, config_.agent.q_hidden,
                       config_.agent.lr, config_.agent.target_sync, init);
  rng_.seed(derive_seed(seed_, kTrain));
  for (int e = 0; e < family_.num_train(); ++e)
    replay_.emplace_back(static_cast<std::size_t>(config_.agent.replay_capacity));
  pools_.resize(static_cast<std::size_t>(family_.num_train()));
  aligned_ = align::AlignedBuffer(static_cast<std::size_t>(config_.alignment.buffer_capacity));
}

double Trainer::alpha_mmd() const { return config_.ablation.no_mmd ? 0.0 : config_.vae.alpha_mmd; }
double Trainer::alpha_diff() const { return config_.ablation.no_diff ? 0.0 : config_.vae.alpha_diff; }

double Trainer::epsilon() const {
  const auto& a = config_.agent;
  const double total = static_cast<double>(config_.epochs) * episodes_per_env(config_, family_) *
                       family_.num_train() * a.horizon;
  const double frac = static_cast<double>(env_steps_) / (a.epsilon_decay_fraction * total);
  return std::max(a.epsilon_end, a.epsilon_start - (a.epsilon_start - a.epsilon_end) * frac);
}

std::vector<std::vector<Transition>> Trainer::explore() {
  const auto& spec = family_.spec;
  const int episodes = episodes_per_env(config_, family_);
  std::vector<std::vector<Transition>> trajectories;
  for (int e = 0; e < family_.num_train(); ++e) {
    const auto& env = family_.train[static_cast<std::size_t>(e)];
    for (int ep = 0; ep < episodes; ++ep) {
      Eigen::VectorXd goal_obs, z_goal;
      if (pools_[static_cast<std::size_t>(e)].empty()) {
        goal_obs = gbmdp::reset(spec, env, rng_).obs;
        z_goal = vae::embed(vae_, goal_obs);
      } else {
        auto g = sample_goal(pools_[static_cast<std::size_t>(e)], vae_, rng_);
        goal_obs = std::move(g.obs);
        z_goal = std::move(g.embedding);
      }
      auto cur = gbmdp::reset(spec, env, rng_);
      std::vector<Transition> traj;
      traj.reserve(static_cast<std::size_t>(config_.agent.horizon));
      for (int t = 0; t < config_.agent.horizon; ++t) {
        const int a = act(q_, vae::embed(vae_, cur.obs), z_goal, epsilon(), rng_);
        auto next = gbmdp::step(spec, env, cur.hidden, a, rng_);
        Transition tr{cur.obs, a, next.obs, goal_obs, e};
        replay_[static_cast<std::size_t>(e)].push(tr);
        traj.push_back(std::move(tr));
        cur = std::move(next);
        ++env_steps_;
      }
      trajectories.push_back(std::move(traj));
    }
  }
  return trajectories;
}

int Trainer::aligned_sampling() {
  const int records = aligned_records_per_epoch(config_, family_);
  align::CollectOptions opt;
  opt.horizon = config_.alignment.horizon;
  opt.source = config_.alignment.source;
  opt.initial_state = config_.alignment.initial_state;
  Eigen::VectorXd z_goal;
  align::RolloutPolicy policy = [&](const Eigen::VectorXd& obs, int t, Rng& rng) {
    if (t % config_.agent.horizon == 0) {
      const auto e = uniform_index(rng, pools_.size());
      if (pools_[e].empty()) {
        const auto& env = family_.train[e];
        z_goal = vae::embed(vae_, gbmdp::reset(family_.spec, env, rng).obs);
      } else {
        z_goal = sample_goal(pools_[e], vae_, rng).embedding;
      }
    }
    return act(q_, vae::embed(vae_, obs), z_goal, epsilon(), rng);
  };
  for (int i = 0; i < records; ++i) aligned_.push(align::collect_aligned(family_, opt, policy, rng_));
  return records;
}

double Trainer::train_q() {
  const int n = config_.agent.q_updates_per_epoch;
  if (n == 0) return 0.0;
  for (const auto& buf : replay_)
    if (buf.empty()) return 0.0;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto draw = draw_q_batch(replay_, pools_, config_.agent.q_batch_size,
                                   config_.agent.goal_replace_prob, rng_);
    total += q_update(q_, embed_q_batch(vae_, draw), config_.agent.gamma);
  }
  return total / n;
}

void Trainer::relabel(const std::vector<std::vector<Transition>>& trajectories) {
  for (const auto& traj : trajectories) {
    if (traj.empty()) continue;
    const auto e = static_cast<std::size_t>(traj.front().env);
    for (auto& s : relabel_hindsight(traj, config_.agent.relabels_per_step, rng_))
      replay_[e].push(std::move(s.transition));
  }
}

void Trainer::refresh_pools() {
  for (std::size_t e = 0; e < replay_.size(); ++e)
    if (!replay_[e].empty())
      pools_[e] = build_goal_pool(replay_[e], vae_, config_.agent.alpha_skew,
                                  static_cast<std::size_t>(config_.agent.skew_pool_size), rng_);
}

namespace {

Eigen::MatrixXd draw_from_pool(const SkewedGoalPool& pool, const ReplayBuffer& buffer, int n,
                               Eigen::Index dim, Rng& rng) {
  Eigen::MatrixXd out(dim, n);
  for (int b = 0; b < n; ++b)
    out.col(b) = pool.empty() ? buffer.sample(rng).next_obs
                              : pool.observations[sample_categorical(rng, pool.weights)];
  return out;
}

}  // namespace

vae::LossTerms Trainer::train_vae(int steps) {
  vae::LossTerms mean;
  if (steps == 0) return mean;
  for (const auto& buf : replay_)
    if (buf.empty()) return mean;
  const auto& vc = config_.vae;
  const bool aligned_on = aligned_enabled(config_, family_);
  vae::LossWeights w;
  w.alpha_mmd = family_.num_train() >= 2 ? alpha_mmd() : 0.0;
  w.alpha_diff = alpha_diff();
  for (int k = 0; k < steps; ++k) {
    vae::VaeBatch batch;
    for (std::size_t e = 0; e < replay_.size(); ++e) {
      batch.replay.push_back(draw_from_pool(pools_[e], replay_[e], vc.replay_batch, family_.obs_dim, rng_));
      batch.noise.push_back(standard_normal_matrix(rng_, vc.latent_dim, vc.replay_batch));
    }
    if (w.alpha_mmd > 0.0) {
      if (aligned_on) {
        batch.aligned = aligned_.sample(static_cast<std::size_t>(vc.aligned_batch), rng_).per_env;
      } else {
        // Without aligned sampling the matching runs on unpaired replay draws.
        for (std::size_t e = 0; e < replay_.size(); ++e)
          batch.aligned.push_back(
              draw_from_pool(pools_[e], replay_[e], vc.aligned_batch, family_.obs_dim, rng_));
      }
    }
    const auto res = vae::vae_loss(vae_, batch, w, psi_);
    nn::adam_step(vae_.encoder, res.encoder_grads, enc_adam_);
    nn::adam_step(vae_.decoder, res.decoder_grads, dec_adam_);
    mean.recon += res.terms.recon / steps;
    mean.kl += res.terms.kl / steps;
    mean.mmd += res.terms.mmd / steps;
    mean.diff += res.terms.diff / steps;
    mean.total += res.terms.total / steps;
  }
  return mean;
}

void evaluate_agent(const QParams& q, const vae::VaeParams& params,
                    const gbmdp::GbmdpFamily& family, const AgentConfig& a, Rng& rng,
                    EpochRecord& rec) {
  const int horizon = a.eval_horizon > 0 ? a.eval_horizon : a.horizon;
  rec.evaluated = true;
  rec.train_eval.clear();
  rec.test_eval.clear();
  for (const auto& env : family.train) {
    const auto r = evaluate(q, params, family.spec, env, a.eval_episodes, horizon, rng);
    rec.train_eval.push_back({env.index, r.success_rate, r.mean_final_distance});
  }
  for (const auto& env : family.test) {
    const auto r = evaluate(q, params, family.spec, env, a.eval_episodes, horizon, rng);
    rec.test_eval.push_back({env.index, r.success_rate, r.mean_final_distance});
  }
  auto mean_of = [](const std::vector<EnvEval>& v, double EnvEval::*field) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (const auto& x : v) s += x.*field;
    return s / static_cast<double>(v.size());
  };
  rec.train_success = mean_of(rec.train_eval, &EnvEval::success);
  rec.test_success = mean_of(rec.test_eval, &EnvEval::success);
  rec.train_distance = mean_of(rec.train_eval, &EnvEval::distance);
  rec.test_distance = mean_of(rec.test_eval, &EnvEval::distance);

  const auto phi = vae::embedder(params);
  std::vector<int> train_envs(static_cast<std::size_t>(family.num_train()));
  std::iota(train_envs.begin(), train_envs.end(), 0);
  std::vector<int> all_envs(static_cast<std::size_t>(family.num_train() + family.num_test()));
  std::iota(all_envs.begin(), all_envs.end(), 0);
  // Test-set LER is measured against training env 0 as the reference.
  std::vector<int> test_envs{0};
  for (const auto& env : family.test) test_envs.push_back(env.index);

  const auto ler_train = vae::latent_error_rate(phi, family, train_envs, a.ler_states, rng);
  rec.ler_train = ler_train.value;
  rec.ler_excluded = ler_train.excluded;
  if (family.num_test() > 0) {
    const auto ler_test = vae::latent_error_rate(phi, family, test_envs, a.ler_states, rng);
    rec.ler_test = ler_test.value;
    rec.ler_excluded += ler_test.excluded;
  }
  const auto al_train = vae::measure_alignment(phi, family, train_envs, rng);
  const auto al_all = vae::measure_alignment(phi, family, all_envs, rng);
  rec.eta_train = al_train.eta;
  rec.psi_train = al_train.psi;
  rec.eta_all = al_all.eta;
  rec.psi_all = al_all.psi;
  rec.alignment_sampled = al_train.sampled || al_all.sampled;
  rec.max_local_distortion = vae::max_local_distortion(phi, family, train_envs);
}

void Trainer::evaluate_into(EpochRecord& rec) {
  Rng rng(derive_seed(seed_, kEval * 1000003ULL + static_cast<std::uint64_t>(epoch_)));
  evaluate_agent(q_, vae_, family_, config_.agent, rng, rec);
}

EpochRecord Trainer::run_epoch() {
  if (finished()) throw std::logic_error("run_epoch: training already finished");
  EpochRecord rec;
  rec.epoch = epoch_;
  rec.epsilon = epsilon();
  const auto trajectories = explore();
  if (aligned_enabled(config_, family_)) rec.aligned_records = aligned_sampling();
  if (epoch_ == 0 && config_.vae.pretrain_steps > 0) {
    refresh_pools();
    train_vae(config_.vae.pretrain_steps);
  }
  rec.td = train_q();
  relabel(trajectories);
  refresh_pools();
  const auto terms = train_vae(config_.vae.steps_per_epoch);
  rec.recon = terms.recon;
  rec.kl = terms.kl;
  rec.mmd = terms.mmd;
  rec.diff = terms.diff;
  ++epoch_;
  rec.env_steps = env_steps_;
  if (epoch_ % config_.agent.eval_every == 0 || finished()) evaluate_into(rec);
  return rec;
}

void Trainer::write_state(io::BinaryWriter& w) const {
  w.str("TRAINER1");
  w.u64(seed_);
  w.i64(epoch_);
  w.i64(env_steps_);
  w.str(serialize_rng(rng_));
  vae::write_vae(w, vae_);
  nn::write_adam(w, enc_adam_);
  nn::write_adam(w, dec_adam_);
  repr::write_expansion(w, psi_);
  write_qparams(w, q_);
  w.u64(replay_.size());
  for (const auto& buf : replay_) buf.write(w);
  aligned_.write(w);
  w.u64(pools_.size());
  for (const auto& pool : pools_) {
    w.u64(pool.observations.size());
    for (const auto& x : pool.observations) w.vector(x);
    w.doubles(pool.weights);
  }
}

Trainer Trainer::read_state(PasfConfig config, gbmdp::GbmdpFamily family, io::BinaryReader& r) {
  validate(config);
  if (r.str() != "TRAINER1") throw IoError("unsupported trainer state");
  Trainer t;
  t.config_ = std::move(config);
  t.family_ = std::move(family);
  t.seed_ = r.u64();
  t.epoch_ = static_cast<int>(r.i64());
  t.env_steps_ = r.i64();
  deserialize_rng(t.rng_, r.str());
  t.vae_ = vae::read_vae(r);
  t.enc_adam_ = nn::read_adam(r);
  t.dec_adam_ = nn::read_adam(r);
  t.psi_ = repr::read_expansion(r);
  t.q_ = read_qparams(r);
  const auto n_buf = r.u64();
  for (std::uint64_t i = 0; i < n_buf; ++i) t.replay_.push_back(ReplayBuffer::read(r));
  t.aligned_ = align::AlignedBuffer::read(r);
  const auto n_pool = r.u64();
  for (std::uint64_t i = 0; i < n_pool; ++i) {
    SkewedGoalPool pool;
    const auto n = r.u64();
    for (std::uint64_t k = 0; k < n; ++k) pool.observations.push_back(r.vector());
    pool.weights = r.doubles();
    if (pool.weights.size() != pool.observations.size()) throw IoError("corrupt goal pool");
    t.pools_.push_back(std::move(pool));
  }
  if (static_cast<int>(t.replay_.size()) != t.family_.num_train() ||
      t.pools_.size() != t.replay_.size() || t.vae_.obs_dim() != t.family_.obs_dim ||
      t.vae_.num_envs != t.family_.num_train())
    throw IoError("trainer state does not match the family");
  return t;
}

TrainingReport run_pasf(const PasfConfig& config, const gbmdp::GbmdpFamily& family,
                        std::uint64_t seed, const EpochCallback& on_epoch) {
  Trainer trainer(config, family, seed);
  TrainingReport report;
  while (!trainer.finished()) {
    report.epochs.push_back(trainer.run_epoch());
    if (on_epoch) on_epoch(trainer, report.epochs.back());
  }
  return report;
}

}  // namespace pasf::agent
