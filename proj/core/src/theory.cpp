#include "pasf/theory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

#include "pasf/errors.hpp"

namespace pasf::theory {

namespace {

constexpr double kRowTol = 1e-9;

std::vector<double> goal_marginal(const FiniteGbmdp& fg, std::span<const double> weights) {
  const int G = fg.num_goals();
  if (G == 0) throw ConfigError("finite gbmdp: empty goal set");
  if (weights.empty()) return std::vector<double>(G, 1.0 / G);
  if (static_cast<int>(weights.size()) != G)
    throw ShapeError("goal marginal has " + std::to_string(weights.size()) + " entries, expected " +
                     std::to_string(G));
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ConfigError("goal marginal has a negative entry");
    total += w;
  }
  if (std::abs(total - 1.0) > kRowTol) throw ConfigError("goal marginal does not sum to 1");
  return {weights.begin(), weights.end()};
}

void check_env(const FiniteGbmdp& fg, int env) {
  if (env < 0 || env >= fg.num_envs())
    throw std::out_of_range("env index " + std::to_string(env) + " out of range");
}

void check_compatible(const FiniteGbmdp& fg, const TabularPolicy& pi) {
  if (pi.num_obs != fg.num_obs || pi.num_goals != fg.num_goals() ||
      pi.num_actions != fg.num_actions)
    throw ShapeError("policy table does not match the instance");
}

// P_pi for goal index g in env e: row s is sum_a pi(a | x^e(s), g) P_a(s, .).
Eigen::MatrixXd policy_transition(const FiniteGbmdp& fg, const TabularPolicy& pi, int env, int g) {
  const int S = fg.num_states;
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(S, S);
  for (int s = 0; s < S; ++s) {
    const auto row = pi.row(fg.obs_table[env][s], g);
    for (int a = 0; a < fg.num_actions; ++a) P.row(s) += row(a) * fg.transitions[a].row(s);
  }
  return P;
}

double max_pair_tv(const FiniteGbmdp& fg, int env, const TabularPolicy& a, const TabularPolicy& b) {
  double eps = 0.0;
  for (int s = 0; s < fg.num_states; ++s)
    for (int g = 0; g < fg.num_goals(); ++g) {
      const int x = fg.obs_table[env][s];
      eps = std::max(eps, tv_distance(a.row(x, g), b.row(x, g)));
    }
  return eps;
}

}  // namespace

int FiniteGbmdp::goal_index(int s) const {
  for (int i = 0; i < num_goals(); ++i)
    if (goals[i] == s) return i;
  return -1;
}

void FiniteGbmdp::validate() const {
  if (num_states < 1) throw ConfigError("finite gbmdp: num_states must be positive");
  if (num_actions < 1) throw ConfigError("finite gbmdp: num_actions must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("finite gbmdp: gamma must lie in (0, 1)");
  if (static_cast<int>(transitions.size()) != num_actions)
    throw ShapeError("finite gbmdp: one transition matrix per action required");
  for (const auto& P : transitions) {
    if (P.rows() != num_states || P.cols() != num_states)
      throw ShapeError("finite gbmdp: transition matrix has the wrong shape");
    if ((P.array() < 0.0).any()) throw ConfigError("finite gbmdp: negative transition probability");
    for (int s = 0; s < num_states; ++s)
      if (std::abs(P.row(s).sum() - 1.0) > kRowTol)
        throw ConfigError("finite gbmdp: transition row does not sum to 1");
  }
  if (initial.size() != num_states) throw ShapeError("finite gbmdp: initial distribution size");
  if ((initial.array() < 0.0).any() || std::abs(initial.sum() - 1.0) > kRowTol)
    throw ConfigError("finite gbmdp: initial distribution is not a distribution");
  if (goals.empty()) throw ConfigError("finite gbmdp: empty goal set");
  for (int g : goals)
    if (g < 0 || g >= num_states) throw ConfigError("finite gbmdp: goal outside the state space");
  if (obs_table.empty()) throw ConfigError("finite gbmdp: no environments");
  std::vector<int> owner(num_obs, -1);
  for (const auto& table : obs_table) {
    if (static_cast<int>(table.size()) != num_states)
      throw ShapeError("finite gbmdp: observation table size");
    for (int s = 0; s < num_states; ++s) {
      const int x = table[s];
      if (x < 0 || x >= num_obs) throw ConfigError("finite gbmdp: observation id out of range");
      if (owner[x] != -1 && owner[x] != s)
        throw ConfigError("finite gbmdp: observation shared by two states");
      owner[x] = s;
    }
  }
  if (state_embedding.rows() != num_states)
    throw ShapeError("finite gbmdp: state embedding needs one row per state");
}

void TabularPolicy::validate() const {
  if (probs.rows() != static_cast<Eigen::Index>(num_obs) * num_goals || probs.cols() != num_actions)
    throw ShapeError("policy table has the wrong shape");
  if ((probs.array() < -1e-15).any()) throw ConfigError("policy has a negative probability");
  for (Eigen::Index r = 0; r < probs.rows(); ++r)
    if (std::abs(probs.row(r).sum() - 1.0) > kRowTol)
      throw ConfigError("policy row does not sum to 1");
}

TabularPolicy TabularPolicy::from_state_table(const FiniteGbmdp& fg,
                                              const Eigen::MatrixXd& state_probs) {
  const int G = fg.num_goals();
  if (state_probs.rows() != static_cast<Eigen::Index>(fg.num_states) * G ||
      state_probs.cols() != fg.num_actions)
    throw ShapeError("state policy table has the wrong shape");
  TabularPolicy pi;
  pi.num_obs = fg.num_obs;
  pi.num_goals = G;
  pi.num_actions = fg.num_actions;
  pi.invariant = true;
  pi.probs = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(fg.num_obs) * G, fg.num_actions,
                                       1.0 / fg.num_actions);
  for (const auto& table : fg.obs_table)
    for (int s = 0; s < fg.num_states; ++s)
      for (int g = 0; g < G; ++g) pi.probs.row(table[s] * G + g) = state_probs.row(s * G + g);
  return pi;
}

TabularPolicy TabularPolicy::uniform(const FiniteGbmdp& fg) {
  TabularPolicy pi;
  pi.num_obs = fg.num_obs;
  pi.num_goals = fg.num_goals();
  pi.num_actions = fg.num_actions;
  pi.invariant = true;
  pi.probs = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(fg.num_obs) * pi.num_goals,
                                       fg.num_actions, 1.0 / fg.num_actions);
  return pi;
}

Eigen::VectorXd occupancy(const FiniteGbmdp& fg, const TabularPolicy& pi, int env, int goal) {
  check_env(fg, env);
  check_compatible(fg, pi);
  if (goal < 0 || goal >= fg.num_goals()) throw std::out_of_range("goal index out of range");
  const int S = fg.num_states;
  const Eigen::MatrixXd P = policy_transition(fg, pi, env, goal);
  const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(S, S) - fg.gamma * P.transpose();
  Eigen::VectorXd rho = lhs.partialPivLu().solve((1.0 - fg.gamma) * fg.initial);
  return rho;
}

Eigen::MatrixXd state_goal_occupancy(const FiniteGbmdp& fg, const TabularPolicy& pi, int env,
                                     std::span<const double> goal_weights) {
  const auto w = goal_marginal(fg, goal_weights);
  Eigen::MatrixXd out(fg.num_states, fg.num_goals());
  for (int g = 0; g < fg.num_goals(); ++g) out.col(g) = w[g] * occupancy(fg, pi, env, g);
  return out;
}

JointDist joint_occupancy(const FiniteGbmdp& fg, const TabularPolicy& pi, int env,
                          std::span<const double> goal_weights) {
  const Eigen::MatrixXd sg = state_goal_occupancy(fg, pi, env, goal_weights);
  JointDist out = JointDist::Zero(fg.num_obs, fg.num_goals());
  for (int s = 0; s < fg.num_states; ++s) out.row(fg.obs_table[env][s]) += sg.row(s);
  return out;
}

double objective(const FiniteGbmdp& fg, const TabularPolicy& pi, int env) {
  const int G = fg.num_goals();
  if (G == 0) throw ConfigError("finite gbmdp: empty goal set");
  double total = 0.0;
  for (int g = 0; g < G; ++g) total += occupancy(fg, pi, env, g)(fg.goals[g]);
  return total / G;
}

double tv_distance(const Eigen::Ref<const Eigen::RowVectorXd>& p,
                   const Eigen::Ref<const Eigen::RowVectorXd>& q) {
  if (p.size() != q.size()) throw ShapeError("tv_distance: size mismatch");
  return 0.5 * (p - q).cwiseAbs().sum();
}

double avg_tv(const JointDist& rho, const TabularPolicy& pi1, const TabularPolicy& pi2) {
  if (pi1.num_obs != pi2.num_obs || pi1.num_goals != pi2.num_goals ||
      pi1.num_actions != pi2.num_actions)
    throw ShapeError("avg_tv: policies defined on different supports");
  if (rho.rows() != pi1.num_obs || rho.cols() != pi1.num_goals)
    throw ShapeError("avg_tv: distribution support does not match the policies");
  double total = 0.0;
  for (Eigen::Index x = 0; x < rho.rows(); ++x)
    for (Eigen::Index g = 0; g < rho.cols(); ++g) {
      const double w = rho(x, g);
      if (w == 0.0) continue;
      total += w * tv_distance(pi1.row(static_cast<int>(x), static_cast<int>(g)),
                               pi2.row(static_cast<int>(x), static_cast<int>(g)));
    }
  return total;
}

double d_pidpi(const JointDist& rho1, const JointDist& rho2, const PolicyClass& cls) {
  if (cls.empty()) throw ConfigError("policy class is empty");
  double best = 0.0;
  for (std::size_t i = 0; i < cls.size(); ++i)
    for (std::size_t j = i + 1; j < cls.size(); ++j)
      best = std::max(best, std::abs(avg_tv(rho1, cls[i], cls[j]) - avg_tv(rho2, cls[i], cls[j])));
  // eps is symmetric in the policy pair and zero on the diagonal, so the
  // upper triangle covers every ordered pair.
  return best;
}

TabularPolicy optimal_invariant_policy(const FiniteGbmdp& fg, double tol) {
  fg.validate();
  const int S = fg.num_states, G = fg.num_goals(), A = fg.num_actions;
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(S) * G, A);
  for (int gi = 0; gi < G; ++gi) {
    const int goal = fg.goals[gi];
    Eigen::VectorXd V = Eigen::VectorXd::Zero(S);
    Eigen::MatrixXd Q(S, A);
    for (int iter = 0; iter < 100000; ++iter) {
      for (int a = 0; a < A; ++a) Q.col(a) = fg.transitions[a] * V;
      Eigen::VectorXd next = fg.gamma * Q.rowwise().maxCoeff();
      next(goal) += 1.0;
      const double change = (next - V).cwiseAbs().maxCoeff();
      V = next;
      if (change < tol) break;
    }
    for (int a = 0; a < A; ++a) Q.col(a) = fg.transitions[a] * V;
    for (int s = 0; s < S; ++s) {
      const double best = Q.row(s).maxCoeff();
      int pick = 0;
      while (Q(s, pick) < best - 1e-12) ++pick;
      table(s * G + gi, pick) = 1.0;
    }
  }
  return TabularPolicy::from_state_table(fg, table);
}

BoundCheck make_check(double lhs, double rhs, double tol) {
  return {lhs, rhs, rhs - lhs, lhs <= rhs + tol};
}

BoundCheck check_lemma1(const FiniteGbmdp& fg, int env, const TabularPolicy& pi1,
                        const TabularPolicy& pi2, double bound_scale) {
  const double lhs = std::abs(objective(fg, pi1, env) - objective(fg, pi2, env));
  const double eps = avg_tv(joint_occupancy(fg, pi1, env), pi1, pi2);
  return make_check(lhs, bound_scale * 2.0 * fg.gamma / (1.0 - fg.gamma) * eps);
}

BoundCheck check_lemma3(const FiniteGbmdp& fg, int env, const TabularPolicy& pi,
                        const TabularPolicy& pi_prime, std::span<const double> goal_weights,
                        double bound_scale) {
  check_compatible(fg, pi_prime);
  const double eps = max_pair_tv(fg, env, pi, pi_prime);
  const Eigen::MatrixXd a = state_goal_occupancy(fg, pi, env, goal_weights);
  const Eigen::MatrixXd b = state_goal_occupancy(fg, pi_prime, env, goal_weights);
  const double lhs = 0.5 * (a - b).cwiseAbs().sum();
  return make_check(lhs, bound_scale * fg.gamma * eps / (1.0 - fg.gamma));
}

BoundCheck check_lemma4(const Eigen::VectorXd& prob, const Eigen::MatrixXd& f,
                        const Eigen::MatrixXd& g, double bound_scale) {
  const Eigen::Index n = prob.size();
  if (f.cols() != n || g.cols() != n || f.rows() != g.rows())
    throw ShapeError("check_lemma4: value tables do not match the support");
  if ((prob.array() < 0.0).any() || std::abs(prob.sum() - 1.0) > kRowTol)
    throw ConfigError("check_lemma4: prob is not a distribution");
  double cross = 0.0, paired = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    paired += prob(i) * (f.col(i) - g.col(i)).squaredNorm();
    for (Eigen::Index j = 0; j < n; ++j)
      cross += prob(i) * prob(j) * (f.col(i) - g.col(j)).squaredNorm();
  }
  // Oriented as half the paired term <= cross term so slack keeps the rhs - lhs sign.
  return make_check(0.5 * paired, bound_scale * cross);
}

Prop1Report check_prop1(const FiniteGbmdp& fg, std::span<const int> train_envs, int target_env,
                        const PolicyClass& cls, int pi_index, LambdaVariant variant,
                        double bound_scale) {
  if (cls.empty()) throw ConfigError("policy class is empty");
  if (train_envs.empty()) throw ConfigError("check_prop1: no training environments");
  if (pi_index < 0 || pi_index >= static_cast<int>(cls.size()))
    throw std::out_of_range("check_prop1: policy index out of range");
  check_env(fg, target_env);
  for (int e : train_envs) check_env(fg, e);

  const TabularPolicy pi_g = optimal_invariant_policy(fg);
  const TabularPolicy& pi = cls[pi_index];
  const double N = static_cast<double>(train_envs.size());

  std::vector<JointDist> rho_train;
  for (int e : train_envs) rho_train.push_back(joint_occupancy(fg, pi, e));
  const JointDist rho_target = joint_occupancy(fg, pi_g, target_env);

  Prop1Report r;
  r.gap = objective(fg, pi_g, target_env) - objective(fg, pi, target_env);
  for (const auto& rho : rho_train) r.avg_eps += avg_tv(rho, pi, pi_g) / N;

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < cls.size(); ++k) {
    double train_sum = 0.0;
    for (const auto& rho : rho_train) train_sum += avg_tv(rho, cls[k], pi_g);
    const double target = avg_tv(rho_target, cls[k], pi_g);
    const double key = variant == LambdaVariant::TrainArgmin ? train_sum : train_sum / N + target;
    if (key < best) {
      best = key;
      r.pi_star = static_cast<int>(k);
      r.lambda = train_sum / N + target;
    }
  }

  for (std::size_t i = 0; i < rho_train.size(); ++i)
    for (std::size_t j = i + 1; j < rho_train.size(); ++j)
      r.delta = std::max(r.delta, d_pidpi(rho_train[i], rho_train[j], cls));

  r.d_term = std::numeric_limits<double>::infinity();
  for (const auto& rho : rho_train) r.d_term = std::min(r.d_term, d_pidpi(rho, rho_target, cls));

  r.bound = bound_scale * 2.0 * fg.gamma / (1.0 - fg.gamma) *
            (r.avg_eps + r.lambda + r.delta + r.d_term);
  r.check = make_check(r.gap, r.bound);
  return r;
}

void alignment_of(const FiniteGbmdp& fg, std::span<const int> envs, const LatentTable& phi,
                  double& eta, double& psi) {
  eta = 0.0;
  psi = std::numeric_limits<double>::infinity();
  for (int e : envs) {
    check_env(fg, e);
    if (static_cast<int>(phi.size()) <= e || static_cast<int>(phi[e].size()) != fg.num_states)
      throw ShapeError("latent table incomplete for env " + std::to_string(e));
  }
  for (int e1 : envs)
    for (int e2 : envs)
      for (int s1 = 0; s1 < fg.num_states; ++s1)
        for (int s2 = 0; s2 < fg.num_states; ++s2) {
          const double dz = (phi[e1][s1] - phi[e2][s2]).norm();
          if (s1 == s2) {
            eta = std::max(eta, dz);
          } else {
            const double ds = (fg.state_embedding.row(s1) - fg.state_embedding.row(s2)).norm();
            psi = std::min(psi, dz / ds);
          }
        }
  if (!std::isfinite(psi)) psi = 0.0;
}

namespace {

struct LatentPoint {
  int env;
  int state;
  Eigen::VectorXd z;
};

// Head over latents: returns an action distribution for (z, goal index).
using Head = std::function<Eigen::RowVectorXd(const LatentPoint&, int)>;

double head_lipschitz(const std::vector<LatentPoint>& pts, int G, const Head& head) {
  double worst = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const double dz = (pts[i].z - pts[j].z).norm();
      for (int g = 0; g < G; ++g) {
        const double d = tv_distance(head(pts[i], g), head(pts[j], g));
        if (d == 0.0) continue;
        if (dz <= 1e-12) return std::numeric_limits<double>::infinity();
        worst = std::max(worst, d / dz);
      }
    }
  return worst;
}

TabularPolicy policy_from_head(const FiniteGbmdp& fg, const std::vector<LatentPoint>& pts,
                               const Head& head) {
  TabularPolicy pi = TabularPolicy::uniform(fg);
  pi.invariant = false;
  for (const auto& p : pts)
    for (int g = 0; g < fg.num_goals(); ++g)
      pi.probs.row(fg.obs_table[p.env][p.state] * fg.num_goals() + g) = head(p, g);
  return pi;
}

Eigen::RowVectorXd softmax(const Eigen::RowVectorXd& logits) {
  Eigen::RowVectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

Prop2Report check_prop2_components(const FiniteGbmdp& fg, std::span<const int> train_envs,
                                   const LatentTable& phi, const Prop2Options& options, Rng& rng) {
  fg.validate();
  if (train_envs.empty()) throw ConfigError("check_prop2_components: no training environments");
  if (!(options.lipschitz > 0.0)) throw ConfigError("check_prop2_components: L must be positive");
  Prop2Report r;
  r.lipschitz = options.lipschitz;
  alignment_of(fg, train_envs, phi, r.eta, r.psi);
  r.degenerate = r.psi <= 0.0;

  const int S = fg.num_states, G = fg.num_goals(), A = fg.num_actions;
  const TabularPolicy pi_g = optimal_invariant_policy(fg);
  const double L = options.lipschitz;

  // Smallest u with TV(pi_G(s, g), pi_G(s', g)) <= u ||s - s'||.
  for (int s1 = 0; s1 < S; ++s1)
    for (int s2 = s1 + 1; s2 < S; ++s2) {
      const double ds = (fg.state_embedding.row(s1) - fg.state_embedding.row(s2)).norm();
      for (int g = 0; g < G; ++g) {
        const double d = tv_distance(pi_g.row(fg.obs_table[0][s1], g), pi_g.row(fg.obs_table[0][s2], g));
        r.u_required = std::max(r.u_required, d / ds);
      }
    }
  r.pi_g_smooth = r.u_required <= L * r.psi + kBoundTolerance;

  std::vector<LatentPoint> pts;
  for (int e : train_envs)
    for (int s = 0; s < S; ++s) pts.push_back({e, s, phi[e][s]});
  const Eigen::Index k = pts.front().z.size();

  // s(z): the state of the first latent point equal to z.
  std::vector<int> state_of(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    state_of[i] = pts[i].state;
    for (std::size_t j = 0; j < i; ++j)
      if (pts[j].z == pts[i].z) {
        state_of[i] = state_of[j];
        break;
      }
  }
  auto index_of = [&](const LatentPoint& p) {
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (pts[i].env == p.env && pts[i].state == p.state) return i;
    return std::size_t{0};
  };
  const Head tilde = [&](const LatentPoint& p, int g) -> Eigen::RowVectorXd {
    return pi_g.row(fg.obs_table[0][state_of[index_of(p)]], g);
  };
  r.tilde_lipschitz = head_lipschitz(pts, G, tilde);

  PolicyClass sub;
  sub.push_back(policy_from_head(fg, pts, [&](const LatentPoint&, int) {
    return Eigen::RowVectorXd::Constant(A, 1.0 / A);
  }));
  for (int h = 0; h < options.softmax_heads; ++h) {
    std::vector<Eigen::MatrixXd> W;
    std::vector<Eigen::RowVectorXd> b;
    for (int g = 0; g < G; ++g) {
      W.push_back(standard_normal_matrix(rng, A, k));
      b.push_back(standard_normal_matrix(rng, 1, A));
    }
    double scale = 1.0;
    Head head;
    for (int attempt = 0; attempt < 80; ++attempt) {
      head = [&W, &b, scale](const LatentPoint& p, int g) -> Eigen::RowVectorXd {
        return softmax(scale * ((W[g] * p.z).transpose() + b[g]));
      };
      if (head_lipschitz(pts, G, head) <= L) break;
      scale *= 0.5;
    }
    if (head_lipschitz(pts, G, head) <= L) sub.push_back(policy_from_head(fg, pts, head));
  }
  for (double mix : options.tilde_mixtures) {
    if ((1.0 - mix) * r.tilde_lipschitz > L) continue;
    sub.push_back(policy_from_head(fg, pts, [&](const LatentPoint& p, int g) -> Eigen::RowVectorXd {
      return (1.0 - mix) * tilde(p, g) + Eigen::RowVectorXd::Constant(A, mix / A);
    }));
  }
  r.subclass_size = static_cast<int>(sub.size());

  const double N = static_cast<double>(train_envs.size());
  const double horizon_factor = 2.0 + fg.gamma / (1.0 - fg.gamma);
  double s1 = 0.0;
  for (const auto& pi : sub) {
    std::vector<JointDist> rho;
    for (int e : train_envs) rho.push_back(joint_occupancy(fg, pi, e));
    for (std::size_t i = 0; i < rho.size(); ++i)
      for (std::size_t j = i + 1; j < rho.size(); ++j) s1 = std::max(s1, d_pidpi(rho[i], rho[j], sub));
  }
  r.statement1 = make_check(s1, options.bound_scale * horizon_factor * r.eta * L);

  const TabularPolicy pi_tilde = policy_from_head(fg, pts, tilde);
  PolicyClass evaluated = sub;
  evaluated.push_back(pi_tilde);
  double s2 = 0.0;
  for (const auto& pi : evaluated) {
    double avg = 0.0;
    for (int e : train_envs) avg += avg_tv(joint_occupancy(fg, pi, e), pi_tilde, pi_g) / N;
    s2 = std::max(s2, avg);
  }
  r.statement2 = make_check(s2, options.bound_scale * r.eta * L);
  // Without separation pi~ is not well defined and membership of the head in
  // the L-Lipschitz class is not guaranteed: report a failure.
  if (r.degenerate || !r.pi_g_smooth) r.statement2.holds = false;
  return r;
}

FiniteGbmdp chain_instance(int num_states, int num_envs, double gamma) {
  if (num_states < 1 || num_envs < 1) throw ConfigError("chain_instance: bad sizes");
  FiniteGbmdp fg;
  fg.num_states = num_states;
  fg.num_actions = 3;
  fg.gamma = gamma;
  const int S = num_states;
  for (int a = 0; a < 3; ++a) {
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(S, S);
    for (int s = 0; s < S; ++s) {
      const int next = a == 0 ? std::max(0, s - 1) : a == 1 ? std::min(S - 1, s + 1) : s;
      P(s, next) = 1.0;
    }
    fg.transitions.push_back(P);
  }
  fg.initial = Eigen::VectorXd::Constant(S, 1.0 / S);
  for (int s = 0; s < S; ++s) fg.goals.push_back(s);
  for (int e = 0; e < num_envs; ++e) {
    std::vector<int> table(S);
    for (int s = 0; s < S; ++s) table[s] = e * S + s;
    fg.obs_table.push_back(table);
  }
  fg.num_obs = num_envs * S;
  fg.state_embedding.resize(S, 1);
  for (int s = 0; s < S; ++s) fg.state_embedding(s, 0) = s;
  fg.validate();
  return fg;
}

FiniteGbmdp random_instance(const RandomInstanceOptions& options, Rng& rng) {
  if (options.min_states < 1 || options.max_states < options.min_states)
    throw ConfigError("random_instance: bad state range");
  if (options.num_actions < 1 || options.num_envs < 1 || options.gammas.empty())
    throw ConfigError("random_instance: bad options");
  FiniteGbmdp fg;
  fg.num_states = options.min_states +
                  static_cast<int>(uniform_index(rng, options.max_states - options.min_states + 1));
  fg.num_actions = options.num_actions;
  const int S = fg.num_states;
  for (int a = 0; a < fg.num_actions; ++a) {
    Eigen::MatrixXd P(S, S);
    for (int s = 0; s < S; ++s) P.row(s) = flat_dirichlet(rng, S).transpose();
    fg.transitions.push_back(P);
  }
  fg.initial = flat_dirichlet(rng, S);
  for (int s = 0; s < S; ++s) fg.goals.push_back(s);
  fg.gamma = options.gammas[uniform_index(rng, options.gammas.size())];
  for (int e = 0; e < options.num_envs; ++e) {
    std::vector<int> table(S);
    for (int s = 0; s < S; ++s) table[s] = e * S + s;
    fg.obs_table.push_back(table);
  }
  fg.num_obs = options.num_envs * S;
  fg.state_embedding.resize(S, 1);
  for (int s = 0; s < S; ++s) fg.state_embedding(s, 0) = s;
  fg.validate();
  return fg;
}

TabularPolicy random_policy(const FiniteGbmdp& fg, Rng& rng) {
  TabularPolicy pi = TabularPolicy::uniform(fg);
  pi.invariant = false;
  for (Eigen::Index r = 0; r < pi.probs.rows(); ++r)
    pi.probs.row(r) = flat_dirichlet(rng, fg.num_actions).transpose();
  return pi;
}

TabularPolicy random_invariant_policy(const FiniteGbmdp& fg, Rng& rng) {
  Eigen::MatrixXd table(static_cast<Eigen::Index>(fg.num_states) * fg.num_goals(), fg.num_actions);
  for (Eigen::Index r = 0; r < table.rows(); ++r)
    table.row(r) = flat_dirichlet(rng, fg.num_actions).transpose();
  return TabularPolicy::from_state_table(fg, table);
}

TabularPolicy random_deterministic_policy(const FiniteGbmdp& fg, Rng& rng) {
  TabularPolicy pi = TabularPolicy::uniform(fg);
  pi.invariant = false;
  pi.probs.setZero();
  for (Eigen::Index r = 0; r < pi.probs.rows(); ++r)
    pi.probs(r, static_cast<Eigen::Index>(uniform_index(rng, fg.num_actions))) = 1.0;
  return pi;
}

}  // namespace pasf::theory
