#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pasf/rng.hpp"

namespace pasf::theory {

// Small explicit goal-conditioned block MDP. Every (env, state) pair has an
// observation id; ids of distinct states never coincide.
struct FiniteGbmdp {
  int num_states = 0;
  int num_actions = 0;
  std::vector<Eigen::MatrixXd> transitions;  // per action: row s is p(. | s, a)
  Eigen::VectorXd initial;
  std::vector<int> goals;
  double gamma = 0.9;
  std::vector<std::vector<int>> obs_table;  // [env][s] -> observation id
  int num_obs = 0;
  Eigen::MatrixXd state_embedding;  // |S| x k coordinates defining ||s - s'||

  int num_envs() const { return static_cast<int>(obs_table.size()); }
  int num_goals() const { return static_cast<int>(goals.size()); }
  int goal_index(int s) const;  // -1 if s is not a goal
  void validate() const;
};

// pi(a | x, g) stored per observation id and goal index. Invariant policies
// are built from a state table and agree on every observation of a state.
struct TabularPolicy {
  int num_obs = 0;
  int num_goals = 0;
  int num_actions = 0;
  bool invariant = false;
  Eigen::MatrixXd probs;  // row obs * num_goals + g, one column per action

  auto row(int obs, int g) const { return probs.row(obs * num_goals + g); }
  void validate() const;

  // state_probs rows: s * num_goals + g.
  static TabularPolicy from_state_table(const FiniteGbmdp& fg, const Eigen::MatrixXd& state_probs);
  static TabularPolicy uniform(const FiniteGbmdp& fg);
};

using PolicyClass = std::vector<TabularPolicy>;

// Joint distribution over (observation id, goal index).
using JointDist = Eigen::MatrixXd;

// Discounted state density rho(. | g) of pi in env e: the solution of
// (I - gamma P_pi^T) rho = (1 - gamma) rho_0 by LU factorization.
Eigen::VectorXd occupancy(const FiniteGbmdp& fg, const TabularPolicy& pi, int env, int goal);

// rho(s, g) with the given goal marginal (uniform if empty): |S| x |G|.
Eigen::MatrixXd state_goal_occupancy(const FiniteGbmdp& fg, const TabularPolicy& pi, int env,
                                     std::span<const double> goal_weights = {});
// The same mass placed on env's observation ids: num_obs x |G|.
JointDist joint_occupancy(const FiniteGbmdp& fg, const TabularPolicy& pi, int env,
                          std::span<const double> goal_weights = {});

// J^e(pi) = E_{g uniform}[rho(g | g)].
double objective(const FiniteGbmdp& fg, const TabularPolicy& pi, int env);

double tv_distance(const Eigen::Ref<const Eigen::RowVectorXd>& p,
                   const Eigen::Ref<const Eigen::RowVectorXd>& q);

// epsilon^rho(pi1 || pi2): expected TV between the policies under rho.
double avg_tv(const JointDist& rho, const TabularPolicy& pi1, const TabularPolicy& pi2);

// max over ordered pairs in the class of |eps^rho1(pi || pi') - eps^rho2(pi || pi')|.
double d_pidpi(const JointDist& rho1, const JointDist& rho2, const PolicyClass& cls);

// Per-goal value iteration with reward 1[s = g]; greedy, ties to the lowest
// action index; defined on states, so invariant.
TabularPolicy optimal_invariant_policy(const FiniteGbmdp& fg, double tol = 1e-10);

inline constexpr double kBoundTolerance = 1e-9;

struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;  // rhs - lhs
  bool holds = true;
};

BoundCheck make_check(double lhs, double rhs, double tol = kBoundTolerance);

// |J(pi1) - J(pi2)| <= 2 gamma / (1 - gamma) * eps^{rho_pi1}(pi1 || pi2).
// bound_scale multiplies the right side (1 in normal use).
BoundCheck check_lemma1(const FiniteGbmdp& fg, int env, const TabularPolicy& pi1,
                        const TabularPolicy& pi2, double bound_scale = 1.0);

// TV(rho^pi(s, g), rho^pi'(s, g)) <= gamma eps / (1 - gamma), eps the largest
// per-(s, g) TV between the policies in env.
BoundCheck check_lemma3(const FiniteGbmdp& fg, int env, const TabularPolicy& pi,
                        const TabularPolicy& pi_prime, std::span<const double> goal_weights = {},
                        double bound_scale = 1.0);

// E_{x,x'} ||f(x) - g(x')||^2 >= 0.5 E_x ||f(x) - g(x)||^2 on a finite support.
// Columns of f and g are the values at each support point. lhs is the half
// paired term, rhs the cross term.
BoundCheck check_lemma4(const Eigen::VectorXd& prob, const Eigen::MatrixXd& f,
                        const Eigen::MatrixXd& g, double bound_scale = 1.0);

enum class LambdaVariant {
  TrainArgmin,  // pi* minimizes the training-env sum only
  JointArgmin,  // pi* minimizes the averaged training sum plus the target term
};

struct Prop1Report {
  double gap = 0.0;
  double avg_eps = 0.0;
  double lambda = 0.0;
  double delta = 0.0;
  double d_term = 0.0;
  double bound = 0.0;
  int pi_star = -1;
  BoundCheck check;
};

// Checks J^t(pi_G) - J^t(pi) <= 2 gamma / (1 - gamma) [avg eps + lambda +
// delta + d-term] with pi = cls[pi_index]. The characteristic-set minimum is
// bounded above by the best training occupancy of pi, which lies in the set.
Prop1Report check_prop1(const FiniteGbmdp& fg, std::span<const int> train_envs, int target_env,
                        const PolicyClass& cls, int pi_index,
                        LambdaVariant variant = LambdaVariant::TrainArgmin,
                        double bound_scale = 1.0);

// Latent table phi[env][s].
using LatentTable = std::vector<std::vector<Eigen::VectorXd>>;

struct Prop2Options {
  double lipschitz = 2.0;  // L
  int softmax_heads = 6;
  std::vector<double> tilde_mixtures = {0.0, 0.25, 0.5, 0.75};
  double bound_scale = 1.0;
};

struct Prop2Report {
  double eta = 0.0;
  double psi = 0.0;
  double lipschitz = 0.0;
  bool degenerate = false;      // psi == 0: some distinct states share a latent
  double u_required = 0.0;      // smallest u for which pi_G is u-smooth
  bool pi_g_smooth = false;     // u_required <= L psi
  double tilde_lipschitz = 0.0; // measured Lipschitz constant of the pi~ head
  int subclass_size = 0;
  BoundCheck statement1;
  BoundCheck statement2;
};

Prop2Report check_prop2_components(const FiniteGbmdp& fg, std::span<const int> train_envs,
                                   const LatentTable& phi, const Prop2Options& options, Rng& rng);

// Measured eta / psi of a latent table over the given envs.
void alignment_of(const FiniteGbmdp& fg, std::span<const int> envs, const LatentTable& phi,
                  double& eta, double& psi);

struct RandomInstanceOptions {
  int min_states = 2;
  int max_states = 4;
  int num_actions = 2;
  int num_envs = 1;
  std::vector<double> gammas = {0.5, 0.9};
};

// Deterministic chain with actions left, right, stay; uniform start; every
// state a goal; num_envs factor-free observation tables.
FiniteGbmdp chain_instance(int num_states, int num_envs, double gamma);

// Dirichlet(1) transition rows and initial distribution, every state a goal,
// chain coordinates as the state embedding.
FiniteGbmdp random_instance(const RandomInstanceOptions& options, Rng& rng);

// Dirichlet(1) rows per observation and goal.
TabularPolicy random_policy(const FiniteGbmdp& fg, Rng& rng);
TabularPolicy random_invariant_policy(const FiniteGbmdp& fg, Rng& rng);
TabularPolicy random_deterministic_policy(const FiniteGbmdp& fg, Rng& rng);

}  // namespace pasf::theory
