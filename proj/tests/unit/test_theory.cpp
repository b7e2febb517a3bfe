#include <cmath>
#include <vector>

#include "doctest.h"
#include "pasf/theory.hpp"
#include "pasf/theory_suite.hpp"

using namespace pasf;
using namespace pasf::theory;

namespace {

// s0 -> s1 -> s1 under the single action, start at s0.
FiniteGbmdp two_state_absorbing(double gamma, std::vector<int> goals = {0, 1}) {
  FiniteGbmdp fg;
  fg.num_states = 2;
  fg.num_actions = 1;
  Eigen::MatrixXd t(2, 2);
  t << 0, 1, 0, 1;
  fg.transitions = {t};
  fg.initial = Eigen::Vector2d(1.0, 0.0);
  fg.goals = std::move(goals);
  fg.gamma = gamma;
  fg.obs_table = {{0, 1}};
  fg.num_obs = 2;
  fg.state_embedding = Eigen::MatrixXd(2, 1);
  fg.state_embedding << 0, 1;
  return fg;
}

TabularPolicy constant_policy(const FiniteGbmdp& fg, const Eigen::RowVectorXd& p) {
  Eigen::MatrixXd table(fg.num_states * fg.num_goals(), fg.num_actions);
  for (Eigen::Index r = 0; r < table.rows(); ++r) table.row(r) = p;
  return TabularPolicy::from_state_table(fg, table);
}

JointDist joint(std::initializer_list<double> v) {
  JointDist j(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) j(i++, 0) = x;
  return j;
}

}  // namespace

TEST_CASE("occupancy examples") {
  const auto one = chain_instance(1, 1, 0.9);
  const auto rho1 = occupancy(one, TabularPolicy::uniform(one), 0, 0);
  CHECK(rho1.size() == 1);
  CHECK(rho1(0) == doctest::Approx(1.0).epsilon(1e-14));

  const auto two = two_state_absorbing(0.5);
  const auto rho2 = occupancy(two, TabularPolicy::uniform(two), 0, 0);
  CHECK(rho2(0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(rho2(1) == doctest::Approx(0.5).epsilon(1e-14));

  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto fg = random_instance({}, rng);
    const auto pi = random_policy(fg, rng);
    for (int g = 0; g < fg.num_goals(); ++g)
      CHECK(std::abs(occupancy(fg, pi, 0, g).sum() - 1.0) < 1e-12);
    CHECK(std::abs(state_goal_occupancy(fg, pi, 0).sum() - 1.0) < 1e-12);
    CHECK(std::abs(joint_occupancy(fg, pi, 0).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("objective examples") {
  Rng rng(2);
  RandomInstanceOptions opt;
  opt.gammas = {1e-9};
  for (int i = 0; i < 20; ++i) {
    const auto fg = random_instance(opt, rng);
    double expect = 0.0;
    for (int g : fg.goals) expect += fg.initial(g);
    expect /= fg.num_goals();
    const double j = objective(fg, random_policy(fg, rng), 0);
    CHECK(j == doctest::Approx(expect).epsilon(1e-8));
  }
  // Start at s0, goal s1 reached at step 1 and kept.
  const auto fg = two_state_absorbing(0.7, {1});
  CHECK(objective(fg, TabularPolicy::uniform(fg), 0) == doctest::Approx(0.7).epsilon(1e-14));
  for (int i = 0; i < 50; ++i) {
    const auto r = random_instance({}, rng);
    const double j = objective(r, random_policy(r, rng), 0);
    CHECK(j >= 0.0);
    CHECK(j <= 1.0);
  }
}

TEST_CASE("avg_tv examples") {
  const auto fg = chain_instance(2, 1, 0.9);  // three actions
  const auto rho = joint_occupancy(fg, TabularPolicy::uniform(fg), 0);
  const auto u = TabularPolicy::uniform(fg);
  CHECK(avg_tv(rho, u, u) == 0.0);
  Eigen::RowVectorXd a(3), b(3);
  a << 1, 0, 0;
  b << 0, 0, 1;
  CHECK(avg_tv(rho, constant_policy(fg, a), constant_policy(fg, b)) == doctest::Approx(1.0));

  const auto two = two_state_absorbing(0.5);
  FiniteGbmdp two_actions = two;
  two_actions.num_actions = 2;
  two_actions.transitions = {two.transitions[0], two.transitions[0]};
  Eigen::RowVectorXd p(2), q(2);
  p << 0.6, 0.4;
  q << 0.5, 0.5;
  const auto r2 = joint_occupancy(two_actions, TabularPolicy::uniform(two_actions), 0);
  CHECK(avg_tv(r2, constant_policy(two_actions, p), constant_policy(two_actions, q)) ==
        doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("d_pidpi hand computation") {
  auto fg = two_state_absorbing(0.5, {1});
  fg.num_actions = 2;
  fg.transitions = {fg.transitions[0], fg.transitions[0]};
  Eigen::MatrixXd t1(2, 2), t2(2, 2);
  t1 << 0.9, 0.1, 0.3, 0.7;
  t2 << 0.2, 0.8, 0.3, 0.7;
  const PolicyClass cls = {TabularPolicy::from_state_table(fg, t1),
                           TabularPolicy::from_state_table(fg, t2)};
  const JointDist r1 = joint({0.25, 0.75});
  const JointDist r2 = joint({0.6, 0.4});
  // Per-observation TV between the two policies: 0.7 at x0, 0 at x1.
  const double e1 = 0.25 * 0.7, e2 = 0.6 * 0.7;
  CHECK(d_pidpi(r1, r2, cls) == doctest::Approx(std::abs(e1 - e2)).epsilon(1e-14));
  CHECK(d_pidpi(r1, r1, cls) == 0.0);
  const PolicyClass single = {cls[0]};
  CHECK(d_pidpi(r1, r2, single) == 0.0);
}

TEST_CASE("optimal invariant policy on a chain") {
  auto fg = chain_instance(3, 2, 0.9);
  const auto pi = optimal_invariant_policy(fg);
  CHECK(pi.invariant);
  const int g = fg.goal_index(2);
  for (int s = 0; s < 3; ++s) {
    const auto row = pi.row(fg.obs_table[0][s], g);
    Eigen::Index a;
    CHECK(row.maxCoeff(&a) == 1.0);
    // The chosen action never moves away from the goal and advances when it can.
    const Eigen::RowVectorXd next = fg.transitions[static_cast<std::size_t>(a)].row(s);
    Eigen::Index s_next;
    next.maxCoeff(&s_next);
    CHECK(s_next == std::min(s + 1, 2));
    for (int e = 1; e < fg.num_envs(); ++e)
      CHECK((pi.row(fg.obs_table[e][s], g) - row).norm() == 0.0);
  }
  const auto one = chain_instance(1, 1, 0.5);
  CHECK(objective(one, optimal_invariant_policy(one), 0) == doctest::Approx(1.0));
}

TEST_CASE("TV symmetry and triangle inequality") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::RowVectorXd p = flat_dirichlet(rng, 5).transpose();
    const Eigen::RowVectorXd q = flat_dirichlet(rng, 5).transpose();
    const Eigen::RowVectorXd r = flat_dirichlet(rng, 5).transpose();
    CHECK(tv_distance(p, q) == tv_distance(q, p));
    CHECK(tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-15);
  }
}

TEST_CASE("d_pidpi is symmetric and vanishes on equal occupancies") {
  Rng rng(4);
  RandomInstanceOptions opt;
  opt.num_envs = 2;
  for (int i = 0; i < 30; ++i) {
    const auto fg = random_instance(opt, rng);
    PolicyClass cls;
    for (int k = 0; k < 4; ++k) cls.push_back(random_invariant_policy(fg, rng));
    const auto r1 = joint_occupancy(fg, cls[0], 0);
    const auto r2 = joint_occupancy(fg, cls[1], 1);
    CHECK(d_pidpi(r1, r2, cls) == doctest::Approx(d_pidpi(r2, r1, cls)).epsilon(1e-15));
    CHECK(d_pidpi(r1, r1, cls) == 0.0);
  }
}

TEST_CASE("lemma 1") {
  Rng rng(5);
  const auto fg = random_instance({}, rng);
  const auto pi = random_policy(fg, rng);
  const auto same = check_lemma1(fg, 0, pi, pi);
  CHECK(same.lhs == 0.0);
  CHECK(same.rhs == 0.0);
  CHECK(same.holds);
  for (int i = 0; i < 100; ++i) {
    const auto f = random_instance({}, rng);
    CHECK(check_lemma1(f, 0, random_policy(f, rng), random_policy(f, rng)).holds);
  }

  // Grid search over deterministic-ish tables on a 2-state instance.
  RandomInstanceOptions two;
  two.min_states = two.max_states = 2;
  two.gammas = {0.9};
  const auto f2 = random_instance(two, rng);
  double worst_slack = 1e300, best_lhs = 0.0;
  const std::vector<double> levels = {0.0, 0.25, 0.5, 0.75, 1.0};
  const int rows = f2.num_states * f2.num_goals();
  const int combos = static_cast<int>(std::pow(levels.size(), rows));
  std::vector<TabularPolicy> pool;
  for (int c = 0; c < combos; ++c) {
    Eigen::MatrixXd t(rows, 2);
    int k = c;
    for (int r = 0; r < rows; ++r) {
      const double p = levels[static_cast<std::size_t>(k % 5)];
      k /= 5;
      t(r, 0) = p;
      t(r, 1) = 1.0 - p;
    }
    pool.push_back(TabularPolicy::from_state_table(f2, t));
  }
  for (const auto& a : pool)
    for (const auto& b : pool) {
      const auto chk = check_lemma1(f2, 0, a, b);
      CHECK(chk.holds);
      if (chk.lhs > best_lhs) {
        best_lhs = chk.lhs;
        worst_slack = chk.slack;
      }
    }
  MESSAGE("adversarial lhs " << best_lhs << " slack " << worst_slack);
  CHECK(best_lhs > 0.0);
  CHECK(worst_slack >= 0.0);
}

TEST_CASE("lemma 1 bound grows with gamma") {
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    auto fg = random_instance({}, rng);
    const auto a = random_policy(fg, rng);
    const auto b = random_policy(fg, rng);
    fg.gamma = 0.5;
    const double low = check_lemma1(fg, 0, a, b).rhs;
    fg.gamma = 0.9;
    CHECK(check_lemma1(fg, 0, a, b).rhs >= low - 1e-15);
  }
}

TEST_CASE("lemma 3") {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const auto f = random_instance({}, rng);
    const auto pi = random_policy(f, rng);
    CHECK(check_lemma3(f, 0, pi, random_policy(f, rng)).holds);
    const auto same = check_lemma3(f, 0, pi, pi);
    CHECK(same.lhs == doctest::Approx(0.0));
    CHECK(same.rhs == 0.0);
  }
  RandomInstanceOptions opt;
  opt.gammas = {0.5};
  const auto f = random_instance(opt, rng);
  Eigen::RowVectorXd p(2), q(2);
  p << 0.99, 0.01;
  q << 0.01, 0.99;
  const auto chk = check_lemma3(f, 0, constant_policy(f, p), constant_policy(f, q));
  CHECK(chk.rhs == doctest::Approx(0.98).epsilon(1e-12));
  CHECK(chk.slack >= 0.0);
}

TEST_CASE("lemma 4 on finite supports") {
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 8));
    const Eigen::VectorXd prob = flat_dirichlet(rng, n);
    const Eigen::MatrixXd f = standard_normal_matrix(rng, 3, n);
    const Eigen::MatrixXd g = standard_normal_matrix(rng, 3, n);
    const auto chk = check_lemma4(prob, f, g);
    CHECK(chk.holds);
    double paired = 0.0, cross = 0.0;
    for (int a = 0; a < n; ++a) {
      paired += prob(a) * (f.col(a) - g.col(a)).squaredNorm();
      for (int b = 0; b < n; ++b) cross += prob(a) * prob(b) * (f.col(a) - g.col(b)).squaredNorm();
    }
    CHECK(chk.lhs == doctest::Approx(0.5 * paired).epsilon(1e-12));
    CHECK(chk.rhs == doctest::Approx(cross).epsilon(1e-12));
  }
}

TEST_CASE("proposition 1") {
  Rng rng(9);
  RandomInstanceOptions opt;
  opt.min_states = opt.max_states = 3;
  opt.num_envs = 3;
  const std::vector<int> train = {0, 1};
  for (int i = 0; i < 20; ++i) {
    const auto fg = random_instance(opt, rng);
    PolicyClass cls = {optimal_invariant_policy(fg)};
    for (int k = 0; k < 5; ++k) cls.push_back(random_policy(fg, rng));
    const auto at_opt = check_prop1(fg, train, 2, cls, 0);
    CHECK(at_opt.gap == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(at_opt.bound >= 0.0);
    CHECK(at_opt.check.holds);
    for (int k = 1; k < 6; ++k) {
      CHECK(check_prop1(fg, train, 2, cls, k).check.holds);
      CHECK(check_prop1(fg, train, 2, cls, k, LambdaVariant::JointArgmin).check.holds);
    }
  }
  // One training env that is also the target.
  opt.num_envs = 1;
  const auto fg = random_instance(opt, rng);
  PolicyClass cls = {random_policy(fg, rng), random_policy(fg, rng)};
  const std::vector<int> single = {0};
  const auto r = check_prop1(fg, single, 0, cls, 0);
  CHECK(r.delta == 0.0);
  CHECK(r.check.holds);
}

TEST_CASE("proposition 2 components") {
  const auto fg = chain_instance(3, 2, 0.9);
  const std::vector<int> train = {0, 1};
  LatentTable exact(2, std::vector<Eigen::VectorXd>(3));
  LatentTable perturbed = exact, constant = exact;
  for (int e = 0; e < 2; ++e)
    for (int s = 0; s < 3; ++s) {
      exact[e][s] = Eigen::VectorXd::Unit(3, s);
      perturbed[e][s] = Eigen::VectorXd::Zero(4);
      perturbed[e][s](s) = 1.0;
      perturbed[e][s](3) = e == 0 ? 0.05 : -0.05;
      constant[e][s] = Eigen::VectorXd::Ones(2);
    }
  Rng rng(10);
  Prop2Options opt;
  const auto ex = check_prop2_components(fg, train, exact, opt, rng);
  CHECK(ex.eta == 0.0);
  CHECK(ex.statement1.holds);
  CHECK(ex.statement2.holds);
  CHECK(ex.statement1.rhs == 0.0);
  CHECK(ex.statement2.rhs == 0.0);

  const auto pt = check_prop2_components(fg, train, perturbed, opt, rng);
  CHECK(pt.eta == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(pt.statement2.rhs == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(pt.statement1.holds);
  CHECK(pt.statement2.holds);

  const auto cs = check_prop2_components(fg, train, constant, opt, rng);
  CHECK(cs.degenerate);
  CHECK(cs.psi == 0.0);
  CHECK_FALSE(cs.statement2.holds);

  double eta = -1, psi = -1;
  alignment_of(fg, train, exact, eta, psi);
  CHECK(eta == 0.0);
  CHECK(psi == doctest::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-14));
}

TEST_CASE("a reduced suite holds and a shrunken bound trips it") {
  SuiteConfig cfg;
  cfg.lemma1_instances = 10;
  cfg.lemma3_instances = 10;
  cfg.lemma4_instances = 10;
  cfg.prop1_families = 5;
  cfg.mmd_batches = 100;
  const auto ok = run_theory_suite(cfg);
  CHECK(ok.all_hold);
  CHECK_FALSE(ok.groups.empty());
  for (const auto& g : ok.groups) CHECK(g.failures == 0);

  cfg.bound_scale = 0.25;
  const auto bad = run_theory_suite(cfg);
  CHECK_FALSE(bad.all_hold);
}

TEST_CASE("suite config parsing") {
  const auto cfg = parse_suite_config(R"({"seed": 7, "lemma1_instances": 3})");
  CHECK(cfg.seed == 7);
  CHECK(cfg.lemma1_instances == 3);
  CHECK(cfg.lemma3_instances == 100);
  CHECK_THROWS(parse_suite_config(R"({"lemma_1": 3})"));
  const auto back = parse_suite_config(suite_config_json(cfg));
  CHECK(back.seed == 7);
  CHECK(back.lemma1_instances == 3);
}

TEST_CASE("MMD lower-bound chain by Monte Carlo") {
  const auto r = run_mmd_chain(3, 1000, 16);
  CHECK(r.batches == 1000);
  CHECK(r.mean_mmd >= 0.0);
  CHECK(r.lower == doctest::Approx(r.mean_paired / 16.0 - 3.0 * r.standard_error));
  CHECK(r.holds);
}
