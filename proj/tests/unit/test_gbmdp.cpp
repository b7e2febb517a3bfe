#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "pasf/errors.hpp"
#include "pasf/gbmdp.hpp"

using namespace pasf;
using namespace pasf::gbmdp;

TEST_CASE("grid moves follow the action table and clamp at walls") {
  const StateSpec grid{StateKind::Grid, 3, 3};
  const auto spec = make_spec(grid, 0.0, {}, 0.9);
  const int center = grid.index(1, 1);
  CHECK(spec.deterministic_next(center, grid_action::kUp) == grid.index(1, 2));
  CHECK(spec.deterministic_next(center, grid_action::kDown) == grid.index(1, 0));
  CHECK(spec.deterministic_next(center, grid_action::kLeft) == grid.index(0, 1));
  CHECK(spec.deterministic_next(center, grid_action::kRight) == grid.index(2, 1));
  CHECK(spec.deterministic_next(center, grid_action::kStay) == center);
  CHECK(spec.deterministic_next(grid.index(0, 0), grid_action::kLeft) == grid.index(0, 0));
  CHECK(spec.deterministic_next(grid.index(2, 2), grid_action::kUp) == grid.index(2, 2));
  CHECK(spec.start_states.size() == 9);
  CHECK(spec.goals.size() == 9);
}

TEST_CASE("chain has three actions") {
  const StateSpec chain{StateKind::Chain, 4, 1};
  const auto spec = make_spec(chain, 0.0, {0}, 0.9);
  CHECK(spec.num_actions == 3);
  CHECK(spec.deterministic_next(0, chain_action::kLeft) == 0);
  CHECK(spec.deterministic_next(0, chain_action::kRight) == 1);
  CHECK(spec.deterministic_next(3, chain_action::kRight) == 3);
  CHECK(spec.deterministic_next(2, chain_action::kStay) == 2);
}

TEST_CASE("transition rows mix the move with staying put") {
  const auto spec = make_spec({StateKind::Grid, 3, 3}, 0.05, {}, 0.9);
  const Eigen::VectorXd row = spec.transition_row(4, grid_action::kRight);
  CHECK(row.sum() == doctest::Approx(1.0));
  CHECK(row(5) == doctest::Approx(0.95));
  CHECK(row(4) == doctest::Approx(0.05));
  const Eigen::VectorXd wall = spec.transition_row(0, grid_action::kLeft);
  CHECK(wall(0) == doctest::Approx(1.0));
}

TEST_CASE("slip frequency matches the configured probability") {
  auto cfg = testutil::small_grid();
  cfg.slip = 0.05;
  const auto fam = make_family(cfg, 3);
  Rng rng(11);
  int slips = 0;
  const int n = 20000;
  auto cur = reset_to(fam.train[0], 4, rng);
  for (int i = 0; i < n; ++i) {
    const auto next = step(fam.spec, fam.train[0], cur.hidden, grid_action::kStay, rng);
    slips += next.slipped ? 1 : 0;
    CHECK(next.hidden.s == 4);
  }
  // Binomial standard error is about 0.0015.
  CHECK(std::abs(static_cast<double>(slips) / n - 0.05) < 0.006);
}

TEST_CASE("observations follow the affine state block and the distractor block") {
  auto cfg = testutil::small_grid();
  cfg.distractor_scale = 2.0;
  const auto fam = make_family(cfg, 5);
  const auto& env = fam.train[1];
  Eigen::VectorXd b(1);
  b << 0.25;
  const Eigen::VectorXd x = observe(env, 2, b);
  CHECK(x.size() == fam.obs_dim);
  CHECK(fam.obs_dim == 9 + 1);
  Eigen::VectorXd onehot = Eigen::VectorXd::Zero(9);
  onehot(2) = 1.0;
  const Eigen::VectorXd expected = env.obs_map * onehot + env.offset;
  CHECK((x.head(9) - expected).norm() < 1e-12);
  CHECK(x(9) == doctest::Approx(0.5));
}

TEST_CASE("train factors are static and test factors drift inside the box") {
  const auto fam = make_family(testutil::small_grid(), 9);
  Rng rng(1);
  auto cur = reset(fam.spec, fam.train[0], rng);
  const Eigen::VectorXd b0 = cur.hidden.b;
  CHECK((b0 - fam.train[0].initial_factor).norm() == 0.0);
  for (int t = 0; t < 20; ++t) cur = step(fam.spec, fam.train[0], cur.hidden, t % 5, rng);
  CHECK((cur.hidden.b - b0).norm() == 0.0);

  auto tc = reset(fam.spec, fam.test[0], rng);
  const Eigen::VectorXd t0 = tc.hidden.b;
  bool moved = false;
  for (int t = 0; t < 50; ++t) {
    tc = step(fam.spec, fam.test[0], tc.hidden, t % 5, rng);
    moved = moved || (tc.hidden.b - t0).norm() > 0.0;
    CHECK(tc.hidden.b.cwiseAbs().maxCoeff() <= fam.test[0].factor_box);
  }
  CHECK(moved);
}

TEST_CASE("observations are disjoint across states and the oracle decodes them") {
  const auto fam = make_family(testutil::small_grid(4, 4), 21);
  CHECK(fam.margin >= 0.05);
  Rng rng(2);
  const auto report = verify_disjointness(fam, 4, 1e-9, rng);
  CHECK(report.ok);
  CHECK(report.min_separation >= fam.margin - 1e-12);
  for (int e = 0; e < fam.num_train() + fam.num_test(); ++e) {
    const auto& env = fam.env(e);
    for (int s = 0; s < fam.spec.num_states(); ++s) {
      const auto x = observe(env, s, sample_factor(env, rng));
      CHECK(decode_state(env, x) == s);
    }
  }
}

TEST_CASE("oracle distance is the Euclidean grid distance") {
  const auto spec = make_spec({StateKind::Grid, 5, 5}, 0.0, {}, 0.9);
  CHECK(oracle_distance(spec, spec.states.index(0, 0), spec.states.index(3, 4)) ==
        doctest::Approx(5.0));
  CHECK(oracle_distance(spec, 7, 7) == 0.0);
}

TEST_CASE("families are reproducible from the seed") {
  const auto a = make_family(testutil::small_grid(), 77);
  const auto b = make_family(testutil::small_grid(), 77);
  const auto c = make_family(testutil::small_grid(), 78);
  CHECK(fingerprint(a) == fingerprint(b));
  CHECK(fingerprint(a) != fingerprint(c));
}

TEST_CASE("binary and JSON serialization round-trip exactly") {
  const auto fam = make_family(testutil::small_grid(), 4);
  std::stringstream buf;
  io::BinaryWriter w(buf);
  write_family(w, fam);
  io::BinaryReader r(buf);
  const auto back = read_family(r);
  CHECK(fingerprint(back) == fingerprint(fam));

  const std::string path = "test_family_roundtrip.json";
  save_family_json(fam, path);
  const auto loaded = load_family_json(path);
  CHECK(fingerprint(loaded) == fingerprint(fam));
  CHECK((loaded.train[2].obs_map - fam.train[2].obs_map).norm() == 0.0);
}

TEST_CASE("invalid family configs name the offending field") {
  auto cfg = testutil::small_grid();
  cfg.slip = 0.2;
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("family.slip"), ConfigError);
  cfg = testutil::small_grid();
  cfg.num_train = 0;
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("family.num_train"), ConfigError);
  cfg = testutil::small_grid();
  cfg.map_perturbation = 0.9;
  cfg.nuisance_rank = 2;
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("family.map_perturbation"), ConfigError);
}

TEST_CASE("single-state family has no separation constraint") {
  FamilyConfig cfg;
  cfg.kind = StateKind::Chain;
  cfg.width = 1;
  cfg.height = 1;
  const auto fam = make_family(cfg, 1);
  CHECK(fam.spec.num_states() == 1);
  CHECK(fam.margin > 1e300);
}
