#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "pasf/alignment.hpp"

using namespace pasf;
using namespace pasf::align;

namespace {

RolloutPolicy always(int a) {
  return [a](const Eigen::VectorXd&, int, Rng&) { return a; };
}

gbmdp::GbmdpFamily family_with_slip(double slip, std::uint64_t seed = 4) {
  auto cfg = testutil::small_grid(4, 4);
  cfg.slip = slip;
  return gbmdp::make_family(cfg, seed);
}

}  // namespace

TEST_CASE("deterministic families share the start state and hidden trajectory") {
  const auto fam = family_with_slip(0.0);
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    CollectOptions opt;
    opt.horizon = 12;
    opt.source = ActionSource::Random;
    const auto rec = collect_aligned(fam, opt, nullptr, rng);
    REQUIRE(rec.envs.size() == 3);
    REQUIRE(rec.observations.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
      REQUIRE(rec.observations[e].size() == 13);
      CHECK(rec.oracle_states[e] == rec.oracle_states[0]);
      // The learner-visible observations decode to the same states.
      for (int t = 0; t <= 12; ++t)
        CHECK(testutil::oracle_state(fam, rec.observations[e][static_cast<std::size_t>(t)]) ==
              rec.oracle_states[e][static_cast<std::size_t>(t)]);
    }
  }
}

TEST_CASE("the same actions are replayed in every env") {
  const auto fam = family_with_slip(0.0);
  Rng rng(2);
  CollectOptions opt;
  opt.horizon = 6;
  const auto rec = collect_aligned(fam, opt, always(gbmdp::grid_action::kRight), rng);
  CHECK(rec.actions == std::vector<int>(6, gbmdp::grid_action::kRight));
  // Moving right only: x is nondecreasing along each replay, and rows never change.
  for (const auto& states : rec.oracle_states)
    for (std::size_t t = 1; t < states.size(); ++t) {
      CHECK(states[t] >= states[t - 1]);
      CHECK(states[t] / 4 == states[0] / 4);
    }
}

TEST_CASE("slip breaks the shared trajectory only through the transition noise") {
  const auto fam = family_with_slip(0.05);
  Rng rng(3);
  CollectOptions opt;
  opt.horizon = 40;
  opt.source = ActionSource::Random;
  opt.initial_state = InitialState::Shared;
  int diverged = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto rec = collect_aligned(fam, opt, nullptr, rng);
    CHECK(rec.oracle_states[1][0] == rec.oracle_states[0][0]);
    if (rec.oracle_states[1] != rec.oracle_states[0]) ++diverged;
  }
  CHECK(diverged > 0);
}

TEST_CASE("collect_aligned validates its inputs") {
  Rng rng(0);
  CollectOptions opt;
  opt.horizon = 0;
  const auto fam = family_with_slip(0.0);
  CHECK_THROWS(collect_aligned(fam, opt, always(0), rng));
  opt.horizon = 3;
  CHECK_THROWS(collect_aligned(fam, opt, nullptr, rng));
  auto cfg = testutil::small_grid();
  cfg.num_train = 1;
  const auto single = gbmdp::make_family(cfg, 1);
  CHECK_THROWS(collect_aligned(single, opt, always(0), rng));
}

TEST_CASE("buffer assigns increasing ids and evicts FIFO") {
  const auto fam = family_with_slip(0.0);
  Rng rng(5);
  AlignedBuffer buf(3);
  CollectOptions opt;
  opt.horizon = 4;
  opt.source = ActionSource::Random;
  for (int i = 0; i < 5; ++i) buf.push(collect_aligned(fam, opt, nullptr, rng));
  CHECK(buf.size() == 3);
  CHECK(buf.inserted() == 5);
  std::vector<std::uint64_t> ids;
  for (const auto& r : buf.records()) ids.push_back(r.id);
  CHECK(ids == std::vector<std::uint64_t>{2, 3, 4});
  CHECK_THROWS(AlignedBuffer(0));
  CHECK_THROWS(buf.push(AlignedRecord{}));
}

TEST_CASE("batch columns share record and step across envs") {
  const auto fam = family_with_slip(0.0);
  Rng rng(6);
  AlignedBuffer buf(10);
  CollectOptions opt;
  opt.horizon = 8;
  opt.source = ActionSource::Random;
  for (int i = 0; i < 6; ++i) buf.push(collect_aligned(fam, opt, nullptr, rng));
  const auto batch = buf.sample(64, rng);
  REQUIRE(batch.per_env.size() == 3);
  REQUIRE(batch.record_ids.size() == 64);
  for (const auto& m : batch.per_env) {
    CHECK(m.rows() == fam.obs_dim);
    CHECK(m.cols() == 64);
  }
  for (Eigen::Index b = 0; b < 64; ++b) {
    const int s0 = testutil::oracle_state(fam, batch.per_env[0].col(b));
    for (std::size_t e = 1; e < 3; ++e)
      CHECK(testutil::oracle_state(fam, batch.per_env[e].col(b)) == s0);
    CHECK(batch.steps[static_cast<std::size_t>(b)] >= 0);
    CHECK(batch.steps[static_cast<std::size_t>(b)] <= 8);
  }
}

TEST_CASE("sampling an empty buffer throws") {
  AlignedBuffer buf(4);
  Rng rng(0);
  CHECK_THROWS(buf.sample(8, rng));
}

TEST_CASE("buffer round-trips through the binary format") {
  const auto fam = family_with_slip(0.0);
  Rng rng(7);
  AlignedBuffer buf(5);
  CollectOptions opt;
  opt.horizon = 5;
  opt.source = ActionSource::Random;
  for (int i = 0; i < 7; ++i) buf.push(collect_aligned(fam, opt, nullptr, rng));
  std::stringstream ss;
  io::BinaryWriter w(ss);
  buf.write(w);
  io::BinaryReader r(ss);
  const auto back = AlignedBuffer::read(r);
  CHECK(back.size() == buf.size());
  CHECK(back.capacity() == buf.capacity());
  CHECK(back.inserted() == buf.inserted());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const auto& a = buf.records()[i];
    const auto& b = back.records()[i];
    CHECK(a.id == b.id);
    CHECK(a.actions == b.actions);
    CHECK(a.oracle_states == b.oracle_states);
    for (std::size_t e = 0; e < a.observations.size(); ++e)
      for (std::size_t t = 0; t < a.observations[e].size(); ++t)
        CHECK((a.observations[e][t] - b.observations[e][t]).norm() == 0.0);
  }
  Rng r1(9), r2(9);
  CHECK(buf.sample(10, r1).record_ids == back.sample(10, r2).record_ids);
}
