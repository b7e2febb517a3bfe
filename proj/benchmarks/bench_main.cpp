#include <benchmark/benchmark.h>

#include "pasf/agent.hpp"
#include "pasf/gbmdp.hpp"
#include "pasf/nn.hpp"
#include "pasf/repr_losses.hpp"
#include "pasf/theory.hpp"

using namespace pasf;

static void BM_MlpForwardBackward(benchmark::State& state) {
  const int width = static_cast<int>(state.range(0));
  Rng rng(1);
  const std::vector<int> sizes = {8, width, width, 5};
  const auto net = nn::Mlp::create(sizes, nn::Activation::Relu, nn::Activation::Identity, rng);
  const Eigen::MatrixXd x = standard_normal_matrix(rng, 8, 64);
  const Eigen::MatrixXd g = Eigen::MatrixXd::Ones(5, 64);
  for (auto _ : state) {
    const auto fr = nn::forward(net, x);
    benchmark::DoNotOptimize(nn::backward(net, fr.cache, g).grads.weight[0].data());
  }
}
BENCHMARK(BM_MlpForwardBackward)->Arg(32)->Arg(64)->Arg(128);

static void BM_MmdLoss(benchmark::State& state) {
  const int d_psi = static_cast<int>(state.range(0));
  const auto expn = repr::RandomExpansion::sample(d_psi, 4, 1.0, 2);
  Rng rng(3);
  std::vector<Eigen::MatrixXd> zs;
  for (int e = 0; e < 3; ++e) zs.push_back(standard_normal_matrix(rng, 4, 32));
  for (auto _ : state) benchmark::DoNotOptimize(repr::mmd_loss(expn, zs).value);
}
BENCHMARK(BM_MmdLoss)->Arg(256)->Arg(1024);

static void BM_TdUpdate(benchmark::State& state) {
  Rng rng(4);
  const std::vector<int> hidden = {64, 64};
  auto q = agent::QParams::create(4, 5, hidden, 1e-3, 50, rng);
  agent::QBatch b;
  b.z = standard_normal_matrix(rng, 4, 64);
  b.z_next = standard_normal_matrix(rng, 4, 64);
  b.z_goal = standard_normal_matrix(rng, 4, 64);
  b.actions.assign(64, 1);
  b.rewards = -(b.z_next - b.z_goal).colwise().norm().transpose();
  for (auto _ : state) benchmark::DoNotOptimize(agent::q_update(q, b, 0.9));
}
BENCHMARK(BM_TdUpdate);

static void BM_OccupancySolve(benchmark::State& state) {
  theory::RandomInstanceOptions opt;
  opt.min_states = opt.max_states = static_cast<int>(state.range(0));
  Rng rng(5);
  const auto fg = theory::random_instance(opt, rng);
  const auto pi = theory::random_policy(fg, rng);
  for (auto _ : state) benchmark::DoNotOptimize(theory::occupancy(fg, pi, 0, 0).data());
}
BENCHMARK(BM_OccupancySolve)->Arg(4)->Arg(32)->Arg(128);

static void BM_EnvStep(benchmark::State& state) {
  gbmdp::FamilyConfig cfg;
  cfg.slip = 0.05;
  const auto fam = gbmdp::make_family(cfg, 6);
  Rng rng(7);
  auto cur = gbmdp::reset(fam.spec, fam.test[0], rng);
  for (auto _ : state) {
    cur = gbmdp::step(fam.spec, fam.test[0], cur.hidden,
                      static_cast<int>(uniform_index(rng, 5)), rng);
    benchmark::DoNotOptimize(cur.obs.data());
  }
}
BENCHMARK(BM_EnvStep);
BENCHMARK_MAIN();
