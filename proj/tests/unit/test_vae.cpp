#include <cmath>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "pasf/vae.hpp"

using namespace pasf;
using namespace pasf::vae;

namespace {

VaeParams small_vae(int obs_dim, int envs, double beta, std::uint64_t seed) {
  Architecture a;
  a.obs_dim = obs_dim;
  a.latent_dim = 3;
  a.num_envs = envs;
  a.hidden = {6};
  Rng rng(seed);
  return VaeParams::create(a, beta, rng);
}

void zero_out(nn::Mlp& m) { m.set_flat(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.num_params()))); }

VaeBatch random_batch(int obs_dim, int latent, int envs, int b, Rng& rng) {
  VaeBatch batch;
  for (int e = 0; e < envs; ++e) {
    batch.replay.push_back(standard_normal_matrix(rng, obs_dim, b));
    batch.noise.push_back(standard_normal_matrix(rng, latent, b));
    batch.aligned.push_back(standard_normal_matrix(rng, obs_dim, b));
  }
  return batch;
}

// One-hot of the oracle state.
Embedder onehot_embedder(const gbmdp::GbmdpFamily& family) {
  return [&family](const Eigen::MatrixXd& obs) {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(family.spec.num_states(), obs.cols());
    for (Eigen::Index i = 0; i < obs.cols(); ++i) z(testutil::oracle_state(family, obs.col(i)), i) = 1.0;
    return z;
  };
}

}  // namespace

TEST_CASE("zero encoder gives a standard normal posterior and zero KL") {
  auto p = small_vae(5, 2, 1.0, 1);
  zero_out(p.encoder);
  const auto enc = encode(p, Eigen::MatrixXd::Ones(5, 4));
  CHECK(enc.mean.norm() == 0.0);
  CHECK(enc.log_var.norm() == 0.0);
  CHECK(kl_divergence(enc.mean, enc.log_var) == 0.0);
}

TEST_CASE("KL matches the closed form") {
  Eigen::MatrixXd mu(2, 2), lv(2, 2);
  mu << 1.0, 0.0, -2.0, 0.5;
  lv << 0.0, std::log(2.0), 1.0, -1.0;
  double expect = 0.0;
  for (int c = 0; c < 2; ++c)
    for (int r = 0; r < 2; ++r)
      expect += 0.5 * (mu(r, c) * mu(r, c) + std::exp(lv(r, c)) - 1.0 - lv(r, c));
  CHECK(kl_divergence(mu, lv) == doctest::Approx(expect / 2.0).epsilon(1e-14));
}

TEST_CASE("log variance is clamped") {
  auto p = small_vae(2, 1, 1.0, 2);
  auto& out = p.encoder.mutable_layers().back();
  out.weight.setZero();
  out.bias.setConstant(50.0);
  out.bias.head(3).setZero();
  const auto enc = encode(p, Eigen::MatrixXd::Ones(2, 1));
  CHECK((enc.log_var.array() == kLogVarClamp).all());
}

TEST_CASE("reparameterized samples concentrate at the mean") {
  Encoding enc;
  enc.mean = Eigen::MatrixXd::Constant(1, 10000, 0.7);
  enc.log_var = Eigen::MatrixXd::Constant(1, 10000, std::log(0.25));
  Rng rng(3);
  const Eigen::MatrixXd z = reparameterize(enc, standard_normal_matrix(rng, 1, 10000));
  CHECK(std::abs(z.mean() - 0.7) < 3.0 * 0.5 / 100.0);
}

TEST_CASE("decoder depends on the env index and rejects unknown envs") {
  auto p = small_vae(4, 2, 1.0, 4);
  const Eigen::MatrixXd z = Eigen::MatrixXd::Constant(3, 1, 0.3);
  CHECK((decode(p, z, 0) - decode(p, z, 1)).norm() > 0.0);
  CHECK_THROWS_AS(decode(p, z, 2), std::out_of_range);
  CHECK_THROWS_AS(decode(p, z, -1), std::out_of_range);
  CHECK_THROWS(decode(p, Eigen::MatrixXd::Zero(2, 1), 0));
  zero_out(p.decoder);
  CHECK(decode(p, z, 1).norm() == 0.0);
}

TEST_CASE("loss with only reconstruction equals the per-sample squared error") {
  auto p = small_vae(4, 2, 0.0, 5);
  Rng rng(6);
  auto batch = random_batch(4, 3, 2, 5, rng);
  const auto res = vae_loss(p, batch, LossWeights{}, repr::RandomExpansion::sample(8, 3, 1.0, 1));
  double sse = 0.0;
  for (int e = 0; e < 2; ++e) {
    const auto enc = encode(p, batch.replay[static_cast<std::size_t>(e)]);
    const Eigen::MatrixXd rec = decode(p, reparameterize(enc, batch.noise[static_cast<std::size_t>(e)]), e);
    sse += (rec - batch.replay[static_cast<std::size_t>(e)]).squaredNorm() / 5.0;
  }
  CHECK(res.terms.recon == doctest::Approx(sse / 2.0).epsilon(1e-12));
  CHECK(res.terms.total == doctest::Approx(res.terms.recon).epsilon(1e-14));
  CHECK(res.terms.mmd == 0.0);
}

TEST_CASE("full loss gradient agrees with finite differences") {
  Rng rng(7);
  const auto expn = repr::RandomExpansion::sample(32, 3, 1.0, 9);
  for (int trial = 0; trial < 3; ++trial) {
    const VaeParams base = small_vae(4, 3, 0.5, 10 + static_cast<std::uint64_t>(trial));
    const auto batch = random_batch(4, 3, 3, 4, rng);
    LossWeights w;
    w.alpha_mmd = 5.0;
    w.alpha_diff = 0.1;
    const auto ne = static_cast<Eigen::Index>(base.encoder.num_params());
    const auto nd = static_cast<Eigen::Index>(base.decoder.num_params());
    nn::LossFn f = [&](const Eigen::VectorXd& flat, Eigen::VectorXd* grad) {
      VaeParams p = base;
      p.encoder.set_flat(flat.head(ne));
      p.decoder.set_flat(flat.tail(nd));
      const auto r = vae_loss(p, batch, w, expn);
      if (grad) {
        grad->resize(ne + nd);
        grad->head(ne) = r.encoder_grads.flat();
        grad->tail(nd) = r.decoder_grads.flat();
      }
      return r.terms.total;
    };
    Eigen::VectorXd flat(ne + nd);
    flat << base.encoder.flat(), base.decoder.flat();
    const auto rep = nn::grad_check(f, flat);
    CHECK_MESSAGE(rep.passed, "worst excess " << rep.worst_excess);
  }
}

TEST_CASE("vae_loss validates batches") {
  auto p = small_vae(4, 2, 1.0, 11);
  const auto expn = repr::RandomExpansion::sample(8, 3, 1.0, 1);
  VaeBatch empty;
  CHECK_THROWS(vae_loss(p, empty, LossWeights{}, expn));
  Rng rng(1);
  auto batch = random_batch(4, 3, 2, 3, rng);
  batch.aligned.clear();
  LossWeights w;
  w.alpha_mmd = 1.0;
  CHECK_THROWS(vae_loss(p, batch, w, expn));
  auto three = random_batch(4, 3, 3, 3, rng);
  CHECK_THROWS(vae_loss(p, three, LossWeights{}, expn));
}

TEST_CASE("LER examples") {
  const auto fam = gbmdp::make_family(testutil::small_grid(4, 4), 3);
  Rng rng(12);
  const std::vector<int> train = {0, 1, 2};
  const std::vector<int> test = {0, 3, 4};
  const auto oracle = testutil::oracle_embedder(fam);
  CHECK(latent_error_rate(oracle, fam, train, 50, rng).value == 0.0);
  CHECK(latent_error_rate(oracle, fam, test, 50, rng).value == 0.0);

  const auto p = small_vae(fam.obs_dim, 3, 1.0, 13);
  const std::vector<int> self = {1};
  CHECK(latent_error_rate(embedder(p), fam, self, 30, rng).value == 0.0);
  const std::vector<int> pair = {0, 1};
  const auto r = latent_error_rate(embedder(p), fam, pair, 30, rng);
  CHECK(r.value > 0.0);
  CHECK(r.evaluated == 60);

  const Embedder zero = [](const Eigen::MatrixXd& obs) { return Eigen::MatrixXd::Zero(2, obs.cols()); };
  const auto z = latent_error_rate(zero, fam, pair, 10, rng);
  CHECK(z.excluded == 20);
  CHECK(z.value == 0.0);
  const std::vector<int> none;
  CHECK_THROWS(latent_error_rate(oracle, fam, none, 10, rng));
}

TEST_CASE("alignment measure examples") {
  gbmdp::FamilyConfig cfg;
  cfg.kind = gbmdp::StateKind::Chain;
  cfg.width = 3;
  cfg.height = 1;
  cfg.num_train = 2;
  cfg.num_test = 1;
  const auto fam = gbmdp::make_family(cfg, 5);
  Rng rng(14);
  const std::vector<int> envs = {0, 1, 2};
  const auto m = measure_alignment(onehot_embedder(fam), fam, envs, rng);
  CHECK(m.eta == 0.0);
  CHECK(m.psi == doctest::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-14));
  CHECK_FALSE(m.sampled);

  const Embedder constant = [](const Eigen::MatrixXd& obs) { return Eigen::MatrixXd::Ones(2, obs.cols()); };
  const auto c = measure_alignment(constant, fam, envs, rng);
  CHECK(c.psi == 0.0);
  CHECK(c.eta == 0.0);

  const auto big = gbmdp::make_family(testutil::small_grid(5, 5), 6);
  const std::vector<int> two = {0, 1};
  CHECK(measure_alignment(testutil::oracle_embedder(big), big, two, rng, 3, 10).sampled);
}

TEST_CASE("shuffled reconstruction and distortion diagnostics") {
  const auto fam = gbmdp::make_family(testutil::small_grid(3, 3), 7);
  const auto p = small_vae(fam.obs_dim, 3, 1.0, 15);
  const double acc = shuffled_reconstruction_accuracy(p, fam);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  const std::vector<int> envs = {0};
  CHECK(max_local_distortion(embedder(p), fam, envs) > 0.0);
}

TEST_CASE("VAE round-trips through the binary format") {
  const auto p = small_vae(6, 2, 3.5, 16);
  std::stringstream ss;
  io::BinaryWriter w(ss);
  write_vae(w, p);
  io::BinaryReader r(ss);
  const auto back = read_vae(r);
  CHECK(back.beta == 3.5);
  CHECK(back.latent_dim == 3);
  CHECK(back.num_envs == 2);
  CHECK((back.encoder.flat() - p.encoder.flat()).norm() == 0.0);
  CHECK((back.decoder.flat() - p.decoder.flat()).norm() == 0.0);
}
