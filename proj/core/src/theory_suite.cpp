#include "pasf/theory_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "pasf/alignment.hpp"
#include "pasf/errors.hpp"
#include "pasf/gbmdp.hpp"
#include "pasf/repr_losses.hpp"
#include "pasf/rng.hpp"
#include "pasf/theory.hpp"
#include "pasf/vae.hpp"

namespace pasf::theory {

using json = nlohmann::ordered_json;

namespace {

enum Stream : std::uint64_t { kLemma1 = 11, kLemma3, kLemma4, kProp1, kProp2, kMmd };

CheckRecord record(const std::string& group, int instance, const BoundCheck& c,
                   std::string note = {}) {
  return {group, instance, c.lhs, c.rhs, c.slack, c.holds, std::move(note)};
}

std::string describe(const FiniteGbmdp& fg) {
  return "S=" + std::to_string(fg.num_states) + " A=" + std::to_string(fg.num_actions) +
         " gamma=" + std::to_string(fg.gamma);
}

template <class T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

SuiteConfig parse_suite_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("theory suite config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("theory suite config: expected an object");
  static const std::vector<std::string> known = {
      "seed",          "lemma1_instances", "lemma3_instances", "lemma4_instances",
      "prop1_families", "prop1_max_class", "prop2",            "mmd_batches",
      "mmd_batch_size", "bound_scale"};
  for (const auto& item : j.items())
    if (std::find(known.begin(), known.end(), item.key()) == known.end())
      throw ConfigError("theory suite config: unknown key '" + item.key() + "'");
  SuiteConfig c;
  try {
    read_key(j, "seed", c.seed);
    read_key(j, "lemma1_instances", c.lemma1_instances);
    read_key(j, "lemma3_instances", c.lemma3_instances);
    read_key(j, "lemma4_instances", c.lemma4_instances);
    read_key(j, "prop1_families", c.prop1_families);
    read_key(j, "prop1_max_class", c.prop1_max_class);
    read_key(j, "prop2", c.prop2);
    read_key(j, "mmd_batches", c.mmd_batches);
    read_key(j, "mmd_batch_size", c.mmd_batch_size);
    read_key(j, "bound_scale", c.bound_scale);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("theory suite config: ") + e.what());
  }
  if (c.lemma1_instances < 0 || c.lemma3_instances < 0 || c.lemma4_instances < 0 ||
      c.prop1_families < 0 || c.mmd_batches < 0)
    throw ConfigError("theory suite config: instance counts must be non-negative");
  if (c.prop1_max_class < 2) throw ConfigError("theory suite config: prop1_max_class must be >= 2");
  if (c.mmd_batch_size < 1) throw ConfigError("theory suite config: mmd_batch_size must be >= 1");
  if (!(c.bound_scale >= 0.0)) throw ConfigError("theory suite config: bound_scale must be >= 0");
  return c;
}

std::string suite_config_json(const SuiteConfig& c) {
  json j = {{"seed", c.seed},
            {"lemma1_instances", c.lemma1_instances},
            {"lemma3_instances", c.lemma3_instances},
            {"lemma4_instances", c.lemma4_instances},
            {"prop1_families", c.prop1_families},
            {"prop1_max_class", c.prop1_max_class},
            {"prop2", c.prop2},
            {"mmd_batches", c.mmd_batches},
            {"mmd_batch_size", c.mmd_batch_size},
            {"bound_scale", c.bound_scale}};
  return j.dump(2);
}

void run_lemma1_sweep(const SuiteConfig& config, std::vector<CheckRecord>& checks) {
  Rng rng(derive_seed(config.seed, kLemma1));
  for (int i = 0; i < config.lemma1_instances; ++i) {
    const FiniteGbmdp fg = random_instance({}, rng);
    const TabularPolicy a = random_policy(fg, rng);
    const TabularPolicy b = i % 2 == 0 ? random_policy(fg, rng) : random_deterministic_policy(fg, rng);
    checks.push_back(record("lemma1", i, check_lemma1(fg, 0, a, b, config.bound_scale), describe(fg)));
  }
}

void run_lemma3_sweep(const SuiteConfig& config, std::vector<CheckRecord>& checks) {
  Rng rng(derive_seed(config.seed, kLemma3));
  for (int i = 0; i < config.lemma3_instances; ++i) {
    const FiniteGbmdp fg = random_instance({}, rng);
    const TabularPolicy a = random_policy(fg, rng);
    const TabularPolicy b = random_policy(fg, rng);
    const Eigen::VectorXd w = flat_dirichlet(rng, fg.num_goals());
    checks.push_back(record("lemma3", i,
                            check_lemma3(fg, 0, a, b, {w.data(), static_cast<std::size_t>(w.size())},
                                         config.bound_scale),
                            describe(fg)));
  }
}

void run_lemma4_sweep(const SuiteConfig& config, std::vector<CheckRecord>& checks) {
  Rng rng(derive_seed(config.seed, kLemma4));
  for (int i = 0; i < config.lemma4_instances; ++i) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 8));
    const int d = 1 + static_cast<int>(uniform_index(rng, 4));
    const Eigen::VectorXd p = flat_dirichlet(rng, n);
    const Eigen::MatrixXd f = standard_normal_matrix(rng, d, n);
    const Eigen::MatrixXd g = standard_normal_matrix(rng, d, n);
    checks.push_back(record("lemma4", i, check_lemma4(p, f, g, config.bound_scale),
                            "support=" + std::to_string(n) + " dim=" + std::to_string(d)));
  }
}

void run_prop1_sweep(const SuiteConfig& config, std::vector<CheckRecord>& checks) {
  Rng rng(derive_seed(config.seed, kProp1));
  RandomInstanceOptions opt;
  opt.min_states = opt.max_states = 3;
  opt.num_envs = 3;  // envs 0 and 1 train, env 2 target
  const std::vector<int> train = {0, 1};
  for (int i = 0; i < config.prop1_families; ++i) {
    const FiniteGbmdp fg = random_instance(opt, rng);
    const int size = 2 + static_cast<int>(uniform_index(rng, config.prop1_max_class - 1));
    PolicyClass cls;
    if (i % 2 == 0) cls.push_back(optimal_invariant_policy(fg));
    while (static_cast<int>(cls.size()) < size) {
      switch (cls.size() % 3) {
        case 0: cls.push_back(random_policy(fg, rng)); break;
        case 1: cls.push_back(random_deterministic_policy(fg, rng)); break;
        default: cls.push_back(random_invariant_policy(fg, rng)); break;
      }
    }
    double worst = std::numeric_limits<double>::infinity();
    Prop1Report tightest;
    for (int k = 0; k < size; ++k) {
      const Prop1Report r =
          check_prop1(fg, train, 2, cls, k, LambdaVariant::TrainArgmin, config.bound_scale);
      if (!r.check.holds || r.check.slack < worst) {
        worst = r.check.holds ? r.check.slack : -std::numeric_limits<double>::infinity();
        tightest = r;
      }
    }
    checks.push_back(record("prop1", i, tightest.check,
                            describe(fg) + " |Pi|=" + std::to_string(size) +
                                " lambda=" + std::to_string(tightest.lambda) +
                                " delta=" + std::to_string(tightest.delta) +
                                " d=" + std::to_string(tightest.d_term)));
  }
}

void run_prop2_cases(const SuiteConfig& config, std::vector<CheckRecord>& checks) {
  Rng rng(derive_seed(config.seed, kProp2));
  const FiniteGbmdp fg = chain_instance(3, 2, 0.9);
  const std::vector<int> train = {0, 1};
  Prop2Options opt;
  opt.lipschitz = 2.0;
  opt.bound_scale = config.bound_scale;

  LatentTable exact(2, std::vector<Eigen::VectorXd>(3));
  LatentTable perturbed = exact;
  for (int e = 0; e < 2; ++e)
    for (int s = 0; s < 3; ++s) {
      exact[e][s] = Eigen::VectorXd::Unit(3, s);
      perturbed[e][s] = Eigen::VectorXd::Zero(4);
      perturbed[e][s](s) = 1.0;
      perturbed[e][s](3) = e == 0 ? 0.05 : -0.05;
    }
  int idx = 0;
  for (const auto* table : {&exact, &perturbed}) {
    const Prop2Report r = check_prop2_components(fg, train, *table, opt, rng);
    const std::string note = "eta=" + std::to_string(r.eta) + " psi=" + std::to_string(r.psi) +
                             " |Pi_sub|=" + std::to_string(r.subclass_size) +
                             (r.pi_g_smooth ? " smooth" : " not-smooth");
    checks.push_back(record("prop2_s1", idx, r.statement1, note));
    checks.push_back(record("prop2_s2", idx, r.statement2, note));
    ++idx;
  }
}

MmdChainResult run_mmd_chain(std::uint64_t seed, int batches, int batch_size, double bound_scale) {
  Rng rng(derive_seed(seed, kMmd));
  gbmdp::FamilyConfig fc;
  fc.width = 4;
  fc.height = 4;
  fc.num_train = 3;
  fc.num_test = 0;
  const gbmdp::GbmdpFamily family = gbmdp::make_family(fc, derive_seed(seed, kMmd + 100));

  align::CollectOptions co;
  co.horizon = 20;
  co.source = align::ActionSource::Random;
  align::AlignedBuffer buffer(64);
  for (int i = 0; i < 32; ++i) buffer.push(align::collect_aligned(family, co, {}, rng));

  vae::Architecture arch;
  arch.obs_dim = family.obs_dim;
  arch.latent_dim = 4;
  arch.num_envs = fc.num_train;
  arch.hidden = {32};
  const vae::VaeParams params = vae::VaeParams::create(arch, 1.0, rng);
  const repr::RandomExpansion psi = repr::RandomExpansion::sample(256, arch.latent_dim, 1.0, seed);

  MmdChainResult out;
  out.batches = batches;
  out.batch_size = batch_size;
  if (batches <= 0) return out;
  const double B = batch_size;
  double sum_diff = 0.0, sum_diff2 = 0.0;
  for (int i = 0; i < batches; ++i) {
    const align::AlignedBatch batch = buffer.sample(static_cast<std::size_t>(batch_size), rng);
    std::vector<Eigen::MatrixXd> latents;
    for (const auto& obs : batch.per_env) latents.push_back(vae::embed(params, obs));
    const double mmd = repr::mmd_loss(psi, latents).value;
    double paired = 0.0;
    int pairs = 0;
    for (std::size_t a = 0; a < latents.size(); ++a)
      for (std::size_t b = a + 1; b < latents.size(); ++b, ++pairs)
        paired += repr::paired_feature_distance(psi, latents[a], latents[b]);
    paired /= pairs;
    out.mean_mmd += mmd;
    out.mean_paired += paired;
    const double d = mmd - paired / B;
    sum_diff += d;
    sum_diff2 += d * d;
  }
  const double n = batches;
  out.mean_mmd /= n;
  out.mean_paired /= n;
  const double mean_d = sum_diff / n;
  const double var = n > 1 ? std::max(0.0, (sum_diff2 - n * mean_d * mean_d) / (n - 1)) : 0.0;
  out.standard_error = std::sqrt(var / n);
  out.lower = out.mean_paired / B - 3.0 * out.standard_error;
  out.holds = out.lower <= bound_scale * out.mean_mmd + kBoundTolerance;
  return out;
}

std::vector<GroupSummary> summarize(const std::vector<CheckRecord>& checks) {
  std::vector<GroupSummary> groups;
  for (const auto& c : checks) {
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const GroupSummary& g) { return g.group == c.group; });
    if (it == groups.end()) {
      groups.push_back({c.group, 0, 0, std::numeric_limits<double>::infinity()});
      it = groups.end() - 1;
    }
    ++it->checks;
    if (!c.holds) ++it->failures;
    it->min_slack = std::min(it->min_slack, c.slack);
  }
  return groups;
}

SuiteReport run_theory_suite(const SuiteConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  SuiteReport report;
  report.config = config;
  run_lemma1_sweep(config, report.checks);
  run_lemma3_sweep(config, report.checks);
  run_lemma4_sweep(config, report.checks);
  run_prop1_sweep(config, report.checks);
  if (config.prop2) run_prop2_cases(config, report.checks);
  if (config.mmd_batches > 0) {
    const MmdChainResult m =
        run_mmd_chain(config.seed, config.mmd_batches, config.mmd_batch_size, config.bound_scale);
    report.checks.push_back({"mmd_chain", 0, m.lower, config.bound_scale * m.mean_mmd,
                             config.bound_scale * m.mean_mmd - m.lower, m.holds,
                             "batches=" + std::to_string(m.batches) +
                                 " B=" + std::to_string(m.batch_size) +
                                 " se=" + std::to_string(m.standard_error)});
  }
  report.groups = summarize(report.checks);
  report.all_hold = std::all_of(report.checks.begin(), report.checks.end(),
                                [](const CheckRecord& c) { return c.holds; });
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string report_json(const SuiteReport& report) {
  json checks = json::array();
  for (const auto& c : report.checks)
    checks.push_back({{"group", c.group},
                      {"instance", c.instance},
                      {"lhs", c.lhs},
                      {"rhs", c.rhs},
                      {"slack", c.slack},
                      {"holds", c.holds},
                      {"note", c.note}});
  json groups = json::array();
  for (const auto& g : report.groups)
    groups.push_back({{"group", g.group},
                      {"checks", g.checks},
                      {"failures", g.failures},
                      {"min_slack", g.min_slack}});
  json j = {{"schema", "pasf-theory-report"},
            {"version", 1},
            {"config", json::parse(suite_config_json(report.config))},
            {"all_hold", report.all_hold},
            {"seconds", report.seconds},
            {"groups", groups},
            {"checks", checks}};
  return j.dump(2);
}

}  // namespace pasf::theory
