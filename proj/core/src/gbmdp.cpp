#include "pasf/gbmdp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "pasf/errors.hpp"

namespace pasf::gbmdp {

Eigen::Vector2d StateSpec::embedding(int s) const {
  return {static_cast<double>(s % width), static_cast<double>(s / width)};
}

Eigen::VectorXd GbmdpSpec::transition_row(int s, int a) const {
  Eigen::VectorXd row = Eigen::VectorXd::Zero(num_states());
  row(deterministic_next(s, a)) += 1.0 - slip;
  row(s) += slip;
  return row;
}

GbmdpSpec make_spec(const StateSpec& states, double slip, std::vector<int> start_states,
                    double gamma) {
  GbmdpSpec spec;
  spec.states = states;
  const int n = states.num_states();
  spec.num_actions = states.kind == StateKind::Grid ? 5 : 3;
  spec.next_state.resize(static_cast<std::size_t>(n * spec.num_actions));
  for (int s = 0; s < n; ++s) {
    const int x = s % states.width;
    const int y = s / states.width;
    for (int a = 0; a < spec.num_actions; ++a) {
      int nx = x, ny = y;
      if (states.kind == StateKind::Grid) {
        if (a == grid_action::kUp) ny = y + 1;
        if (a == grid_action::kDown) ny = y - 1;
        if (a == grid_action::kLeft) nx = x - 1;
        if (a == grid_action::kRight) nx = x + 1;
      } else {
        if (a == chain_action::kLeft) nx = x - 1;
        if (a == chain_action::kRight) nx = x + 1;
      }
      if (nx < 0 || nx >= states.width || ny < 0 || ny >= states.height) {
        nx = x;
        ny = y;
      }
      spec.next_state[static_cast<std::size_t>(s * spec.num_actions + a)] = states.index(nx, ny);
    }
  }
  spec.slip = slip;
  if (start_states.empty()) {
    start_states.resize(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) start_states[static_cast<std::size_t>(s)] = s;
  }
  spec.start_states = std::move(start_states);
  spec.goals.resize(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) spec.goals[static_cast<std::size_t>(s)] = s;
  spec.gamma = gamma;
  return spec;
}

const EnvInstance& GbmdpFamily::env(int index) const {
  if (index < 0 || index >= num_train() + num_test())
    throw std::out_of_range("environment index " + std::to_string(index));
  return index < num_train() ? train[static_cast<std::size_t>(index)]
                             : test[static_cast<std::size_t>(index - num_train())];
}

void validate(const FamilyConfig& c) {
  if (c.width < 1 || c.height < 1) throw ConfigError("family.width/height must be >= 1");
  if (c.kind == StateKind::Chain && c.height != 1)
    throw ConfigError("family.height must be 1 for a chain");
  if (c.num_train < 1) throw ConfigError("family.num_train must be >= 1");
  if (c.num_test < 0) throw ConfigError("family.num_test must be >= 0");
  if (c.factor_dim < 0) throw ConfigError("family.factor_dim must be >= 0");
  const int n = c.width * c.height;
  if (c.obs_dim != 0 && c.obs_dim < n + c.factor_dim)
    throw ConfigError("family.obs_dim must be >= |S| + factor_dim = " +
                      std::to_string(n + c.factor_dim));
  if (c.slip < 0.0 || c.slip > 0.05) throw ConfigError("family.slip must lie in [0, 0.05]");
  if (!(c.gamma > 0.0 && c.gamma < 1.0)) throw ConfigError("family.gamma must lie in (0, 1)");
  for (int s : c.start_states)
    if (s < 0 || s >= n) throw ConfigError("family.start_states entry out of range");
  if (c.nuisance_rank < 0) throw ConfigError("family.nuisance_rank must be >= 0");
  if (c.map_perturbation < 0.0 || c.map_perturbation * c.nuisance_rank >= 1.0)
    throw ConfigError("family.map_perturbation * nuisance_rank must lie in [0, 1)");
  if (c.offset_scale < 0.0) throw ConfigError("family.offset_scale must be >= 0");
  if (c.distractor_scale < 0.0) throw ConfigError("family.distractor_scale must be >= 0");
  if (!(c.factor_box > 0.0)) throw ConfigError("family.factor_box must be > 0");
  if (c.drift_step < 0.0) throw ConfigError("family.drift_step must be >= 0");
  if (c.min_margin < 0.0) throw ConfigError("family.min_margin must be >= 0");
}

namespace {

double state_block_margin(const std::vector<const EnvInstance*>& envs) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < envs.size(); ++i) {
    for (std::size_t j = i; j < envs.size(); ++j) {
      const auto& a = *envs[i];
      const auto& b = *envs[j];
      const Eigen::Index n = a.obs_map.cols();
      for (Eigen::Index s = 0; s < n; ++s)
        for (Eigen::Index t = 0; t < n; ++t) {
          if (s == t) continue;
          const double d =
              ((a.obs_map.col(s) + a.offset) - (b.obs_map.col(t) + b.offset)).cwiseAbs().maxCoeff();
          best = std::min(best, d);
        }
    }
  }
  return best;
}

EnvInstance make_env(int index, FactorMode mode, const FamilyConfig& c, int block_dim, int n,
                     const std::vector<Eigen::MatrixXd>& maps,
                     const std::vector<Eigen::VectorXd>& offsets, Rng& rng) {
  EnvInstance env;
  env.index = index;
  env.mode = mode;
  env.obs_map = Eigen::MatrixXd::Zero(block_dim, n);
  env.obs_map.topRows(n).setIdentity();
  env.offset = Eigen::VectorXd::Zero(block_dim);
  for (std::size_t k = 0; k < maps.size(); ++k) {
    const double theta = uniform(rng, -1.0, 1.0);
    env.obs_map += theta * maps[k];
    env.offset += theta * offsets[k];
  }
  env.initial_factor.resize(c.factor_dim);
  for (int i = 0; i < c.factor_dim; ++i)
    env.initial_factor(i) = uniform(rng, -c.factor_box, c.factor_box);
  env.drift_step = mode == FactorMode::Drifting ? c.drift_step : 0.0;
  env.factor_box = c.factor_box;
  env.distractor_scale = c.distractor_scale;
  return env;
}

}  // namespace

GbmdpFamily make_family(const FamilyConfig& c, std::uint64_t seed) {
  validate(c);
  Rng rng(seed);
  StateSpec states{c.kind, c.width, c.kind == StateKind::Chain ? 1 : c.height};
  const int n = states.num_states();
  const int obs_dim = c.obs_dim == 0 ? n + c.factor_dim : c.obs_dim;
  const int block_dim = obs_dim - c.factor_dim;

  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    GbmdpFamily family;
    family.spec = make_spec(states, c.slip, c.start_states, c.gamma);
    family.obs_dim = obs_dim;

    std::vector<Eigen::MatrixXd> maps;
    std::vector<Eigen::VectorXd> offsets;
    for (int k = 0; k < c.nuisance_rank; ++k) {
      Eigen::MatrixXd m = standard_normal_matrix(rng, block_dim, n);
      const double norm = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
      maps.push_back(norm > 0.0 ? Eigen::MatrixXd(m * (c.map_perturbation / norm)) : m);
      offsets.push_back(c.offset_scale * standard_normal_matrix(rng, block_dim, 1).col(0));
    }
    for (int e = 0; e < c.num_train; ++e)
      family.train.push_back(
          make_env(e, FactorMode::Static, c, block_dim, n, maps, offsets, rng));
    for (int e = 0; e < c.num_test; ++e)
      family.test.push_back(
          make_env(c.num_train + e, c.test_mode, c, block_dim, n, maps, offsets, rng));

    std::vector<const EnvInstance*> all;
    for (const auto& env : family.train) all.push_back(&env);
    for (const auto& env : family.test) all.push_back(&env);
    family.margin = n > 1 ? state_block_margin(all) : std::numeric_limits<double>::max();
    if (family.margin >= c.min_margin) return family;
  }
  throw ConfigError("could not generate a family with state-block margin >= family.min_margin");
}

Eigen::VectorXd observe(const EnvInstance& env, int s, const Eigen::VectorXd& b) {
  Eigen::VectorXd x(env.obs_dim());
  x.head(env.state_block_dim()) = env.obs_map.col(s) + env.offset;
  x.tail(env.factor_dim()) = env.distractor_scale * b;
  return x;
}

Eigen::VectorXd sample_factor(const EnvInstance& env, Rng& rng) {
  if (env.mode == FactorMode::Static) return env.initial_factor;
  Eigen::VectorXd b(env.factor_dim());
  for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = uniform(rng, -env.factor_box, env.factor_box);
  return b;
}

Eigen::VectorXd advance_factor(const EnvInstance& env, const Eigen::VectorXd& b, Rng& rng) {
  if (env.mode == FactorMode::Static) return b;
  Eigen::VectorXd next = b;
  for (Eigen::Index i = 0; i < next.size(); ++i)
    next(i) = std::clamp(next(i) + env.drift_step * standard_normal(rng), -env.factor_box,
                         env.factor_box);
  return next;
}

EnvStep reset_to(const EnvInstance& env, int s, Rng& rng) {
  EnvStep out;
  out.hidden.s = s;
  out.hidden.b = sample_factor(env, rng);
  out.obs = observe(env, s, out.hidden.b);
  return out;
}

EnvStep reset(const GbmdpSpec& spec, const EnvInstance& env, Rng& rng) {
  const int s = spec.start_states[uniform_index(rng, spec.start_states.size())];
  return reset_to(env, s, rng);
}

EnvStep step(const GbmdpSpec& spec, const EnvInstance& env, const HiddenEnvState& hidden,
             int action, Rng& rng) {
  if (action < 0 || action >= spec.num_actions)
    throw std::out_of_range("action " + std::to_string(action));
  EnvStep out;
  out.slipped = spec.slip > 0.0 && uniform01(rng) < spec.slip;
  out.hidden.s = out.slipped ? hidden.s : spec.deterministic_next(hidden.s, action);
  out.hidden.b = advance_factor(env, hidden.b, rng);
  out.obs = observe(env, out.hidden.s, out.hidden.b);
  return out;
}

DisjointnessReport verify_disjointness(const GbmdpFamily& family, int n_samples, double tol,
                                       Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("verify_disjointness: n_samples must be >= 1");
  struct Sample {
    int env, state;
    Eigen::VectorXd block;
  };
  std::vector<Sample> samples;
  const int n = family.spec.num_states();
  for (int e = 0; e < family.num_train() + family.num_test(); ++e) {
    const auto& env = family.env(e);
    for (int s = 0; s < n; ++s)
      for (int k = 0; k < n_samples; ++k) {
        const Eigen::VectorXd x = observe(env, s, sample_factor(env, rng));
        samples.push_back({e, s, x.head(env.state_block_dim())});
      }
  }
  DisjointnessReport report;
  report.min_separation = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      if (samples[i].state == samples[j].state) continue;
      const double d = (samples[i].block - samples[j].block).cwiseAbs().maxCoeff();
      if (d < report.min_separation) {
        report.min_separation = d;
        report.env_a = samples[i].env;
        report.state_a = samples[i].state;
        report.env_b = samples[j].env;
        report.state_b = samples[j].state;
      }
    }
  report.ok = report.min_separation > tol;
  return report;
}

double oracle_distance(const GbmdpSpec& spec, int s, int g) {
  return (spec.states.embedding(s) - spec.states.embedding(g)).norm();
}

int decode_state(const EnvInstance& env, const Eigen::VectorXd& obs) {
  const Eigen::VectorXd block = obs.head(env.state_block_dim()) - env.offset;
  Eigen::Index best = 0;
  (env.obs_map.colwise() - block).colwise().squaredNorm().minCoeff(&best);
  return static_cast<int>(best);
}

namespace {

void write_env(io::BinaryWriter& w, const EnvInstance& env) {
  w.i64(env.index);
  w.i64(env.mode == FactorMode::Static ? 0 : 1);
  w.matrix(env.obs_map);
  w.vector(env.offset);
  w.vector(env.initial_factor);
  w.f64(env.drift_step);
  w.f64(env.factor_box);
  w.f64(env.distractor_scale);
}

EnvInstance read_env(io::BinaryReader& r) {
  EnvInstance env;
  env.index = static_cast<int>(r.i64());
  env.mode = r.i64() == 0 ? FactorMode::Static : FactorMode::Drifting;
  env.obs_map = r.matrix();
  env.offset = r.vector();
  env.initial_factor = r.vector();
  env.drift_step = r.f64();
  env.factor_box = r.f64();
  env.distractor_scale = r.f64();
  return env;
}

}  // namespace

void write_family(io::BinaryWriter& w, const GbmdpFamily& f) {
  w.str("GBMDP1");
  w.i64(f.spec.states.kind == StateKind::Grid ? 0 : 1);
  w.i64(f.spec.states.width);
  w.i64(f.spec.states.height);
  w.f64(f.spec.slip);
  w.ints(f.spec.start_states);
  w.ints(f.spec.goals);
  w.f64(f.spec.gamma);
  w.i64(f.obs_dim);
  w.f64(f.margin);
  w.u64(f.train.size());
  for (const auto& env : f.train) write_env(w, env);
  w.u64(f.test.size());
  for (const auto& env : f.test) write_env(w, env);
}

GbmdpFamily read_family(io::BinaryReader& r) {
  if (r.str() != "GBMDP1") throw IoError("unsupported family record");
  GbmdpFamily f;
  StateSpec states;
  states.kind = r.i64() == 0 ? StateKind::Grid : StateKind::Chain;
  states.width = static_cast<int>(r.i64());
  states.height = static_cast<int>(r.i64());
  const double slip = r.f64();
  auto start = r.ints();
  auto goals = r.ints();
  const double gamma = r.f64();
  f.spec = make_spec(states, slip, std::move(start), gamma);
  f.spec.goals = std::move(goals);
  f.obs_dim = static_cast<int>(r.i64());
  f.margin = r.f64();
  const auto n_train = r.u64();
  for (std::uint64_t i = 0; i < n_train; ++i) f.train.push_back(read_env(r));
  const auto n_test = r.u64();
  for (std::uint64_t i = 0; i < n_test; ++i) f.test.push_back(read_env(r));
  return f;
}

std::uint64_t fingerprint(const GbmdpFamily& family) {
  std::ostringstream os;
  io::BinaryWriter w(os);
  write_family(w, family);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : os.str()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

using nlohmann::json;

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd json_matrix(const json& rows, Eigen::Index cols_hint) {
  const auto n_rows = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index n_cols = n_rows > 0 ? static_cast<Eigen::Index>(rows[0].size()) : cols_hint;
  Eigen::MatrixXd m(n_rows, n_cols);
  for (Eigen::Index i = 0; i < n_rows; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != n_cols) throw IoError("ragged matrix");
    for (Eigen::Index j = 0; j < n_cols; ++j) m(i, j) = rows[i][j].get<double>();
  }
  return m;
}

json vector_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd json_vector(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json env_json(const EnvInstance& env) {
  return {{"index", env.index},
          {"mode", env.mode == FactorMode::Static ? "static" : "drifting"},
          {"obs_map", matrix_json(env.obs_map)},
          {"offset", vector_json(env.offset)},
          {"initial_factor", vector_json(env.initial_factor)},
          {"drift_step", env.drift_step},
          {"factor_box", env.factor_box},
          {"distractor_scale", env.distractor_scale}};
}

EnvInstance json_env(const json& j, int n_states) {
  EnvInstance env;
  env.index = j.at("index").get<int>();
  const auto mode = j.at("mode").get<std::string>();
  if (mode != "static" && mode != "drifting") throw IoError("unknown factor mode " + mode);
  env.mode = mode == "static" ? FactorMode::Static : FactorMode::Drifting;
  env.obs_map = json_matrix(j.at("obs_map"), n_states);
  env.offset = json_vector(j.at("offset"));
  env.initial_factor = json_vector(j.at("initial_factor"));
  env.drift_step = j.at("drift_step").get<double>();
  env.factor_box = j.at("factor_box").get<double>();
  env.distractor_scale = j.at("distractor_scale").get<double>();
  if (env.obs_map.cols() != n_states || env.offset.size() != env.obs_map.rows())
    throw IoError("environment map shape mismatch");
  return env;
}

}  // namespace

void save_family_json(const GbmdpFamily& f, const std::string& path) {
  json j;
  j["format"] = "pasf-family";
  j["version"] = 1;
  j["kind"] = f.spec.states.kind == StateKind::Grid ? "grid" : "chain";
  j["width"] = f.spec.states.width;
  j["height"] = f.spec.states.height;
  j["slip"] = f.spec.slip;
  j["start_states"] = f.spec.start_states;
  j["goals"] = f.spec.goals;
  j["gamma"] = f.spec.gamma;
  j["obs_dim"] = f.obs_dim;
  j["margin"] = f.margin;
  j["train"] = json::array();
  for (const auto& env : f.train) j["train"].push_back(env_json(env));
  j["test"] = json::array();
  for (const auto& env : f.test) j["test"].push_back(env_json(env));
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(1) << '\n';
  if (!out) throw IoError("cannot write " + path);
}

GbmdpFamily load_family_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  json j;
  try {
    j = json::parse(in);
    if (j.at("format") != "pasf-family") throw IoError(path + " is not a family file");
    if (j.at("version").get<int>() != 1) throw IoError(path + ": unsupported family version");
    StateSpec states;
    states.kind = j.at("kind") == "grid" ? StateKind::Grid : StateKind::Chain;
    states.width = j.at("width").get<int>();
    states.height = j.at("height").get<int>();
    GbmdpFamily f;
    f.spec = make_spec(states, j.at("slip").get<double>(),
                       j.at("start_states").get<std::vector<int>>(), j.at("gamma").get<double>());
    f.spec.goals = j.at("goals").get<std::vector<int>>();
    f.obs_dim = j.at("obs_dim").get<int>();
    f.margin = j.at("margin").get<double>();
    for (const auto& e : j.at("train")) f.train.push_back(json_env(e, states.num_states()));
    for (const auto& e : j.at("test")) f.test.push_back(json_env(e, states.num_states()));
    return f;
  } catch (const json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace pasf::gbmdp
