#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pasf/binary_io.hpp"
#include "pasf/rng.hpp"

namespace pasf::gbmdp {

enum class StateKind { Grid, Chain };

struct StateSpec {
  StateKind kind = StateKind::Grid;
  int width = 5;
  int height = 5;  // always 1 for chains

  int num_states() const { return width * height; }
  int index(int x, int y) const { return y * width + x; }
  // Grid coordinates at unit spacing; chains use (s, 0).
  Eigen::Vector2d embedding(int s) const;
};

// Grid actions: up, down, left, right, stay. Chain actions: left, right, stay.
namespace grid_action {
inline constexpr int kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4;
}
namespace chain_action {
inline constexpr int kLeft = 0, kRight = 1, kStay = 2;
}

struct GbmdpSpec {
  StateSpec states;
  int num_actions = 5;
  std::vector<int> next_state;  // [s * num_actions + a], walls clamp to the current cell
  double slip = 0.0;            // probability of staying put instead of moving
  std::vector<int> start_states;  // uniform over this set
  std::vector<int> goals;
  double gamma = 0.9;

  int num_states() const { return states.num_states(); }
  int deterministic_next(int s, int a) const { return next_state[s * num_actions + a]; }
  Eigen::VectorXd transition_row(int s, int a) const;
};

GbmdpSpec make_spec(const StateSpec& states, double slip, std::vector<int> start_states,
                    double gamma);

enum class FactorMode { Static, Drifting };

struct EnvInstance {
  int index = 0;
  FactorMode mode = FactorMode::Static;
  Eigen::MatrixXd obs_map;         // A_e: state block rows x |S|
  Eigen::VectorXd offset;          // c_e
  Eigen::VectorXd initial_factor;  // the fixed factor in static mode
  double drift_step = 0.0;
  double factor_box = 1.0;         // factors live in [-box, box]^f
  double distractor_scale = 1.0;

  int factor_dim() const { return static_cast<int>(initial_factor.size()); }
  int state_block_dim() const { return static_cast<int>(obs_map.rows()); }
  int obs_dim() const { return state_block_dim() + factor_dim(); }
};

struct HiddenEnvState {
  int s = 0;
  Eigen::VectorXd b;
};

struct GbmdpFamily {
  GbmdpSpec spec;
  std::vector<EnvInstance> train;
  std::vector<EnvInstance> test;
  int obs_dim = 0;
  double margin = 0.0;  // min max-norm separation of state blocks across distinct states

  int num_train() const { return static_cast<int>(train.size()); }
  int num_test() const { return static_cast<int>(test.size()); }
  // Environment by global index: training envs first, then test envs.
  const EnvInstance& env(int index) const;
};

struct FamilyConfig {
  StateKind kind = StateKind::Grid;
  int width = 5;
  int height = 5;
  int num_train = 3;
  int num_test = 2;
  int factor_dim = 1;
  int obs_dim = 0;  // 0 selects |S| + factor_dim
  double slip = 0.0;
  std::vector<int> start_states;  // empty selects every state
  double gamma = 0.9;
  int nuisance_rank = 1;
  double map_perturbation = 0.3;
  double offset_scale = 1.0;
  double distractor_scale = 1.0;
  double factor_box = 1.0;
  double drift_step = 0.1;
  FactorMode test_mode = FactorMode::Drifting;
  double min_margin = 0.05;
};

void validate(const FamilyConfig& config);

GbmdpFamily make_family(const FamilyConfig& config, std::uint64_t seed);

Eigen::VectorXd observe(const EnvInstance& env, int s, const Eigen::VectorXd& b);

struct EnvStep {
  Eigen::VectorXd obs;
  HiddenEnvState hidden;
  bool slipped = false;
};

Eigen::VectorXd sample_factor(const EnvInstance& env, Rng& rng);
Eigen::VectorXd advance_factor(const EnvInstance& env, const Eigen::VectorXd& b, Rng& rng);

EnvStep reset(const GbmdpSpec& spec, const EnvInstance& env, Rng& rng);
EnvStep reset_to(const EnvInstance& env, int s, Rng& rng);
EnvStep step(const GbmdpSpec& spec, const EnvInstance& env, const HiddenEnvState& hidden,
             int action, Rng& rng);

struct DisjointnessReport {
  bool ok = true;
  double min_separation = 0.0;
  int env_a = -1, state_a = -1, env_b = -1, state_b = -1;
};

DisjointnessReport verify_disjointness(const GbmdpFamily& family, int n_samples, double tol,
                                       Rng& rng);

double oracle_distance(const GbmdpSpec& spec, int s, int g);

// Nearest mapped one-hot: the state whose noiseless state block under env is
// closest to the first rows of obs. Evaluation only.
int decode_state(const EnvInstance& env, const Eigen::VectorXd& obs);

void write_family(io::BinaryWriter& w, const GbmdpFamily& family);
GbmdpFamily read_family(io::BinaryReader& r);
std::uint64_t fingerprint(const GbmdpFamily& family);

void save_family_json(const GbmdpFamily& family, const std::string& path);
GbmdpFamily load_family_json(const std::string& path);

}  // namespace pasf::gbmdp
