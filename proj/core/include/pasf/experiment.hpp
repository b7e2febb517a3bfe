#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pasf/gbmdp.hpp"
#include "pasf/trainer.hpp"
#include "pasf/vae.hpp"

namespace pasf::exp {

inline constexpr const char* kOutputRootEnv = "PASF_OUTPUT_ROOT";
inline constexpr int kMetricsSchemaVersion = 1;

struct RunSection {
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> family_seed;  // defaults to the run seed
  std::string output_dir = "runs/default";
  int checkpoint_every = 10;  // 0 keeps only the final checkpoint
  std::vector<std::uint64_t> seeds;  // ablation seeds; empty uses {seed}
};

struct ExperimentConfig {
  gbmdp::FamilyConfig family;
  agent::PasfConfig pasf;
  RunSection run;
};

// Strict JSON parsing: unknown keys, wrong types and out-of-range values throw
// ConfigError naming the field. run.seed and family.kind are required.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
void validate(const ExperimentConfig& config);

// Canonical serialization listing every field.
std::string config_to_json(const ExperimentConfig& config);
// FNV-1a over the canonical form with run.output_dir cleared.
std::uint64_t config_hash(const ExperimentConfig& config);

// The output directory after applying the environment override.
std::string output_root(const ExperimentConfig& config);

std::uint64_t family_seed_for(const ExperimentConfig& config, std::uint64_t run_seed);
gbmdp::GbmdpFamily build_family(const ExperimentConfig& config, std::uint64_t run_seed);

// One JSON object, no trailing newline.
std::string metrics_line(const agent::EpochRecord& record);
agent::EpochRecord parse_metrics_line(const std::string& line);
// Complete lines only; a truncated final line is dropped.
std::vector<agent::EpochRecord> read_metrics(const std::string& path);

void save_checkpoint(const std::string& path, const ExperimentConfig& config,
                     const agent::Trainer& trainer);

struct LoadedCheckpoint {
  ExperimentConfig config;
  std::uint64_t hash = 0;
  gbmdp::GbmdpFamily family;
  agent::Trainer trainer;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

struct RunOptions {
  std::string out_dir;  // empty uses output_root(config)
  std::optional<std::uint64_t> seed;  // overrides run.seed
  bool resume = false;
  int stop_after_epoch = -1;  // stop once this many epochs exist; < 0 runs to the end
  std::ostream* log = nullptr;
};

struct RunResult {
  std::string out_dir;
  std::vector<agent::EpochRecord> records;  // every record in metrics.jsonl
  int resumed_at = -1;
  bool finished = false;
};

// Writes config.json, family.json, metrics.jsonl, timing.jsonl,
// checkpoints/ and, once finished, summary.json and summary.txt.
RunResult run_training(const ExperimentConfig& config, const RunOptions& options);

struct AblationVariant {
  std::string name;
  agent::AblationFlags flags;
};
// full, no_D, no_MD, no_AS.
std::vector<AblationVariant> ablation_variants();

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  agent::EpochRecord final_record;
  double max_mmd = 0.0;  // largest MMD loss logged over the run
};

struct VariantSummary {
  std::string variant;
  int runs = 0;
  double train_success = 0.0;  // medians over seeds of the final record
  double test_success = 0.0;
  double ler_train = 0.0;
  double ler_test = 0.0;
  double max_mmd = 0.0;
};

struct AblationSummary {
  std::vector<AblationRun> runs;
  std::vector<VariantSummary> variants;
};

AblationSummary summarize_ablation(const std::vector<AblationRun>& runs);

// Runs every variant for every seed under out_root/<variant>/seed_<n>, with
// up to `workers` runs in flight. Writes ablation_summary.{json,txt}. A
// non-empty `only` restricts the variants by name.
AblationSummary run_ablation(const ExperimentConfig& config, const std::string& out_root,
                             int workers, std::ostream* log = nullptr,
                             const std::vector<std::string>& only = {});

std::string ablation_table(const AblationSummary& summary);
std::string ablation_json(const AblationSummary& summary);

double median(std::vector<double> values);

struct LatentDump {
  std::vector<int> env;
  std::vector<int> state;
  Eigen::MatrixXd latents;     // rows follow (env, state)
  Eigen::MatrixXd projection;  // rows x 2
  Eigen::VectorXd explained;   // leading covariance eigenvalues
};

// Latent means for every (env, state) at each env's initial factor, with a
// PCA projection from the exact eigendecomposition of the latent covariance.
LatentDump dump_latents(const vae::Embedder& phi, const gbmdp::GbmdpFamily& family);
Eigen::MatrixXd pca_project(const Eigen::MatrixXd& rows, Eigen::VectorXd* eigenvalues = nullptr);
void write_latent_csv(const LatentDump& dump, const std::string& path);

// Evaluates a checkpoint with the evaluation settings of `config`.
agent::EpochRecord evaluate_checkpoint(const LoadedCheckpoint& ckpt,
                                       const ExperimentConfig& config, std::uint64_t seed);

}  // namespace pasf::exp
