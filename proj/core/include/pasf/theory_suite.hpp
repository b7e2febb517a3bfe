#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pasf::theory {

struct SuiteConfig {
  std::uint64_t seed = 0;
  int lemma1_instances = 100;
  int lemma3_instances = 100;
  int lemma4_instances = 50;
  int prop1_families = 50;
  int prop1_max_class = 16;
  bool prop2 = true;
  int mmd_batches = 1000;
  int mmd_batch_size = 16;
  // Multiplies every right-hand side. Values below 1 are a negative control.
  double bound_scale = 1.0;
};

// Parses a JSON object; unknown keys throw ConfigError. Missing keys keep the
// defaults above.
SuiteConfig parse_suite_config(const std::string& json_text);
std::string suite_config_json(const SuiteConfig& config);

struct CheckRecord {
  std::string group;  // lemma1, lemma3, lemma4, prop1, prop2_s1, prop2_s2, mmd_chain
  int instance = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;
  bool holds = true;
  std::string note;
};

struct GroupSummary {
  std::string group;
  int checks = 0;
  int failures = 0;
  double min_slack = 0.0;
};

struct SuiteReport {
  SuiteConfig config;
  std::vector<CheckRecord> checks;
  std::vector<GroupSummary> groups;
  bool all_hold = true;
  double seconds = 0.0;
};

SuiteReport run_theory_suite(const SuiteConfig& config);

// Individual sections, each appending to checks.
void run_lemma1_sweep(const SuiteConfig& config, std::vector<CheckRecord>& checks);
void run_lemma3_sweep(const SuiteConfig& config, std::vector<CheckRecord>& checks);
void run_lemma4_sweep(const SuiteConfig& config, std::vector<CheckRecord>& checks);
void run_prop1_sweep(const SuiteConfig& config, std::vector<CheckRecord>& checks);
void run_prop2_cases(const SuiteConfig& config, std::vector<CheckRecord>& checks);

struct MmdChainResult {
  int batches = 0;
  int batch_size = 0;
  double mean_mmd = 0.0;
  double mean_paired = 0.0;  // mean over batches of (1/B) sum_b ||psi(z^e_b) - psi(z^e'_b)||^2
  double standard_error = 0.0;  // of the per-batch difference mmd - paired / B
  double lower = 0.0;           // mean_paired / B - 3 SE
  bool holds = false;
};

// Monte Carlo over aligned batches from a small GBMDP family encoded by a
// freshly initialized VAE.
MmdChainResult run_mmd_chain(std::uint64_t seed, int batches, int batch_size,
                             double bound_scale = 1.0);

std::string report_json(const SuiteReport& report);
std::vector<GroupSummary> summarize(const std::vector<CheckRecord>& checks);

}  // namespace pasf::theory
