// pasf: train, ablate, evaluate and inspect agents; run the theory checks.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pasf/errors.hpp"
#include "pasf/experiment.hpp"
#include "pasf/theory_suite.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kCheckFailure = 2;
constexpr int kIo = 3;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw pasf::IoError("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int cmd_train(const std::string& config_path, const std::string& out, bool resume, bool quiet) {
  const auto config = pasf::exp::load_config(config_path);
  pasf::exp::RunOptions opt;
  opt.out_dir = out;
  opt.resume = resume;
  opt.log = quiet ? nullptr : &std::cerr;
  const auto res = pasf::exp::run_training(config, opt);
  std::cout << "wrote " << res.records.size() << " epoch records to " << res.out_dir << "\n";
  return kOk;
}

int cmd_ablate(const std::string& config_path, const std::string& out, int workers,
               const std::vector<std::string>& variants, bool quiet) {
  const auto config = pasf::exp::load_config(config_path);
  const std::string root = out.empty() ? pasf::exp::output_root(config) : out;
  const auto summary =
      pasf::exp::run_ablation(config, root, workers, quiet ? nullptr : &std::cerr, variants);
  std::cout << pasf::exp::ablation_table(summary);
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& config_path) {
  const auto config = pasf::exp::load_config(config_path);
  const auto ckpt = pasf::exp::load_checkpoint(ckpt_path);
  const auto rec = pasf::exp::evaluate_checkpoint(ckpt, config, config.run.seed);
  std::cout << nlohmann::ordered_json::parse(pasf::exp::metrics_line(rec)).dump(2) << "\n";
  return kOk;
}

int cmd_theory(const std::string& suite_path, const std::string& report_path, double bound_scale,
               bool quiet) {
  pasf::theory::SuiteConfig config;
  if (!suite_path.empty()) config = pasf::theory::parse_suite_config(read_file(suite_path));
  if (bound_scale >= 0.0) config.bound_scale = bound_scale;
  const auto report = pasf::theory::run_theory_suite(config);
  const std::string text = pasf::theory::report_json(report);
  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::binary);
    if (!out) throw pasf::IoError("cannot write " + report_path);
    out << text << "\n";
  } else if (!quiet) {
    std::cout << text << "\n";
  }
  for (const auto& g : report.groups)
    std::cerr << g.group << ": " << g.checks - g.failures << "/" << g.checks
              << " hold, min slack " << g.min_slack << "\n";
  std::cerr << (report.all_hold ? "all checks hold" : "CHECK FAILURE") << " (" << report.seconds
            << " s)\n";
  return report.all_hold ? kOk : kCheckFailure;
}

int cmd_dump(const std::string& ckpt_path, const std::string& family_path, const std::string& out) {
  const auto ckpt = pasf::exp::load_checkpoint(ckpt_path);
  pasf::gbmdp::GbmdpFamily family = ckpt.family;
  if (!family_path.empty()) {
    family = pasf::gbmdp::load_family_json(family_path);
    if (pasf::gbmdp::fingerprint(family) != pasf::gbmdp::fingerprint(ckpt.family))
      throw pasf::ConfigError("family " + family_path + " does not match the checkpoint");
  }
  const auto dump = pasf::exp::dump_latents(pasf::vae::embedder(ckpt.trainer.vae()), family);
  const std::string path =
      out.empty() ? (std::filesystem::path(ckpt_path).parent_path() / "latents.csv").string() : out;
  pasf::exp::write_latent_csv(dump, path);
  std::cout << "wrote " << dump.latents.rows() << " rows to " << path << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pasf: goal-conditioned RL with aligned latent representations"};
  app.require_subcommand(1);

  std::string config_path, out, ckpt_path, suite_path, report_path, family_path;
  std::vector<std::string> variants;
  bool resume = false, quiet = false;
  int workers = 1;
  double bound_scale = -1.0;

  auto* train = app.add_subcommand("train", "Train one agent from a config file");
  train->add_option("config", config_path, "Experiment config (JSON)")->required();
  train->add_option("--out", out, "Output directory (overrides run.output_dir and " +
                                      std::string(pasf::exp::kOutputRootEnv) + ")");
  train->add_flag("--resume", resume, "Continue from the latest checkpoint in the output directory");
  train->add_flag("--quiet", quiet, "No per-epoch progress");

  auto* ablate = app.add_subcommand("ablate", "Run full, no_D, no_MD and no_AS for every seed");
  ablate->add_option("config", config_path, "Experiment config (JSON)")->required();
  ablate->add_option("--out", out, "Output root");
  ablate->add_option("--parallel-seeds", workers, "Runs in flight at once")->check(CLI::PositiveNumber);
  ablate->add_option("--variants", variants, "Subset of full, no_D, no_MD, no_AS");
  ablate->add_flag("--quiet", quiet, "No per-run progress");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
  eval->add_option("config", config_path, "Config providing evaluation settings")->required();

  auto* theory = app.add_subcommand("theory-check", "Exact checks of the generalization bounds");
  theory->add_option("suite", suite_path, "Suite config (JSON); defaults when omitted");
  theory->add_option("--report", report_path, "Write the JSON report here instead of stdout");
  theory->add_option("--bound-scale", bound_scale,
                     "Multiply every bound by this factor (values < 1 are a negative control)");
  theory->add_flag("--quiet", quiet, "Do not print the report");

  auto* dump = app.add_subcommand("dump-latents", "Write per-(env, state) latents and a PCA projection");
  dump->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
  dump->add_option("--family", family_path, "Family JSON that must match the checkpoint");
  dump->add_option("--out", out, "CSV path (default: latents.csv next to the checkpoint)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*train) return cmd_train(config_path, out, resume, quiet);
    if (*ablate) return cmd_ablate(config_path, out, workers, variants, quiet);
    if (*eval) return cmd_eval(ckpt_path, config_path);
    if (*theory) return cmd_theory(suite_path, report_path, bound_scale, quiet);
    if (*dump) return cmd_dump(ckpt_path, family_path, out);
  } catch (const pasf::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return kValidation;
}
