#include "pasf/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "pasf/binary_io.hpp"
#include "pasf/errors.hpp"

namespace pasf::exp {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kFamilySeedStream = 0x66616d696c79ULL;

// Tracks which keys of one object were consumed so leftovers can be reported.
class Section {
 public:
  Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ && !j_->is_object()) throw ConfigError(path_ + " must be an object");
  }

  bool has(const char* key) const { return j_ && j_->contains(key); }

  template <class T>
  void get(const char* key, T& out) {
    if (!has(key)) return;
    used_.push_back(key);
    try {
      out = j_->at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name(key) + " has the wrong type");
    }
  }

  template <class T>
  void require(const char* key, T& out) {
    if (!has(key)) throw ConfigError("missing required field " + name(key));
    get(key, out);
  }

  Section child(const char* key) {
    if (!has(key)) return Section(nullptr, name(key));
    used_.push_back(key);
    return Section(&j_->at(key), name(key));
  }

  void finish() const {
    if (!j_) return;
    for (const auto& item : j_->items())
      if (std::find(used_.begin(), used_.end(), item.key()) == used_.end())
        throw ConfigError("unknown key " + name(item.key()));
  }

  std::string name(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json* j_;
  std::string path_;
  std::vector<std::string> used_;
};

template <class E>
E enum_from(const std::string& field, const std::string& value,
            std::initializer_list<std::pair<const char*, E>> table) {
  for (const auto& [name, e] : table)
    if (value == name) return e;
  std::string options;
  for (const auto& [name, e] : table) options += std::string(options.empty() ? "" : ", ") + name;
  throw ConfigError(field + " must be one of: " + options + " (got '" + value + "')");
}

const char* kind_name(gbmdp::StateKind k) { return k == gbmdp::StateKind::Grid ? "grid" : "chain"; }
const char* mode_name(gbmdp::FactorMode m) {
  return m == gbmdp::FactorMode::Static ? "static" : "drifting";
}
const char* source_name(align::ActionSource s) {
  return s == align::ActionSource::Random ? "random" : "policy";
}
const char* initial_name(align::InitialState s) {
  switch (s) {
    case align::InitialState::Shared: return "shared";
    case align::InitialState::Independent: return "independent";
    default: return "auto";
  }
}

json to_json(const ExperimentConfig& c) {
  const auto& f = c.family;
  const auto& a = c.pasf.agent;
  const auto& v = c.pasf.vae;
  const auto& al = c.pasf.alignment;
  const auto& ab = c.pasf.ablation;
  json run = {{"seed", c.run.seed},
              {"epochs", c.pasf.epochs},
              {"output_dir", c.run.output_dir},
              {"checkpoint_every", c.run.checkpoint_every},
              {"seeds", c.run.seeds}};
  if (c.run.family_seed) run["family_seed"] = *c.run.family_seed;
  return {
      {"run", run},
      {"family",
       {{"kind", kind_name(f.kind)},
        {"width", f.width},
        {"height", f.height},
        {"num_train", f.num_train},
        {"num_test", f.num_test},
        {"factor_dim", f.factor_dim},
        {"obs_dim", f.obs_dim},
        {"slip", f.slip},
        {"start_states", f.start_states},
        {"gamma", f.gamma},
        {"nuisance_rank", f.nuisance_rank},
        {"map_perturbation", f.map_perturbation},
        {"offset_scale", f.offset_scale},
        {"distractor_scale", f.distractor_scale},
        {"factor_box", f.factor_box},
        {"drift_step", f.drift_step},
        {"test_mode", mode_name(f.test_mode)},
        {"min_margin", f.min_margin}}},
      {"agent",
       {{"gamma", a.gamma},
        {"lr", a.lr},
        {"epsilon_start", a.epsilon_start},
        {"epsilon_end", a.epsilon_end},
        {"epsilon_decay_fraction", a.epsilon_decay_fraction},
        {"relabels_per_step", a.relabels_per_step},
        {"goal_replace_prob", a.goal_replace_prob},
        {"alpha_skew", a.alpha_skew},
        {"replay_capacity", a.replay_capacity},
        {"steps_per_epoch", a.steps_per_epoch},
        {"horizon", a.horizon},
        {"q_updates_per_epoch", a.q_updates_per_epoch},
        {"q_batch_size", a.q_batch_size},
        {"q_hidden", a.q_hidden},
        {"target_sync", a.target_sync},
        {"skew_pool_size", a.skew_pool_size},
        {"eval_episodes", a.eval_episodes},
        {"eval_every", a.eval_every},
        {"eval_horizon", a.eval_horizon},
        {"ler_states", a.ler_states}}},
      {"vae",
       {{"latent_dim", v.latent_dim},
        {"hidden", v.hidden},
        {"beta", v.beta},
        {"lr", v.lr},
        {"steps_per_epoch", v.steps_per_epoch},
        {"pretrain_steps", v.pretrain_steps},
        {"replay_batch", v.replay_batch},
        {"aligned_batch", v.aligned_batch},
        {"alpha_mmd", v.alpha_mmd},
        {"alpha_diff", v.alpha_diff},
        {"psi_dim", v.psi_dim},
        {"gamma_psi", v.gamma_psi}}},
      {"alignment",
       {{"fraction", al.fraction},
        {"horizon", al.horizon},
        {"source", source_name(al.source)},
        {"initial_state", initial_name(al.initial_state)},
        {"buffer_capacity", al.buffer_capacity}}},
      {"ablation",
       {{"no_mmd", ab.no_mmd},
        {"no_diff", ab.no_diff},
        {"no_aligned_sampling", ab.no_aligned_sampling}}},
  };
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

// Complete lines of a line-delimited log. A last line without its newline is
// treated as torn and dropped.
std::vector<std::string> complete_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (true) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;
    if (nl > pos) lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

json env_evals(const std::vector<agent::EnvEval>& v) {
  json arr = json::array();
  for (const auto& e : v)
    arr.push_back({{"env", e.env}, {"success", e.success}, {"distance", e.distance}});
  return arr;
}

std::vector<agent::EnvEval> env_evals_from(const json& arr) {
  std::vector<agent::EnvEval> out;
  for (const auto& e : arr)
    out.push_back({e.at("env").get<int>(), e.at("success").get<double>(),
                   e.at("distance").get<double>()});
  return out;
}

std::string checkpoint_name(int epoch) {
  std::ostringstream os;
  os << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".ckpt";
  return os.str();
}

void log_line(std::ostream* log, const std::string& line) {
  if (log) *log << line << '\n' << std::flush;
}

std::string fixed(double v, int digits = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Section root(&j, "");

  Section run = root.child("run");
  if (!run.has("seed")) throw ConfigError("missing required field run.seed");
  run.require("seed", c.run.seed);
  run.get("epochs", c.pasf.epochs);
  run.get("output_dir", c.run.output_dir);
  run.get("checkpoint_every", c.run.checkpoint_every);
  run.get("seeds", c.run.seeds);
  if (run.has("family_seed")) {
    std::uint64_t fs_seed = 0;
    run.get("family_seed", fs_seed);
    c.run.family_seed = fs_seed;
  }
  run.finish();

  Section fam = root.child("family");
  auto& f = c.family;
  std::string kind;
  fam.require("kind", kind);
  f.kind = enum_from<gbmdp::StateKind>("family.kind", kind,
                                       {{"grid", gbmdp::StateKind::Grid},
                                        {"chain", gbmdp::StateKind::Chain}});
  if (f.kind == gbmdp::StateKind::Chain) f.height = 1;
  fam.get("width", f.width);
  fam.get("height", f.height);
  fam.get("num_train", f.num_train);
  fam.get("num_test", f.num_test);
  fam.get("factor_dim", f.factor_dim);
  fam.get("obs_dim", f.obs_dim);
  fam.get("slip", f.slip);
  fam.get("start_states", f.start_states);
  fam.get("gamma", f.gamma);
  fam.get("nuisance_rank", f.nuisance_rank);
  fam.get("map_perturbation", f.map_perturbation);
  fam.get("offset_scale", f.offset_scale);
  fam.get("distractor_scale", f.distractor_scale);
  fam.get("factor_box", f.factor_box);
  fam.get("drift_step", f.drift_step);
  std::string mode = mode_name(f.test_mode);
  fam.get("test_mode", mode);
  f.test_mode = enum_from<gbmdp::FactorMode>("family.test_mode", mode,
                                             {{"static", gbmdp::FactorMode::Static},
                                              {"drifting", gbmdp::FactorMode::Drifting}});
  fam.get("min_margin", f.min_margin);
  fam.finish();

  Section ag = root.child("agent");
  auto& a = c.pasf.agent;
  ag.get("gamma", a.gamma);
  ag.get("lr", a.lr);
  ag.get("epsilon_start", a.epsilon_start);
  ag.get("epsilon_end", a.epsilon_end);
  ag.get("epsilon_decay_fraction", a.epsilon_decay_fraction);
  ag.get("relabels_per_step", a.relabels_per_step);
  ag.get("goal_replace_prob", a.goal_replace_prob);
  ag.get("alpha_skew", a.alpha_skew);
  ag.get("replay_capacity", a.replay_capacity);
  ag.get("steps_per_epoch", a.steps_per_epoch);
  ag.get("horizon", a.horizon);
  ag.get("q_updates_per_epoch", a.q_updates_per_epoch);
  ag.get("q_batch_size", a.q_batch_size);
  ag.get("q_hidden", a.q_hidden);
  ag.get("target_sync", a.target_sync);
  ag.get("skew_pool_size", a.skew_pool_size);
  ag.get("eval_episodes", a.eval_episodes);
  ag.get("eval_every", a.eval_every);
  ag.get("eval_horizon", a.eval_horizon);
  ag.get("ler_states", a.ler_states);
  ag.finish();

  Section va = root.child("vae");
  auto& v = c.pasf.vae;
  va.get("latent_dim", v.latent_dim);
  va.get("hidden", v.hidden);
  va.get("beta", v.beta);
  va.get("lr", v.lr);
  va.get("steps_per_epoch", v.steps_per_epoch);
  va.get("pretrain_steps", v.pretrain_steps);
  va.get("replay_batch", v.replay_batch);
  va.get("aligned_batch", v.aligned_batch);
  va.get("alpha_mmd", v.alpha_mmd);
  va.get("alpha_diff", v.alpha_diff);
  va.get("psi_dim", v.psi_dim);
  va.get("gamma_psi", v.gamma_psi);
  va.finish();

  Section al = root.child("alignment");
  auto& alc = c.pasf.alignment;
  al.get("fraction", alc.fraction);
  al.get("horizon", alc.horizon);
  std::string source = source_name(alc.source);
  al.get("source", source);
  alc.source = enum_from<align::ActionSource>("alignment.source", source,
                                              {{"random", align::ActionSource::Random},
                                               {"policy", align::ActionSource::Policy}});
  std::string initial = initial_name(alc.initial_state);
  al.get("initial_state", initial);
  alc.initial_state = enum_from<align::InitialState>(
      "alignment.initial_state", initial,
      {{"auto", align::InitialState::Auto},
       {"shared", align::InitialState::Shared},
       {"independent", align::InitialState::Independent}});
  al.get("buffer_capacity", alc.buffer_capacity);
  al.finish();

  Section ab = root.child("ablation");
  ab.get("no_mmd", c.pasf.ablation.no_mmd);
  ab.get("no_diff", c.pasf.ablation.no_diff);
  ab.get("no_aligned_sampling", c.pasf.ablation.no_aligned_sampling);
  ab.finish();

  root.finish();
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void validate(const ExperimentConfig& config) {
  gbmdp::validate(config.family);
  agent::validate(config.pasf);
  if (config.run.checkpoint_every < 0) throw ConfigError("run.checkpoint_every must be >= 0");
  if (config.run.output_dir.empty()) throw ConfigError("run.output_dir must not be empty");
}

std::string config_to_json(const ExperimentConfig& config) { return to_json(config).dump(2); }

std::uint64_t config_hash(const ExperimentConfig& config) {
  json j = to_json(config);
  j["run"].erase("output_dir");
  return fnv1a(j.dump());
}

std::string output_root(const ExperimentConfig& config) {
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return config.run.output_dir;
}

std::uint64_t family_seed_for(const ExperimentConfig& config, std::uint64_t run_seed) {
  return config.run.family_seed ? *config.run.family_seed : derive_seed(run_seed, kFamilySeedStream);
}

gbmdp::GbmdpFamily build_family(const ExperimentConfig& config, std::uint64_t run_seed) {
  return gbmdp::make_family(config.family, family_seed_for(config, run_seed));
}

std::string metrics_line(const agent::EpochRecord& r) {
  json j = {{"schema", "pasf-metrics"},
            {"version", kMetricsSchemaVersion},
            {"epoch", r.epoch},
            {"env_steps", r.env_steps},
            {"epsilon", r.epsilon},
            {"aligned_records", r.aligned_records},
            {"evaluated", r.evaluated},
            {"train_eval", env_evals(r.train_eval)},
            {"test_eval", env_evals(r.test_eval)},
            {"train_success", r.train_success},
            {"test_success", r.test_success},
            {"train_distance", r.train_distance},
            {"test_distance", r.test_distance},
            {"ler_train", r.ler_train},
            {"ler_test", r.ler_test},
            {"ler_excluded", r.ler_excluded},
            {"eta_train", r.eta_train},
            {"psi_train", r.psi_train},
            {"eta_all", r.eta_all},
            {"psi_all", r.psi_all},
            {"alignment_sampled", r.alignment_sampled},
            {"max_local_distortion", r.max_local_distortion},
            {"recon", r.recon},
            {"kl", r.kl},
            {"mmd", r.mmd},
            {"diff", r.diff},
            {"td", r.td}};
  return j.dump();
}

agent::EpochRecord parse_metrics_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    if (j.at("schema") != "pasf-metrics") throw IoError("not a metrics record");
    if (j.at("version").get<int>() != kMetricsSchemaVersion)
      throw IoError("unsupported metrics schema version");
    agent::EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.env_steps = j.at("env_steps").get<std::int64_t>();
    r.epsilon = j.at("epsilon").get<double>();
    r.aligned_records = j.at("aligned_records").get<int>();
    r.evaluated = j.at("evaluated").get<bool>();
    r.train_eval = env_evals_from(j.at("train_eval"));
    r.test_eval = env_evals_from(j.at("test_eval"));
    r.train_success = j.at("train_success").get<double>();
    r.test_success = j.at("test_success").get<double>();
    r.train_distance = j.at("train_distance").get<double>();
    r.test_distance = j.at("test_distance").get<double>();
    r.ler_train = j.at("ler_train").get<double>();
    r.ler_test = j.at("ler_test").get<double>();
    r.ler_excluded = j.at("ler_excluded").get<int>();
    r.eta_train = j.at("eta_train").get<double>();
    r.psi_train = j.at("psi_train").get<double>();
    r.eta_all = j.at("eta_all").get<double>();
    r.psi_all = j.at("psi_all").get<double>();
    r.alignment_sampled = j.at("alignment_sampled").get<bool>();
    r.max_local_distortion = j.at("max_local_distortion").get<double>();
    r.recon = j.at("recon").get<double>();
    r.kl = j.at("kl").get<double>();
    r.mmd = j.at("mmd").get<double>();
    r.diff = j.at("diff").get<double>();
    r.td = j.at("td").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("bad metrics record: ") + e.what());
  }
}

std::vector<agent::EpochRecord> read_metrics(const std::string& path) {
  std::vector<agent::EpochRecord> out;
  for (const auto& line : complete_lines(path)) out.push_back(parse_metrics_line(line));
  return out;
}

void save_checkpoint(const std::string& path, const ExperimentConfig& config,
                     const agent::Trainer& trainer) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    io::BinaryWriter w(out);
    w.str("PASF-CKPT");
    w.u64(1);
    w.str(config_to_json(config));
    w.u64(config_hash(config));
    gbmdp::write_family(w, trainer.family());
    trainer.write_state(w);
    out.flush();
    if (!out) throw IoError("write failed for checkpoint " + tmp);
  }
  fs::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  io::BinaryReader r(in);
  r.expect("PASF-CKPT");
  if (r.u64() != 1) throw IoError("unsupported checkpoint version in " + path);
  ExperimentConfig config = parse_config(r.str());
  const std::uint64_t hash = r.u64();
  if (hash != config_hash(config)) throw IoError("checkpoint config hash mismatch in " + path);
  gbmdp::GbmdpFamily family = gbmdp::read_family(r);
  agent::Trainer trainer = agent::Trainer::read_state(config.pasf, family, r);
  return {std::move(config), hash, std::move(family), std::move(trainer)};
}

RunResult run_training(const ExperimentConfig& config_in, const RunOptions& options) {
  validate(config_in);
  ExperimentConfig config = config_in;
  if (options.seed) config.run.seed = *options.seed;
  const std::uint64_t seed = config.run.seed;

  RunResult result;
  result.out_dir = options.out_dir.empty() ? output_root(config) : options.out_dir;
  const fs::path out(result.out_dir);
  const fs::path ckpt_dir = out / "checkpoints";
  const fs::path metrics_path = out / "metrics.jsonl";
  const fs::path timing_path = out / "timing.jsonl";
  const fs::path latest = ckpt_dir / "latest.ckpt";
  std::error_code ec;
  fs::create_directories(ckpt_dir, ec);
  if (ec) throw IoError("cannot create " + ckpt_dir.string() + ": " + ec.message());

  std::optional<agent::Trainer> trainer;
  std::vector<std::string> kept;
  if (options.resume && fs::exists(latest)) {
    LoadedCheckpoint ck = load_checkpoint(latest.string());
    if (ck.hash != config_hash(config))
      throw ConfigError("checkpoint in " + result.out_dir + " was written by a different config");
    trainer.emplace(std::move(ck.trainer));
    for (const auto& line : complete_lines(metrics_path.string()))
      if (parse_metrics_line(line).epoch < trainer->epoch()) kept.push_back(line);
    if (static_cast<int>(kept.size()) != trainer->epoch())
      throw IoError("metrics log in " + result.out_dir + " is missing epochs before the checkpoint");
    std::string text;
    for (const auto& line : kept) text += line + "\n";
    write_text_atomic(metrics_path, text);
    result.resumed_at = trainer->epoch();
    log_line(options.log, "resuming at epoch " + std::to_string(trainer->epoch()));
  } else {
    gbmdp::GbmdpFamily family = build_family(config, seed);
    write_text_atomic(out / "config.json", config_to_json(config) + "\n");
    gbmdp::save_family_json(family, (out / "family.json").string());
    write_text_atomic(metrics_path, "");
    write_text_atomic(timing_path, "");
    trainer.emplace(config.pasf, std::move(family), seed);
  }

  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::app);
  std::ofstream timing(timing_path, std::ios::binary | std::ios::app);
  if (!metrics || !timing) throw IoError("cannot open logs in " + result.out_dir);

  while (!trainer->finished() &&
         (options.stop_after_epoch < 0 || trainer->epoch() < options.stop_after_epoch)) {
    const auto start = std::chrono::steady_clock::now();
    const agent::EpochRecord rec = trainer->run_epoch();
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string line = metrics_line(rec);
    metrics << line << '\n' << std::flush;
    timing << json{{"epoch", rec.epoch}, {"seconds", secs}}.dump() << '\n' << std::flush;
    if (!metrics) throw IoError("write failed for " + metrics_path.string());
    kept.push_back(line);
    if (config.run.checkpoint_every > 0 && trainer->epoch() % config.run.checkpoint_every == 0) {
      save_checkpoint((ckpt_dir / checkpoint_name(trainer->epoch())).string(), config, *trainer);
      save_checkpoint(latest.string(), config, *trainer);
    }
    std::string msg = "epoch " + std::to_string(rec.epoch);
    if (rec.evaluated)
      msg += " train " + fixed(rec.train_success) + " test " + fixed(rec.test_success) +
             " ler " + fixed(rec.ler_train) + "/" + fixed(rec.ler_test);
    msg += " mmd " + fixed(rec.mmd, 5) + " td " + fixed(rec.td, 5);
    log_line(options.log, msg);
  }
  save_checkpoint(latest.string(), config, *trainer);

  for (const auto& line : complete_lines(metrics_path.string()))
    result.records.push_back(parse_metrics_line(line));
  result.finished = trainer->finished();
  if (result.finished && !result.records.empty()) {
    const auto& last = result.records.back();
    json summary = {{"config_hash", config_hash(config)},
                    {"seed", seed},
                    {"epochs", static_cast<int>(result.records.size())},
                    {"final", json::parse(metrics_line(last))}};
    write_text_atomic(out / "summary.json", summary.dump(2) + "\n");
    std::ostringstream table;
    table << "epoch  train_success  test_success  ler_train  ler_test  eta_train  psi_train\n";
    table << std::setw(5) << last.epoch << "  " << std::setw(13) << fixed(last.train_success)
          << "  " << std::setw(12) << fixed(last.test_success) << "  " << std::setw(9)
          << fixed(last.ler_train) << "  " << std::setw(8) << fixed(last.ler_test) << "  "
          << std::setw(9) << fixed(last.eta_train) << "  " << std::setw(9)
          << fixed(last.psi_train) << "\n";
    write_text_atomic(out / "summary.txt", table.str());
  }
  return result;
}

std::vector<AblationVariant> ablation_variants() {
  return {{"full", {false, false, false}},
          {"no_D", {false, true, false}},
          {"no_MD", {true, true, false}},
          {"no_AS", {false, false, true}}};
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

AblationSummary summarize_ablation(const std::vector<AblationRun>& runs) {
  AblationSummary s;
  s.runs = runs;
  for (const auto& v : ablation_variants()) {
    VariantSummary vs;
    vs.variant = v.name;
    std::vector<double> tr, te, lt, lx, mm;
    for (const auto& r : runs) {
      if (r.variant != v.name) continue;
      ++vs.runs;
      tr.push_back(r.final_record.train_success);
      te.push_back(r.final_record.test_success);
      lt.push_back(r.final_record.ler_train);
      lx.push_back(r.final_record.ler_test);
      mm.push_back(r.max_mmd);
    }
    if (vs.runs == 0) continue;
    vs.train_success = median(tr);
    vs.test_success = median(te);
    vs.ler_train = median(lt);
    vs.ler_test = median(lx);
    vs.max_mmd = *std::max_element(mm.begin(), mm.end());
    s.variants.push_back(vs);
  }
  return s;
}

AblationSummary run_ablation(const ExperimentConfig& config, const std::string& out_root,
                             int workers, std::ostream* log,
                             const std::vector<std::string>& only) {
  validate(config);
  std::vector<std::uint64_t> seeds = config.run.seeds;
  if (seeds.empty()) seeds.push_back(config.run.seed);
  struct Job {
    AblationVariant variant;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& v : ablation_variants()) {
    if (!only.empty() && std::find(only.begin(), only.end(), v.name) == only.end()) continue;
    for (auto s : seeds) jobs.push_back({v, s});
  }
  if (jobs.empty()) throw ConfigError("no ablation variant matches the requested names");

  std::vector<AblationRun> runs(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        ExperimentConfig c = config;
        c.pasf.ablation = jobs[i].variant.flags;
        c.run.seed = jobs[i].seed;
        RunOptions opt;
        opt.out_dir =
            (fs::path(out_root) / jobs[i].variant.name / ("seed_" + std::to_string(jobs[i].seed)))
                .string();
        const RunResult res = run_training(c, opt);
        AblationRun run{jobs[i].variant.name, jobs[i].seed, {}, 0.0};
        for (const auto& rec : res.records) {
          if (rec.evaluated) run.final_record = rec;
          run.max_mmd = std::max(run.max_mmd, rec.mmd);
        }
        runs[i] = run;
        std::lock_guard lock(log_mutex);
        log_line(log, jobs[i].variant.name + " seed " + std::to_string(jobs[i].seed) +
                          ": train " + fixed(run.final_record.train_success) + " test " +
                          fixed(run.final_record.test_success) + " ler " +
                          fixed(run.final_record.ler_train) + "/" +
                          fixed(run.final_record.ler_test));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  AblationSummary summary = summarize_ablation(runs);
  write_text_atomic(fs::path(out_root) / "ablation_summary.json", ablation_json(summary) + "\n");
  write_text_atomic(fs::path(out_root) / "ablation_summary.txt", ablation_table(summary));
  return summary;
}

std::string ablation_table(const AblationSummary& summary) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "variant" << std::right << std::setw(6) << "runs"
     << std::setw(15) << "train_success" << std::setw(14) << "test_success" << std::setw(11)
     << "ler_train" << std::setw(10) << "ler_test" << std::setw(12) << "max_mmd" << "\n";
  for (const auto& v : summary.variants)
    os << std::left << std::setw(8) << v.variant << std::right << std::setw(6) << v.runs
       << std::setw(15) << fixed(v.train_success) << std::setw(14) << fixed(v.test_success)
       << std::setw(11) << fixed(v.ler_train) << std::setw(10) << fixed(v.ler_test)
       << std::setw(12) << fixed(v.max_mmd, 5) << "\n";
  return os.str();
}

std::string ablation_json(const AblationSummary& summary) {
  json variants = json::array();
  for (const auto& v : summary.variants)
    variants.push_back({{"variant", v.variant},
                        {"runs", v.runs},
                        {"train_success", v.train_success},
                        {"test_success", v.test_success},
                        {"ler_train", v.ler_train},
                        {"ler_test", v.ler_test},
                        {"max_mmd", v.max_mmd}});
  json runs = json::array();
  for (const auto& r : summary.runs)
    runs.push_back({{"variant", r.variant},
                    {"seed", r.seed},
                    {"max_mmd", r.max_mmd},
                    {"final", json::parse(metrics_line(r.final_record))}});
  return json{{"schema", "pasf-ablation"}, {"version", 1}, {"variants", variants}, {"runs", runs}}
      .dump(2);
}

Eigen::MatrixXd pca_project(const Eigen::MatrixXd& rows, Eigen::VectorXd* eigenvalues) {
  const Eigen::Index n = rows.rows(), d = rows.cols();
  Eigen::MatrixXd proj = Eigen::MatrixXd::Zero(n, 2);
  if (n == 0 || d == 0) {
    if (eigenvalues) eigenvalues->setZero(2);
    return proj;
  }
  const Eigen::MatrixXd centered = rows.rowwise() - rows.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  // Eigenvalues come back ascending.
  const Eigen::Index k = std::min<Eigen::Index>(2, d);
  Eigen::VectorXd vals = Eigen::VectorXd::Zero(2);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::Index col = d - 1 - i;
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    // Fix the sign so the largest-magnitude component is positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    proj.col(i) = centered * v;
    vals(i) = solver.eigenvalues()(col);
  }
  if (eigenvalues) *eigenvalues = vals;
  return proj;
}

LatentDump dump_latents(const vae::Embedder& phi, const gbmdp::GbmdpFamily& family) {
  const int S = family.spec.states.num_states();
  const int E = family.num_train() + family.num_test();
  LatentDump dump;
  std::vector<Eigen::VectorXd> rows;
  for (int e = 0; e < E; ++e) {
    const auto& env = family.env(e);
    Eigen::MatrixXd obs(family.obs_dim, S);
    for (int s = 0; s < S; ++s) obs.col(s) = gbmdp::observe(env, s, env.initial_factor);
    const Eigen::MatrixXd z = phi(obs);
    for (int s = 0; s < S; ++s) {
      dump.env.push_back(e);
      dump.state.push_back(s);
      rows.push_back(z.col(s));
    }
  }
  const Eigen::Index d = rows.empty() ? 0 : rows.front().size();
  dump.latents.resize(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    dump.latents.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  dump.projection = pca_project(dump.latents, &dump.explained);
  return dump;
}

void write_latent_csv(const LatentDump& dump, const std::string& path) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "env,state";
  for (Eigen::Index k = 0; k < dump.latents.cols(); ++k) os << ",z" << k;
  os << ",pc1,pc2\n";
  for (Eigen::Index i = 0; i < dump.latents.rows(); ++i) {
    os << dump.env[static_cast<std::size_t>(i)] << ',' << dump.state[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < dump.latents.cols(); ++k) os << ',' << dump.latents(i, k);
    os << ',' << dump.projection(i, 0) << ',' << dump.projection(i, 1) << '\n';
  }
  write_text_atomic(path, os.str());
}

agent::EpochRecord evaluate_checkpoint(const LoadedCheckpoint& ckpt,
                                       const ExperimentConfig& config, std::uint64_t seed) {
  if (gbmdp::fingerprint(ckpt.family) != gbmdp::fingerprint(ckpt.trainer.family()))
    throw ConfigError("checkpoint family does not match its trainer state");
  agent::EpochRecord rec;
  rec.epoch = ckpt.trainer.epoch();
  Rng rng(derive_seed(seed, 0x6576616cULL));
  agent::evaluate_agent(ckpt.trainer.q(), ckpt.trainer.vae(), ckpt.family, config.pasf.agent, rng,
                        rec);
  return rec;
}

}  // namespace pasf::exp
