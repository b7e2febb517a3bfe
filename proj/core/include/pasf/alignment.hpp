#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pasf/binary_io.hpp"
#include "pasf/gbmdp.hpp"
#include "pasf/rng.hpp"

namespace pasf::align {

// One action sequence replayed in every training environment.
struct AlignedRecord {
  std::uint64_t id = 0;  // assigned by AlignedBuffer::push
  std::vector<int> actions;
  std::vector<int> envs;  // training env indices, one slot per env
  std::vector<std::vector<Eigen::VectorXd>> observations;  // [slot][t], t = 0..T
  // Hidden states per slot and step. Diagnostics only; never read by learners.
  std::vector<std::vector<int>> oracle_states;

  int horizon() const { return static_cast<int>(actions.size()); }
};

enum class ActionSource { Random, Policy };

// Maps the current observation and step index to an action. Used when the
// action sequence comes from a rollout of the current policy.
using RolloutPolicy = std::function<int(const Eigen::VectorXd& obs, int t, Rng& rng)>;

enum class InitialState {
  Auto,         // shared when the family has zero slip, independent otherwise
  Shared,       // one start-state draw reused by every env
  Independent,  // each env draws its own start state
};

struct CollectOptions {
  int horizon = 50;
  ActionSource source = ActionSource::Policy;
  InitialState initial_state = InitialState::Auto;
};

AlignedRecord collect_aligned(const gbmdp::GbmdpFamily& family, const CollectOptions& options,
                              const RolloutPolicy& policy, Rng& rng);

struct AlignedBatch {
  std::vector<Eigen::MatrixXd> per_env;  // per slot: obs_dim x B, column b shares (record, t)
  std::vector<std::uint64_t> record_ids;
  std::vector<int> steps;
};

class AlignedBuffer {
 public:
  explicit AlignedBuffer(std::size_t capacity = 1000);

  void push(AlignedRecord record);
  std::size_t size() const { return records_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t inserted() const { return counter_; }
  const std::deque<AlignedRecord>& records() const { return records_; }

  // B independent uniform draws over (record, t) pairs.
  AlignedBatch sample(std::size_t batch_size, Rng& rng) const;

  void write(io::BinaryWriter& w) const;
  static AlignedBuffer read(io::BinaryReader& r);
  void dump_json(const std::string& path) const;

 private:
  std::size_t capacity_;
  std::uint64_t counter_ = 0;
  std::size_t total_tuples_ = 0;
  std::deque<AlignedRecord> records_;
};

}  // namespace pasf::align
