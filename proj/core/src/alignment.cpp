#include "pasf/alignment.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "pasf/errors.hpp"

namespace pasf::align {

AlignedRecord collect_aligned(const gbmdp::GbmdpFamily& family, const CollectOptions& options,
                              const RolloutPolicy& policy, Rng& rng) {
  if (options.horizon < 1) throw std::invalid_argument("collect_aligned: horizon must be >= 1");
  if (family.num_train() < 2)
    throw std::invalid_argument("collect_aligned: needs at least two training environments");
  if (options.source == ActionSource::Policy && !policy)
    throw std::invalid_argument("collect_aligned: policy source without a policy");

  const auto& spec = family.spec;
  const bool shared = options.initial_state == InitialState::Shared ||
                      (options.initial_state == InitialState::Auto && spec.slip == 0.0);
  const int shared_start = spec.start_states[uniform_index(rng, spec.start_states.size())];

  AlignedRecord rec;
  rec.actions.reserve(static_cast<std::size_t>(options.horizon));
  if (options.source == ActionSource::Random) {
    for (int t = 0; t < options.horizon; ++t)
      rec.actions.push_back(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(spec.num_actions))));
  } else {
    const auto& env = family.train[uniform_index(rng, family.train.size())];
    auto cur = shared ? gbmdp::reset_to(env, shared_start, rng) : gbmdp::reset(spec, env, rng);
    for (int t = 0; t < options.horizon; ++t) {
      const int a = policy(cur.obs, t, rng);
      rec.actions.push_back(a);
      cur = gbmdp::step(spec, env, cur.hidden, a, rng);
    }
  }

  for (const auto& env : family.train) {
    rec.envs.push_back(env.index);
    std::vector<Eigen::VectorXd> obs;
    std::vector<int> states;
    obs.reserve(rec.actions.size() + 1);
    auto cur = shared ? gbmdp::reset_to(env, shared_start, rng) : gbmdp::reset(spec, env, rng);
    obs.push_back(cur.obs);
    states.push_back(cur.hidden.s);
    for (int a : rec.actions) {
      cur = gbmdp::step(spec, env, cur.hidden, a, rng);
      obs.push_back(cur.obs);
      states.push_back(cur.hidden.s);
    }
    rec.observations.push_back(std::move(obs));
    rec.oracle_states.push_back(std::move(states));
  }
  return rec;
}

AlignedBuffer::AlignedBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("AlignedBuffer: capacity must be positive");
}

void AlignedBuffer::push(AlignedRecord record) {
  if (record.observations.empty())
    throw std::invalid_argument("AlignedBuffer::push: record without observations");
  for (const auto& lane : record.observations)
    if (lane.size() != record.actions.size() + 1)
      throw std::invalid_argument("AlignedBuffer::push: ragged record");
  record.id = counter_++;
  total_tuples_ += record.actions.size() + 1;
  records_.push_back(std::move(record));
  if (records_.size() > capacity_) {
    total_tuples_ -= records_.front().actions.size() + 1;
    records_.pop_front();
  }
}

AlignedBatch AlignedBuffer::sample(std::size_t batch_size, Rng& rng) const {
  if (records_.empty()) throw std::runtime_error("sample_aligned_batch: empty aligned buffer");
  const std::size_t slots = records_.front().observations.size();
  const auto dim = records_.front().observations[0][0].size();
  AlignedBatch batch;
  batch.per_env.assign(slots, Eigen::MatrixXd(dim, static_cast<Eigen::Index>(batch_size)));
  batch.record_ids.reserve(batch_size);
  batch.steps.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    // Uniform over all stored (record, t) pairs.
    std::size_t k = uniform_index(rng, total_tuples_);
    std::size_t r = 0;
    while (k >= records_[r].actions.size() + 1) {
      k -= records_[r].actions.size() + 1;
      ++r;
    }
    const auto& rec = records_[r];
    for (std::size_t e = 0; e < slots; ++e)
      batch.per_env[e].col(static_cast<Eigen::Index>(b)) = rec.observations[e][k];
    batch.record_ids.push_back(rec.id);
    batch.steps.push_back(static_cast<int>(k));
  }
  return batch;
}

void AlignedBuffer::write(io::BinaryWriter& w) const {
  w.str("ALIGNBUF1");
  w.u64(capacity_);
  w.u64(counter_);
  w.u64(records_.size());
  for (const auto& rec : records_) {
    w.u64(rec.id);
    w.ints(rec.actions);
    w.ints(rec.envs);
    for (std::size_t e = 0; e < rec.envs.size(); ++e) {
      for (const auto& x : rec.observations[e]) w.vector(x);
      w.ints(rec.oracle_states[e]);
    }
  }
}

AlignedBuffer AlignedBuffer::read(io::BinaryReader& r) {
  if (r.str() != "ALIGNBUF1") throw IoError("unsupported aligned buffer record");
  AlignedBuffer buf(r.u64());
  buf.counter_ = r.u64();
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    AlignedRecord rec;
    rec.id = r.u64();
    rec.actions = r.ints();
    rec.envs = r.ints();
    for (std::size_t e = 0; e < rec.envs.size(); ++e) {
      std::vector<Eigen::VectorXd> lane;
      for (std::size_t t = 0; t <= rec.actions.size(); ++t) lane.push_back(r.vector());
      rec.observations.push_back(std::move(lane));
      rec.oracle_states.push_back(r.ints());
    }
    buf.total_tuples_ += rec.actions.size() + 1;
    buf.records_.push_back(std::move(rec));
  }
  return buf;
}

void AlignedBuffer::dump_json(const std::string& path) const {
  nlohmann::json j;
  j["format"] = "pasf-aligned-buffer";
  j["version"] = 1;
  j["records"] = nlohmann::json::array();
  for (const auto& rec : records_) {
    nlohmann::json jr;
    jr["id"] = rec.id;
    jr["actions"] = rec.actions;
    jr["envs"] = rec.envs;
    nlohmann::json lanes = nlohmann::json::array();
    for (const auto& lane : rec.observations) {
      nlohmann::json steps = nlohmann::json::array();
      for (const auto& x : lane) steps.push_back(std::vector<double>(x.data(), x.data() + x.size()));
      lanes.push_back(steps);
    }
    jr["observations"] = lanes;
    j["records"].push_back(jr);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump() << '\n';
}

}  // namespace pasf::align
