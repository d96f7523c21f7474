#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtss/tensor.hpp"

namespace mtss {

enum class AggregationMode { Async, Sync, Hybrid };

inline const char* aggregation_mode_name(AggregationMode m) {
  switch (m) {
    case AggregationMode::Async: return "async";
    case AggregationMode::Sync: return "sync";
    case AggregationMode::Hybrid: return "hybrid";
  }
  return "?";
}

inline AggregationMode aggregation_mode_from_string(const std::string& s) {
  if (s == "async") return AggregationMode::Async;
  if (s == "sync") return AggregationMode::Sync;
  if (s == "hybrid") return AggregationMode::Hybrid;
  throw std::invalid_argument("unknown aggregation mode: " + s);
}

template <typename T>
struct GradientPacket {
  std::string task;
  int worker = -1;
  std::uint64_t param_version = 0;  // task version at snapshot time
  std::uint64_t step = 0;           // per-task batch index
  std::map<std::string, Tensor<T>> grads;
  double loss = 0;
};

struct TaskStats {
  std::int64_t produced = 0;
  std::int64_t applied = 0;    // packets folded into an apply
  std::int64_t discarded = 0;  // stale or over quota
  std::uint64_t applies = 0;
  std::map<std::int64_t, std::int64_t> staleness;  // value -> count, applied packets only

  std::int64_t max_staleness() const {
    return staleness.empty() ? 0 : staleness.rbegin()->first;
  }
};

template <typename T>
struct ApplyEvent {
  std::string task;
  std::map<std::string, Tensor<T>> mean_grads;
  double mean_loss = 0;
  std::uint64_t new_version = 0;
  std::int64_t packets = 0;
};

enum class PacketOutcome { Applied, Buffered, Discarded };

// Shared gradient clearing house. Versions are per task; sync mode advances
// all of them in lockstep, hybrid advances each task alone, async applies
// every packet the moment it arrives.
template <typename T>
class Aggregator {
 public:
  Aggregator(AggregationMode mode, const std::map<std::string, std::int64_t>& quotas)
      : mode_(mode) {
    if (quotas.empty()) throw std::invalid_argument("aggregator needs at least one task");
    for (const auto& [task, q] : quotas) {
      if (q < 1) throw std::invalid_argument("quota for " + task + " must be >= 1");
      Slot s;
      s.quota = q;
      tasks_.emplace(task, std::move(s));
    }
  }

  // Feeds one packet; returns the applies it triggered (sync can release
  // every task at once) and reports what happened to the packet itself.
  std::vector<ApplyEvent<T>> offer(const GradientPacket<T>& p, PacketOutcome* outcome = nullptr) {
    auto it = tasks_.find(p.task);
    if (it == tasks_.end()) throw std::invalid_argument("packet for unknown task " + p.task);
    Slot& slot = it->second;
    ++slot.stats.produced;
    std::vector<ApplyEvent<T>> events;

    if (mode_ == AggregationMode::Async) {
      buffer_into(slot, p);
      events.push_back(apply_slot(p.task, slot));
      if (outcome) *outcome = PacketOutcome::Applied;
      return events;
    }

    // hybrid and sync discard packets computed against an old version or
    // beyond the quota; the worker re-snapshots and tries again
    if (p.param_version < slot.version || slot.count >= slot.quota) {
      ++slot.stats.discarded;
      if (outcome) *outcome = PacketOutcome::Discarded;
      return events;
    }
    buffer_into(slot, p);

    if (mode_ == AggregationMode::Hybrid) {
      if (slot.count == slot.quota) {
        events.push_back(apply_slot(p.task, slot));
        if (outcome) *outcome = PacketOutcome::Applied;
      } else if (outcome) {
        *outcome = PacketOutcome::Buffered;
      }
      return events;
    }

    // sync: release only when every task has met its quota
    bool all = true;
    for (auto& kv : tasks_) all = all && kv.second.count >= kv.second.quota;
    if (all) {
      for (auto& kv : tasks_) events.push_back(apply_slot(kv.first, kv.second));
      if (outcome) *outcome = PacketOutcome::Applied;
    } else if (outcome) {
      *outcome = PacketOutcome::Buffered;
    }
    return events;
  }

  std::uint64_t version(const std::string& task) const { return slot(task).version; }
  const TaskStats& stats(const std::string& task) const { return slot(task).stats; }
  std::int64_t buffered(const std::string& task) const { return slot(task).count; }

  // produced = applied + buffered + discarded, per task, at all times
  bool conserved() const {
    for (auto& kv : tasks_) {
      const Slot& s = kv.second;
      if (s.stats.produced != s.stats.applied + s.count + s.stats.discarded) return false;
    }
    return true;
  }

  std::map<std::string, TaskStats> report() const {
    std::map<std::string, TaskStats> out;
    for (auto& kv : tasks_) out.emplace(kv.first, kv.second.stats);
    return out;
  }

 private:
  struct Slot {
    std::int64_t quota = 1;
    std::int64_t count = 0;
    std::uint64_t version = 0;
    double loss_sum = 0;
    std::map<std::string, Tensor<T>> sum;
    std::vector<std::uint64_t> snapshot_versions;  // of buffered packets
    TaskStats stats;
  };

  const Slot& slot(const std::string& task) const {
    auto it = tasks_.find(task);
    if (it == tasks_.end()) throw std::invalid_argument("unknown task " + task);
    return it->second;
  }

  void buffer_into(Slot& slot, const GradientPacket<T>& p) {
    for (const auto& [name, g] : p.grads) {
      auto it = slot.sum.find(name);
      if (it == slot.sum.end()) {
        slot.sum.emplace(name, g);
      } else {
        if (!it->second.same_shape(g))
          throw std::invalid_argument("gradient shape drift for " + name);
        for (std::size_t i = 0; i < g.values.size(); ++i) it->second.values[i] += g.values[i];
      }
    }
    slot.loss_sum += p.loss;
    slot.snapshot_versions.push_back(p.param_version);
    ++slot.count;
  }

  ApplyEvent<T> apply_slot(const std::string& task, Slot& slot) {
    ApplyEvent<T> ev;
    ev.task = task;
    ev.packets = slot.count;
    ev.mean_loss = slot.loss_sum / double(slot.count);
    for (auto& [name, t] : slot.sum) {
      Tensor<T> mean = t;
      for (auto& v : mean.values) v /= T(slot.count);
      ev.mean_grads.emplace(name, std::move(mean));
    }
    for (auto v : slot.snapshot_versions)
      ++slot.stats.staleness[std::int64_t(slot.version - v)];
    slot.stats.applied += slot.count;
    ++slot.stats.applies;
    ++slot.version;
    ev.new_version = slot.version;
    slot.sum.clear();
    slot.snapshot_versions.clear();
    slot.loss_sum = 0;
    slot.count = 0;
    return ev;
  }

  AggregationMode mode_;
  std::map<std::string, Slot> tasks_;
};

}  // namespace mtss
