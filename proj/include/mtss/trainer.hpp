#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtss/aggregator.hpp"
#include "mtss/checkpoint.hpp"
#include "mtss/model.hpp"
#include "mtss/optimizer.hpp"
#include "mtss/params.hpp"
#include "mtss/rng.hpp"
#include "mtss/tasks.hpp"

namespace mtss {

// Simulated worker: which task it serves and when it does things. Latencies
// cycle; the post-apply idle models a machine waiting for other tasks.
struct WorkerTrace {
  std::string task;
  double initial_delay = 0;
  std::vector<double> latencies = {1.0};
  double idle_after_apply = 0;
};

// One worker per task, staggered so exactly one gradient lands per tick and
// tasks apply in declaration order: the event-driven run then visits the
// same (task, batch, apply) sequence as the plain serial loop.
inline std::vector<WorkerTrace> round_robin_trace(const std::vector<TaskSpec>& tasks,
                                                  double latency = 1.0) {
  std::vector<WorkerTrace> out;
  auto w = double(tasks.size());
  for (std::size_t n = 0; n < tasks.size(); ++n) {
    WorkerTrace tr;
    tr.task = task_name(tasks[n].kind);
    tr.initial_delay = double(n) * latency;
    tr.latencies = {latency};
    tr.idle_after_apply = (w - 1.0) * latency;
    out.push_back(std::move(tr));
  }
  return out;
}

// A fast and a slow worker on every task; under async aggregation the slow
// packets land on moved parameters, so staleness shows up immediately.
inline std::vector<WorkerTrace> slow_fast_trace(const std::vector<TaskSpec>& tasks,
                                                double fast = 1.0, double slow_factor = 7.0) {
  std::vector<WorkerTrace> out;
  for (const auto& t : tasks) {
    out.push_back({task_name(t.kind), 0.0, {fast}, 0.0});
    out.push_back({task_name(t.kind), 0.0, {fast * slow_factor}, 0.0});
  }
  return out;
}

struct TrainConfig {
  std::uint64_t seed = 1;
  AggregationMode mode = AggregationMode::Hybrid;
  ModelConfig model;
  std::vector<TaskSpec> tasks;
  std::vector<WorkerTrace> workers;               // empty: round-robin default
  std::map<std::string, std::int64_t> quotas;     // default: workers per task
  RmsPropConfig opt;
  std::int64_t total_steps = 16;                  // compute starts, all workers
  double checkpoint_interval = 0;                 // <= 0: initial snapshot only
  std::int64_t corpus = 8;                        // synthetic training images
  // serialized checkpoint used as initialization: matching parameters are
  // copied in, everything else (optimizer state, counters, cost) starts fresh
  std::vector<std::uint8_t> init_params;
};

struct LossRecord {
  double cost = 0;
  std::string task;
  double loss = 0;  // mean task loss of the apply (penalty excluded)
  std::uint64_t version = 0;
};

template <typename T>
struct TrainResult {
  ParamStore<T> store{0};
  std::map<std::string, std::map<std::string, Tensor<T>>> opt_state;
  std::map<std::string, TaskStats> stats;
  std::map<std::string, std::uint64_t> task_steps;
  std::vector<LossRecord> losses;
  std::vector<std::vector<std::uint8_t>> checkpoints;  // initial + cadence
  std::vector<std::uint8_t> final_checkpoint;
  double total_cost = 0;
  bool conserved = true;
};

inline RngStream batch_stream(std::uint64_t seed, TaskKind kind, std::uint64_t step) {
  return RngStream::derive(seed, {hash_name("batch"), hash_name(task_name(kind)), step});
}

template <typename T>
std::vector<Image<T>> training_corpus(std::uint64_t seed, std::int64_t count, std::int64_t size) {
  auto rng = RngStream::derive(seed, {hash_name("corpus")});
  std::vector<Image<T>> out;
  for (std::int64_t i = 0; i < count; ++i) out.push_back(synth_image<T>(rng, size, size));
  return out;
}

template <typename T>
Checkpoint make_checkpoint(std::uint64_t seed, const ParamStore<T>& store,
                           const std::map<std::string, RmsProp<T>>& opts,
                           const std::map<std::string, std::uint64_t>& versions,
                           const std::map<std::string, std::uint64_t>& steps, double cost) {
  Checkpoint c;
  c.precision = sizeof(T) == 4 ? 32 : 64;
  c.seed = seed;
  c.accumulated_cost = cost;
  for (const auto& [name, t] : store) c.params.emplace(name, detail::widen(t));
  for (const auto& [task, opt] : opts) {
    TaskCheckpoint tc;
    auto vit = versions.find(task);
    auto sit = steps.find(task);
    tc.version = vit == versions.end() ? 0 : vit->second;
    tc.steps = sit == steps.end() ? 0 : sit->second;
    for (const auto& [name, s] : opt.state()) tc.opt_state.emplace(name, detail::widen(s));
    c.tasks.emplace(task, std::move(tc));
  }
  return c;
}


namespace detail {

// Compute one packet at the current store state. The batch comes from a
// stream keyed by (seed, task, per-task step), never by worker, so any
// schedule that visits the same per-task step sequence sees the same data.
template <typename T>
GradientPacket<T> compute_packet(TaskModel<T>& model, const ParamStore<T>& store,
                                 const std::vector<Image<T>>& corpus, std::uint64_t seed,
                                 std::uint64_t step, std::uint64_t param_version, int worker) {
  model.refresh_params(store);
  auto rng = batch_stream(seed, model.kind, step);
  sample_and_load(model, corpus, rng);
  model.g.forward();
  auto node_grads = model.g.backward(model.loss);
  GradientPacket<T> p;
  p.task = task_name(model.kind);
  p.worker = worker;
  p.param_version = param_version;
  p.step = step;
  p.loss = double(model.g.value(model.task_loss)[0]);
  for (const auto& [name, node] : model.params) {
    auto it = node_grads.find(node);
    if (it == node_grads.end()) throw std::logic_error("missing gradient for " + name);
    p.grads.emplace(name, std::move(it->second));
  }
  return p;
}

inline void validate_train_config(const TrainConfig& cfg,
                                  const std::vector<WorkerTrace>& workers) {
  if (cfg.tasks.empty()) throw std::invalid_argument("no tasks configured");
  std::map<std::string, int> names;
  for (const auto& t : cfg.tasks) {
    t.validate();
    if (++names[task_name(t.kind)] > 1)
      throw std::invalid_argument(std::string("duplicate task ") + task_name(t.kind));
  }
  if (cfg.total_steps < 0) throw std::invalid_argument("total steps must be >= 0");
  std::map<std::string, int> per_task;
  for (const auto& w : workers) {
    if (!names.count(w.task)) throw std::invalid_argument("worker references unknown task " + w.task);
    if (w.latencies.empty()) throw std::invalid_argument("worker needs at least one latency");
    for (auto l : w.latencies)
      if (!(l > 0)) throw std::invalid_argument("latencies must be > 0");
    if (w.initial_delay < 0 || w.idle_after_apply < 0)
      throw std::invalid_argument("delays must be >= 0");
    ++per_task[w.task];
  }
  for (const auto& [name, n] : names) {
    (void)n;
    if (!per_task.count(name)) throw std::invalid_argument("task " + name + " has no worker");
  }
}

}  // namespace detail

// Event-driven simulation: pop the earliest event, deliveries before wakes
// at equal times, FIFO within a class. Gradients are computed against the
// parameters at compute start (the worker's snapshot) and delivered after
// the worker's latency.
template <typename T>
TrainResult<T> run_training(const TrainConfig& cfg) {
  auto workers = cfg.workers.empty() ? round_robin_trace(cfg.tasks) : cfg.workers;
  detail::validate_train_config(cfg, workers);

  ParamStore<T> store(cfg.seed);
  std::map<std::string, TaskModel<T>> models;
  std::map<std::string, const TaskSpec*> specs;
  std::map<std::string, std::int64_t> quotas;
  std::map<std::string, int> worker_count;
  for (const auto& w : workers) ++worker_count[w.task];
  for (const auto& t : cfg.tasks) {
    std::string name = task_name(t.kind);
    models.emplace(name, build_task_model(t, cfg.model, store));
    specs.emplace(name, &t);
    auto qit = cfg.quotas.find(name);
    quotas[name] = qit != cfg.quotas.end() ? qit->second : worker_count[name];
  }
  if (!cfg.init_params.empty()) load_matching_params(parse_checkpoint(cfg.init_params), store);
  Aggregator<T> agg(cfg.mode, quotas);
  std::map<std::string, RmsProp<T>> opts;
  for (const auto& [name, q] : quotas) opts.emplace(name, RmsProp<T>(cfg.opt));
  auto corpus = training_corpus<T>(cfg.seed, cfg.corpus, cfg.model.image_size);

  struct WorkerState {
    WorkerTrace trace;
    std::uint64_t computed = 0;
    bool waiting = false;
    GradientPacket<T> pending;
  };
  std::vector<WorkerState> ws;
  for (const auto& w : workers) ws.push_back({w, 0, false, {}});

  struct Event {
    double time;
    int kind;  // 0 delivery, 1 wake
    std::uint64_t seq;
    std::size_t worker;
    bool operator>(const Event& o) const {
      if (time != o.time) return time > o.time;
      if (kind != o.kind) return kind > o.kind;
      return seq > o.seq;
    }
  };
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue;
  std::uint64_t seq = 0;

  TrainResult<T> result;
  std::map<std::string, std::uint64_t> task_steps;
  std::int64_t started = 0;
  double cost = 0;
  double next_mark = cfg.checkpoint_interval > 0 ? cfg.checkpoint_interval
                                                 : std::numeric_limits<double>::infinity();

  auto versions = [&] {
    std::map<std::string, std::uint64_t> v;
    for (const auto& [name, q] : quotas) v[name] = agg.version(name);
    return v;
  };
  auto emit_checkpoint = [&] {
    result.checkpoints.push_back(
        serialize_checkpoint(make_checkpoint(cfg.seed, store, opts, versions(), task_steps, cost)));
  };
  emit_checkpoint();  // state before any step

  for (std::size_t i = 0; i < ws.size(); ++i)
    queue.push({ws[i].trace.initial_delay, 1, seq++, i});

  while (!queue.empty()) {
    Event ev = queue.top();
    queue.pop();
    WorkerState& w = ws[ev.worker];
    if (ev.kind == 1) {  // wake: snapshot and start computing
      if (started >= cfg.total_steps) continue;
      ++started;
      const std::string& tname = w.trace.task;
      std::uint64_t s = task_steps[tname]++;
      w.pending = detail::compute_packet(models.at(tname), store, corpus, cfg.seed, s,
                                         agg.version(tname), int(ev.worker));
      double lat = w.trace.latencies[std::size_t(w.computed % w.trace.latencies.size())];
      ++w.computed;
      queue.push({ev.time + lat, 0, seq++, ev.worker});
    } else {  // delivery
      cost += specs.at(w.trace.task)->step_cost;
      PacketOutcome outcome = PacketOutcome::Buffered;
      auto applies = agg.offer(w.pending, &outcome);
      for (const auto& ap : applies) {
        opts.at(ap.task).apply(store, ap.mean_grads);
        result.losses.push_back({cost, ap.task, ap.mean_loss, ap.new_version});
        for (std::size_t i = 0; i < ws.size(); ++i) {
          if (ws[i].waiting && ws[i].trace.task == ap.task) {
            ws[i].waiting = false;
            queue.push({ev.time + ws[i].trace.idle_after_apply, 1, seq++, i});
          }
        }
      }
      if (outcome == PacketOutcome::Applied) {
        queue.push({ev.time + w.trace.idle_after_apply, 1, seq++, ev.worker});
      } else if (outcome == PacketOutcome::Buffered) {
        w.waiting = true;
      } else {  // discarded: re-snapshot immediately
        queue.push({ev.time, 1, seq++, ev.worker});
      }
      while (cost >= next_mark) {
        emit_checkpoint();
        next_mark += cfg.checkpoint_interval;
      }
    }
  }

  result.final_checkpoint =
      serialize_checkpoint(make_checkpoint(cfg.seed, store, opts, versions(), task_steps, cost));
  result.store = store;
  for (const auto& [name, opt] : opts) result.opt_state.emplace(name, opt.state());
  result.stats = agg.report();
  result.task_steps = task_steps;
  result.total_cost = cost;
  result.conserved = agg.conserved();
  return result;
}

// Single-threaded ground truth: cycles the tasks in declaration order, one
// batch each, applying immediately (quota 1). Shares every numeric path with
// the simulator, so the round-robin trace must reproduce it bit for bit.
template <typename T>
TrainResult<T> serial_reference(const TrainConfig& cfg) {
  if (cfg.tasks.empty()) throw std::invalid_argument("no tasks configured");
  for (const auto& t : cfg.tasks) t.validate();
  ParamStore<T> store(cfg.seed);
  std::map<std::string, TaskModel<T>> models;
  std::map<std::string, const TaskSpec*> specs;
  std::map<std::string, std::int64_t> quotas;
  for (const auto& t : cfg.tasks) {
    std::string name = task_name(t.kind);
    models.emplace(name, build_task_model(t, cfg.model, store));
    specs.emplace(name, &t);
    quotas[name] = 1;
  }
  if (!cfg.init_params.empty()) load_matching_params(parse_checkpoint(cfg.init_params), store);
  Aggregator<T> agg(AggregationMode::Hybrid, quotas);
  std::map<std::string, RmsProp<T>> opts;
  for (const auto& [name, q] : quotas) opts.emplace(name, RmsProp<T>(cfg.opt));
  auto corpus = training_corpus<T>(cfg.seed, cfg.corpus, cfg.model.image_size);

  TrainResult<T> result;
  std::map<std::string, std::uint64_t> task_steps;
  double cost = 0;
  double next_mark = cfg.checkpoint_interval > 0 ? cfg.checkpoint_interval
                                                 : std::numeric_limits<double>::infinity();
  auto versions = [&] {
    std::map<std::string, std::uint64_t> v;
    for (const auto& [name, q] : quotas) v[name] = agg.version(name);
    return v;
  };
  auto emit_checkpoint = [&] {
    result.checkpoints.push_back(
        serialize_checkpoint(make_checkpoint(cfg.seed, store, opts, versions(), task_steps, cost)));
  };
  emit_checkpoint();

  for (std::int64_t k = 0; k < cfg.total_steps; ++k) {
    const TaskSpec& t = cfg.tasks[std::size_t(k) % cfg.tasks.size()];
    std::string name = task_name(t.kind);
    std::uint64_t s = task_steps[name]++;
    auto packet =
        detail::compute_packet(models.at(name), store, corpus, cfg.seed, s, agg.version(name), 0);
    cost += t.step_cost;
    auto applies = agg.offer(packet);
    for (const auto& ap : applies) {
      opts.at(ap.task).apply(store, ap.mean_grads);
      result.losses.push_back({cost, ap.task, ap.mean_loss, ap.new_version});
    }
    while (cost >= next_mark) {
      emit_checkpoint();
      next_mark += cfg.checkpoint_interval;
    }
  }

  result.final_checkpoint =
      serialize_checkpoint(make_checkpoint(cfg.seed, store, opts, versions(), task_steps, cost));
  result.store = store;
  for (const auto& [name, opt] : opts) result.opt_state.emplace(name, opt.state());
  result.stats = agg.report();
  result.task_steps = task_steps;
  result.total_cost = cost;
  result.conserved = agg.conserved();
  return result;
}

}  // namespace mtss
