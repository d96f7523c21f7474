#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtss/lasso.hpp"
#include "mtss/model.hpp"
#include "mtss/tasks.hpp"
#include "mtss/trainer.hpp"

namespace mtss {

// Experiment description in a line-oriented `key = value` format with
// [section] headers. Sections: [experiment], [model], [optimizer],
// [task <kind>] (repeatable, one per kind), [eval]. Keys are closed-world:
// anything unrecognized is an error naming its line. `seed` is mandatory.

struct EvalSettings {
  std::string suite = "all";  // none | frozen | finetune | depth | all
  std::int64_t classes = 3;
  std::int64_t per_class = 8;
  std::int64_t test_per_class = 4;
  std::int64_t probe_steps = 120;
  std::int64_t finetune_steps = 60;
  std::int64_t batch = 8;
  std::int64_t k = 2;  // recall cutoff for the frozen probe
  std::int64_t depth_factor = 4;
  std::int64_t depth_train = 12;
  std::int64_t depth_test = 6;
  double probe_lr = 1e-2;
  double finetune_lr = 1e-3;
};

struct TaskEntry {
  TaskSpec spec;
  std::int64_t workers = 1;
  std::int64_t quota = 0;  // 0: one packet per worker
  double latency = 1.0;
};

struct ExperimentConfig {
  std::string id = "exp";
  std::uint64_t seed = 0;
  AggregationMode mode = AggregationMode::Hybrid;
  std::int64_t total_steps = 64;
  double checkpoint_interval = 0;  // cost units; 0: expected total cost / 8
  std::int64_t corpus = 8;
  double lambda = 1e-3;
  LassoMode lasso = LassoMode::None;
  ModelConfig model;
  RmsPropConfig opt;
  std::vector<TaskEntry> tasks;
  EvalSettings eval;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] inline void config_error(int line, const std::string& what) {
  throw std::invalid_argument("config line " + std::to_string(line) + ": " + what);
}

inline std::int64_t parse_int(const std::string& v, int line, const std::string& key) {
  std::size_t used = 0;
  std::int64_t out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    config_error(line, "expected an integer for '" + key + "', got '" + v + "'");
  }
  if (used != v.size()) config_error(line, "expected an integer for '" + key + "', got '" + v + "'");
  return out;
}

inline std::uint64_t parse_u64(const std::string& v, int line, const std::string& key) {
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    config_error(line, "expected an unsigned integer for '" + key + "', got '" + v + "'");
  }
  if (used != v.size() || (!v.empty() && v[0] == '-'))
    config_error(line, "expected an unsigned integer for '" + key + "', got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& v, int line, const std::string& key) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    config_error(line, "expected a number for '" + key + "', got '" + v + "'");
  }
  if (used != v.size()) config_error(line, "expected a number for '" + key + "', got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& v, int line, const std::string& key) {
  if (v == "true") return true;
  if (v == "false") return false;
  config_error(line, "expected true or false for '" + key + "', got '" + v + "'");
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  bool seen_seed = false;
  std::set<std::string> seen_tasks;
  enum class Section { None, Experiment, Model, Optimizer, Task, Eval };
  Section section = Section::None;
  TaskEntry* task = nullptr;

  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = raw;
    auto hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = detail::trim(s);
    if (s.empty()) continue;

    if (s.front() == '[') {
      if (s.back() != ']') detail::config_error(line, "unterminated section header");
      std::string name = detail::trim(s.substr(1, s.size() - 2));
      if (name == "experiment") {
        section = Section::Experiment;
      } else if (name == "model") {
        section = Section::Model;
      } else if (name == "optimizer") {
        section = Section::Optimizer;
      } else if (name == "eval") {
        section = Section::Eval;
      } else if (name.rfind("task ", 0) == 0) {
        std::string kind = detail::trim(name.substr(5));
        TaskKind k;
        try {
          k = task_from_string(kind);
        } catch (const std::exception&) {
          detail::config_error(line, "unknown task kind '" + kind + "'");
        }
        if (!seen_tasks.insert(kind).second)
          detail::config_error(line, "task '" + kind + "' declared twice");
        cfg.tasks.push_back(TaskEntry{default_task(k), 1, 0, 1.0});
        task = &cfg.tasks.back();
        section = Section::Task;
      } else {
        detail::config_error(line, "unknown section '" + name + "'");
      }
      continue;
    }

    auto eq = s.find('=');
    if (eq == std::string::npos) detail::config_error(line, "expected 'key = value'");
    std::string key = detail::trim(s.substr(0, eq));
    std::string val = detail::trim(s.substr(eq + 1));
    if (key.empty()) detail::config_error(line, "empty key");
    if (val.empty()) detail::config_error(line, "empty value for '" + key + "'");

    switch (section) {
      case Section::None:
        detail::config_error(line, "key '" + key + "' appears before any [section]");
      case Section::Experiment:
        if (key == "id") {
          cfg.id = val;
        } else if (key == "seed") {
          cfg.seed = detail::parse_u64(val, line, key);
          seen_seed = true;
        } else if (key == "mode") {
          try {
            cfg.mode = aggregation_mode_from_string(val);
          } catch (const std::exception&) {
            detail::config_error(line, "mode must be async, sync, or hybrid");
          }
        } else if (key == "total_steps") {
          cfg.total_steps = detail::parse_int(val, line, key);
        } else if (key == "checkpoint_interval") {
          cfg.checkpoint_interval = detail::parse_double(val, line, key);
        } else if (key == "corpus") {
          cfg.corpus = detail::parse_int(val, line, key);
        } else if (key == "lambda") {
          cfg.lambda = detail::parse_double(val, line, key);
        } else if (key == "lasso") {
          try {
            cfg.lasso = lasso_mode_from_string(val);
          } catch (const std::exception&) {
            detail::config_error(line, "lasso must be none, eval-only, pretrain-only, or both");
          }
        } else {
          detail::config_error(line, "unknown key '" + key + "' in [experiment]");
        }
        break;
      case Section::Model:
        if (key == "image_size") {
          cfg.model.image_size = detail::parse_int(val, line, key);
        } else if (key == "width") {
          cfg.model.trunk.width = detail::parse_int(val, line, key);
        } else if (key == "units") {
          cfg.model.trunk.units = detail::parse_int(val, line, key);
        } else if (key == "dilation") {
          cfg.model.trunk.dilation = detail::parse_int(val, line, key);
        } else if (key == "head_hidden") {
          cfg.model.head_hidden = detail::parse_int(val, line, key);
        } else {
          detail::config_error(line, "unknown key '" + key + "' in [model]");
        }
        break;
      case Section::Optimizer:
        if (key == "rho") {
          cfg.opt.rho = detail::parse_double(val, line, key);
        } else if (key == "lr") {
          cfg.opt.lr = detail::parse_double(val, line, key);
        } else if (key == "eps") {
          cfg.opt.eps = detail::parse_double(val, line, key);
        } else {
          detail::config_error(line, "unknown key '" + key + "' in [optimizer]");
        }
        break;
      case Section::Task: {
        TaskSpec& t = task->spec;
        bool common = true;
        if (key == "harmonized") {
          t.harmonized = detail::parse_bool(val, line, key);
        } else if (key == "batch") {
          t.batch = detail::parse_int(val, line, key);
        } else if (key == "step_cost") {
          t.step_cost = detail::parse_double(val, line, key);
        } else if (key == "loss_scale") {
          t.loss_scale = detail::parse_double(val, line, key);
        } else if (key == "workers") {
          task->workers = detail::parse_int(val, line, key);
        } else if (key == "quota") {
          task->quota = detail::parse_int(val, line, key);
        } else if (key == "latency") {
          task->latency = detail::parse_double(val, line, key);
        } else {
          common = false;
        }
        if (common) break;
        switch (t.kind) {
          case TaskKind::RelativePosition:
            if (key == "grid") {
              t.rp_grid = detail::parse_int(val, line, key);
            } else if (key == "patch") {
              t.rp_patch = detail::parse_int(val, line, key);
            } else if (key == "jitter") {
              t.rp_jitter = detail::parse_int(val, line, key);
            } else {
              detail::config_error(line, "unknown key '" + key + "' in [task rp]");
            }
            break;
          case TaskKind::Colorization:
            if (key == "stride") {
              t.col_stride = detail::parse_int(val, line, key);
            } else if (key == "bins") {
              t.col_bins = int(detail::parse_int(val, line, key));
            } else {
              detail::config_error(line, "unknown key '" + key + "' in [task col]");
            }
            break;
          case TaskKind::Exemplar:
            if (key == "patch") {
              t.ex_patch = detail::parse_int(val, line, key);
            } else if (key == "margin") {
              t.margin = detail::parse_double(val, line, key);
            } else if (key == "translate") {
              t.aug.max_translate = detail::parse_double(val, line, key);
            } else if (key == "rotate") {
              t.aug.max_rotate_deg = detail::parse_double(val, line, key);
            } else if (key == "scale_lo") {
              t.aug.scale_lo = detail::parse_double(val, line, key);
            } else if (key == "scale_hi") {
              t.aug.scale_hi = detail::parse_double(val, line, key);
            } else if (key == "color_shift") {
              t.aug.max_color_shift = detail::parse_double(val, line, key);
            } else {
              detail::config_error(line, "unknown key '" + key + "' in [task ex]");
            }
            break;
          case TaskKind::MotionSegmentation:
            if (key == "factor") {
              t.ms_factor = detail::parse_int(val, line, key);
            } else if (key == "blobs") {
              t.motion.random_blobs = detail::parse_int(val, line, key);
            } else if (key == "blob_min") {
              t.motion.blob_min = detail::parse_int(val, line, key);
            } else if (key == "blob_max") {
              t.motion.blob_max = detail::parse_int(val, line, key);
            } else if (key == "max_speed") {
              t.motion.max_speed = int(detail::parse_int(val, line, key));
            } else if (key == "frames") {
              t.motion.frames = detail::parse_int(val, line, key);
            } else {
              detail::config_error(line, "unknown key '" + key + "' in [task ms]");
            }
            break;
        }
        break;
      }
      case Section::Eval:
        if (key == "suite") {
          if (val != "none" && val != "frozen" && val != "finetune" && val != "depth" &&
              val != "all")
            detail::config_error(line, "suite must be none, frozen, finetune, depth, or all");
          cfg.eval.suite = val;
        } else if (key == "classes") {
          cfg.eval.classes = detail::parse_int(val, line, key);
        } else if (key == "per_class") {
          cfg.eval.per_class = detail::parse_int(val, line, key);
        } else if (key == "test_per_class") {
          cfg.eval.test_per_class = detail::parse_int(val, line, key);
        } else if (key == "probe_steps") {
          cfg.eval.probe_steps = detail::parse_int(val, line, key);
        } else if (key == "finetune_steps") {
          cfg.eval.finetune_steps = detail::parse_int(val, line, key);
        } else if (key == "batch") {
          cfg.eval.batch = detail::parse_int(val, line, key);
        } else if (key == "k") {
          cfg.eval.k = detail::parse_int(val, line, key);
        } else if (key == "depth_factor") {
          cfg.eval.depth_factor = detail::parse_int(val, line, key);
        } else if (key == "depth_train") {
          cfg.eval.depth_train = detail::parse_int(val, line, key);
        } else if (key == "depth_test") {
          cfg.eval.depth_test = detail::parse_int(val, line, key);
        } else if (key == "probe_lr") {
          cfg.eval.probe_lr = detail::parse_double(val, line, key);
        } else if (key == "finetune_lr") {
          cfg.eval.finetune_lr = detail::parse_double(val, line, key);
        } else {
          detail::config_error(line, "unknown key '" + key + "' in [eval]");
        }
        break;
    }
  }

  if (!seen_seed) throw std::invalid_argument("config: missing required key 'seed' in [experiment]");
  if (cfg.tasks.empty()) throw std::invalid_argument("config: at least one [task <kind>] section is required");

  if (cfg.total_steps < 0) throw std::invalid_argument("config: total_steps must be >= 0");
  if (cfg.checkpoint_interval < 0)
    throw std::invalid_argument("config: checkpoint_interval must be >= 0");
  if (cfg.corpus < 1) throw std::invalid_argument("config: corpus must be >= 1");
  if (cfg.lambda < 0) throw std::invalid_argument("config: lambda must be >= 0");
  if (cfg.model.image_size < 8) throw std::invalid_argument("config: image_size must be >= 8");
  if (cfg.model.trunk.width < 1 || cfg.model.trunk.units < 1 || cfg.model.trunk.dilation < 1)
    throw std::invalid_argument("config: width, units, and dilation must be >= 1");
  if (cfg.model.head_hidden < 1) throw std::invalid_argument("config: head_hidden must be >= 1");
  if (!(cfg.opt.rho >= 0 && cfg.opt.rho < 1))
    throw std::invalid_argument("config: rho must be in [0, 1)");
  if (!(cfg.opt.lr > 0)) throw std::invalid_argument("config: lr must be > 0");
  if (cfg.opt.eps < 0) throw std::invalid_argument("config: eps must be >= 0");
  for (auto& te : cfg.tasks) {
    te.spec.motion.height = cfg.model.image_size;
    te.spec.motion.width = cfg.model.image_size;
    te.spec.validate();
    if (te.workers < 1)
      throw std::invalid_argument("config: task " + std::string(task_name(te.spec.kind)) +
                                  " needs workers >= 1");
    if (te.quota < 0) throw std::invalid_argument("config: quota must be >= 0");
    if (!(te.latency > 0)) throw std::invalid_argument("config: latency must be > 0");
  }
  if (cfg.eval.classes < 2 || cfg.eval.classes > 4)
    throw std::invalid_argument("config: eval classes must be in 2..4");
  if (cfg.eval.per_class < 1 || cfg.eval.test_per_class < 1 || cfg.eval.batch < 1 ||
      cfg.eval.depth_train < 1 || cfg.eval.depth_test < 1)
    throw std::invalid_argument("config: eval set sizes must be >= 1");
  if (cfg.eval.k < 1 || cfg.eval.k > cfg.eval.classes)
    throw std::invalid_argument("config: eval k must be in 1..classes");
  if (cfg.eval.probe_steps < 0 || cfg.eval.finetune_steps < 0)
    throw std::invalid_argument("config: eval step counts must be >= 0");
  if (cfg.eval.depth_factor < 1 || cfg.model.image_size % cfg.eval.depth_factor != 0)
    throw std::invalid_argument("config: depth_factor must divide image_size");
  if (!(cfg.eval.probe_lr > 0) || !(cfg.eval.finetune_lr > 0))
    throw std::invalid_argument("config: eval learning rates must be > 0");
  return cfg;
}

// Canonical text: every key explicit, fixed order, tasks in declaration
// order. parse(serialize(parse(x))) == parse(x) for all valid x.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  using detail::fmt_double;
  std::ostringstream out;
  out << "[experiment]\n";
  out << "id = " << cfg.id << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "mode = " << aggregation_mode_name(cfg.mode) << "\n";
  out << "total_steps = " << cfg.total_steps << "\n";
  out << "checkpoint_interval = " << fmt_double(cfg.checkpoint_interval) << "\n";
  out << "corpus = " << cfg.corpus << "\n";
  out << "lambda = " << fmt_double(cfg.lambda) << "\n";
  out << "lasso = " << lasso_mode_name(cfg.lasso) << "\n";
  out << "\n[model]\n";
  out << "image_size = " << cfg.model.image_size << "\n";
  out << "width = " << cfg.model.trunk.width << "\n";
  out << "units = " << cfg.model.trunk.units << "\n";
  out << "dilation = " << cfg.model.trunk.dilation << "\n";
  out << "head_hidden = " << cfg.model.head_hidden << "\n";
  out << "\n[optimizer]\n";
  out << "rho = " << fmt_double(cfg.opt.rho) << "\n";
  out << "lr = " << fmt_double(cfg.opt.lr) << "\n";
  out << "eps = " << fmt_double(cfg.opt.eps) << "\n";
  for (const auto& te : cfg.tasks) {
    const TaskSpec& t = te.spec;
    out << "\n[task " << task_name(t.kind) << "]\n";
    out << "harmonized = " << (t.harmonized ? "true" : "false") << "\n";
    out << "batch = " << t.batch << "\n";
    out << "step_cost = " << fmt_double(t.step_cost) << "\n";
    out << "loss_scale = " << fmt_double(t.loss_scale) << "\n";
    out << "workers = " << te.workers << "\n";
    out << "quota = " << te.quota << "\n";
    out << "latency = " << fmt_double(te.latency) << "\n";
    switch (t.kind) {
      case TaskKind::RelativePosition:
        out << "grid = " << t.rp_grid << "\n";
        out << "patch = " << t.rp_patch << "\n";
        out << "jitter = " << t.rp_jitter << "\n";
        break;
      case TaskKind::Colorization:
        out << "stride = " << t.col_stride << "\n";
        out << "bins = " << t.col_bins << "\n";
        break;
      case TaskKind::Exemplar:
        out << "patch = " << t.ex_patch << "\n";
        out << "margin = " << fmt_double(t.margin) << "\n";
        out << "translate = " << fmt_double(t.aug.max_translate) << "\n";
        out << "rotate = " << fmt_double(t.aug.max_rotate_deg) << "\n";
        out << "scale_lo = " << fmt_double(t.aug.scale_lo) << "\n";
        out << "scale_hi = " << fmt_double(t.aug.scale_hi) << "\n";
        out << "color_shift = " << fmt_double(t.aug.max_color_shift) << "\n";
        break;
      case TaskKind::MotionSegmentation:
        out << "factor = " << t.ms_factor << "\n";
        out << "blobs = " << t.motion.random_blobs << "\n";
        out << "blob_min = " << t.motion.blob_min << "\n";
        out << "blob_max = " << t.motion.blob_max << "\n";
        out << "max_speed = " << t.motion.max_speed << "\n";
        out << "frames = " << t.motion.frames << "\n";
        break;
    }
  }
  out << "\n[eval]\n";
  out << "suite = " << cfg.eval.suite << "\n";
  out << "classes = " << cfg.eval.classes << "\n";
  out << "per_class = " << cfg.eval.per_class << "\n";
  out << "test_per_class = " << cfg.eval.test_per_class << "\n";
  out << "probe_steps = " << cfg.eval.probe_steps << "\n";
  out << "finetune_steps = " << cfg.eval.finetune_steps << "\n";
  out << "batch = " << cfg.eval.batch << "\n";
  out << "k = " << cfg.eval.k << "\n";
  out << "depth_factor = " << cfg.eval.depth_factor << "\n";
  out << "depth_train = " << cfg.eval.depth_train << "\n";
  out << "depth_test = " << cfg.eval.depth_test << "\n";
  out << "probe_lr = " << fmt_double(cfg.eval.probe_lr) << "\n";
  out << "finetune_lr = " << fmt_double(cfg.eval.finetune_lr) << "\n";
  return out.str();
}

// Expected cost of one full round over the schedule, used to place the
// default checkpoint interval so a run emits about eight snapshots.
inline double expected_total_cost(const ExperimentConfig& cfg) {
  double worker_total = 0, cost_rate = 0;
  for (const auto& te : cfg.tasks) {
    worker_total += double(te.workers);
    cost_rate += double(te.workers) * te.spec.step_cost;
  }
  return worker_total > 0 ? double(cfg.total_steps) * cost_rate / worker_total : 0.0;
}

// Concrete training plan for this experiment. A uniform one-worker-per-task
// schedule becomes the strict round-robin trace (serial-equivalent under
// hybrid aggregation); anything else staggers each task's workers evenly
// across its latency.
inline TrainConfig to_train_config(const ExperimentConfig& cfg) {
  TrainConfig tc;
  tc.seed = cfg.seed;
  tc.mode = cfg.mode;
  tc.model = cfg.model;
  tc.model.lambda = cfg.lambda;
  tc.model.lasso = cfg.lasso;
  tc.opt = cfg.opt;
  tc.total_steps = cfg.total_steps;
  tc.corpus = cfg.corpus;
  tc.checkpoint_interval =
      cfg.checkpoint_interval > 0 ? cfg.checkpoint_interval : expected_total_cost(cfg) / 8.0;

  bool uniform = true;
  for (const auto& te : cfg.tasks)
    if (te.workers != 1 || te.latency != cfg.tasks.front().latency) uniform = false;

  for (const auto& te : cfg.tasks) {
    tc.tasks.push_back(te.spec);
    if (te.quota > 0) tc.quotas[task_name(te.spec.kind)] = te.quota;
  }
  if (uniform) {
    tc.workers = round_robin_trace(tc.tasks, cfg.tasks.front().latency);
  } else {
    for (const auto& te : cfg.tasks)
      for (std::int64_t i = 0; i < te.workers; ++i) {
        WorkerTrace w;
        w.task = task_name(te.spec.kind);
        w.latencies = {te.latency};
        w.initial_delay = te.latency * double(i) / double(te.workers);
        tc.workers.push_back(w);
      }
  }
  return tc;
}

}  // namespace mtss
