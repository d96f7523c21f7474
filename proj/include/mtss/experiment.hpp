#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mtss/config.hpp"
#include "mtss/datasets.hpp"
#include "mtss/eval.hpp"
#include "mtss/grad_check.hpp"
#include "mtss/metrics.hpp"
#include "mtss/trainer.hpp"

namespace mtss {

// File layout under the output directory, all keyed by the experiment id:
//   <id>-ckpt-NNN.mtss   cadence checkpoints, NNN = 000, 001, ...
//   <id>-final.mtss      state at the end of the run
//   <id>-train.log       pretraining metrics records
//   <id>-eval-NNN.log    evaluation records for checkpoint NNN
//   <id>-curve.tsv       per-checkpoint metric curves (report)
//   <id>-report.txt      rendered summary tables (report)

inline std::string artifact_path(const std::string& out_dir, const std::string& id,
                                 const std::string& suffix) {
  return (std::filesystem::path(out_dir) / (id + suffix)).string();
}

inline std::string checkpoint_index_name(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "-ckpt-%03zu.mtss", index);
  return buf;
}

struct PretrainArtifacts {
  std::vector<std::string> checkpoint_paths;
  std::string final_path;
  std::string metrics_path;
  double total_cost = 0;
};

template <typename T>
PretrainArtifacts run_pretrain(const ExperimentConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  TrainConfig tc = to_train_config(cfg);
  TrainResult<T> res = run_training<T>(tc);
  if (!res.conserved) throw std::runtime_error("packet conservation violated");

  PretrainArtifacts art;
  art.total_cost = res.total_cost;
  for (std::size_t i = 0; i < res.checkpoints.size(); ++i) {
    std::string path = artifact_path(out_dir, cfg.id, checkpoint_index_name(i));
    write_checkpoint_file(path, res.checkpoints[i]);
    art.checkpoint_paths.push_back(path);
  }
  art.final_path = artifact_path(out_dir, cfg.id, "-final.mtss");
  write_checkpoint_file(art.final_path, res.final_checkpoint);

  std::vector<MetricsRecord> recs;
  for (const auto& l : res.losses) {
    recs.emplace_back(l.cost, cfg.id, "loss");
    recs.back()
        .add("task", l.task)
        .add("loss", l.loss)
        .add("version", std::int64_t(l.version));
  }
  for (std::size_t i = 0; i < res.checkpoints.size(); ++i) {
    Checkpoint c = parse_checkpoint(res.checkpoints[i]);
    recs.emplace_back(c.accumulated_cost, cfg.id, "checkpoint");
    recs.back().add("index", std::int64_t(i));
  }
  for (const auto& [task, st] : res.stats) {
    recs.emplace_back(res.total_cost, cfg.id, "schedule");
    recs.back()
        .add("task", task)
        .add("produced", st.produced)
        .add("applied", st.applied)
        .add("discarded", st.discarded)
        .add("applies", std::int64_t(st.applies))
        .add("max_staleness", st.max_staleness());
  }
  art.metrics_path = artifact_path(out_dir, cfg.id, "-train.log");
  std::filesystem::remove(art.metrics_path);  // a rerun replaces its own log
  append_records(art.metrics_path, recs);
  return art;
}

namespace detail {

template <typename T>
struct EvalData {
  ClassDataset<T> cls_train, cls_test;
  DepthDataset<T> depth_train, depth_test;
};

// One shared dataset per experiment, so every checkpoint is scored on the
// same examples and curves are comparable across cost.
template <typename T>
EvalData<T> build_eval_data(const ExperimentConfig& cfg) {
  EvalData<T> d;
  auto rng = RngStream::derive(cfg.seed, {hash_name("eval-data")});
  d.cls_train = make_texture_dataset<T>(cfg.eval.classes, cfg.eval.per_class,
                                        cfg.model.image_size, rng);
  d.cls_test = make_texture_dataset<T>(cfg.eval.classes, cfg.eval.test_per_class,
                                       cfg.model.image_size, rng);
  d.depth_train =
      make_depth_dataset<T>(cfg.eval.depth_train, cfg.model.image_size, cfg.eval.depth_factor, rng);
  d.depth_test =
      make_depth_dataset<T>(cfg.eval.depth_test, cfg.model.image_size, cfg.eval.depth_factor, rng);
  return d;
}

inline bool suite_has(const std::string& suite, const char* part) {
  return suite == "all" || suite == part;
}

// Evaluate one checkpoint and write its record file.
template <typename T>
void eval_one_checkpoint(const ExperimentConfig& cfg, const EvalData<T>& data,
                         const std::string& ckpt_path, std::size_t index,
                         const std::string& out_dir) {
  auto bytes = read_checkpoint_file(ckpt_path);
  Checkpoint c = parse_checkpoint(bytes);
  const double t = c.accumulated_cost;
  std::vector<MetricsRecord> recs;

  if (suite_has(cfg.eval.suite, "frozen")) {
    ParamStore<T> trunk(cfg.seed);
    build_trunk_probe(cfg.model, trunk, Shape{1, 3, cfg.model.image_size, cfg.model.image_size},
                      false);
    load_matching_params(c, trunk);
    EvalOptions po;
    po.seed = cfg.seed;
    po.lasso = eval_lasso_active(cfg.lasso);
    po.lambda = cfg.lambda;
    po.k = cfg.eval.k;
    po.steps = cfg.eval.probe_steps;
    po.opt.lr = cfg.eval.probe_lr;
    ProbeResult pr = frozen_linear_eval(cfg.model, trunk, data.cls_train, data.cls_test, po);
    recs.emplace_back(t, cfg.id, "frozen");
    recs.back()
        .add("ckpt", std::int64_t(index))
        .add("accuracy", pr.accuracy)
        .add("recall_at_k", pr.recall_at_k)
        .add("k", pr.k)
        .add("steps", pr.steps_run)
        .add("loss", pr.final_loss);
    for (std::size_t m = 0; m < pr.alpha.size(); ++m) {
      recs.emplace_back(t, cfg.id, "sparsity");
      recs.back()
          .add("task", "frozen")
          .add("unit", std::int64_t(m))
          .add("abs_alpha", std::abs(pr.alpha[m]));
    }
  }

  FinetuneOptions fo;
  fo.seed = cfg.seed;
  fo.steps = cfg.eval.finetune_steps;
  fo.batch = cfg.eval.batch;
  fo.opt.lr = cfg.eval.finetune_lr;
  if (suite_has(cfg.eval.suite, "finetune")) {
    FinetuneResult fr = finetune_classify<T>(cfg.model, bytes, data.cls_train, data.cls_test, fo);
    recs.emplace_back(t, cfg.id, "finetune");
    recs.back()
        .add("ckpt", std::int64_t(index))
        .add("accuracy", fr.accuracy)
        .add("steps", fr.steps_run)
        .add("loss", fr.final_loss);
  }
  if (suite_has(cfg.eval.suite, "depth")) {
    FinetuneResult dr = finetune_depth<T>(cfg.model, bytes, data.depth_train, data.depth_test, fo);
    recs.emplace_back(t, cfg.id, "depth");
    recs.back()
        .add("ckpt", std::int64_t(index))
        .add("pct_below_1_25", dr.depth.pct_below_1_25)
        .add("pct_below_1_25_sq", dr.depth.pct_below_1_25_sq)
        .add("pct_below_1_25_cube", dr.depth.pct_below_1_25_cube)
        .add("mean_absolute_error", dr.depth.mean_absolute_error)
        .add("mean_relative_error", dr.depth.mean_relative_error)
        .add("steps", dr.steps_run)
        .add("loss", dr.final_loss);
  }

  char buf[16];
  std::snprintf(buf, sizeof buf, "-eval-%03zu.log", index);
  std::string path = artifact_path(out_dir, cfg.id, buf);
  std::filesystem::remove(path);
  append_records(path, recs);
}

}  // namespace detail

// Scores every cadence checkpoint of the experiment with the configured
// evaluation suites. Jobs are independent; with parallel > 1 they run on
// that many threads, each writing only its own per-checkpoint file.
template <typename T>
std::vector<std::string> run_eval(const ExperimentConfig& cfg, const std::string& out_dir,
                                  int parallel = 1) {
  if (cfg.eval.suite == "none") return {};
  std::vector<std::string> ckpts;
  for (std::size_t i = 0;; ++i) {
    std::string path = artifact_path(out_dir, cfg.id, checkpoint_index_name(i));
    if (!std::filesystem::exists(path)) break;
    ckpts.push_back(path);
  }
  if (ckpts.empty())
    throw std::runtime_error("no checkpoints found for experiment '" + cfg.id + "' in " + out_dir);

  const auto data = detail::build_eval_data<T>(cfg);
  if (parallel < 1) parallel = 1;
  std::vector<std::thread> pool;
  for (int w = 0; w < parallel; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = std::size_t(w); i < ckpts.size(); i += std::size_t(parallel))
        detail::eval_one_checkpoint<T>(cfg, data, ckpts[i], i, out_dir);
    });
  for (auto& th : pool) th.join();

  std::vector<std::string> out;
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "-eval-%03zu.log", i);
    out.push_back(artifact_path(out_dir, cfg.id, buf));
  }
  return out;
}

// Renders the per-checkpoint curve file and a text summary from the logs
// that pretrain and eval left behind. Returns the summary text.
inline std::string run_report(const ExperimentConfig& cfg, const std::string& out_dir) {
  auto train = read_metrics_file(artifact_path(out_dir, cfg.id, "-train.log"));

  struct Row {
    double cost = 0;
    std::map<std::string, double> vals;  // column -> value
  };
  std::map<std::int64_t, Row> rows;  // checkpoint index -> curve row
  std::vector<MetricsRecord> sched, sparsity;
  for (std::size_t i = 0;; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "-eval-%03zu.log", i);
    std::string path = artifact_path(out_dir, cfg.id, buf);
    if (!std::filesystem::exists(path)) break;
    for (const auto& r : read_metrics_file(path)) {
      if (r.kind == "sparsity") {
        sparsity.push_back(r);
        continue;
      }
      auto idx = std::int64_t(r.number("ckpt"));
      Row& row = rows[idx];
      row.cost = r.t;
      if (r.kind == "frozen") row.vals["frozen_accuracy"] = r.number("accuracy");
      if (r.kind == "finetune") row.vals["finetune_accuracy"] = r.number("accuracy");
      if (r.kind == "depth") {
        row.vals["depth_pct_below_1_25"] = r.number("pct_below_1_25");
        row.vals["depth_mean_relative_error"] = r.number("mean_relative_error");
      }
    }
  }
  for (const auto& r : train)
    if (r.kind == "schedule") sched.push_back(r);

  const std::vector<std::string> cols{"frozen_accuracy", "finetune_accuracy",
                                      "depth_pct_below_1_25", "depth_mean_relative_error"};
  std::ostringstream curve;
  curve << "cost";
  for (const auto& c : cols) curve << "\t" << c;
  curve << "\n";
  for (const auto& [idx, row] : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", row.cost);
    curve << buf;
    for (const auto& c : cols) {
      auto it = row.vals.find(c);
      if (it == row.vals.end()) {
        curve << "\t-";
      } else {
        std::snprintf(buf, sizeof buf, "%.6g", it->second);
        curve << "\t" << buf;
      }
    }
    curve << "\n";
  }
  std::string curve_path = artifact_path(out_dir, cfg.id, "-curve.tsv");
  {
    std::FILE* f = std::fopen(curve_path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open for write: " + curve_path);
    std::string s = curve.str();
    bool ok = std::fwrite(s.data(), 1, s.size(), f) == s.size();
    std::fclose(f);
    if (!ok) throw std::runtime_error("short write: " + curve_path);
  }

  std::ostringstream rep;
  rep << "experiment " << cfg.id << "  (mode " << aggregation_mode_name(cfg.mode) << ", lasso "
      << lasso_mode_name(cfg.lasso) << ", seed " << cfg.seed << ")\n";
  rep << "tasks:";
  for (const auto& te : cfg.tasks)
    rep << " " << task_name(te.spec.kind) << (te.spec.harmonized ? "/h" : "");
  rep << "\n\n";

  rep << "evaluation by checkpoint\n";
  rep << "  idx        cost  frozen-acc  finetune-acc  depth<1.25  depth-mre\n";
  for (const auto& [idx, row] : rows) {
    char line[160];
    auto cell = [&](const char* key) {
      auto it = row.vals.find(key);
      return it == row.vals.end() ? -1.0 : it->second;
    };
    std::snprintf(line, sizeof line, "  %3lld  %10.4g  %10.4g  %12.4g  %10.4g  %9.4g\n",
                  static_cast<long long>(idx), row.cost, cell("frozen_accuracy"),
                  cell("finetune_accuracy"), cell("depth_pct_below_1_25"),
                  cell("depth_mean_relative_error"));
    rep << line;
  }

  rep << "\nschedule\n";
  rep << "  task  produced  applied  discarded  applies  max-staleness\n";
  for (const auto& r : sched) {
    char line[160];
    std::snprintf(line, sizeof line, "  %-4s  %8lld  %7lld  %9lld  %7lld  %13lld\n",
                  r.find("task")->c_str(), static_cast<long long>(r.number("produced")),
                  static_cast<long long>(r.number("applied")),
                  static_cast<long long>(r.number("discarded")),
                  static_cast<long long>(r.number("applies")),
                  static_cast<long long>(r.number("max_staleness")));
    rep << line;
  }

  if (!sparsity.empty()) {
    rep << "\ncombination-row profile (last checkpoint)\n";
    rep << "  task  unit  abs-alpha\n";
    double last_t = sparsity.back().t;
    for (const auto& r : sparsity) {
      if (r.t != last_t) continue;
      char line[120];
      std::snprintf(line, sizeof line, "  %-6s  %4lld  %9.5f\n", r.find("task")->c_str(),
                    static_cast<long long>(r.number("unit")), r.number("abs_alpha"));
      rep << line;
    }
  }

  std::string text = rep.str();
  std::string rep_path = artifact_path(out_dir, cfg.id, "-report.txt");
  std::FILE* f = std::fopen(rep_path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open for write: " + rep_path);
  bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size();
  std::fclose(f);
  if (!ok) throw std::runtime_error("short write: " + rep_path);
  return text;
}

// Runs the configured schedule and summarizes aggregation behavior per task.
template <typename T>
std::string simulate_schedule(const ExperimentConfig& cfg) {
  TrainConfig tc = to_train_config(cfg);
  TrainResult<T> res = run_training<T>(tc);
  std::ostringstream out;
  out << "mode " << aggregation_mode_name(cfg.mode) << ", " << tc.workers.size() << " workers, "
      << res.total_cost << " cost units\n";
  out << "task  produced  applied  discarded  applies  staleness(histogram)\n";
  for (const auto& [task, st] : res.stats) {
    out << task << "  " << st.produced << "  " << st.applied << "  " << st.discarded << "  "
        << st.applies << "  ";
    if (st.staleness.empty()) out << "-";
    for (const auto& [v, n] : st.staleness) out << v << ":" << n << " ";
    out << "\n";
  }
  out << (res.conserved ? "conservation: ok\n" : "conservation: VIOLATED\n");
  return out.str();
}

struct GradCheckRow {
  std::string name;
  GradReport report;
};

namespace detail {

template <typename T>
Tensor<T> rand_tensor(const Shape& s, RngStream& rng, double lo, double hi) {
  Tensor<T> t(s);
  for (auto& v : t.values) v = T(rng.uniform(lo, hi));
  return t;
}

// values bounded away from zero so relu/abs kinks cannot sit on a sample
template <typename T>
Tensor<T> rand_signed(const Shape& s, RngStream& rng) {
  Tensor<T> t(s);
  for (auto& v : t.values)
    v = T(rng.uniform(0.2, 1.0)) * (rng.uniform() < 0.5 ? T(-1) : T(1));
  return t;
}

template <typename T>
NodeId weighted_sum(Graph<T>& g, NodeId out, RngStream& rng) {
  Tensor<T> w(g.shape(out));
  for (auto& v : w.values) v = T(rng.uniform(0.2, 1.0)) * (rng.uniform() < 0.5 ? T(-1) : T(1));
  NodeId prod = g.apply(Kind::Multiply, {out, g.input(w)});
  return g.apply(Kind::ReduceSum, {prod});
}

}  // namespace detail

// One small randomized graph per differentiable primitive plus the four
// end-to-end task losses, all checked against central differences.
inline std::vector<GradCheckRow> run_grad_checks(std::uint64_t seed) {
  using T = double;
  std::vector<GradCheckRow> rows;
  auto rng = RngStream::derive(seed, {hash_name("grad-check")});
  auto check = [&](const std::string& name, Graph<T>& g, NodeId loss, double step, double tol) {
    rows.push_back({name, grad_check(g, loss, step, tol)});
  };

  {
    Graph<T> g;
    NodeId a = g.param(detail::rand_signed<T>({3, 4}, rng));
    NodeId b = g.param(detail::rand_signed<T>({3, 4}, rng));
    check("add", g, detail::weighted_sum(g, g.apply(Kind::Add, {a, b}), rng), 1e-6, 1e-6);
  }
  {
    Graph<T> g;
    NodeId a = g.param(detail::rand_signed<T>({3, 4}, rng));
    NodeId b = g.param(detail::rand_signed<T>({3, 4}, rng));
    check("multiply", g, detail::weighted_sum(g, g.apply(Kind::Multiply, {a, b}), rng), 1e-6,
          1e-6);
  }
  {
    Graph<T> g;
    NodeId a = g.param(detail::rand_signed<T>({3, 5}, rng));
    NodeId b = g.param(detail::rand_signed<T>({5, 2}, rng));
    check("matmul", g, detail::weighted_sum(g, g.apply(Kind::MatMul, {a, b}), rng), 1e-6, 1e-6);
  }
  {
    Graph<T> g;
    NodeId x = g.param(detail::rand_signed<T>({1, 2, 6, 6}, rng));
    NodeId w = g.param(detail::rand_signed<T>({3, 2, 3, 3}, rng));
    Attrs at;
    at.padding = 1;
    check("conv2d", g, detail::weighted_sum(g, g.apply(Kind::Conv2d, {x, w}, at), rng), 1e-6,
          1e-6);
  }
  {
    Graph<T> g;
    NodeId x = g.param(detail::rand_tensor<T>({1, 2, 6, 6}, rng, 0.0, 1.0));
    Attrs at;
    at.window = 2;
    at.stride = 2;
    check("maxpool2d", g, detail::weighted_sum(g, g.apply(Kind::MaxPool2d, {x}, at), rng), 1e-6,
          1e-5);
  }
  {
    Graph<T> g;
    NodeId x = g.param(detail::rand_signed<T>({2, 5}, rng));
    check("relu", g, detail::weighted_sum(g, g.apply(Kind::Relu, {x}), rng), 1e-6, 1e-6);
  }
  {
    Graph<T> g;
    NodeId x = g.param(detail::rand_signed<T>({6}, rng));
    check("l2-normalize", g, detail::weighted_sum(g, g.apply(Kind::L2Normalize, {x}), rng), 1e-6,
          1e-6);
  }
  {
    Graph<T> g;
    NodeId a = g.param(detail::rand_signed<T>({2, 6}, rng));
    NodeId b = g.param(detail::rand_signed<T>({2, 6}, rng));
    check("cosine-distance", g,
          detail::weighted_sum(g, g.apply(Kind::CosineDistance, {a, b}), rng), 1e-6, 1e-6);
  }
  {
    Graph<T> g;
    NodeId logits = g.param(detail::rand_signed<T>({4, 3}, rng));
    NodeId labels = g.input(Tensor<T>({4}, {0, 2, 1, 2}));
    check("softmax-cross-entropy", g,
          detail::weighted_sum(g, g.apply(Kind::SoftmaxXent, {logits, labels}), rng), 1e-6, 1e-6);
  }
  {
    Graph<T> g;
    NodeId logits = g.param(detail::rand_signed<T>({3, 4}, rng));
    NodeId targets = g.input(detail::rand_tensor<T>({3, 4}, rng, 0.0, 1.0));
    check("sigmoid-cross-entropy", g,
          detail::weighted_sum(g, g.apply(Kind::SigmoidXent, {logits, targets}), rng), 1e-6, 1e-6);
  }
  {
    Graph<T> g;
    NodeId x = g.param(detail::rand_signed<T>({8}, rng));
    Attrs at;
    at.threshold = 0.5;  // samples are in ±[0.2, 1.0] \ {±0.5} almost surely
    check("reverse-huber", g, detail::weighted_sum(g, g.apply(Kind::ReverseHuber, {x}, at), rng),
          1e-6, 1e-6);
  }
  {
    Graph<T> g;
    NodeId x = g.param(detail::rand_signed<T>({3, 4}, rng));
    check("reduce-mean", g, detail::weighted_sum(g, g.apply(Kind::ReduceMean, {x}), rng), 1e-6,
          1e-6);
  }
  {
    Graph<T> g;
    NodeId x = g.param(detail::rand_signed<T>({3, 4}, rng));
    check("reduce-sum", g, detail::weighted_sum(g, g.apply(Kind::ReduceSum, {x}), rng), 1e-6,
          1e-6);
  }
  {
    Graph<T> g;
    NodeId a = g.param(detail::rand_signed<T>({2, 3}, rng));
    NodeId b = g.param(detail::rand_signed<T>({2, 5}, rng));
    Attrs at;
    at.axis = 1;
    check("concat", g, detail::weighted_sum(g, g.apply(Kind::Concat, {a, b}, at), rng), 1e-6,
          1e-6);
  }
  {
    Graph<T> g;
    NodeId x = g.param(detail::rand_signed<T>({2, 3, 4}, rng));
    Attrs at;
    at.keep = 1;
    check("flatten", g, detail::weighted_sum(g, g.apply(Kind::Flatten, {x}, at), rng), 1e-6,
          1e-6);
  }
  {
    Graph<T> g;
    NodeId x = g.param(detail::rand_signed<T>({6}, rng));
    Attrs at;
    at.begin = 1;
    at.end = 4;
    check("slice", g, detail::weighted_sum(g, g.apply(Kind::Slice, {x}, at), rng), 1e-6, 1e-6);
  }

  // the four task losses end to end: trunk -> head -> loss
  ModelConfig mc;
  mc.trunk.width = 4;
  mc.trunk.units = 2;
  mc.image_size = 16;
  mc.head_hidden = 8;
  mc.lasso = LassoMode::PretrainOnly;
  mc.lambda = 1e-3;
  std::vector<Image<T>> images;
  auto img_rng = RngStream::derive(seed, {hash_name("grad-check-images")});
  for (int i = 0; i < 4; ++i) images.push_back(synth_image<T>(img_rng, 16, 16));
  for (TaskKind kind : {TaskKind::RelativePosition, TaskKind::Colorization, TaskKind::Exemplar,
                        TaskKind::MotionSegmentation}) {
    TaskSpec t = default_task(kind);
    t.batch = 1;
    t.rp_grid = 2;
    t.rp_patch = 6;
    t.rp_jitter = 0;
    t.col_stride = 4;
    t.col_bins = 3;
    t.ex_patch = 8;
    t.ms_factor = 4;
    t.motion.height = t.motion.width = 16;
    t.motion.random_blobs = 1;
    ParamStore<T> store(seed + std::uint64_t(kind));
    auto model = build_task_model(t, mc, store);
    // residual branch convs start at zero; give them live values so the
    // check exercises every path
    for (const auto& name : model.param_names())
      if (name.find("conv2/w") != std::string::npos)
        for (auto& v : store.get(name).values) v = T(rng.uniform(-0.2, 0.2));
    model.refresh_params(store);
    sample_and_load(model, images, rng);
    model.g.forward();
    rows.push_back({std::string("task-") + task_name(kind),
                    grad_check(model.g, model.loss, 1e-5, 1e-5)});
  }
  return rows;
}

}  // namespace mtss
