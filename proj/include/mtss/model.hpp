#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtss/graph.hpp"
#include "mtss/lasso.hpp"
#include "mtss/params.hpp"
#include "mtss/tasks.hpp"
#include "mtss/trunk.hpp"

namespace mtss {

struct ModelConfig {
  TrunkConfig trunk;
  LassoMode lasso = LassoMode::None;
  double lambda = 1e-3;
  std::int64_t head_hidden = 32;
  std::int64_t image_size = 32;
};

// One task's full training graph. Parameter values live in the store; the
// graph mirrors them as leaves, so a step is: refresh params, load a batch,
// forward, backward.
template <typename T>
struct TaskModel {
  TaskKind kind = TaskKind::RelativePosition;
  TaskSpec spec;
  Graph<T> g;
  std::unordered_map<std::string, NodeId> params;
  NodeId input = -1;
  NodeId labels = -1;  // unused for exemplar
  NodeId task_loss = -1;
  NodeId loss = -1;  // task loss plus any penalty
  NodeId rep = -1;   // head input: combined units or the last unit
  NodeId logits = -1;
  std::vector<NodeId> units;
  std::string alpha_name;  // empty when the combiner is off

  void refresh_params(const ParamStore<T>& store) {
    for (auto& kv : params) g.set_leaf(kv.second, store.get(kv.first).values);
  }

  std::vector<std::string> param_names() const {
    std::vector<std::string> out;
    out.reserve(params.size());
    for (auto& kv : params) out.push_back(kv.first);
    std::sort(out.begin(), out.end());
    return out;
  }
};

namespace detail {

template <typename T>
NodeId affine(Graph<T>& g, NodeId x, double mul, double add) {
  NodeId m = g.input(Tensor<T>(Shape{}, std::vector<T>{T(mul)}));
  NodeId a = g.input(Tensor<T>(Shape{}, std::vector<T>{T(add)}));
  return g.apply(Kind::Add, {g.apply(Kind::Multiply, {x, m}), a});
}

// Map raw pipeline outputs onto a roughly [-1,1] network input: RGB lives in
// [0,1], replicated lightness in [0,100].
template <typename T>
NodeId scale_input(Graph<T>& g, NodeId x, bool lightness) {
  return lightness ? affine(g, x, 1.0 / 50.0, -1.0) : affine(g, x, 2.0, -1.0);
}

// Stride-2 residual reduction: projection shortcut plus a two-conv branch.
// Halves spatial extent, keeps width.
template <typename T>
NodeId head_reduce(Graph<T>& g, Binder<T>& bind, const std::string& prefix, NodeId x,
                   std::int64_t width) {
  Attrs s2k1, s2k3, s1k3;
  s2k1.stride = 2;
  s2k3.stride = 2;
  s2k3.padding = 1;
  s1k3.padding = 1;
  NodeId proj = g.apply(Kind::Conv2d, {x, bind(prefix + "/proj/w", {width, width, 1, 1}, Init::He)}, s2k1);
  NodeId h = g.apply(Kind::Relu, {x});
  h = g.apply(Kind::Conv2d, {h, bind(prefix + "/conv1/w", {width, width, 3, 3}, Init::He)}, s2k3);
  h = g.apply(Kind::Relu, {h});
  h = g.apply(Kind::Conv2d, {h, bind(prefix + "/conv2/w", {width, width, 3, 3}, Init::Zero)}, s1k3);
  return g.apply(Kind::Add, {proj, h});
}

template <typename T>
NodeId fc(Graph<T>& g, Binder<T>& bind, const std::string& prefix, NodeId x, std::int64_t in,
          std::int64_t out) {
  NodeId w = bind(prefix + "/w", {in, out}, Init::He);
  NodeId b = bind(prefix + "/b", {out}, Init::Zero);
  return g.apply(Kind::Add, {g.apply(Kind::MatMul, {x, w}), b});
}

}  // namespace detail

// Hinge over cosine distances: mean(max(D(f1,f2) - D(f1,f3) + margin, 0)).
template <typename T>
NodeId triplet_loss(Graph<T>& g, NodeId f1, NodeId f2, NodeId f3, double margin) {
  if (!(margin > 0)) throw std::invalid_argument("triplet margin must be > 0");
  NodeId d12 = g.apply(Kind::CosineDistance, {f1, f2});
  NodeId d13 = g.apply(Kind::CosineDistance, {f1, f3});
  NodeId neg1 = g.input(Tensor<T>(Shape{}, std::vector<T>{T(-1)}));
  NodeId diff = g.apply(Kind::Add, {d12, g.apply(Kind::Multiply, {d13, neg1})});
  NodeId m = g.input(Tensor<T>(Shape{}, std::vector<T>{T(margin)}));
  NodeId hinge = g.apply(Kind::Relu, {g.apply(Kind::Add, {diff, m})});
  return g.apply(Kind::ReduceMean, {hinge});
}

template <typename T>
TaskModel<T> build_task_model(const TaskSpec& spec, const ModelConfig& mc, ParamStore<T>& store) {
  spec.validate();
  TaskModel<T> model;
  model.kind = spec.kind;
  model.spec = spec;
  Graph<T>& g = model.g;
  Binder<T> bind{g, store, {}};
  const std::string tname = task_name(spec.kind);
  const std::int64_t W = mc.trunk.width, B = spec.batch, S = mc.image_size;

  Shape in_shape;
  bool lightness = spec.harmonized || spec.kind == TaskKind::Colorization;
  switch (spec.kind) {
    case TaskKind::RelativePosition:
      in_shape = {2 * B, 3, spec.rp_patch, spec.rp_patch};
      break;
    case TaskKind::Colorization:
      in_shape = {B, 3, S, S};
      break;
    case TaskKind::Exemplar:
      in_shape = {3 * B, 3, spec.ex_patch, spec.ex_patch};
      break;
    case TaskKind::MotionSegmentation:
      in_shape = {B, 3, S, S};
      break;
  }
  model.input = g.input(Tensor<T>(in_shape, T(0.25)));
  NodeId x = detail::scale_input(g, model.input, lightness);
  model.units = trunk_forward(g, x, mc.trunk, bind);

  if (pretrain_lasso_active(mc.lasso)) {
    auto row = alpha_row(g, bind, "pretrain", tname, mc.trunk.units);
    model.alpha_name = row.name;
    model.rep = lasso_combine(g, row.alpha, model.units);
    if (mc.lambda < 0) throw std::invalid_argument("negative lambda");
  } else {
    model.rep = model.units.back();
  }

  switch (spec.kind) {
    case TaskKind::RelativePosition: {
      NodeId red = detail::head_reduce(g, bind, "head/rp/red", model.rep, W);
      Attrs keep1;
      keep1.keep = 1;
      NodeId flat = g.apply(Kind::Flatten, {red}, keep1);
      std::int64_t feat = g.shape(flat)[1];
      Attrs a1, a2, cat;
      a1.begin = 0;
      a1.end = B;
      a2.begin = B;
      a2.end = 2 * B;
      cat.axis = 1;
      NodeId pair = g.apply(Kind::Concat,
                            {g.apply(Kind::Slice, {flat}, a1), g.apply(Kind::Slice, {flat}, a2)}, cat);
      NodeId h = g.apply(Kind::Relu, {detail::fc(g, bind, "head/rp/fc1", pair, 2 * feat, mc.head_hidden)});
      model.logits = detail::fc(g, bind, "head/rp/fc2", h, mc.head_hidden, 8);
      model.labels = g.input(Tensor<T>({B}, T(0)));
      NodeId per = g.apply(Kind::SoftmaxXent, {model.logits, model.labels});
      model.task_loss = g.apply(Kind::ReduceMean, {per});
      break;
    }
    case TaskKind::Colorization: {
      if (S % spec.col_stride != 0)
        throw std::invalid_argument("label stride must divide the image extent");
      std::int64_t gh = S / spec.col_stride;
      std::int64_t classes = std::int64_t(spec.col_bins) * spec.col_bins;
      Attrs pool;
      pool.window = spec.col_stride;
      pool.stride = spec.col_stride;
      NodeId pooled = g.apply(Kind::MaxPool2d, {model.rep}, pool);
      NodeId h = g.apply(Kind::Relu,
                         {g.apply(Kind::Conv2d,
                                  {pooled, bind("head/col/conv1/w", {mc.head_hidden, W, 1, 1}, Init::He)})});
      model.logits = g.apply(
          Kind::Conv2d, {h, bind("head/col/conv2/w", {classes, mc.head_hidden, 1, 1}, Init::He)});
      model.labels = g.input(Tensor<T>({B, gh, gh}, T(0)));
      NodeId per = g.apply(Kind::SoftmaxXent, {model.logits, model.labels});
      model.task_loss = g.apply(Kind::ReduceMean, {per});
      break;
    }
    case TaskKind::Exemplar: {
      NodeId red = detail::head_reduce(g, bind, "head/ex/red", model.rep, W);
      Attrs keep1;
      keep1.keep = 1;
      NodeId emb = g.apply(Kind::Flatten, {red}, keep1);
      model.logits = emb;
      Attrs a1, a2, a3;
      a1.begin = 0;
      a1.end = B;
      a2.begin = B;
      a2.end = 2 * B;
      a3.begin = 2 * B;
      a3.end = 3 * B;
      NodeId f1 = g.apply(Kind::Slice, {emb}, a1);
      NodeId f2 = g.apply(Kind::Slice, {emb}, a2);
      NodeId f3 = g.apply(Kind::Slice, {emb}, a3);
      model.task_loss = triplet_loss(g, f1, f2, f3, spec.margin);
      break;
    }
    case TaskKind::MotionSegmentation: {
      if (S % spec.ms_factor != 0)
        throw std::invalid_argument("mask factor must divide the image extent");
      std::int64_t mh = S / spec.ms_factor;
      Attrs pool;
      pool.window = spec.ms_factor;
      pool.stride = spec.ms_factor;
      NodeId pooled = g.apply(Kind::MaxPool2d, {model.rep}, pool);
      NodeId h = g.apply(Kind::Relu,
                         {g.apply(Kind::Conv2d,
                                  {pooled, bind("head/ms/conv1/w", {mc.head_hidden, W, 1, 1}, Init::He)})});
      model.logits =
          g.apply(Kind::Conv2d, {h, bind("head/ms/conv2/w", {1, mc.head_hidden, 1, 1}, Init::He)});
      model.labels = g.input(Tensor<T>({B, 1, mh, mh}, T(0)));
      NodeId per = g.apply(Kind::SigmoidXent, {model.logits, model.labels});
      model.task_loss = g.apply(Kind::ReduceMean, {per});
      break;
    }
  }

  if (!model.alpha_name.empty() && mc.lambda > 0) {
    NodeId alpha = g.apply(Kind::L2Normalize, {bind.nodes.at(model.alpha_name)});
    model.loss = g.apply(Kind::Add, {model.task_loss, lasso_penalty(g, alpha, mc.lambda)});
  } else {
    model.loss = model.task_loss;
  }
  if (spec.loss_scale != 1.0) {
    NodeId sc = g.input(Tensor<T>(Shape{}, std::vector<T>{T(spec.loss_scale)}));
    model.loss = g.apply(Kind::Multiply, {model.loss, sc});
  }
  model.params = std::move(bind.nodes);
  return model;
}

// Batch loading. Values only; shapes were fixed when the graph was built.
template <typename T>
void load_batch(TaskModel<T>& m, const PatchPairBatch<T>& b) {
  m.g.set_leaf(m.input, b.patches.values);
  std::vector<T> lab(b.labels.begin(), b.labels.end());
  m.g.set_leaf(m.labels, lab);
}
template <typename T>
void load_batch(TaskModel<T>& m, const ColorizationBatch<T>& b) {
  m.g.set_leaf(m.input, b.input.values);
  m.g.set_leaf(m.labels, b.labels.values);
}
template <typename T>
void load_batch(TaskModel<T>& m, const TripletBatch<T>& b) {
  m.g.set_leaf(m.input, b.patches.values);
}
template <typename T>
void load_batch(TaskModel<T>& m, const MotionBatch<T>& b) {
  m.g.set_leaf(m.input, b.frames.values);
  m.g.set_leaf(m.labels, b.masks.values);
}

// Samples a batch for the model's task from its keyed stream and loads it.
template <typename T>
void sample_and_load(TaskModel<T>& m, const std::vector<Image<T>>& images, RngStream& rng) {
  switch (m.kind) {
    case TaskKind::RelativePosition:
      load_batch(m, sample_relative_position_batch(images, m.spec, rng));
      break;
    case TaskKind::Colorization:
      load_batch(m, make_colorization_batch(images, m.spec, rng));
      break;
    case TaskKind::Exemplar:
      load_batch(m, exemplar_triplet_batch(images, m.spec, rng));
      break;
    case TaskKind::MotionSegmentation:
      load_batch(m, make_motion_batch<T>(m.spec, rng));
      break;
  }
}

// Bare trunk for feature extraction: input leaf plus the M unit outputs.
template <typename T>
struct TrunkProbe {
  Graph<T> g;
  std::unordered_map<std::string, NodeId> params;
  NodeId input = -1;
  std::vector<NodeId> units;

  void refresh_params(const ParamStore<T>& store) {
    for (auto& kv : params) g.set_leaf(kv.second, store.get(kv.first).values);
  }
};

template <typename T>
TrunkProbe<T> build_trunk_probe(const ModelConfig& mc, ParamStore<T>& store, const Shape& in_shape,
                                bool lightness) {
  TrunkProbe<T> probe;
  Binder<T> bind{probe.g, store, {}};
  probe.input = probe.g.input(Tensor<T>(in_shape, T(0.25)));
  NodeId x = detail::scale_input(probe.g, probe.input, lightness);
  probe.units = trunk_forward(probe.g, x, mc.trunk, bind);
  probe.params = std::move(bind.nodes);
  return probe;
}

}  // namespace mtss
