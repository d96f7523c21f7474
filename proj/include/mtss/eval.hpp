#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtss/checkpoint.hpp"
#include "mtss/datasets.hpp"
#include "mtss/depth_metrics.hpp"
#include "mtss/lasso.hpp"
#include "mtss/model.hpp"
#include "mtss/optimizer.hpp"
#include "mtss/params.hpp"
#include "mtss/rng.hpp"
#include "mtss/tensor.hpp"

namespace mtss {

struct EvalOptions {
  std::uint64_t seed = 1;
  bool lasso = false;    // learn a unit-combination row instead of using the last unit
  double lambda = 1e-3;  // L1 strength on the combination row
  std::int64_t k = 2;    // recall@k cutoff
  std::int64_t steps = 300;
  std::int64_t plateau_window = 40;  // stop after this many steps without improvement
  double plateau_tol = 1e-6;
  std::int64_t pool_window = 0, pool_stride = 0;  // 0: half / quarter of image size
  RmsPropConfig opt{0.9, 1e-2, 1e-8};
  std::int64_t chunk = 8;  // images per trunk forward during feature extraction
};

struct ProbeResult {
  double accuracy = 0;
  double recall_at_k = 0;
  std::int64_t k = 0;
  std::int64_t steps_run = 0;
  double final_loss = 0;
  std::vector<double> alpha;  // combination row, empty when lasso is off
};

namespace detail {

inline void derive_pool(const ModelConfig& mc, std::int64_t& window, std::int64_t& stride) {
  if (window <= 0) window = mc.image_size / 2;
  if (stride <= 0) stride = mc.image_size / 4;
  if (window > mc.image_size) throw std::invalid_argument("pool window exceeds the image");
}

// Rows of pooled trunk features, one tensor [N, D] per trunk unit, computed
// in chunks so graph buffers stay small. Read-only with respect to stored
// parameter values.
template <typename T>
std::vector<Tensor<T>> extract_unit_features(const ModelConfig& mc, ParamStore<T>& trunk,
                                             const Tensor<T>& images, std::int64_t window,
                                             std::int64_t stride, std::int64_t chunk) {
  if (images.shape.size() != 4) throw std::invalid_argument("expected images [N,3,H,W]");
  const std::int64_t N = images.shape[0];
  const std::int64_t per = numel(images.shape) / N;
  if (chunk < 1) chunk = 1;
  chunk = std::min(chunk, N);

  std::vector<Tensor<T>> feats;
  std::int64_t done = 0;
  while (done < N) {
    std::int64_t take = std::min(chunk, N - done);
    Shape in_shape{take, images.shape[1], images.shape[2], images.shape[3]};
    TrunkProbe<T> probe = build_trunk_probe(mc, trunk, in_shape, /*lightness=*/false);
    probe.refresh_params(trunk);
    std::vector<NodeId> pooled;
    Attrs pool;
    pool.window = window;
    pool.stride = stride;
    Attrs keep1;
    keep1.keep = 1;
    for (NodeId u : probe.units)
      pooled.push_back(
          probe.g.apply(Kind::Flatten, {probe.g.apply(Kind::MaxPool2d, {u}, pool)}, keep1));
    std::vector<T> slab(images.values.begin() + done * per,
                        images.values.begin() + (done + take) * per);
    probe.g.set_leaf(probe.input, slab);
    probe.g.forward();
    if (feats.empty()) {
      std::int64_t D = probe.g.shape(pooled[0])[1];
      for (std::size_t m = 0; m < pooled.size(); ++m) feats.emplace_back(Shape{N, D}, T(0));
    }
    for (std::size_t m = 0; m < pooled.size(); ++m) {
      const auto& v = probe.g.value(pooled[m]);
      std::copy(v.begin(), v.end(), feats[m].values.begin() + done * feats[m].shape[1]);
    }
    done += take;
  }
  return feats;
}

inline std::int64_t argmax_row(const std::vector<double>& logits, std::int64_t row,
                               std::int64_t classes) {
  std::int64_t best = 0;
  for (std::int64_t c = 1; c < classes; ++c)
    if (logits[std::size_t(row * classes + c)] > logits[std::size_t(row * classes + best)])
      best = c;
  return best;
}

// true-class rank = number of strictly larger logits; recall@k counts rank < k
inline bool in_top_k(const std::vector<double>& logits, std::int64_t row, std::int64_t classes,
                     std::int64_t label, std::int64_t k) {
  double mine = logits[std::size_t(row * classes + label)];
  std::int64_t above = 0;
  for (std::int64_t c = 0; c < classes; ++c)
    if (logits[std::size_t(row * classes + c)] > mine) ++above;
  return above < k;
}

}  // namespace detail

// Linear softmax probe over frozen trunk features. With the combination row
// off the feature is the last unit's pooled output; with it on, a learned
// L2-normalized row mixes every unit and pays an L1 penalty.
template <typename T>
ProbeResult frozen_linear_eval(const ModelConfig& mc, ParamStore<T>& trunk,
                               const ClassDataset<T>& train, const ClassDataset<T>& test,
                               const EvalOptions& opts) {
  if (train.classes != test.classes) throw std::invalid_argument("class count mismatch");
  const std::int64_t C = train.classes;
  if (opts.k < 1 || opts.k > C) throw std::invalid_argument("recall cutoff must be in 1..classes");
  for (auto l : train.labels)
    if (l < 0 || l >= C) throw std::invalid_argument("label out of range");
  std::int64_t window = opts.pool_window, stride = opts.pool_stride;
  detail::derive_pool(mc, window, stride);

  auto train_feats =
      detail::extract_unit_features(mc, trunk, train.images, window, stride, opts.chunk);
  const std::int64_t N = train.images.shape[0];
  const std::int64_t D = train_feats[0].shape[1];
  const std::int64_t M = std::int64_t(train_feats.size());

  // probe graph: feature leaves are constants, only probe weights (and the
  // combination row) are parameters in their own store
  Graph<T> g;
  ParamStore<T> store(opts.seed);
  Binder<T> bind{g, store, {}};
  std::vector<NodeId> feat_nodes;
  for (std::int64_t m = 0; m < M; ++m) feat_nodes.push_back(g.input(train_feats[std::size_t(m)]));

  NodeId x;
  std::string alpha_name;
  if (opts.lasso) {
    auto row = alpha_row(g, bind, "eval", "frozen", M);
    alpha_name = row.name;
    x = lasso_combine(g, row.alpha, feat_nodes);
  } else {
    x = feat_nodes.back();
  }
  NodeId w = bind("probe/w", {D, C}, Init::He);
  NodeId b = bind("probe/b", {C}, Init::Zero);
  NodeId logits = g.apply(Kind::Add, {g.apply(Kind::MatMul, {x, w}), b});
  NodeId labels = g.input([&] {
    Tensor<T> t({N}, T(0));
    for (std::int64_t i = 0; i < N; ++i) t.values[std::size_t(i)] = T(train.labels[std::size_t(i)]);
    return t;
  }());
  NodeId loss = g.apply(Kind::ReduceMean, {g.apply(Kind::SoftmaxXent, {logits, labels})});
  if (opts.lasso && opts.lambda > 0) {
    NodeId alpha = g.apply(Kind::L2Normalize, {bind.nodes.at(alpha_name)});
    loss = g.apply(Kind::Add, {loss, lasso_penalty(g, alpha, opts.lambda)});
  }

  RmsProp<T> opt(opts.opt);
  double best = std::numeric_limits<double>::infinity();
  std::int64_t best_step = 0;
  ProbeResult res;
  res.k = opts.k;
  for (std::int64_t s = 0; s < opts.steps; ++s) {
    for (auto& kv : bind.nodes) g.set_leaf(kv.second, store.get(kv.first).values);
    g.forward();
    auto grads = g.backward(loss);
    std::map<std::string, Tensor<T>> named;
    for (auto& kv : bind.nodes) named.emplace(kv.first, grads.at(kv.second));
    opt.apply(store, named);
    double l = double(g.value(loss)[0]);
    res.final_loss = l;
    res.steps_run = s + 1;
    if (l < best - opts.plateau_tol) {
      best = l;
      best_step = s;
    } else if (s - best_step >= opts.plateau_window) {
      break;
    }
  }

  // score the held-out set with plain arithmetic on the trained weights
  auto test_feats =
      detail::extract_unit_features(mc, trunk, test.images, window, stride, opts.chunk);
  const std::int64_t Nt = test.images.shape[0];
  std::vector<double> combo(std::size_t(Nt * D), 0.0);
  if (opts.lasso) {
    const auto& beta = store.get(alpha_name).values;
    double norm = 0;
    for (auto v : beta) norm += double(v) * double(v);
    norm = std::sqrt(norm);
    if (norm < 1e-30) throw std::runtime_error("combination row collapsed to zero");
    res.alpha.resize(std::size_t(M));
    for (std::int64_t m = 0; m < M; ++m) {
      res.alpha[std::size_t(m)] = double(beta[std::size_t(m)]) / norm;
      for (std::size_t i = 0; i < combo.size(); ++i)
        combo[i] += res.alpha[std::size_t(m)] * double(test_feats[std::size_t(m)].values[i]);
    }
  } else {
    for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = double(test_feats.back().values[i]);
  }
  const auto& wv = store.get("probe/w").values;
  const auto& bv = store.get("probe/b").values;
  std::vector<double> logit_v(std::size_t(Nt * C), 0.0);
  for (std::int64_t n = 0; n < Nt; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      double acc = double(bv[std::size_t(c)]);
      for (std::int64_t d = 0; d < D; ++d)
        acc += combo[std::size_t(n * D + d)] * double(wv[std::size_t(d * C + c)]);
      logit_v[std::size_t(n * C + c)] = acc;
    }
  std::int64_t hit = 0, recall = 0;
  for (std::int64_t n = 0; n < Nt; ++n) {
    std::int64_t label = test.labels[std::size_t(n)];
    hit += detail::argmax_row(logit_v, n, C) == label;
    recall += detail::in_top_k(logit_v, n, C, label, opts.k);
  }
  res.accuracy = double(hit) / double(Nt);
  res.recall_at_k = double(recall) / double(Nt);
  return res;
}

struct FinetuneOptions {
  std::uint64_t seed = 1;
  std::int64_t steps = 150;
  std::int64_t batch = 8;
  std::int64_t jitter = 2;  // train-time translation jitter, classification only
  RmsPropConfig opt{0.9, 1e-3, 1e-8};
  std::int64_t pool_window = 0, pool_stride = 0;
  double huber_fraction = 0.2;  // depth loss threshold = fraction * max|error|
};

struct FinetuneResult {
  double accuracy = 0;
  DepthMetricsReport depth;
  std::int64_t steps_run = 0;
  double final_loss = 0;
};

namespace detail {

// cyclic translation of every image in a [B,3,H,W] slab
template <typename T>
void roll_batch(std::vector<T>& v, const Shape& s, std::int64_t dy, std::int64_t dx) {
  const std::int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  std::vector<T> tmp(std::size_t(H * W));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      T* plane = v.data() + (b * C + c) * H * W;
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x)
          tmp[std::size_t(((y + dy) % H + H) % H * W + ((x + dx) % W + W) % W)] =
              plane[y * W + x];
      std::copy(tmp.begin(), tmp.end(), plane);
    }
}

template <typename T>
std::vector<T> gather_rows(const Tensor<T>& t, std::int64_t begin, std::int64_t count) {
  const std::int64_t N = t.shape[0];
  const std::int64_t per = numel(t.shape) / N;
  std::vector<T> out(std::size_t(count * per));
  for (std::int64_t i = 0; i < count; ++i) {
    std::int64_t row = (begin + i) % N;
    std::copy(t.values.begin() + row * per, t.values.begin() + (row + 1) * per,
              out.begin() + i * per);
  }
  return out;
}

// Fine-tuning core: a fresh head over the trunk with every weight trainable.
// Classification reports held-out accuracy; depth regression reports the
// five depth metrics with predictions floored at 1e-6.
template <typename T>
FinetuneResult finetune_run(const ModelConfig& mc, const std::vector<std::uint8_t>& init,
                            const ClassDataset<T>* cls_train, const ClassDataset<T>* cls_test,
                            const DepthDataset<T>* depth_train, const DepthDataset<T>* depth_test,
                            const FinetuneOptions& opts) {
  const bool classify = cls_train != nullptr;
  const Tensor<T>& train_images = classify ? cls_train->images : depth_train->images;
  const std::int64_t N = train_images.shape[0];
  const std::int64_t S = mc.image_size;
  if (train_images.shape[2] != S || train_images.shape[3] != S)
    throw std::invalid_argument("image extent does not match the model");
  const std::int64_t B = std::max<std::int64_t>(1, std::min(opts.batch, N));
  std::int64_t window = opts.pool_window, stride = opts.pool_stride;
  detail::derive_pool(mc, window, stride);

  ParamStore<T> store(opts.seed);
  Graph<T> g;
  Binder<T> bind{g, store, {}};
  NodeId input = g.input(Tensor<T>({B, 3, S, S}, T(0.25)));
  NodeId x = detail::scale_input(g, input, /*lightness=*/false);
  auto units = trunk_forward(g, x, mc.trunk, bind);
  NodeId rep = units.back();

  NodeId labels = -1, logits = -1, loss = -1;
  std::int64_t C = 0, grid = 0;
  if (classify) {
    C = cls_train->classes;
    if (cls_test->classes != C) throw std::invalid_argument("class count mismatch");
    Attrs pool;
    pool.window = window;
    pool.stride = stride;
    Attrs keep1;
    keep1.keep = 1;
    NodeId feat = g.apply(Kind::Flatten, {g.apply(Kind::MaxPool2d, {rep}, pool)}, keep1);
    std::int64_t D = g.shape(feat)[1];
    NodeId h = g.apply(Kind::Relu, {g.apply(Kind::Add, {g.apply(Kind::MatMul, {feat, bind("eval/cls/fc1/w", {D, mc.head_hidden}, Init::He)}), bind("eval/cls/fc1/b", {mc.head_hidden}, Init::Zero)})});
    logits = g.apply(Kind::Add, {g.apply(Kind::MatMul, {h, bind("eval/cls/fc2/w", {mc.head_hidden, C}, Init::He)}), bind("eval/cls/fc2/b", {C}, Init::Zero)});
    labels = g.input(Tensor<T>({B}, T(0)));
    loss = g.apply(Kind::ReduceMean, {g.apply(Kind::SoftmaxXent, {logits, labels})});
  } else {
    grid = depth_train->depth.shape[2];
    if (S % grid != 0) throw std::invalid_argument("depth grid must divide the image extent");
    std::int64_t factor = S / grid;
    Attrs pool;
    pool.window = factor;
    pool.stride = factor;
    NodeId pooled = g.apply(Kind::MaxPool2d, {rep}, pool);
    NodeId h = g.apply(Kind::Relu,
                       {g.apply(Kind::Conv2d, {pooled, bind("eval/depth/conv1/w",
                                                            {mc.head_hidden, mc.trunk.width, 1, 1},
                                                            Init::He)})});
    logits = g.apply(Kind::Conv2d, {h, bind("eval/depth/conv2/w", {1, mc.head_hidden, 1, 1}, Init::He)});
    labels = g.input(Tensor<T>({B, 1, grid, grid}, T(1)));
    NodeId neg = g.input(Tensor<T>(Shape{}, std::vector<T>{T(-1)}));
    NodeId err = g.apply(Kind::Add, {logits, g.apply(Kind::Multiply, {labels, neg})});
    Attrs hub;
    hub.adaptive = opts.huber_fraction;
    loss = g.apply(Kind::ReduceMean, {g.apply(Kind::ReverseHuber, {err}, hub)});
  }
  if (!init.empty()) load_matching_params(parse_checkpoint(init), store);

  RmsProp<T> opt(opts.opt);
  FinetuneResult res;
  auto jitter_rng = RngStream::derive(opts.seed, {hash_name("eval-jitter")});
  for (std::int64_t s = 0; s < opts.steps; ++s) {
    auto batch = detail::gather_rows(train_images, (s * B) % N, B);
    if (classify && opts.jitter > 0) {
      std::int64_t dy = jitter_rng.uniform_int(-opts.jitter, opts.jitter);
      std::int64_t dx = jitter_rng.uniform_int(-opts.jitter, opts.jitter);
      detail::roll_batch(batch, Shape{B, 3, S, S}, dy, dx);
    }
    g.set_leaf(input, batch);
    if (classify) {
      std::vector<T> lab(std::size_t(B), T(0));
      for (std::int64_t i = 0; i < B; ++i)
        lab[std::size_t(i)] = T(cls_train->labels[std::size_t((s * B + i) % N)]);
      g.set_leaf(labels, lab);
    } else {
      g.set_leaf(labels, detail::gather_rows(depth_train->depth, (s * B) % N, B));
    }
    for (auto& kv : bind.nodes) g.set_leaf(kv.second, store.get(kv.first).values);
    g.forward();
    auto grads = g.backward(loss);
    std::map<std::string, Tensor<T>> named;
    for (auto& kv : bind.nodes) named.emplace(kv.first, grads.at(kv.second));
    opt.apply(store, named);
    res.final_loss = double(g.value(loss)[0]);
    res.steps_run = s + 1;
  }

  // held-out pass in batch-size chunks, no jitter
  const Tensor<T>& test_images = classify ? cls_test->images : depth_test->images;
  const std::int64_t Nt = test_images.shape[0];
  for (auto& kv : bind.nodes) g.set_leaf(kv.second, store.get(kv.first).values);
  std::int64_t hits = 0;
  std::vector<double> preds;
  if (!classify) preds.reserve(std::size_t(Nt * grid * grid));
  for (std::int64_t at = 0; at < Nt; at += B) {
    g.set_leaf(input, detail::gather_rows(test_images, at, B));  // wraps past the end
    g.forward();
    const auto& out = g.value(logits);
    std::int64_t take = std::min(B, Nt - at);
    if (classify) {
      std::vector<double> lv(out.begin(), out.end());
      for (std::int64_t i = 0; i < take; ++i)
        hits += detail::argmax_row(lv, i, C) == cls_test->labels[std::size_t(at + i)];
    } else {
      for (std::int64_t i = 0; i < take * grid * grid; ++i)
        preds.push_back(std::max(1e-6, double(out[std::size_t(i)])));
    }
  }
  if (classify) {
    res.accuracy = double(hits) / double(Nt);
  } else {
    Tensor<double> pred(Shape{Nt, 1, grid, grid}, 0.0);
    pred.values = preds;
    Tensor<double> gt(pred.shape, 0.0);
    for (std::size_t i = 0; i < gt.values.size(); ++i)
      gt.values[i] = double(depth_test->depth.values[i]);
    res.depth = depth_metrics(gt, pred);
  }
  return res;
}

}  // namespace detail

// Fine-tune for classification: trunk plus a two-layer head, initialized
// from a checkpoint when one is given (fresh random weights otherwise).
template <typename T>
FinetuneResult finetune_classify(const ModelConfig& mc, const std::vector<std::uint8_t>& init,
                                 const ClassDataset<T>& train, const ClassDataset<T>& test,
                                 const FinetuneOptions& opts) {
  return detail::finetune_run<T>(mc, init, &train, &test, nullptr, nullptr, opts);
}

// Fine-tune for depth regression: trunk plus a 1x1-conv head over a grid
// pooled to the label resolution; scored with the five depth metrics.
template <typename T>
FinetuneResult finetune_depth(const ModelConfig& mc, const std::vector<std::uint8_t>& init,
                              const DepthDataset<T>& train, const DepthDataset<T>& test,
                              const FinetuneOptions& opts) {
  return detail::finetune_run<T>(mc, init, nullptr, nullptr, &train, &test, opts);
}

}  // namespace mtss
