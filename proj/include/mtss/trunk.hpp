#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtss/graph.hpp"
#include "mtss/params.hpp"

namespace mtss {

struct TrunkConfig {
  std::int64_t in_channels = 3;
  std::int64_t width = 8;     // channel count of every unit
  std::int64_t units = 8;     // M
  std::int64_t dilation = 1;  // applied to every residual conv
};

// Couples a graph to the master store: binding a parameter creates (or
// fetches) it in the store and mirrors it as a Param node, keeping the
// name <-> node map that gradient packets are keyed by.
template <typename T>
struct Binder {
  Graph<T>& g;
  ParamStore<T>& store;
  std::unordered_map<std::string, NodeId> nodes;

  NodeId operator()(const std::string& name, const Shape& shape, Init init) {
    auto it = nodes.find(name);
    if (it != nodes.end()) return it->second;
    NodeId id = g.param(store.ensure(name, shape, init));
    nodes.emplace(name, id);
    return id;
  }

  // refresh every bound Param node from the store (one new graph-free step)
  void reload() {
    for (auto& kv : nodes) g.set_leaf(kv.second, store.get(kv.first).values);
  }
};

inline std::string unit_param(std::int64_t m, const char* leaf) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "trunk/unit%02d/%s", int(m), leaf);
  return buf;
}

// Pre-activation residual tower over a bias-free stem. Returns the M unit
// outputs (identical shapes). Residual second convs start at zero, so every
// unit initially passes the stem through untouched.
template <typename T>
std::vector<NodeId> trunk_forward(Graph<T>& g, NodeId input, const TrunkConfig& cfg,
                                  Binder<T>& bind) {
  NodeId stem_w = bind("trunk/stem/w", {cfg.width, cfg.in_channels, 3, 3}, Init::He);
  Attrs same;
  same.padding = 1;
  NodeId x = g.apply(Kind::Conv2d, {input, stem_w}, same);

  Attrs res;
  res.dilation = cfg.dilation;
  res.padding = cfg.dilation;  // keeps 3x3 output extent equal to input
  std::vector<NodeId> units;
  units.reserve(std::size_t(cfg.units));
  for (std::int64_t m = 1; m <= cfg.units; ++m) {
    NodeId w1 = bind(unit_param(m, "conv1/w"), {cfg.width, cfg.width, 3, 3}, Init::He);
    NodeId w2 = bind(unit_param(m, "conv2/w"), {cfg.width, cfg.width, 3, 3}, Init::Zero);
    NodeId h = g.apply(Kind::Relu, {x});
    h = g.apply(Kind::Conv2d, {h, w1}, res);
    h = g.apply(Kind::Relu, {h});
    h = g.apply(Kind::Conv2d, {h, w2}, res);
    x = g.apply(Kind::Add, {x, h});
    units.push_back(x);
  }
  return units;
}

}  // namespace mtss
