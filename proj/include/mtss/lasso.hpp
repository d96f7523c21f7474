#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtss/graph.hpp"
#include "mtss/trunk.hpp"

namespace mtss {

// Which side of the pipeline combines units through a learned row instead of
// taking the last unit.
enum class LassoMode { None, EvalOnly, PretrainOnly, Both };

inline const char* lasso_mode_name(LassoMode m) {
  switch (m) {
    case LassoMode::None: return "none";
    case LassoMode::EvalOnly: return "eval-only";
    case LassoMode::PretrainOnly: return "pretrain-only";
    case LassoMode::Both: return "both";
  }
  return "?";
}

inline LassoMode lasso_mode_from_string(const std::string& s) {
  if (s == "none") return LassoMode::None;
  if (s == "eval-only") return LassoMode::EvalOnly;
  if (s == "pretrain-only") return LassoMode::PretrainOnly;
  if (s == "both") return LassoMode::Both;
  throw std::invalid_argument("unknown lasso mode: " + s);
}

inline bool pretrain_lasso_active(LassoMode m) {
  return m == LassoMode::PretrainOnly || m == LassoMode::Both;
}
inline bool eval_lasso_active(LassoMode m) {
  return m == LassoMode::EvalOnly || m == LassoMode::Both;
}

inline std::string alpha_param_name(const std::string& role, const std::string& task) {
  return "alpha/" + role + "/" + task;
}

struct AlphaRow {
  std::string name;   // beta parameter name in the store
  NodeId beta = -1;   // unconstrained [M]
  NodeId alpha = -1;  // l2-normalized row, always unit length
};

// The row constraint is enforced by reparameterization: alpha is the
// normalized image of a free beta, so gradients flow through the
// normalization instead of requiring a projection step.
template <typename T>
AlphaRow alpha_row(Graph<T>& g, Binder<T>& bind, const std::string& role,
                   const std::string& task, std::int64_t units) {
  AlphaRow row;
  row.name = alpha_param_name(role, task);
  row.beta = bind(row.name, {units}, Init::UnitUniform);
  row.alpha = g.apply(Kind::L2Normalize, {row.beta});
  return row;
}

// Sum of alpha_m * Unit_m. Unit tensors must share a shape (checked by add).
template <typename T>
NodeId lasso_combine(Graph<T>& g, NodeId alpha, const std::vector<NodeId>& units) {
  auto m = std::int64_t(units.size());
  if (g.shape(alpha) != Shape{m})
    throw std::invalid_argument("lasso_combine: row length " + shape_str(g.shape(alpha)) +
                                " does not match " + std::to_string(m) + " units");
  NodeId acc = -1;
  for (std::int64_t i = 0; i < m; ++i) {
    Attrs at;
    at.begin = i;
    at.end = i + 1;
    NodeId coeff = g.apply(Kind::Slice, {alpha}, at);
    NodeId term = g.apply(Kind::Multiply, {units[std::size_t(i)], coeff});
    acc = i == 0 ? term : g.apply(Kind::Add, {acc, term});
  }
  return acc;
}

// Elementwise |v| as relu(v) + relu(-v); the kink contributes subgradient 0
// at exactly 0, which is what the penalty needs to leave dead entries dead.
template <typename T>
NodeId abs_node(Graph<T>& g, NodeId v) {
  NodeId neg1 = g.input(Tensor<T>(Shape{}, std::vector<T>{T(-1)}));
  NodeId neg = g.apply(Kind::Multiply, {v, neg1});
  return g.apply(Kind::Add, {g.apply(Kind::Relu, {v}), g.apply(Kind::Relu, {neg})});
}

template <typename T>
NodeId lasso_penalty(Graph<T>& g, NodeId alpha, double lambda) {
  if (lambda < 0) throw std::invalid_argument("lasso penalty: negative lambda");
  NodeId total = g.apply(Kind::ReduceSum, {abs_node(g, alpha)});
  NodeId lam = g.input(Tensor<T>(Shape{}, std::vector<T>{T(lambda)}));
  return g.apply(Kind::Multiply, {total, lam});
}

struct SparsityRow {
  std::string task;
  std::vector<double> abs_alpha;  // unit index order, shallow to deep
  double fraction_below = 0;
};

template <typename T>
SparsityRow sparsity_row(const std::string& task, const Tensor<T>& beta, double threshold) {
  double norm = 0;
  for (auto v : beta.values) norm += double(v) * double(v);
  norm = std::sqrt(norm);
  if (norm == 0) throw std::invalid_argument("sparsity_row: zero-norm row for " + task);
  SparsityRow out;
  out.task = task;
  std::int64_t below = 0;
  for (auto v : beta.values) {
    double a = std::abs(double(v) / norm);
    out.abs_alpha.push_back(a);
    if (a < threshold) ++below;
  }
  out.fraction_below = double(below) / double(beta.values.size());
  return out;
}

}  // namespace mtss
