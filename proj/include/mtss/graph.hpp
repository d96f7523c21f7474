#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtss/tensor.hpp"

namespace mtss {

using NodeId = std::int32_t;

enum class Kind {
  Input,
  Param,
  Add,
  Multiply,
  MatMul,
  Conv2d,
  MaxPool2d,
  Relu,
  L2Normalize,
  CosineDistance,
  SoftmaxXent,
  SigmoidXent,
  ReverseHuber,
  ReduceMean,
  ReduceSum,
  Concat,
  Flatten,
  Slice,
};

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::Input: return "input";
    case Kind::Param: return "param";
    case Kind::Add: return "add";
    case Kind::Multiply: return "multiply";
    case Kind::MatMul: return "matmul";
    case Kind::Conv2d: return "conv2d";
    case Kind::MaxPool2d: return "maxpool2d";
    case Kind::Relu: return "relu";
    case Kind::L2Normalize: return "l2-normalize";
    case Kind::CosineDistance: return "cosine-distance";
    case Kind::SoftmaxXent: return "softmax-cross-entropy";
    case Kind::SigmoidXent: return "sigmoid-cross-entropy";
    case Kind::ReverseHuber: return "reverse-huber";
    case Kind::ReduceMean: return "reduce-mean";
    case Kind::ReduceSum: return "reduce-sum";
    case Kind::Concat: return "concat";
    case Kind::Flatten: return "flatten";
    case Kind::Slice: return "slice";
  }
  return "?";
}

// String lookup for the differentiable primitives (leaves excluded).
inline Kind kind_from_string(const std::string& s) {
  static const std::pair<const char*, Kind> table[] = {
      {"add", Kind::Add},
      {"multiply", Kind::Multiply},
      {"matmul", Kind::MatMul},
      {"conv2d", Kind::Conv2d},
      {"maxpool2d", Kind::MaxPool2d},
      {"relu", Kind::Relu},
      {"l2-normalize", Kind::L2Normalize},
      {"cosine-distance", Kind::CosineDistance},
      {"softmax-cross-entropy", Kind::SoftmaxXent},
      {"sigmoid-cross-entropy", Kind::SigmoidXent},
      {"reverse-huber", Kind::ReverseHuber},
      {"reduce-mean", Kind::ReduceMean},
      {"reduce-sum", Kind::ReduceSum},
      {"concat", Kind::Concat},
      {"flatten", Kind::Flatten},
      {"slice", Kind::Slice},
  };
  for (auto& [name, k] : table)
    if (s == name) return k;
  throw std::invalid_argument("unknown primitive kind: " + s);
}

struct Attrs {
  std::int64_t stride = 1;      // conv2d, maxpool2d
  std::int64_t dilation = 1;    // conv2d
  std::int64_t padding = 0;     // conv2d
  std::int64_t window = 1;      // maxpool2d
  std::int64_t axis = 1;        // concat
  std::int64_t begin = 0;       // slice (axis 0)
  std::int64_t end = 0;         // slice
  std::int64_t keep = 1;        // flatten: leading dims preserved
  double threshold = 1.0;       // reverse-huber c
  double adaptive = 0;          // reverse-huber: c = adaptive * max|x|, per batch
};

namespace detail {

[[noreturn]] inline void shape_error(Kind k, const std::string& msg) {
  throw std::invalid_argument(std::string(kind_name(k)) + ": " + msg);
}

}  // namespace detail

template <typename T>
class Graph {
 public:
  struct Node {
    Kind kind;
    std::vector<NodeId> inputs;
    Attrs attrs;
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  NodeId input(const Tensor<T>& t) { return add_leaf(Kind::Input, t, false); }
  NodeId param(const Tensor<T>& t) { return add_leaf(Kind::Param, t, true); }

  NodeId apply(Kind kind, const std::vector<NodeId>& inputs, const Attrs& attrs = {}) {
    validate_inputs(kind, inputs);
    Node n;
    n.kind = kind;
    n.inputs = inputs;
    n.attrs = attrs;
    n.shape = infer_shape(kind, inputs, attrs);
    n.requires_grad = false;
    for (NodeId i : inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    n.value.assign(std::size_t(numel(n.shape)), T(0));
    nodes_.push_back(std::move(n));
    NodeId id = NodeId(nodes_.size() - 1);
    forward_node(id);
    return id;
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_[std::size_t(id)]; }
  const Shape& shape(NodeId id) const { return nodes_[std::size_t(id)].shape; }
  const std::vector<T>& value(NodeId id) const { return nodes_[std::size_t(id)].value; }
  Tensor<T> tensor(NodeId id) const { return Tensor<T>(nodes_[id].shape, nodes_[id].value); }
  const std::vector<T>& grad(NodeId id) const { return nodes_[std::size_t(id)].grad; }
  Tensor<T> grad_tensor(NodeId id) const {
    const Node& n = nodes_[std::size_t(id)];
    if (n.grad.empty()) return Tensor<T>(n.shape, T(0));
    return Tensor<T>(n.shape, n.grad);
  }

  // Overwrites a leaf's value (parameter update, grad-check perturbation).
  void set_leaf(NodeId id, const std::vector<T>& v) {
    Node& n = nodes_[std::size_t(id)];
    if (n.kind != Kind::Input && n.kind != Kind::Param)
      throw std::invalid_argument("set_leaf on non-leaf node");
    if (v.size() != n.value.size()) throw std::invalid_argument("set_leaf: size mismatch");
    n.value = v;
  }
  T* leaf_data(NodeId id) {
    Node& n = nodes_[std::size_t(id)];
    if (n.kind != Kind::Input && n.kind != Kind::Param)
      throw std::invalid_argument("leaf_data on non-leaf node");
    return n.value.data();
  }

  // Recomputes every non-leaf node in append order.
  void forward() {
    for (NodeId id = 0; id < NodeId(nodes_.size()); ++id)
      if (nodes_[id].kind != Kind::Input && nodes_[id].kind != Kind::Param) forward_node(id);
  }

  std::vector<NodeId> param_ids() const {
    std::vector<NodeId> out;
    for (NodeId id = 0; id < NodeId(nodes_.size()); ++id)
      if (nodes_[id].kind == Kind::Param) out.push_back(id);
    return out;
  }

  // Reverse-mode sweep from a scalar loss.  Returns gradients for every
  // Param node; parameters not on the loss path get exact zeros.
  std::unordered_map<NodeId, Tensor<T>> backward(NodeId loss) {
    const Node& ln = nodes_[std::size_t(loss)];
    if (numel(ln.shape) != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(ln.shape));
    for (Node& n : nodes_) n.grad.assign(n.value.size(), T(0));
    nodes_[std::size_t(loss)].grad[0] = T(1);
    for (NodeId id = loss; id >= 0; --id) {
      Node& n = nodes_[std::size_t(id)];
      if (!n.requires_grad && n.kind != Kind::Input) continue;
      if (n.kind == Kind::Input || n.kind == Kind::Param) continue;
      bool any = false;
      for (T g : n.grad)
        if (g != T(0)) { any = true; break; }
      if (!any) continue;
      backward_node(id);
    }
    std::unordered_map<NodeId, Tensor<T>> out;
    for (NodeId id : param_ids()) out.emplace(id, grad_tensor(id));
    return out;
  }

 private:
  std::vector<Node> nodes_;

  NodeId add_leaf(Kind k, const Tensor<T>& t, bool rg) {
    Node n;
    n.kind = k;
    n.shape = t.shape;
    n.value = t.values;
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return NodeId(nodes_.size() - 1);
  }

  void validate_inputs(Kind kind, const std::vector<NodeId>& in) {
    std::size_t want = 0;
    switch (kind) {
      case Kind::Relu:
      case Kind::L2Normalize:
      case Kind::ReverseHuber:
      case Kind::ReduceMean:
      case Kind::ReduceSum:
      case Kind::Flatten:
      case Kind::Slice:
      case Kind::MaxPool2d: want = 1; break;
      case Kind::Add:
      case Kind::Multiply:
      case Kind::MatMul:
      case Kind::Conv2d:
      case Kind::CosineDistance:
      case Kind::SoftmaxXent:
      case Kind::SigmoidXent: want = 2; break;
      case Kind::Concat:
        if (in.empty()) detail::shape_error(kind, "needs at least one input");
        want = in.size();
        break;
      case Kind::Input:
      case Kind::Param: throw std::invalid_argument("leaf kinds are created via input()/param()");
    }
    if (in.size() != want)
      detail::shape_error(kind, "expects " + std::to_string(want) + " inputs, got " + std::to_string(in.size()));
    for (NodeId i : in)
      if (i < 0 || i >= NodeId(nodes_.size())) detail::shape_error(kind, "input node id out of range");
  }

  // ---- shape rules ------------------------------------------------------
  //
  //   add        a + b; b may be scalar, or match a's trailing dims (bias)
  //   multiply   a * b elementwise; either side may be scalar
  //   matmul     [m,k] x [k,n] -> [m,n]
  //   conv2d     in [N,C,H,W], kernel [F,C,kh,kw]; stride s, dilation d,
  //              zero padding p; out [N,F,Ho,Wo], Ho=(H+2p-d*(kh-1)-1)/s+1
  //   maxpool2d  in [N,C,H,W], square window w, stride s
  //   relu       elementwise
  //   l2-normalize  rows over the last axis (whole vector when 1-D)
  //   cosine-distance  [B,D],[B,D] -> [B]   (or [D],[D] -> scalar)
  //   softmax-cross-entropy  logits [N,C,sp...], labels [N,sp...] -> [N,sp...]
  //   sigmoid-cross-entropy  logits and {0,1} targets, same shape, elementwise
  //   reverse-huber  elementwise, |x|<=c -> |x|, else (x^2+c^2)/(2c)
  //   reduce-mean/sum  any shape -> scalar
  //   concat     along attrs.axis, other dims equal
  //   flatten    keep leading attrs.keep dims, fold the rest
  //   slice      rows [begin,end) of axis 0
  Shape infer_shape(Kind kind, const std::vector<NodeId>& in, const Attrs& a) {
    auto& s0 = nodes_[in.empty() ? 0 : in[0]].shape;
    switch (kind) {
      case Kind::Relu:
      case Kind::ReverseHuber:
        if (kind == Kind::ReverseHuber && !(a.threshold > 0) && !(a.adaptive > 0))
          detail::shape_error(kind, "threshold must be > 0");
        return s0;
      case Kind::L2Normalize:
        if (s0.empty()) detail::shape_error(kind, "needs rank >= 1, got scalar");
        return s0;
      case Kind::Add: {
        auto& sb = nodes_[in[1]].shape;
        if (s0 == sb || numel(sb) == 1) return s0;
        if (sb.size() < s0.size() &&
            std::equal(sb.begin(), sb.end(), s0.end() - std::int64_t(sb.size())))
          return s0;
        detail::shape_error(kind, "shapes " + shape_str(s0) + " and " + shape_str(sb) +
                                      " are not addable (equal, scalar, or trailing-dim bias)");
      }
      case Kind::Multiply: {
        auto& sb = nodes_[in[1]].shape;
        if (s0 == sb) return s0;
        if (numel(sb) == 1) return s0;
        if (numel(s0) == 1) return sb;
        detail::shape_error(kind, "shapes " + shape_str(s0) + " and " + shape_str(sb) +
                                      " are not multipliable (equal or scalar)");
      }
      case Kind::MatMul: {
        auto& sb = nodes_[in[1]].shape;
        if (s0.size() != 2 || sb.size() != 2)
          detail::shape_error(kind, "needs two rank-2 tensors, got " + shape_str(s0) + " and " + shape_str(sb));
        if (s0[1] != sb[0])
          detail::shape_error(kind, "inner dims disagree: " + shape_str(s0) + " x " + shape_str(sb));
        return {s0[0], sb[1]};
      }
      case Kind::Conv2d: {
        auto& sk = nodes_[in[1]].shape;
        if (s0.size() != 4 || sk.size() != 4)
          detail::shape_error(kind, "needs input [N,C,H,W] and kernel [F,C,kh,kw], got " +
                                        shape_str(s0) + " and " + shape_str(sk));
        if (a.stride < 1 || a.dilation < 1 || a.padding < 0)
          detail::shape_error(kind, "stride/dilation must be >= 1, padding >= 0");
        if (s0[1] != sk[1])
          detail::shape_error(kind, "input channels " + std::to_string(s0[1]) +
                                        " != kernel channels " + std::to_string(sk[1]));
        std::int64_t ho = (s0[2] + 2 * a.padding - a.dilation * (sk[2] - 1) - 1) / a.stride + 1;
        std::int64_t wo = (s0[3] + 2 * a.padding - a.dilation * (sk[3] - 1) - 1) / a.stride + 1;
        if (ho < 1 || wo < 1)
          detail::shape_error(kind, "kernel " + shape_str(sk) + " does not fit input " + shape_str(s0));
        return {s0[0], sk[0], ho, wo};
      }
      case Kind::MaxPool2d: {
        if (s0.size() != 4) detail::shape_error(kind, "needs [N,C,H,W], got " + shape_str(s0));
        if (a.window < 1 || a.stride < 1) detail::shape_error(kind, "window/stride must be >= 1");
        std::int64_t ho = (s0[2] - a.window) / a.stride + 1;
        std::int64_t wo = (s0[3] - a.window) / a.stride + 1;
        if (ho < 1 || wo < 1)
          detail::shape_error(kind, "window " + std::to_string(a.window) + " does not fit " + shape_str(s0));
        return {s0[0], s0[1], ho, wo};
      }
      case Kind::CosineDistance: {
        auto& sb = nodes_[in[1]].shape;
        if (s0 != sb)
          detail::shape_error(kind, "shapes differ: " + shape_str(s0) + " vs " + shape_str(sb));
        if (s0.size() == 1) return Shape{};
        if (s0.size() == 2) return {s0[0]};
        detail::shape_error(kind, "needs rank 1 or 2, got " + shape_str(s0));
      }
      case Kind::SoftmaxXent: {
        auto& sl = nodes_[in[1]].shape;
        if (s0.size() < 2) detail::shape_error(kind, "logits need rank >= 2, got " + shape_str(s0));
        Shape want(s0);
        want.erase(want.begin() + 1);  // drop class axis
        if (sl != want)
          detail::shape_error(kind, "labels " + shape_str(sl) + " do not match logits " + shape_str(s0) +
                                        " (expected " + shape_str(want) + ")");
        return want;
      }
      case Kind::SigmoidXent: {
        auto& st = nodes_[in[1]].shape;
        if (s0 != st)
          detail::shape_error(kind, "logits " + shape_str(s0) + " vs targets " + shape_str(st));
        return s0;
      }
      case Kind::ReduceMean:
      case Kind::ReduceSum: return Shape{};
      case Kind::Concat: {
        std::int64_t ax = a.axis;
        if (ax < 0 || ax >= std::int64_t(s0.size()))
          detail::shape_error(kind, "axis " + std::to_string(ax) + " out of range for " + shape_str(s0));
        Shape out(s0);
        for (std::size_t i = 1; i < in.size(); ++i) {
          auto& si = nodes_[in[i]].shape;
          if (si.size() != s0.size())
            detail::shape_error(kind, "rank mismatch: " + shape_str(s0) + " vs " + shape_str(si));
          for (std::size_t d = 0; d < s0.size(); ++d)
            if (std::int64_t(d) != ax && si[d] != s0[d])
              detail::shape_error(kind, "dim " + std::to_string(d) + " mismatch: " + shape_str(s0) +
                                            " vs " + shape_str(si));
          out[std::size_t(ax)] += si[std::size_t(ax)];
        }
        return out;
      }
      case Kind::Flatten: {
        if (a.keep < 0 || a.keep > std::int64_t(s0.size()))
          detail::shape_error(kind, "keep " + std::to_string(a.keep) + " out of range for " + shape_str(s0));
        Shape out(s0.begin(), s0.begin() + a.keep);
        std::int64_t rest = 1;
        for (std::size_t d = std::size_t(a.keep); d < s0.size(); ++d) rest *= s0[d];
        out.push_back(rest);
        return out;
      }
      case Kind::Slice: {
        if (s0.empty()) detail::shape_error(kind, "cannot slice a scalar");
        if (a.begin < 0 || a.end <= a.begin || a.end > s0[0])
          detail::shape_error(kind, "range [" + std::to_string(a.begin) + "," + std::to_string(a.end) +
                                        ") invalid for axis-0 extent " + std::to_string(s0[0]));
        Shape out(s0);
        out[0] = a.end - a.begin;
        return out;
      }
      case Kind::Input:
      case Kind::Param: break;
    }
    throw std::logic_error("unreachable shape rule");
  }

  // ---- forward ----------------------------------------------------------

  static T stable_sigmoid(T z) {
    if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
    T e = std::exp(z);
    return e / (T(1) + e);
  }

  void forward_node(NodeId id) {
    Node& n = nodes_[std::size_t(id)];
    auto& out = n.value;
    auto in = [&](std::size_t i) -> const Node& { return nodes_[std::size_t(n.inputs[i])]; };
    switch (n.kind) {
      case Kind::Input:
      case Kind::Param: return;
      case Kind::Add: {
        const auto& a = in(0).value;
        const auto& b = in(1).value;
        if (a.size() == b.size()) {
          for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
        } else if (b.size() == 1) {
          for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[0];
        } else {
          std::size_t nb = b.size();
          for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i % nb];
        }
        return;
      }
      case Kind::Multiply: {
        const auto& a = in(0).value;
        const auto& b = in(1).value;
        if (a.size() == b.size()) {
          for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
        } else if (b.size() == 1) {
          for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[0];
        } else {
          for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[0] * b[i];
        }
        return;
      }
      case Kind::MatMul: {
        const auto& A = in(0);
        const auto& B = in(1);
        std::int64_t m = A.shape[0], k = A.shape[1], p = B.shape[1];
        std::fill(out.begin(), out.end(), T(0));
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < k; ++j) {
            T aij = A.value[std::size_t(i * k + j)];
            if (aij == T(0)) continue;
            const T* brow = B.value.data() + j * p;
            T* orow = out.data() + i * p;
            for (std::int64_t c = 0; c < p; ++c) orow[c] += aij * brow[c];
          }
        return;
      }
      case Kind::Conv2d: {
        conv2d_forward(in(0), in(1), n);
        return;
      }
      case Kind::MaxPool2d: {
        const auto& x = in(0);
        std::int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
        std::int64_t Ho = n.shape[2], Wo = n.shape[3], w = n.attrs.window, s = n.attrs.stride;
        for (std::int64_t b = 0; b < N; ++b)
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t oh = 0; oh < Ho; ++oh)
              for (std::int64_t ow = 0; ow < Wo; ++ow) {
                T best = x.value[std::size_t(((b * C + c) * H + oh * s) * W + ow * s)];
                for (std::int64_t i = 0; i < w; ++i)
                  for (std::int64_t j = 0; j < w; ++j) {
                    T v = x.value[std::size_t(((b * C + c) * H + oh * s + i) * W + ow * s + j)];
                    if (v > best) best = v;
                  }
                out[std::size_t(((b * C + c) * Ho + oh) * Wo + ow)] = best;
              }
        return;
      }
      case Kind::Relu: {
        const auto& x = in(0).value;
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
        return;
      }
      case Kind::L2Normalize: {
        const auto& x = in(0);
        std::int64_t d = x.shape.back();
        std::int64_t rows = numel(x.shape) / d;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* xr = x.value.data() + r * d;
          T nrm = row_norm(xr, d);
          if (!(nrm > T(1e-30))) detail::shape_error(Kind::L2Normalize, "zero-norm row");
          for (std::int64_t i = 0; i < d; ++i) out[std::size_t(r * d + i)] = xr[i] / nrm;
        }
        return;
      }
      case Kind::CosineDistance: {
        const auto& u = in(0);
        const auto& v = in(1);
        std::int64_t d = u.shape.back();
        std::int64_t rows = numel(u.shape) / d;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* ur = u.value.data() + r * d;
          const T* vr = v.value.data() + r * d;
          T nu = row_norm(ur, d), nv = row_norm(vr, d);
          if (!(nu > T(1e-30)) || !(nv > T(1e-30)))
            detail::shape_error(Kind::CosineDistance, "zero-norm embedding");
          T dot = T(0);
          for (std::int64_t i = 0; i < d; ++i) dot += ur[i] * vr[i];
          out[std::size_t(r)] = T(1) - dot / (nu * nv);
        }
        return;
      }
      case Kind::SoftmaxXent: {
        const auto& z = in(0);
        const auto& y = in(1).value;
        std::int64_t N = z.shape[0], C = z.shape[1], S = numel(z.shape) / (N * C);
        for (std::int64_t b = 0; b < N; ++b)
          for (std::int64_t s = 0; s < S; ++s) {
            T m = z.value[std::size_t((b * C) * S + s)];
            for (std::int64_t c = 1; c < C; ++c)
              m = std::max(m, z.value[std::size_t((b * C + c) * S + s)]);
            T sum = T(0);
            for (std::int64_t c = 0; c < C; ++c)
              sum += std::exp(z.value[std::size_t((b * C + c) * S + s)] - m);
            std::int64_t cls = std::int64_t(std::llround(double(y[std::size_t(b * S + s)])));
            if (cls < 0 || cls >= C)
              detail::shape_error(Kind::SoftmaxXent, "label " + std::to_string(cls) + " outside [0," +
                                                         std::to_string(C) + ")");
            T zy = z.value[std::size_t((b * C + cls) * S + s)];
            out[std::size_t(b * S + s)] = m + std::log(sum) - zy;
          }
        return;
      }
      case Kind::SigmoidXent: {
        const auto& z = in(0).value;
        const auto& t = in(1).value;
        for (std::size_t i = 0; i < z.size(); ++i) {
          T zi = z[i];
          out[i] = std::max(zi, T(0)) - zi * t[i] + std::log1p(std::exp(-std::abs(zi)));
        }
        return;
      }
      case Kind::ReverseHuber: {
        const auto& x = in(0).value;
        if (n.attrs.adaptive > 0) {
          // threshold tracks the batch: c = fraction * max|x|, treated as a
          // constant by the backward pass; stored so both passes agree
          T mx = T(0);
          for (T v : x) mx = std::max(mx, std::abs(v));
          n.attrs.threshold = double(T(n.attrs.adaptive) * mx);
        }
        T c = T(n.attrs.threshold);
        for (std::size_t i = 0; i < x.size(); ++i) {
          T ax = std::abs(x[i]);
          out[i] = ax <= c ? ax : (x[i] * x[i] + c * c) / (2 * c);
        }
        return;
      }
      case Kind::ReduceMean:
      case Kind::ReduceSum: {
        const auto& x = in(0).value;
        T acc = T(0);
        for (T v : x) acc += v;
        out[0] = n.kind == Kind::ReduceMean ? acc / T(x.size()) : acc;
        return;
      }
      case Kind::Concat: {
        std::int64_t ax = n.attrs.axis;
        std::int64_t outer = 1, inner = 1;
        for (std::int64_t d = 0; d < ax; ++d) outer *= n.shape[std::size_t(d)];
        for (std::size_t d = std::size_t(ax) + 1; d < n.shape.size(); ++d) inner *= n.shape[d];
        std::int64_t off = 0;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          const auto& xi = in(i);
          std::int64_t ei = xi.shape[std::size_t(ax)];
          for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(xi.value.data() + o * ei * inner, std::size_t(ei * inner),
                        out.data() + (o * n.shape[std::size_t(ax)] + off) * inner);
          off += ei;
        }
        return;
      }
      case Kind::Flatten: {
        out = in(0).value;
        return;
      }
      case Kind::Slice: {
        const auto& x = in(0);
        std::int64_t inner = numel(x.shape) / x.shape[0];
        std::copy_n(x.value.data() + n.attrs.begin * inner, std::size_t((n.attrs.end - n.attrs.begin) * inner),
                    out.data());
        return;
      }
    }
  }

  static T row_norm(const T* x, std::int64_t d) {
    T acc = T(0);
    for (std::int64_t i = 0; i < d; ++i) acc += x[i] * x[i];
    return std::sqrt(acc);
  }

  void conv2d_forward(const Node& x, const Node& k, Node& n) {
    std::int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    std::int64_t F = k.shape[0], kh = k.shape[2], kw = k.shape[3];
    std::int64_t Ho = n.shape[2], Wo = n.shape[3];
    std::int64_t s = n.attrs.stride, d = n.attrs.dilation, p = n.attrs.padding;
    auto& out = n.value;
    std::fill(out.begin(), out.end(), T(0));
    for (std::int64_t b = 0; b < N; ++b)
      for (std::int64_t f = 0; f < F; ++f)
        for (std::int64_t c = 0; c < C; ++c) {
          const T* xb = x.value.data() + (b * C + c) * H * W;
          const T* kf = k.value.data() + (f * C + c) * kh * kw;
          T* ob = out.data() + (b * F + f) * Ho * Wo;
          for (std::int64_t i = 0; i < kh; ++i)
            for (std::int64_t j = 0; j < kw; ++j) {
              T kv = kf[i * kw + j];
              if (kv == T(0)) continue;
              for (std::int64_t oh = 0; oh < Ho; ++oh) {
                std::int64_t ih = oh * s - p + i * d;
                if (ih < 0 || ih >= H) continue;
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                  std::int64_t iw = ow * s - p + j * d;
                  if (iw < 0 || iw >= W) continue;
                  ob[oh * Wo + ow] += kv * xb[ih * W + iw];
                }
              }
            }
        }
  }

  // ---- backward ---------------------------------------------------------

  void backward_node(NodeId id) {
    Node& n = nodes_[std::size_t(id)];
    const auto& g = n.grad;
    auto in = [&](std::size_t i) -> Node& { return nodes_[std::size_t(n.inputs[i])]; };
    auto wants = [&](std::size_t i) { return in(i).requires_grad; };
    switch (n.kind) {
      case Kind::Input:
      case Kind::Param: return;
      case Kind::Add: {
        Node& a = in(0);
        Node& b = in(1);
        if (wants(0))
          for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i];
        if (wants(1)) {
          if (b.value.size() == g.size()) {
            for (std::size_t i = 0; i < g.size(); ++i) b.grad[i] += g[i];
          } else if (b.value.size() == 1) {
            for (std::size_t i = 0; i < g.size(); ++i) b.grad[0] += g[i];
          } else {
            std::size_t nb = b.value.size();
            for (std::size_t i = 0; i < g.size(); ++i) b.grad[i % nb] += g[i];
          }
        }
        return;
      }
      case Kind::Multiply: {
        Node& a = in(0);
        Node& b = in(1);
        if (a.value.size() == b.value.size()) {
          if (wants(0))
            for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i] * b.value[i];
          if (wants(1))
            for (std::size_t i = 0; i < g.size(); ++i) b.grad[i] += g[i] * a.value[i];
        } else if (b.value.size() == 1) {
          if (wants(0))
            for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i] * b.value[0];
          if (wants(1))
            for (std::size_t i = 0; i < g.size(); ++i) b.grad[0] += g[i] * a.value[i];
        } else {
          if (wants(0))
            for (std::size_t i = 0; i < g.size(); ++i) a.grad[0] += g[i] * b.value[i];
          if (wants(1))
            for (std::size_t i = 0; i < g.size(); ++i) b.grad[i] += g[i] * a.value[0];
        }
        return;
      }
      case Kind::MatMul: {
        Node& A = in(0);
        Node& B = in(1);
        std::int64_t m = A.shape[0], k = A.shape[1], p = B.shape[1];
        if (wants(0))
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < k; ++j) {
              T acc = T(0);
              const T* grow = g.data() + i * p;
              const T* brow = B.value.data() + j * p;
              for (std::int64_t c = 0; c < p; ++c) acc += grow[c] * brow[c];
              A.grad[std::size_t(i * k + j)] += acc;
            }
        if (wants(1))
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < k; ++j) {
              T aij = A.value[std::size_t(i * k + j)];
              if (aij == T(0)) continue;
              const T* grow = g.data() + i * p;
              T* brow = B.grad.data() + j * p;
              for (std::int64_t c = 0; c < p; ++c) brow[c] += aij * grow[c];
            }
        return;
      }
      case Kind::Conv2d: {
        conv2d_backward(in(0), in(1), n, wants(0), wants(1));
        return;
      }
      case Kind::MaxPool2d: {
        if (!wants(0)) return;
        Node& x = in(0);
        std::int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
        std::int64_t Ho = n.shape[2], Wo = n.shape[3], w = n.attrs.window, s = n.attrs.stride;
        for (std::int64_t b = 0; b < N; ++b)
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t oh = 0; oh < Ho; ++oh)
              for (std::int64_t ow = 0; ow < Wo; ++ow) {
                std::int64_t bi = (oh * s) * W + ow * s;
                T best = x.value[std::size_t((b * C + c) * H * W + bi)];
                for (std::int64_t i = 0; i < w; ++i)
                  for (std::int64_t j = 0; j < w; ++j) {
                    std::int64_t ix = (oh * s + i) * W + ow * s + j;
                    T v = x.value[std::size_t((b * C + c) * H * W + ix)];
                    if (v > best) { best = v; bi = ix; }
                  }
                x.grad[std::size_t((b * C + c) * H * W + bi)] +=
                    g[std::size_t(((b * C + c) * Ho + oh) * Wo + ow)];
              }
        return;
      }
      case Kind::Relu: {
        if (!wants(0)) return;
        Node& x = in(0);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x.value[i] > T(0)) x.grad[i] += g[i];
        return;
      }
      case Kind::L2Normalize: {
        if (!wants(0)) return;
        Node& x = in(0);
        std::int64_t d = x.shape.back();
        std::int64_t rows = numel(x.shape) / d;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* xr = x.value.data() + r * d;
          const T* yr = n.value.data() + r * d;
          const T* gr = g.data() + r * d;
          T nrm = row_norm(xr, d);
          T dot = T(0);
          for (std::int64_t i = 0; i < d; ++i) dot += gr[i] * yr[i];
          for (std::int64_t i = 0; i < d; ++i)
            x.grad[std::size_t(r * d + i)] += (gr[i] - yr[i] * dot) / nrm;
        }
        return;
      }
      case Kind::CosineDistance: {
        Node& u = in(0);
        Node& v = in(1);
        std::int64_t d = u.shape.back();
        std::int64_t rows = numel(u.shape) / d;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* ur = u.value.data() + r * d;
          const T* vr = v.value.data() + r * d;
          T gr = g[std::size_t(r)];
          if (gr == T(0)) continue;
          T nu = row_norm(ur, d), nv = row_norm(vr, d);
          T dot = T(0);
          for (std::int64_t i = 0; i < d; ++i) dot += ur[i] * vr[i];
          T c = dot / (nu * nv);
          if (wants(0))
            for (std::int64_t i = 0; i < d; ++i)
              u.grad[std::size_t(r * d + i)] -= gr * (vr[i] / (nu * nv) - c * ur[i] / (nu * nu));
          if (wants(1))
            for (std::int64_t i = 0; i < d; ++i)
              v.grad[std::size_t(r * d + i)] -= gr * (ur[i] / (nu * nv) - c * vr[i] / (nv * nv));
        }
        return;
      }
      case Kind::SoftmaxXent: {
        if (!wants(0)) return;
        Node& z = in(0);
        const auto& y = in(1).value;
        std::int64_t N = z.shape[0], C = z.shape[1], S = numel(z.shape) / (N * C);
        for (std::int64_t b = 0; b < N; ++b)
          for (std::int64_t s = 0; s < S; ++s) {
            T gs = g[std::size_t(b * S + s)];
            if (gs == T(0)) continue;
            T m = z.value[std::size_t((b * C) * S + s)];
            for (std::int64_t c = 1; c < C; ++c)
              m = std::max(m, z.value[std::size_t((b * C + c) * S + s)]);
            T sum = T(0);
            for (std::int64_t c = 0; c < C; ++c)
              sum += std::exp(z.value[std::size_t((b * C + c) * S + s)] - m);
            std::int64_t cls = std::int64_t(std::llround(double(y[std::size_t(b * S + s)])));
            for (std::int64_t c = 0; c < C; ++c) {
              T p = std::exp(z.value[std::size_t((b * C + c) * S + s)] - m) / sum;
              z.grad[std::size_t((b * C + c) * S + s)] += gs * (p - (c == cls ? T(1) : T(0)));
            }
          }
        return;
      }
      case Kind::SigmoidXent: {
        Node& z = in(0);
        Node& t = in(1);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (g[i] == T(0)) continue;
          if (wants(0)) z.grad[i] += g[i] * (stable_sigmoid(z.value[i]) - t.value[i]);
          if (wants(1)) t.grad[i] -= g[i] * z.value[i];
        }
        return;
      }
      case Kind::ReverseHuber: {
        if (!wants(0)) return;
        Node& x = in(0);
        T c = T(n.attrs.threshold);
        for (std::size_t i = 0; i < g.size(); ++i) {
          T xi = x.value[i];
          T ax = std::abs(xi);
          T dx;
          if (ax <= c) dx = xi > T(0) ? T(1) : (xi < T(0) ? T(-1) : T(0));  // sign(0) = 0
          else dx = xi / c;
          x.grad[i] += g[i] * dx;
        }
        return;
      }
      case Kind::ReduceMean: {
        if (!wants(0)) return;
        Node& x = in(0);
        T gv = g[0] / T(x.value.size());
        for (auto& xg : x.grad) xg += gv;
        return;
      }
      case Kind::ReduceSum: {
        if (!wants(0)) return;
        Node& x = in(0);
        for (auto& xg : x.grad) xg += g[0];
        return;
      }
      case Kind::Concat: {
        std::int64_t ax = n.attrs.axis;
        std::int64_t outer = 1, inner = 1;
        for (std::int64_t d = 0; d < ax; ++d) outer *= n.shape[std::size_t(d)];
        for (std::size_t d = std::size_t(ax) + 1; d < n.shape.size(); ++d) inner *= n.shape[d];
        std::int64_t off = 0;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          Node& xi = in(i);
          std::int64_t ei = xi.shape[std::size_t(ax)];
          if (wants(i))
            for (std::int64_t o = 0; o < outer; ++o) {
              const T* src = g.data() + (o * n.shape[std::size_t(ax)] + off) * inner;
              T* dst = xi.grad.data() + o * ei * inner;
              for (std::int64_t q = 0; q < ei * inner; ++q) dst[q] += src[q];
            }
          off += ei;
        }
        return;
      }
      case Kind::Flatten: {
        if (!wants(0)) return;
        Node& x = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) x.grad[i] += g[i];
        return;
      }
      case Kind::Slice: {
        if (!wants(0)) return;
        Node& x = in(0);
        std::int64_t inner = numel(x.shape) / x.shape[0];
        T* dst = x.grad.data() + n.attrs.begin * inner;
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        return;
      }
    }
  }

  void conv2d_backward(Node& x, Node& k, Node& n, bool wx, bool wk) {
    std::int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    std::int64_t F = k.shape[0], kh = k.shape[2], kw = k.shape[3];
    std::int64_t Ho = n.shape[2], Wo = n.shape[3];
    std::int64_t s = n.attrs.stride, d = n.attrs.dilation, p = n.attrs.padding;
    const auto& g = n.grad;
    for (std::int64_t b = 0; b < N; ++b)
      for (std::int64_t f = 0; f < F; ++f)
        for (std::int64_t c = 0; c < C; ++c) {
          const T* xb = x.value.data() + (b * C + c) * H * W;
          T* xg = wx ? x.grad.data() + (b * C + c) * H * W : nullptr;
          const T* kf = k.value.data() + (f * C + c) * kh * kw;
          T* kg = wk ? k.grad.data() + (f * C + c) * kh * kw : nullptr;
          const T* gb = g.data() + (b * F + f) * Ho * Wo;
          for (std::int64_t i = 0; i < kh; ++i)
            for (std::int64_t j = 0; j < kw; ++j) {
              T kv = kf[i * kw + j];
              T kacc = T(0);
              for (std::int64_t oh = 0; oh < Ho; ++oh) {
                std::int64_t ih = oh * s - p + i * d;
                if (ih < 0 || ih >= H) continue;
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                  std::int64_t iw = ow * s - p + j * d;
                  if (iw < 0 || iw >= W) continue;
                  T gv = gb[oh * Wo + ow];
                  if (gv == T(0)) continue;
                  if (wx) xg[ih * W + iw] += kv * gv;
                  kacc += xb[ih * W + iw] * gv;
                }
              }
              if (wk) kg[i * kw + j] += kacc;
            }
        }
  }
};

}  // namespace mtss
