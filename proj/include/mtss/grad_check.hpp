#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtss/graph.hpp"

namespace mtss {

struct GradReport {
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::int64_t checked = 0;  // scalar parameters compared
  bool pass = true;
  std::string worst;  // "param <id> [<elem>]" of the max error

  std::string summary() const {
    return std::string(pass ? "PASS" : "FAIL") + " max_rel_err=" + std::to_string(max_rel_error) +
           " checked=" + std::to_string(checked) + (worst.empty() ? "" : " worst=" + worst);
  }
};

// Compares supplied analytic gradients against central differences
// (f(x+h)-f(x-h))/2h, relative error denominator max(1, |analytic|).
// Exposed separately from grad_check so a deliberately corrupted gradient
// can be fed through the same comparison as a negative control.
template <typename T>
GradReport compare_with_central_diff(Graph<T>& g, NodeId loss,
                                     const std::unordered_map<NodeId, Tensor<T>>& analytic,
                                     double step, double tol) {
  static_assert(sizeof(T) == 8, "finite-difference checks require the 64-bit mode");
  if (!(step >= 1e-7 && step <= 1e-4))
    throw std::invalid_argument("grad_check: step must lie in [1e-7, 1e-4]");
  GradReport rep;
  rep.tolerance = tol;
  for (NodeId pid : g.param_ids()) {
    const auto it = analytic.find(pid);
    const Tensor<T>* grads = it == analytic.end() ? nullptr : &it->second;
    T* data = g.leaf_data(pid);
    std::int64_t count = numel(g.shape(pid));
    for (std::int64_t i = 0; i < count; ++i) {
      T saved = data[i];
      data[i] = saved + T(step);
      g.forward();
      double fp = double(g.value(loss)[0]);
      data[i] = saved - T(step);
      g.forward();
      double fm = double(g.value(loss)[0]);
      data[i] = saved;
      double numeric = (fp - fm) / (2 * step);
      double an = grads ? double(grads->values[std::size_t(i)]) : 0.0;
      double rel = std::abs(an - numeric) / std::max(1.0, std::abs(an));
      ++rep.checked;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst = "param " + std::to_string(pid) + " [" + std::to_string(i) + "]";
      }
    }
  }
  g.forward();  // restore values downstream of the perturbations
  rep.pass = rep.max_rel_error < tol;
  return rep;
}

template <typename T>
GradReport grad_check(Graph<T>& g, NodeId loss, double step, double tol) {
  auto analytic = g.backward(loss);
  return compare_with_central_diff(g, loss, analytic, step, tol);
}

}  // namespace mtss
