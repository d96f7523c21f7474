#pragma once

#include <cmath>
#include <map>
#include <string>

#include "mtss/params.hpp"
#include "mtss/tensor.hpp"

namespace mtss {

struct RmsPropConfig {
  double rho = 0.9;
  double lr = 1e-3;
  double eps = 1e-8;
};

// One instance per task: tasks keep independent squared-gradient averages
// even for the parameters they share.
template <typename T>
class RmsProp {
 public:
  explicit RmsProp(RmsPropConfig cfg = {}) : cfg_(cfg) {}

  // s <- rho s + (1-rho) g^2; delta = -lr g / (sqrt(s) + eps).
  // Applies the delta to the store and returns it.
  std::map<std::string, Tensor<T>> apply(ParamStore<T>& store,
                                         const std::map<std::string, Tensor<T>>& grads) {
    std::map<std::string, Tensor<T>> deltas;
    for (const auto& [name, g] : grads) {
      auto& theta = store.get(name);
      if (!theta.same_shape(g))
        throw std::invalid_argument("gradient shape mismatch for " + name);
      auto it = s_.find(name);
      if (it == s_.end()) it = s_.emplace(name, Tensor<T>(g.shape, T(0))).first;
      Tensor<T>& s = it->second;
      Tensor<T> delta(g.shape, T(0));
      for (std::size_t i = 0; i < g.values.size(); ++i) {
        s.values[i] = T(cfg_.rho) * s.values[i] + T(1.0 - cfg_.rho) * g.values[i] * g.values[i];
        T denom = std::sqrt(s.values[i]) + T(cfg_.eps);
        // denom is zero only when eps = 0 and the gradient has always been
        // zero here; a zero gradient moves nothing
        delta.values[i] = denom == T(0) ? T(0) : -T(cfg_.lr) * g.values[i] / denom;
        theta.values[i] += delta.values[i];
      }
      deltas.emplace(name, std::move(delta));
    }
    return deltas;
  }

  const std::map<std::string, Tensor<T>>& state() const { return s_; }
  std::map<std::string, Tensor<T>>& mutable_state() { return s_; }
  const RmsPropConfig& config() const { return cfg_; }

 private:
  RmsPropConfig cfg_;
  std::map<std::string, Tensor<T>> s_;
};

}  // namespace mtss
