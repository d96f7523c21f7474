#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtss/rng.hpp"
#include "mtss/tensor.hpp"

namespace mtss {

enum class Init { Zero, He, UnitUniform };

// Named master parameters. Initial values depend only on (store seed,
// parameter name), never on creation order, so graphs built in any order
// agree bit for bit.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  bool has(const std::string& name) const { return values_.count(name) != 0; }

  Tensor<T>& ensure(const std::string& name, const Shape& shape, Init init) {
    auto it = values_.find(name);
    if (it != values_.end()) {
      if (it->second.shape != shape)
        throw std::invalid_argument("parameter " + name + " re-declared with shape " +
                                    shape_str(shape) + " vs " + shape_str(it->second.shape));
      return it->second;
    }
    Tensor<T> t(shape, T(0));
    if (init != Init::Zero) {
      auto rng = RngStream::derive(seed_, {hash_name(name.c_str())});
      if (init == Init::He) {
        double fan_in = he_fan_in(shape);
        double s = std::sqrt(2.0 / fan_in);
        for (auto& v : t.values) v = T(rng.normal() * s);
      } else {
        for (auto& v : t.values) v = T(rng.uniform(-1.0, 1.0));
      }
    }
    return values_.emplace(name, std::move(t)).first->second;
  }

  Tensor<T>& get(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::invalid_argument("unknown parameter " + name);
    return it->second;
  }
  const Tensor<T>& get(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::invalid_argument("unknown parameter " + name);
    return it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(values_.size());
    for (auto& kv : values_) out.push_back(kv.first);
    return out;
  }

  std::uint64_t seed() const { return seed_; }
  std::size_t size() const { return values_.size(); }

  // ordered iteration (std::map keeps names sorted)
  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

 private:
  static double he_fan_in(const Shape& s) {
    if (s.size() == 4) return double(s[1] * s[2] * s[3]);  // conv [out,in,kh,kw]
    if (s.size() == 2) return double(s[0]);                // matmul weight [in,out]
    return double(numel(s) ? numel(s) : 1);
  }

  std::uint64_t seed_;
  std::map<std::string, Tensor<T>> values_;
};

}  // namespace mtss
