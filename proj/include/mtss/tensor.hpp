#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtss {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense n-dimensional array.  Scalars have an empty shape and one value.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)) {
    for (auto d : shape)
      if (d <= 0) throw std::invalid_argument("tensor extent must be positive, got " + shape_str(shape));
    values.assign(std::size_t(numel(shape)), fill);
  }
  Tensor(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
    if (std::int64_t(values.size()) != numel(shape))
      throw std::invalid_argument("tensor value count " + std::to_string(values.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  std::int64_t size() const { return std::int64_t(values.size()); }
  bool is_scalar() const { return values.size() == 1; }

  T& operator[](std::int64_t i) { return values[std::size_t(i)]; }
  const T& operator[](std::int64_t i) const { return values[std::size_t(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.values)
    if (!std::isfinite(double(v))) return false;
  return true;
}

}  // namespace mtss
