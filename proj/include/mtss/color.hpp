#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mtss/image.hpp"
#include "mtss/rng.hpp"

namespace mtss {

namespace detail {

// Linear sRGB -> XYZ, D65 white. Rows sum to the white point so (1,1,1)
// maps exactly onto (Xn, Yn, Zn).
inline constexpr double kRgbToXyz[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};
inline constexpr double kXn = 0.95047, kYn = 1.0, kZn = 1.08883;

// The inverse is derived from the forward matrix at first use; a hand-copied
// inverse would cap round-trip accuracy at its printed precision.
inline const double (&xyz_to_rgb_matrix())[3][3] {
  static const auto inv = [] {
    const auto& m = kRgbToXyz;
    double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                 m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                 m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    struct M { double v[3][3]; } r{};
    r.v[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    r.v[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    r.v[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    r.v[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    r.v[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    r.v[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    r.v[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    r.v[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    r.v[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    return M{{{r.v[0][0], r.v[0][1], r.v[0][2]},
              {r.v[1][0], r.v[1][1], r.v[1][2]},
              {r.v[2][0], r.v[2][1], r.v[2][2]}}};
  }();
  return inv.v;
}

inline double srgb_linearize(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}
inline double srgb_delinearize(double c) {
  return c <= 0.0031308 ? c * 12.92 : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

inline constexpr double kLabDelta = 6.0 / 29.0;

inline double lab_f(double t) {
  return t > kLabDelta * kLabDelta * kLabDelta
             ? std::cbrt(t)
             : t / (3.0 * kLabDelta * kLabDelta) + 4.0 / 29.0;
}
inline double lab_f_inv(double u) {
  return u > kLabDelta ? u * u * u : 3.0 * kLabDelta * kLabDelta * (u - 4.0 / 29.0);
}

inline void rgb_pixel_to_lab(double r, double g, double b, double* lab) {
  double lr = srgb_linearize(r), lg = srgb_linearize(g), lb = srgb_linearize(b);
  const auto& m = kRgbToXyz;
  double x = m[0][0] * lr + m[0][1] * lg + m[0][2] * lb;
  double y = m[1][0] * lr + m[1][1] * lg + m[1][2] * lb;
  double z = m[2][0] * lr + m[2][1] * lg + m[2][2] * lb;
  double fx = lab_f(x / kXn), fy = lab_f(y / kYn), fz = lab_f(z / kZn);
  lab[0] = 116.0 * fy - 16.0;
  lab[1] = 500.0 * (fx - fy);
  lab[2] = 200.0 * (fy - fz);
}

inline void lab_pixel_to_rgb(double L, double a, double b, double* rgb) {
  double fy = (L + 16.0) / 116.0;
  double fx = fy + a / 500.0, fz = fy - b / 200.0;
  double x = kXn * lab_f_inv(fx), y = kYn * lab_f_inv(fy), z = kZn * lab_f_inv(fz);
  const auto& m = xyz_to_rgb_matrix();
  double lr = m[0][0] * x + m[0][1] * y + m[0][2] * z;
  double lg = m[1][0] * x + m[1][1] * y + m[1][2] * z;
  double lb = m[2][0] * x + m[2][1] * y + m[2][2] * z;
  rgb[0] = srgb_delinearize(lr);
  rgb[1] = srgb_delinearize(lg);
  rgb[2] = srgb_delinearize(lb);
}

}  // namespace detail

// RGB in [0,1] -> Lab image (channels L in [0,100], a, b roughly [-110,110]).
// Out-of-range inputs are clamped; each clamped value bumps *clamped once.
template <typename T>
Image<T> rgb_to_lab(const Image<T>& rgb, std::uint64_t* clamped = nullptr) {
  if (rgb.channels != 3) throw std::invalid_argument("rgb_to_lab: need 3 channels");
  Image<T> out(3, rgb.height, rgb.width);
  for (std::int64_t y = 0; y < rgb.height; ++y)
    for (std::int64_t x = 0; x < rgb.width; ++x) {
      double p[3], lab[3];
      for (int c = 0; c < 3; ++c) {
        p[c] = double(rgb.at(c, y, x));
        if (p[c] < 0.0 || p[c] > 1.0) {
          p[c] = std::clamp(p[c], 0.0, 1.0);
          if (clamped) ++*clamped;
        }
      }
      detail::rgb_pixel_to_lab(p[0], p[1], p[2], lab);
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = T(lab[c]);
    }
  return out;
}

template <typename T>
Image<T> lab_to_rgb(const Image<T>& lab) {
  if (lab.channels != 3) throw std::invalid_argument("lab_to_rgb: need 3 channels");
  Image<T> out(3, lab.height, lab.width);
  for (std::int64_t y = 0; y < lab.height; ++y)
    for (std::int64_t x = 0; x < lab.width; ++x) {
      double rgb[3];
      detail::lab_pixel_to_rgb(double(lab.at(0, y, x)), double(lab.at(1, y, x)),
                               double(lab.at(2, y, x)), rgb);
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = T(rgb[c]);
    }
  return out;
}

// Replaces all three channels with the raw Lab lightness (range [0,100]).
// Grayscale triplication keeps every pipeline's input 3-channel.
template <typename T>
Image<T> harmonize(const Image<T>& rgb) {
  Image<T> lab = rgb_to_lab(rgb);
  Image<T> out(3, rgb.height, rgb.width);
  for (std::int64_t y = 0; y < rgb.height; ++y)
    for (std::int64_t x = 0; x < rgb.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = lab.at(0, y, x);
  return out;
}

// Maps (a,b) chroma to a discrete class id. Default: uniform BxB grid over
// [-110,110]^2, row-major in (a_bin, b_bin), out-of-range clamped to edge
// bins. An explicit center table switches to nearest-center assignment
// (ties to the lowest id).
class AbQuantizer {
 public:
  explicit AbQuantizer(int bins_per_axis) : bins_(bins_per_axis) {
    if (bins_ < 1) throw std::invalid_argument("AbQuantizer: bins must be >= 1");
  }
  explicit AbQuantizer(std::vector<std::pair<double, double>> centers)
      : bins_(0), centers_(std::move(centers)) {
    if (centers_.empty()) throw std::invalid_argument("AbQuantizer: empty center table");
  }

  std::int64_t num_classes() const {
    return centers_.empty() ? std::int64_t(bins_) * bins_ : std::int64_t(centers_.size());
  }

  std::int64_t quantize(double a, double b) const {
    if (!centers_.empty()) {
      std::int64_t best = 0;
      double best_d = 0;
      for (std::size_t i = 0; i < centers_.size(); ++i) {
        double da = a - centers_[i].first, db = b - centers_[i].second;
        double d = da * da + db * db;
        if (i == 0 || d < best_d) {
          best_d = d;
          best = std::int64_t(i);
        }
      }
      return best;
    }
    return axis_bin(a) * bins_ + axis_bin(b);
  }

  std::pair<double, double> center(std::int64_t id) const {
    if (id < 0 || id >= num_classes()) throw std::invalid_argument("AbQuantizer: id out of range");
    if (!centers_.empty()) return centers_[std::size_t(id)];
    double w = kSpan / bins_;
    std::int64_t ia = id / bins_, ib = id % bins_;
    return {kLo + (double(ia) + 0.5) * w, kLo + (double(ib) + 0.5) * w};
  }

  static constexpr double kLo = -110.0, kSpan = 220.0;

 private:
  std::int64_t axis_bin(double v) const {
    double w = kSpan / bins_;
    auto idx = std::int64_t(std::floor((v - kLo) / w));
    return std::clamp<std::int64_t>(idx, 0, bins_ - 1);
  }

  int bins_;
  std::vector<std::pair<double, double>> centers_;
};

struct LabelGrid {
  std::int64_t height = 0, width = 0;
  std::vector<std::int64_t> ids;  // row-major

  std::int64_t at(std::int64_t y, std::int64_t x) const {
    return ids[std::size_t(y * width + x)];
  }
};

// Chroma targets for colorization: mean (a,b) over each stride x stride cell,
// quantized. Image dims must be divisible by the stride.
template <typename T>
LabelGrid make_colorization_targets(const Image<T>& rgb, std::int64_t stride,
                                    const AbQuantizer& quant) {
  if (stride < 1 || rgb.height % stride != 0 || rgb.width % stride != 0)
    throw std::invalid_argument("make_colorization_targets: dims not divisible by stride");
  Image<T> lab = rgb_to_lab(rgb);
  LabelGrid grid;
  grid.height = rgb.height / stride;
  grid.width = rgb.width / stride;
  grid.ids.reserve(std::size_t(grid.height * grid.width));
  for (std::int64_t gy = 0; gy < grid.height; ++gy)
    for (std::int64_t gx = 0; gx < grid.width; ++gx) {
      double sa = 0, sb = 0;
      for (std::int64_t y = gy * stride; y < (gy + 1) * stride; ++y)
        for (std::int64_t x = gx * stride; x < (gx + 1) * stride; ++x) {
          sa += double(lab.at(1, y, x));
          sb += double(lab.at(2, y, x));
        }
      double n = double(stride * stride);
      grid.ids.push_back(quant.quantize(sa / n, sb / n));
    }
  return grid;
}

// Keeps one channel (chosen uniformly) bit-exact and replaces the other two
// with iid uniform noise over [lo,hi]. Noise is drawn channel-major then
// row-major so the stream layout is reproducible.
template <typename T>
Image<T> preprocess_color_drop(const Image<T>& rgb, RngStream& rng, double lo = 0.0,
                               double hi = 1.0) {
  if (rgb.channels != 3) throw std::invalid_argument("preprocess_color_drop: need 3 channels");
  auto keep = std::int64_t(rng.uniform_below(3));
  Image<T> out(3, rgb.height, rgb.width);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < rgb.height; ++y)
      for (std::int64_t x = 0; x < rgb.width; ++x)
        out.at(c, y, x) = c == keep ? rgb.at(c, y, x) : T(rng.uniform(lo, hi));
  return out;
}

}  // namespace mtss
