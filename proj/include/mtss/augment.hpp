#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "mtss/image.hpp"
#include "mtss/rng.hpp"

namespace mtss {

struct AugmentConfig {
  double max_translate = 2.0;   // pixels, each axis
  double max_rotate_deg = 15.0;
  double scale_lo = 0.9, scale_hi = 1.1;
  double max_color_shift = 0.1;  // additive, per channel

  static AugmentConfig identity() { return {0.0, 0.0, 1.0, 1.0, 0.0}; }
};

// Bilinear lookup with edge clamping. Zero fractional weights multiply their
// neighbor term to exactly zero, so integer coordinates read back bit-exact.
template <typename T>
double bilinear(const Image<T>& im, std::int64_t c, double y, double x) {
  auto y0 = std::int64_t(std::floor(y)), x0 = std::int64_t(std::floor(x));
  double wy = y - double(y0), wx = x - double(x0);
  auto cy = [&](std::int64_t v) { return std::clamp<std::int64_t>(v, 0, im.height - 1); };
  auto cx = [&](std::int64_t v) { return std::clamp<std::int64_t>(v, 0, im.width - 1); };
  double v00 = double(im.at(c, cy(y0), cx(x0)));
  double v01 = double(im.at(c, cy(y0), cx(x0 + 1)));
  double v10 = double(im.at(c, cy(y0 + 1), cx(x0)));
  double v11 = double(im.at(c, cy(y0 + 1), cx(x0 + 1)));
  return (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11);
}

// Translation, rotation about the patch center, isotropic scale, additive
// color shift. The all-zero transform with scale 1 is a bit-exact identity.
template <typename T>
Image<T> warp_patch(const Image<T>& patch, double ty, double tx, double theta_rad, double scale,
                    const double shift[3]) {
  double cyc = 0.5 * double(patch.height - 1), cxc = 0.5 * double(patch.width - 1);
  double cs = std::cos(theta_rad), sn = std::sin(theta_rad);
  Image<T> out(patch.channels, patch.height, patch.width);
  for (std::int64_t c = 0; c < patch.channels; ++c)
    for (std::int64_t y = 0; y < patch.height; ++y)
      for (std::int64_t x = 0; x < patch.width; ++x) {
        // inverse map: undo translation, then rotation and scale about center
        double py = double(y) - cyc - ty, px = double(x) - cxc - tx;
        double sy = (cs * py + sn * px) / scale + cyc;
        double sx = (-sn * py + cs * px) / scale + cxc;
        double v = bilinear(patch, c, sy, sx) + shift[c % 3];
        out.at(c, y, x) = T(v);
      }
  return out;
}

// Exactly seven draws regardless of the configured ranges, so the stream
// position never depends on the config.
template <typename T>
Image<T> augment_patch(const Image<T>& patch, const AugmentConfig& cfg, RngStream& rng) {
  double ty = rng.uniform(-cfg.max_translate, cfg.max_translate);
  double tx = rng.uniform(-cfg.max_translate, cfg.max_translate);
  double theta = rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg) * 3.14159265358979323846 / 180.0;
  double scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  double shift[3] = {rng.uniform(-cfg.max_color_shift, cfg.max_color_shift),
                     rng.uniform(-cfg.max_color_shift, cfg.max_color_shift),
                     rng.uniform(-cfg.max_color_shift, cfg.max_color_shift)};
  return warp_patch(patch, ty, tx, theta, scale, shift);
}

}  // namespace mtss
