#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mtss/image.hpp"
#include "mtss/rng.hpp"
#include "mtss/tensor.hpp"

namespace mtss {

template <typename T>
struct ClassDataset {
  Tensor<T> images;  // [N,3,S,S]
  std::vector<std::int64_t> labels;
  std::int64_t classes = 0;
};

template <typename T>
struct DepthDataset {
  Tensor<T> images;  // [N,3,S,S]
  Tensor<T> depth;   // [N,1,S/factor,S/factor], strictly positive
};

namespace detail {

template <typename T>
void tint_and_noise(Image<T>& img, RngStream& rng, double noise) {
  double tint[3] = {rng.uniform(0.9, 1.0), rng.uniform(0.9, 1.0), rng.uniform(0.9, 1.0)};
  for (std::int64_t c = 0; c < img.channels; ++c)
    for (std::int64_t y = 0; y < img.height; ++y)
      for (std::int64_t x = 0; x < img.width; ++x) {
        double v = double(img.at(c, y, x)) * tint[c] + rng.uniform(-noise, noise);
        img.at(c, y, x) = T(std::clamp(v, 0.0, 1.0));
      }
}

}  // namespace detail

// Four texture families told apart by pattern, not brightness: horizontal
// stripes, vertical stripes, one solid block, and a checkerboard. Phase,
// block position, base level, tint, and pixel noise all vary per image.
// `noise` is the uniform pixel perturbation half-range; `amp_lo`/`amp_hi`
// bound the pattern contrast, so low amplitude plus high noise makes the
// classes hard to separate from raw pixels.
template <typename T>
ClassDataset<T> make_texture_dataset(std::int64_t classes, std::int64_t per_class,
                                     std::int64_t size, RngStream& rng, double noise = 0.04,
                                     double amp_lo = 0.25, double amp_hi = 0.35) {
  if (classes < 2 || classes > 4) throw std::invalid_argument("texture dataset supports 2..4 classes");
  if (per_class < 1 || size < 8) throw std::invalid_argument("dataset too small");
  if (!(noise >= 0) || !(amp_lo <= amp_hi) || !(amp_lo > 0))
    throw std::invalid_argument("texture dataset needs noise >= 0 and 0 < amp_lo <= amp_hi");
  std::vector<Image<T>> images;
  ClassDataset<T> out;
  out.classes = classes;
  for (std::int64_t c = 0; c < classes; ++c) {
    for (std::int64_t i = 0; i < per_class; ++i) {
      double base = rng.uniform(0.4, 0.6);
      double amp = rng.uniform(amp_lo, amp_hi);
      std::int64_t phase = std::int64_t(rng.uniform_below(4));
      Image<T> img(3, size, size);
      for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) {
          bool on = false;
          switch (c) {
            case 0: on = ((y + phase) / 2) % 2 == 0; break;  // horizontal stripes
            case 1: on = ((x + phase) / 2) % 2 == 0; break;  // vertical stripes
            case 2: on = false; break;                       // block drawn below
            case 3: on = (((y + phase) / 2) + ((x + phase) / 2)) % 2 == 0; break;
          }
          double v = on ? base + amp : base - amp;
          for (std::int64_t ch = 0; ch < 3; ++ch) img.at(ch, y, x) = T(std::clamp(v, 0.0, 1.0));
        }
      if (c == 2) {
        std::int64_t side = size / 2;
        std::int64_t y0 = std::int64_t(rng.uniform_below(std::uint64_t(size - side)));
        std::int64_t x0 = std::int64_t(rng.uniform_below(std::uint64_t(size - side)));
        for (std::int64_t y = y0; y < y0 + side; ++y)
          for (std::int64_t x = x0; x < x0 + side; ++x)
            for (std::int64_t ch = 0; ch < 3; ++ch)
              img.at(ch, y, x) = T(std::clamp(base + amp, 0.0, 1.0));
      }
      detail::tint_and_noise(img, rng, noise);
      images.push_back(std::move(img));
      out.labels.push_back(c);
    }
  }
  out.images = stack_images(images);
  return out;
}

// Two classes separated by overall brightness — linearly separable from
// almost any monotone feature, including raw pixels.
template <typename T>
ClassDataset<T> make_separable_dataset(std::int64_t per_class, std::int64_t size, RngStream& rng) {
  if (per_class < 1 || size < 4) throw std::invalid_argument("dataset too small");
  std::vector<Image<T>> images;
  ClassDataset<T> out;
  out.classes = 2;
  for (std::int64_t c = 0; c < 2; ++c) {
    for (std::int64_t i = 0; i < per_class; ++i) {
      double base = c == 0 ? rng.uniform(0.15, 0.30) : rng.uniform(0.70, 0.85);
      Image<T> img(3, size, size);
      for (std::int64_t ch = 0; ch < 3; ++ch)
        for (std::int64_t y = 0; y < size; ++y)
          for (std::int64_t x = 0; x < size; ++x)
            img.at(ch, y, x) = T(std::clamp(base + rng.uniform(-0.05, 0.05), 0.0, 1.0));
      images.push_back(std::move(img));
      out.labels.push_back(c);
    }
  }
  out.images = stack_images(images);
  return out;
}

// Scenes whose appearance encodes distance: a sloped background plane plus
// a nearer rectangle, shaded by inverse depth so brightness carries the
// signal. Labels are cell-mean depths at the model's output resolution.
template <typename T>
DepthDataset<T> make_depth_dataset(std::int64_t count, std::int64_t size, std::int64_t factor,
                                   RngStream& rng) {
  if (count < 1 || size < 8) throw std::invalid_argument("dataset too small");
  if (factor < 1 || size % factor != 0)
    throw std::invalid_argument("depth label factor must divide the image extent");
  std::int64_t grid = size / factor;
  std::vector<Image<T>> images, labels;
  for (std::int64_t i = 0; i < count; ++i) {
    double d0 = rng.uniform(2.0, 3.0);
    double gx = rng.uniform(-0.8, 0.8);
    double gy = rng.uniform(-0.8, 0.8);
    double dr = rng.uniform(0.8, 1.4);  // rectangle sits nearer than the plane
    std::int64_t side = size / 4 + std::int64_t(rng.uniform_below(std::uint64_t(size / 4)));
    std::int64_t y0 = std::int64_t(rng.uniform_below(std::uint64_t(size - side)));
    std::int64_t x0 = std::int64_t(rng.uniform_below(std::uint64_t(size - side)));

    Image<double> depth(1, size, size);
    for (std::int64_t y = 0; y < size; ++y)
      for (std::int64_t x = 0; x < size; ++x) {
        bool inside = y >= y0 && y < y0 + side && x >= x0 && x < x0 + side;
        depth.at(0, y, x) =
            inside ? dr : d0 + gx * double(x) / double(size) + gy * double(y) / double(size);
      }

    Image<T> img(3, size, size);
    for (std::int64_t y = 0; y < size; ++y)
      for (std::int64_t x = 0; x < size; ++x) {
        double shade = std::clamp(1.2 / depth.at(0, y, x), 0.0, 1.0);
        for (std::int64_t ch = 0; ch < 3; ++ch) img.at(ch, y, x) = T(shade);
      }
    detail::tint_and_noise(img, rng, 0.02);

    Image<T> cells(1, grid, grid);
    for (std::int64_t cy = 0; cy < grid; ++cy)
      for (std::int64_t cx = 0; cx < grid; ++cx) {
        double acc = 0;
        for (std::int64_t y = cy * factor; y < (cy + 1) * factor; ++y)
          for (std::int64_t x = cx * factor; x < (cx + 1) * factor; ++x) acc += depth.at(0, y, x);
        cells.at(0, cy, cx) = T(acc / double(factor * factor));
      }
    images.push_back(std::move(img));
    labels.push_back(std::move(cells));
  }
  DepthDataset<T> out;
  out.images = stack_images(images);
  out.depth = stack_images(labels);
  return out;
}

}  // namespace mtss
