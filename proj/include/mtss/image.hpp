#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtss/rng.hpp"
#include "mtss/tensor.hpp"

namespace mtss {

// Planar channel-major raster, values nominally in [0,1] for RGB content.
template <typename T>
struct Image {
  std::int64_t channels = 0, height = 0, width = 0;
  std::vector<T> data;  // [c][y][x]

  Image() = default;
  Image(std::int64_t c, std::int64_t h, std::int64_t w, T fill = T(0))
      : channels(c), height(h), width(w), data(std::size_t(c * h * w), fill) {}

  T& at(std::int64_t c, std::int64_t y, std::int64_t x) {
    return data[std::size_t((c * height + y) * width + x)];
  }
  T at(std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data[std::size_t((c * height + y) * width + x)];
  }

  Tensor<T> to_tensor() const { return Tensor<T>({channels, height, width}, data); }
};

template <typename T>
Image<T> crop(const Image<T>& im, std::int64_t y0, std::int64_t x0, std::int64_t h, std::int64_t w) {
  if (y0 < 0 || x0 < 0 || y0 + h > im.height || x0 + w > im.width)
    throw std::invalid_argument("crop outside image bounds");
  Image<T> out(im.channels, h, w);
  for (std::int64_t c = 0; c < im.channels; ++c)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) out.at(c, y, x) = im.at(c, y0 + y, x0 + x);
  return out;
}

// Stacks equally-shaped images into an [N,C,H,W] batch tensor.
template <typename T>
Tensor<T> stack_images(const std::vector<Image<T>>& ims) {
  if (ims.empty()) throw std::invalid_argument("stack_images: empty batch");
  const auto& f = ims.front();
  Tensor<T> out({std::int64_t(ims.size()), f.channels, f.height, f.width});
  std::size_t per = f.data.size();
  for (std::size_t i = 0; i < ims.size(); ++i) {
    if (ims[i].data.size() != per) throw std::invalid_argument("stack_images: shape mismatch");
    std::copy(ims[i].data.begin(), ims[i].data.end(), out.values.begin() + std::int64_t(i * per));
  }
  return out;
}

// Procedural RGB scene: smooth two-color gradient background plus a few
// rectangles whose hue is tied to their brightness band, so color is
// predictable from intensity structure (what colorization has to learn).
template <typename T>
Image<T> synth_image(RngStream& rng, std::int64_t h, std::int64_t w) {
  Image<T> im(3, h, w);
  double gx = rng.uniform(-1, 1), gy = rng.uniform(-1, 1);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.1, 0.9);
    c1[c] = rng.uniform(0.1, 0.9);
  }
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      double t = 0.5 + 0.5 * (gx * (2.0 * x / std::max<std::int64_t>(w - 1, 1) - 1) +
                              gy * (2.0 * y / std::max<std::int64_t>(h - 1, 1) - 1)) / 2.0;
      for (int c = 0; c < 3; ++c) im.at(c, y, x) = T(c0[c] + (c1[c] - c0[c]) * t);
    }
  // brightness-banded palette: dark->blue, mid->green, bright->red
  static const double palette[3][3] = {{0.10, 0.15, 0.70}, {0.15, 0.60, 0.20}, {0.85, 0.30, 0.15}};
  std::int64_t rects = 1 + std::int64_t(rng.uniform_below(4));
  for (std::int64_t r = 0; r < rects; ++r) {
    std::int64_t rh = 2 + std::int64_t(rng.uniform_below(std::uint64_t(h / 2)));
    std::int64_t rw = 2 + std::int64_t(rng.uniform_below(std::uint64_t(w / 2)));
    std::int64_t ry = std::int64_t(rng.uniform_below(std::uint64_t(h - rh + 1)));
    std::int64_t rx = std::int64_t(rng.uniform_below(std::uint64_t(w - rw + 1)));
    int band = int(rng.uniform_below(3));
    double level = 0.25 + 0.25 * band + rng.uniform(-0.08, 0.08);
    for (std::int64_t y = ry; y < ry + rh; ++y)
      for (std::int64_t x = rx; x < rx + rw; ++x)
        for (int c = 0; c < 3; ++c)
          im.at(c, y, x) = T(std::clamp(palette[band][c] * level / 0.5, 0.0, 1.0));
  }
  return im;
}

// Flat binary raster: magic "MTIM", u32 width, u32 height, u32 channels,
// then channels*height*width little-endian f32, planar.
template <typename T>
void write_raster(const std::string& path, const Image<T>& im) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  std::uint32_t hdr[3] = {std::uint32_t(im.width), std::uint32_t(im.height), std::uint32_t(im.channels)};
  std::vector<float> buf(im.data.begin(), im.data.end());
  bool ok = std::fwrite("MTIM", 1, 4, f) == 4 && std::fwrite(hdr, 4, 3, f) == 3 &&
            std::fwrite(buf.data(), 4, buf.size(), f) == buf.size();
  std::fclose(f);
  if (!ok) throw std::runtime_error("short write: " + path);
}

template <typename T>
Image<T> read_raster(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  std::uint32_t hdr[3];
  if (std::fread(magic, 1, 4, f) != 4 || std::string(magic, 4) != "MTIM") {
    std::fclose(f);
    throw std::runtime_error("bad raster magic in " + path);
  }
  if (std::fread(hdr, 4, 3, f) != 3) {
    std::fclose(f);
    throw std::runtime_error("truncated raster header in " + path);
  }
  Image<T> im(hdr[2], hdr[1], hdr[0]);
  std::vector<float> buf(im.data.size());
  std::size_t got = std::fread(buf.data(), 4, buf.size(), f);
  std::fclose(f);
  if (got != buf.size()) throw std::runtime_error("truncated raster data in " + path);
  std::copy(buf.begin(), buf.end(), im.data.begin());
  return im;
}

}  // namespace mtss
