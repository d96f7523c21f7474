#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mtss/image.hpp"
#include "mtss/rng.hpp"

namespace mtss {

struct MotionBlob {
  std::int64_t y = 0, x = 0, h = 0, w = 0;  // footprint in frame 0
  int vy = 0, vx = 0;                       // pixels per frame
};

struct MotionConfig {
  std::int64_t height = 32, width = 32;
  std::int64_t frames = 2;
  int camera_vy = 0, camera_vx = 0;
  bool randomize_camera = false;  // draw camera velocity per sequence
  std::vector<MotionBlob> blobs;  // empty: place random_blobs procedurally
  std::int64_t random_blobs = 0;
  std::int64_t blob_min = 4, blob_max = 10;
  int max_speed = 3;  // |velocity| bound for procedural blobs and camera
};

// Frames plus exact per-pixel velocity ground truth for frame 0. Everything
// translates toroidally so motion stays integral and masks stay exact.
template <typename T>
struct MotionSequence {
  std::vector<Image<T>> frames;
  std::vector<int> motion_vy, motion_vx;  // per pixel of frame 0, row-major
  int camera_vy = 0, camera_vx = 0;
  std::int64_t height = 0, width = 0;
};

template <typename T>
struct MotionSample {
  Image<T> frame;  // frame 0
  Image<T> mask;   // 1 channel, values in {0,1}, extents / factor
};

namespace detail {

inline std::int64_t wrap(std::int64_t v, std::int64_t n) {
  v %= n;
  return v < 0 ? v + n : v;
}

}  // namespace detail

template <typename T>
MotionSequence<T> synth_motion_sequence(const MotionConfig& cfg, RngStream& rng) {
  if (cfg.frames < 2) throw std::invalid_argument("motion sequence needs >= 2 frames");
  if (cfg.height < 2 || cfg.width < 2) throw std::invalid_argument("degenerate frame size");
  MotionSequence<T> seq;
  seq.height = cfg.height;
  seq.width = cfg.width;
  seq.camera_vy = cfg.randomize_camera ? int(rng.uniform_int(-cfg.max_speed, cfg.max_speed))
                                       : cfg.camera_vy;
  seq.camera_vx = cfg.randomize_camera ? int(rng.uniform_int(-cfg.max_speed, cfg.max_speed))
                                       : cfg.camera_vx;

  // background texture, sampled toroidally when the camera pans
  Image<T> texture(3, cfg.height, cfg.width);
  for (auto& v : texture.data) v = T(rng.uniform(0.1, 0.9));

  auto blobs = cfg.blobs;
  for (std::int64_t i = 0; i < cfg.random_blobs; ++i) {
    MotionBlob b;
    b.h = cfg.blob_min + std::int64_t(rng.uniform_below(std::uint64_t(cfg.blob_max - cfg.blob_min + 1)));
    b.w = cfg.blob_min + std::int64_t(rng.uniform_below(std::uint64_t(cfg.blob_max - cfg.blob_min + 1)));
    b.y = std::int64_t(rng.uniform_below(std::uint64_t(cfg.height)));
    b.x = std::int64_t(rng.uniform_below(std::uint64_t(cfg.width)));
    b.vy = int(rng.uniform_int(-cfg.max_speed, cfg.max_speed));
    b.vx = int(rng.uniform_int(-cfg.max_speed, cfg.max_speed));
    blobs.push_back(b);
  }
  std::vector<std::array<double, 3>> blob_colors;
  for (std::size_t i = 0; i < blobs.size(); ++i)
    blob_colors.push_back({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)});

  for (std::int64_t t = 0; t < cfg.frames; ++t) {
    Image<T> fr(3, cfg.height, cfg.width);
    for (std::int64_t y = 0; y < cfg.height; ++y)
      for (std::int64_t x = 0; x < cfg.width; ++x) {
        auto sy = detail::wrap(y - std::int64_t(t) * seq.camera_vy, cfg.height);
        auto sx = detail::wrap(x - std::int64_t(t) * seq.camera_vx, cfg.width);
        for (int c = 0; c < 3; ++c) fr.at(c, y, x) = texture.at(c, sy, sx);
      }
    for (std::size_t bi = 0; bi < blobs.size(); ++bi) {
      const auto& b = blobs[bi];
      for (std::int64_t dy = 0; dy < b.h; ++dy)
        for (std::int64_t dx = 0; dx < b.w; ++dx) {
          auto y = detail::wrap(b.y + dy + std::int64_t(t) * b.vy, cfg.height);
          auto x = detail::wrap(b.x + dx + std::int64_t(t) * b.vx, cfg.width);
          for (int c = 0; c < 3; ++c) fr.at(c, y, x) = T(blob_colors[bi][c]);
        }
    }
    seq.frames.push_back(std::move(fr));
  }

  seq.motion_vy.assign(std::size_t(cfg.height * cfg.width), seq.camera_vy);
  seq.motion_vx.assign(std::size_t(cfg.height * cfg.width), seq.camera_vx);
  // later blobs occlude earlier ones, matching the draw order above
  for (const auto& b : blobs)
    for (std::int64_t dy = 0; dy < b.h; ++dy)
      for (std::int64_t dx = 0; dx < b.w; ++dx) {
        auto y = detail::wrap(b.y + dy, cfg.height);
        auto x = detail::wrap(b.x + dx, cfg.width);
        seq.motion_vy[std::size_t(y * cfg.width + x)] = b.vy;
        seq.motion_vx[std::size_t(y * cfg.width + x)] = b.vx;
      }
  return seq;
}

// Majority vote per cell; exact ties count as foreground.
template <typename T>
Image<T> downsample_mask(const Image<T>& mask, std::int64_t factor) {
  if (factor < 1 || mask.height % factor != 0 || mask.width % factor != 0)
    throw std::invalid_argument("downsample factor must divide mask extents");
  Image<T> out(1, mask.height / factor, mask.width / factor);
  for (std::int64_t y = 0; y < out.height; ++y)
    for (std::int64_t x = 0; x < out.width; ++x) {
      std::int64_t fg = 0;
      for (std::int64_t dy = 0; dy < factor; ++dy)
        for (std::int64_t dx = 0; dx < factor; ++dx)
          fg += mask.at(0, y * factor + dy, x * factor + dx) != T(0);
      out.at(0, y, x) = T(2 * fg >= factor * factor ? 1 : 0);
    }
  return out;
}

// Foreground = pixel motion that disagrees with the camera.
template <typename T>
MotionSample<T> motion_mask(const MotionSequence<T>& seq, std::int64_t factor) {
  Image<T> full(1, seq.height, seq.width);
  for (std::int64_t y = 0; y < seq.height; ++y)
    for (std::int64_t x = 0; x < seq.width; ++x) {
      auto i = std::size_t(y * seq.width + x);
      bool fg = seq.motion_vy[i] != seq.camera_vy || seq.motion_vx[i] != seq.camera_vx;
      full.at(0, y, x) = T(fg ? 1 : 0);
    }
  MotionSample<T> out;
  out.frame = seq.frames.front();
  out.mask = downsample_mask(full, factor);
  return out;
}

}  // namespace mtss
