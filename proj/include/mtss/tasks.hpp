#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtss/augment.hpp"
#include "mtss/color.hpp"
#include "mtss/image.hpp"
#include "mtss/motion.hpp"
#include "mtss/rng.hpp"
#include "mtss/tensor.hpp"

namespace mtss {

enum class TaskKind { RelativePosition, Colorization, Exemplar, MotionSegmentation };

inline const char* task_name(TaskKind k) {
  switch (k) {
    case TaskKind::RelativePosition: return "rp";
    case TaskKind::Colorization: return "col";
    case TaskKind::Exemplar: return "ex";
    case TaskKind::MotionSegmentation: return "ms";
  }
  return "?";
}

inline TaskKind task_from_string(const std::string& s) {
  if (s == "rp") return TaskKind::RelativePosition;
  if (s == "col") return TaskKind::Colorization;
  if (s == "ex") return TaskKind::Exemplar;
  if (s == "ms") return TaskKind::MotionSegmentation;
  throw std::invalid_argument("unknown task: " + s);
}

struct TaskSpec {
  TaskKind kind = TaskKind::RelativePosition;
  bool harmonized = false;
  std::int64_t batch = 4;      // pairs, images, triplets, or frames per step
  double step_cost = 1.0;      // simulated cost units per gradient step
  double loss_scale = 1.0;     // multiplies the training objective

  // relative position
  std::int64_t rp_grid = 3, rp_patch = 8, rp_jitter = 1;
  // colorization
  std::int64_t col_stride = 8;
  int col_bins = 13;
  // exemplar
  std::int64_t ex_patch = 16;
  double margin = 0.5;
  AugmentConfig aug;
  // motion segmentation
  std::int64_t ms_factor = 8;
  MotionConfig motion;

  void validate() const {
    if (batch < 1) throw std::invalid_argument("task batch must be >= 1");
    if (!(loss_scale > 0)) throw std::invalid_argument("loss scale must be > 0");
    if (kind == TaskKind::Exemplar && !(margin > 0))
      throw std::invalid_argument("exemplar margin must be > 0");
    if (kind == TaskKind::Colorization && col_stride < 1)
      throw std::invalid_argument("colorization stride must be >= 1");
  }
};

inline TaskSpec default_task(TaskKind k) {
  TaskSpec t;
  t.kind = k;
  if (k == TaskKind::MotionSegmentation) {
    t.motion.random_blobs = 2;
    t.motion.randomize_camera = true;
  }
  return t;
}

// The eight neighbor offsets, in (row, col). Swapping the patches negates
// the offset, which is index + 4 modulo 8.
inline constexpr int kRpOffsets[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, 1},
                                         {1, 1},   {1, 0},  {1, -1}, {0, -1}};

inline std::int64_t rp_label_for_offset(int dr, int dc) {
  for (std::int64_t l = 0; l < 8; ++l)
    if (kRpOffsets[l][0] == dr && kRpOffsets[l][1] == dc) return l;
  throw std::invalid_argument("offset is not an 8-neighbor step");
}

template <typename T>
struct PatchPairBatch {
  // rows [0,B) are first patches, rows [B,2B) their partners
  Tensor<T> patches;
  std::vector<std::int64_t> labels;  // in 0..7
};

template <typename T>
struct ColorizationBatch {
  Tensor<T> input;   // [B,3,H,W], lightness replicated
  Tensor<T> labels;  // [B,gh,gw], class ids
  std::int64_t grid_h = 0, grid_w = 0;
};

template <typename T>
struct TripletBatch {
  // rows [0,B) anchors, [B,2B) positives, [2B,3B) negatives
  Tensor<T> patches;
  std::vector<std::size_t> anchor_src, negative_src;
};

template <typename T>
struct MotionBatch {
  Tensor<T> frames;  // [B,3,H,W]
  Tensor<T> masks;   // [B,1,mh,mw], values in {0,1}
};

namespace detail {

struct RpGeometry {
  std::int64_t pitch = 0, margin = 0;
};

inline RpGeometry rp_geometry(std::int64_t image_h, std::int64_t image_w, const TaskSpec& t) {
  if (t.rp_grid < 2) throw std::invalid_argument("relative position needs a grid of at least 2x2");
  std::int64_t extent = std::min(image_h, image_w);
  std::int64_t pitch = (extent - t.rp_patch - 2 * t.rp_jitter) / (t.rp_grid - 1);
  if (pitch < t.rp_patch + 2 * t.rp_jitter)
    throw std::invalid_argument("image too small for the patch grid with jitter");
  return {pitch, t.rp_jitter};
}

}  // namespace detail

// Samples `count` adjacent-cell patch pairs from one image. Jitter shifts
// each patch independently by up to rp_jitter pixels per axis; cells stay
// non-overlapping because the pitch allows for the worst case.
template <typename T>
void sample_relative_position_pairs(const Image<T>& image, const TaskSpec& t, RngStream& rng,
                                    std::int64_t count, std::vector<Image<T>>& first,
                                    std::vector<Image<T>>& second,
                                    std::vector<std::int64_t>& labels) {
  auto geo = detail::rp_geometry(image.height, image.width, t);
  auto g = t.rp_grid;
  for (std::int64_t i = 0; i < count; ++i) {
    std::int64_t r1 = std::int64_t(rng.uniform_below(std::uint64_t(g)));
    std::int64_t c1 = std::int64_t(rng.uniform_below(std::uint64_t(g)));
    // choose uniformly among the in-grid neighbors of the first cell
    std::int64_t valid[8], nvalid = 0;
    for (std::int64_t l = 0; l < 8; ++l) {
      auto r2 = r1 + kRpOffsets[l][0], c2 = c1 + kRpOffsets[l][1];
      if (r2 >= 0 && r2 < g && c2 >= 0 && c2 < g) valid[nvalid++] = l;
    }
    std::int64_t label = valid[rng.uniform_below(std::uint64_t(nvalid))];
    auto r2 = r1 + kRpOffsets[label][0], c2 = c1 + kRpOffsets[label][1];

    auto jitter = [&] { return rng.uniform_int(-t.rp_jitter, t.rp_jitter); };
    auto y1 = geo.margin + r1 * geo.pitch + jitter(), x1 = geo.margin + c1 * geo.pitch + jitter();
    auto y2 = geo.margin + r2 * geo.pitch + jitter(), x2 = geo.margin + c2 * geo.pitch + jitter();
    Image<T> p1 = crop(image, y1, x1, t.rp_patch, t.rp_patch);
    Image<T> p2 = crop(image, y2, x2, t.rp_patch, t.rp_patch);
    if (t.harmonized) {
      p1 = harmonize(p1);
      p2 = harmonize(p2);
    } else {
      p1 = preprocess_color_drop(p1, rng);
      p2 = preprocess_color_drop(p2, rng);
    }
    first.push_back(std::move(p1));
    second.push_back(std::move(p2));
    labels.push_back(label);
  }
}

template <typename T>
PatchPairBatch<T> sample_relative_position_batch(const std::vector<Image<T>>& images,
                                                 const TaskSpec& t, RngStream& rng) {
  if (images.empty()) throw std::invalid_argument("empty image set");
  std::vector<Image<T>> first, second;
  std::vector<std::int64_t> labels;
  for (std::int64_t i = 0; i < t.batch; ++i) {
    auto idx = std::size_t(rng.uniform_below(images.size()));
    sample_relative_position_pairs(images[idx], t, rng, 1, first, second, labels);
  }
  first.insert(first.end(), second.begin(), second.end());
  PatchPairBatch<T> out;
  out.patches = stack_images(first);
  out.labels = std::move(labels);
  return out;
}

template <typename T>
ColorizationBatch<T> make_colorization_batch(const std::vector<Image<T>>& images,
                                             const TaskSpec& t, RngStream& rng) {
  if (images.empty()) throw std::invalid_argument("empty image set");
  AbQuantizer quant(t.col_bins);
  std::vector<Image<T>> inputs;
  ColorizationBatch<T> out;
  std::vector<T> label_values;
  for (std::int64_t i = 0; i < t.batch; ++i) {
    const auto& im = images[std::size_t(rng.uniform_below(images.size()))];
    inputs.push_back(harmonize(im));
    auto grid = make_colorization_targets(im, t.col_stride, quant);
    out.grid_h = grid.height;
    out.grid_w = grid.width;
    for (auto id : grid.ids) label_values.push_back(T(id));
  }
  out.input = stack_images(inputs);
  out.labels = Tensor<T>({t.batch, out.grid_h, out.grid_w}, label_values);
  return out;
}

template <typename T>
TripletBatch<T> exemplar_triplet_batch(const std::vector<Image<T>>& images, const TaskSpec& t,
                                       RngStream& rng) {
  if (images.size() < 2) throw std::invalid_argument("exemplar needs at least 2 images");
  auto random_crop = [&](const Image<T>& im) {
    auto y = std::int64_t(rng.uniform_below(std::uint64_t(im.height - t.ex_patch + 1)));
    auto x = std::int64_t(rng.uniform_below(std::uint64_t(im.width - t.ex_patch + 1)));
    return crop(im, y, x, t.ex_patch, t.ex_patch);
  };
  std::vector<Image<T>> anchors, positives, negatives;
  TripletBatch<T> out;
  for (std::int64_t i = 0; i < t.batch; ++i) {
    auto ia = std::size_t(rng.uniform_below(images.size()));
    auto in = std::size_t(rng.uniform_below(images.size() - 1));
    if (in >= ia) ++in;  // never the anchor's source
    Image<T> src = random_crop(images[ia]);
    Image<T> neg = random_crop(images[in]);
    Image<T> x1 = augment_patch(src, t.aug, rng);
    Image<T> x2 = augment_patch(src, t.aug, rng);
    Image<T> x3 = augment_patch(neg, t.aug, rng);
    if (t.harmonized) {
      x1 = harmonize(x1);
      x2 = harmonize(x2);
      x3 = harmonize(x3);
    }
    anchors.push_back(std::move(x1));
    positives.push_back(std::move(x2));
    negatives.push_back(std::move(x3));
    out.anchor_src.push_back(ia);
    out.negative_src.push_back(in);
  }
  anchors.insert(anchors.end(), positives.begin(), positives.end());
  anchors.insert(anchors.end(), negatives.begin(), negatives.end());
  out.patches = stack_images(anchors);
  return out;
}

template <typename T>
MotionBatch<T> make_motion_batch(const TaskSpec& t, RngStream& rng) {
  std::vector<Image<T>> frames, masks;
  for (std::int64_t i = 0; i < t.batch; ++i) {
    auto seq = synth_motion_sequence<T>(t.motion, rng);
    auto sample = motion_mask(seq, t.ms_factor);
    frames.push_back(t.harmonized ? harmonize(sample.frame) : std::move(sample.frame));
    masks.push_back(std::move(sample.mask));
  }
  MotionBatch<T> out;
  out.frames = stack_images(frames);
  out.masks = stack_images(masks);
  return out;
}

}  // namespace mtss
