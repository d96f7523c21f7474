#pragma once

#include <cmath>
#include <stdexcept>

#include "mtss/tensor.hpp"

namespace mtss {

// The five relative-depth quality numbers. Thresholded percentages use the
// symmetric ratio max(gt/pred, pred/gt), so they cannot tell over- from
// under-prediction; the error means can.
struct DepthMetricsReport {
  double pct_below_1_25 = 0;
  double pct_below_1_25_sq = 0;
  double pct_below_1_25_cube = 0;
  double mean_absolute_error = 0;
  double mean_relative_error = 0;
};

template <typename T>
DepthMetricsReport depth_metrics(const Tensor<T>& gt, const Tensor<T>& pred) {
  if (gt.shape != pred.shape)
    throw std::invalid_argument("depth maps must share a shape, got " + shape_str(gt.shape) +
                                " vs " + shape_str(pred.shape));
  if (gt.values.empty()) throw std::invalid_argument("depth maps are empty");
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  std::int64_t n1 = 0, n2 = 0, n3 = 0;
  double abs_sum = 0, rel_sum = 0;
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    double d = double(gt.values[i]);
    double p = double(pred.values[i]);
    if (!(d > 0) || !(p > 0)) throw std::invalid_argument("depth values must be positive");
    double ratio = std::max(d / p, p / d);
    n1 += ratio < t1;
    n2 += ratio < t2;
    n3 += ratio < t3;
    double ae = std::abs(p - d);
    abs_sum += ae;
    rel_sum += ae / d;
  }
  double n = double(gt.values.size());
  DepthMetricsReport r;
  r.pct_below_1_25 = 100.0 * double(n1) / n;
  r.pct_below_1_25_sq = 100.0 * double(n2) / n;
  r.pct_below_1_25_cube = 100.0 * double(n3) / n;
  r.mean_absolute_error = abs_sum / n;
  r.mean_relative_error = rel_sum / n;
  // a looser threshold can never admit fewer pixels; checked on every report
  if (!(r.pct_below_1_25 <= r.pct_below_1_25_sq && r.pct_below_1_25_sq <= r.pct_below_1_25_cube))
    throw std::logic_error("threshold monotonicity violated");
  if (!(r.mean_absolute_error >= 0) || !(r.mean_relative_error >= 0))
    throw std::logic_error("negative error mean");
  return r;
}

}  // namespace mtss
