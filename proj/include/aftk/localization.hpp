// SPDX-License-Identifier: Apache-2.0
//
// Region-level localization: the traced coordinates of a reference patch
// give the patch's center (their mean) and half-extents (twice the mean
// absolute deviation per axis), which define a differentiable crop.
#pragma once

#include <cstddef>
#include <vector>

#include "aftk/affinity.hpp"

namespace aftk {

/// Axis-aligned box in feature-grid units: center (cx, cy), half-extents (w, h).
struct BBox {
  Var center;  // 2 x 1
  Var half;    // 2 x 1

  static BBox from_values(double cx, double cy, double w, double h);
  double cx() const { return center.value()[0]; }
  double cy() const { return center.value()[1]; }
  double w() const { return half.value()[0]; }
  double h() const { return half.value()[1]; }
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Mean traced coordinate, 2 x 1.
Var locate_center(const LocationMap& traced);

/// (2/N) sum |l_i - c| per axis, 2 x 1. Zero spread yields zero.
Var estimate_scale(const LocationMap& traced, const Var& center);

/// Clamps half-extents to [min_half, frame half-size] per axis.
Var clamp_half_extent(const Var& half, Grid frame, double min_half = 2.0);

/// Bilinear crop on a regular out_h x out_w lattice with cell-centered
/// samples spanning [cx-w, cx+w] x [cy-h, cy+h]. Samples outside the frame
/// clamp to the edge. Differentiable w.r.t. the features and the box.
FeatureMap roi_crop(const FeatureMap& f, const BBox& box, std::size_t out_h, std::size_t out_w);

struct MeanShiftResult {
  Point2 center;
  int iterations = 0;
  bool converged = false;
  bool fell_back = false;  // every kernel weight underflowed
  /// Kernel density sum_i K(l_i - C) at the start point and after every iteration.
  std::vector<double> density;
};

/// Gaussian-kernel mean-shift, K(d) = exp(-|d|^2 / bandwidth^2). Inference only.
MeanShiftResult mean_shift_refine(const Tensor& coords, Point2 init, double bandwidth, int max_iters = 50,
                                  double tol = 1e-6);

struct LocalizeConfig {
  double temperature = 1.0;
  double min_half_extent = 2.0;
};

struct Localization {
  BBox box;
  /// Patch-to-frame affinity A_pf (N1 x N2, normalized over patch cells).
  AffinityMatrix patch_to_frame;
  /// Patch cells traced into the target frame, one entry per patch cell.
  LocationMap traced;
  /// Unclamped scale estimate.
  Var raw_half;
};

/// Locates patch p1 in frame f2. Both directions share the logits p1^T f2:
/// A_pf normalizes over the patch (columns), the tracing map over the frame.
Localization localize_patch(const FeatureMap& p1, const FeatureMap& f2, const LocalizeConfig& config = {});

}  // namespace aftk
