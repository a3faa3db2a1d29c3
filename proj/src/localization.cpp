// SPDX-License-Identifier: Apache-2.0
#include "aftk/localization.hpp"

#include <algorithm>
#include <cmath>

#include "aftk/errors.hpp"
#include "aftk/ops.hpp"

namespace aftk {

BBox BBox::from_values(double cx, double cy, double w, double h) {
  return BBox{Var::constant(Tensor({2, 1}, {cx, cy})), Var::constant(Tensor({2, 1}, {w, h}))};
}

Var locate_center(const LocationMap& traced) {
  if (!traced.coords.defined() || traced.coords.value().rank() != 2 || traced.coords.dim(0) != 2)
    throw ParameterError("locate_center: need a non-empty 2 x N location map");
  return ops::mean_cols(traced.coords);
}

Var estimate_scale(const LocationMap& traced, const Var& center) {
  const std::size_t n = traced.size();
  Var dev = ops::abs(ops::sub(traced.coords, ops::broadcast_cols(center, n)));
  return ops::scale(ops::sum_cols(dev), 2.0 / static_cast<double>(n));
}

Var clamp_half_extent(const Var& half, Grid frame, double min_half) {
  const double max_w = static_cast<double>(frame.width) / 2.0;
  const double max_h = static_cast<double>(frame.height) / 2.0;
  Tensor lo({2, 1}, {std::min(min_half, max_w), std::min(min_half, max_h)});
  Tensor hi({2, 1}, {max_w, max_h});
  return ops::clamp(half, lo, hi);
}

FeatureMap roi_crop(const FeatureMap& f, const BBox& box, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw ParameterError("roi_crop: output dimensions must be positive");
  const double W = static_cast<double>(f.grid.width), H = static_cast<double>(f.grid.height);
  const double cx = box.cx(), cy = box.cy(), w = box.w(), h = box.h();
  if (!(w > 0.0 && h > 0.0)) throw LocalizationError("roi_crop: half-extents must be positive");
  const bool overlap = cx + w > -0.5 && cx - w < W - 0.5 && cy + h > -0.5 && cy - h < H - 0.5;
  if (!overlap) throw LocalizationError("roi_crop: box does not overlap the frame");

  const std::size_t np = out_h * out_w;
  Tensor offsets({2, np});
  for (std::size_t qy = 0; qy < out_h; ++qy)
    for (std::size_t qx = 0; qx < out_w; ++qx) {
      offsets.at(0, qy * out_w + qx) = -1.0 + 2.0 * (static_cast<double>(qx) + 0.5) / static_cast<double>(out_w);
      offsets.at(1, qy * out_w + qx) = -1.0 + 2.0 * (static_cast<double>(qy) + 0.5) / static_cast<double>(out_h);
    }
  Var points = ops::add(ops::broadcast_cols(box.center, np),
                        ops::mul(ops::broadcast_cols(box.half, np), Var::constant(std::move(offsets))));
  Var sampled = ops::bilinear_sample(f.to_chw(), points);
  return FeatureMap{std::move(sampled), Grid{out_h, out_w}};
}

MeanShiftResult mean_shift_refine(const Tensor& coords, Point2 init, double bandwidth, int max_iters, double tol) {
  if (!(bandwidth > 0.0)) throw ParameterError("mean_shift_refine: bandwidth must be positive");
  if (coords.rank() != 2 || coords.rows() != 2 || coords.cols() == 0)
    throw ParameterError("mean_shift_refine: need a non-empty 2 x N coordinate set");
  const std::size_t n = coords.cols();
  const double inv_bw2 = 1.0 / (bandwidth * bandwidth);
  auto density_at = [&](Point2 c) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = coords.at(0, i) - c.x, dy = coords.at(1, i) - c.y;
      s += std::exp(-(dx * dx + dy * dy) * inv_bw2);
    }
    return s;
  };

  MeanShiftResult r;
  r.center = init;
  r.density.push_back(density_at(init));
  for (int it = 0; it < max_iters; ++it) {
    double wsum = 0.0, sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = coords.at(0, i) - r.center.x, dy = coords.at(1, i) - r.center.y;
      const double k = std::exp(-(dx * dx + dy * dy) * inv_bw2);
      wsum += k;
      sx += k * coords.at(0, i);
      sy += k * coords.at(1, i);
    }
    Point2 next;
    if (wsum > 0.0) {
      next = {sx / wsum, sy / wsum};
    } else {
      r.fell_back = true;
      for (std::size_t i = 0; i < n; ++i) {
        next.x += coords.at(0, i);
        next.y += coords.at(1, i);
      }
      next.x /= static_cast<double>(n);
      next.y /= static_cast<double>(n);
    }
    const double move = std::hypot(next.x - r.center.x, next.y - r.center.y);
    r.center = next;
    r.iterations = it + 1;
    r.density.push_back(density_at(next));
    if (move < tol) {
      r.converged = true;
      break;
    }
  }
  return r;
}

Localization localize_patch(const FeatureMap& p1, const FeatureMap& f2, const LocalizeConfig& config) {
  Var logits = affinity_logits(p1, f2);  // N1 x N2
  AffinityMatrix a_pf = affinity_from_logits(logits, p1.grid, f2.grid, config.temperature);
  // Normalized over frame cells: column i gives patch cell i's distribution in f2.
  AffinityMatrix frame_to_patch = affinity_from_logits(ops::transpose(logits), f2.grid, p1.grid, config.temperature);
  LocationMap traced = trace_locations(canonical_grid(f2.grid), frame_to_patch);
  Var center = locate_center(traced);
  Var raw_half = estimate_scale(traced, center);
  Var half = clamp_half_extent(raw_half, f2.grid, config.min_half_extent);
  return Localization{BBox{center, half}, std::move(a_pf), std::move(traced), std::move(raw_half)};
}

}  // namespace aftk
