// SPDX-License-Identifier: Apache-2.0
#include "aftk/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "aftk/errors.hpp"
#include "aftk/ops.hpp"

namespace aftk {

Var concentration_truncated(const LocationMap& traced, const Var& center, const Var& half) {
  const double w = half.value()[0], h = half.value()[1];
  if (!(w > 0.0 && h > 0.0)) throw ParameterError("concentration_truncated: half-extents must be positive");
  const std::size_t n = traced.size();
  const double cx = center.value()[0], cy = center.value()[1];
  Tensor outside({1, n});
  for (std::size_t j = 0; j < n; ++j) {
    const double dx = std::abs(traced.coords.value().at(0, j) - cx);
    const double dy = std::abs(traced.coords.value().at(1, j) - cy);
    outside[j] = (dx <= w && dy <= h) ? 0.0 : 1.0;
  }
  Var dist = ops::norm_l2_cols(ops::sub(traced.coords, ops::broadcast_cols(center, n)));
  return ops::mean(ops::mul(dist, Var::constant(std::move(outside))));
}

namespace {

std::vector<std::vector<std::size_t>> local_blocks(Grid layout, std::size_t grid) {
  if (grid == 0) throw ParameterError("concentration_local: grid must be positive");
  const std::size_t gy = std::min(grid, layout.height), gx = std::min(grid, layout.width);
  std::vector<std::vector<std::size_t>> blocks;
  for (std::size_t by = 0; by + gy <= layout.height; by += gy)
    for (std::size_t bx = 0; bx + gx <= layout.width; bx += gx) {
      std::vector<std::size_t> idx;
      idx.reserve(gx * gy);
      for (std::size_t y = by; y < by + gy; ++y)
        for (std::size_t x = bx; x < bx + gx; ++x) idx.push_back(layout.index(x, y));
      blocks.push_back(std::move(idx));
    }
  return blocks;
}

}  // namespace

Var concentration_local(const LocationMap& traced, std::size_t grid) {
  if (traced.size() != traced.grid.cells())
    throw DimensionError("concentration_local: traced entries do not match their layout");
  const auto blocks = local_blocks(traced.grid, grid);
  std::vector<Var> per_block;
  per_block.reserve(blocks.size());
  for (const auto& idx : blocks) {
    Var pts = ops::select_columns(traced.coords, idx);
    Var centroid = ops::mean_cols(pts);
    per_block.push_back(
        ops::reshape(ops::mean(ops::norm_l2_cols(ops::sub(pts, ops::broadcast_cols(centroid, idx.size())))), {1, 1}));
  }
  return ops::mean(ops::concat_rows(per_block));
}

double concentration_local_baseline(Grid layout, std::size_t grid) {
  return concentration_local(canonical_grid(layout), grid).item();
}

Var cycle_reconstruction_mse(const Var& values, const AffinityMatrix& a12) {
  const Var& a = a12.values;
  if (values.value().rank() != 2 || values.dim(1) != a.dim(0))
    throw DimensionError("cycle: values " + shape_string(values.shape()) + " do not match affinity " +
                         shape_string(a.shape()));
  if (a.dim(0) != a.dim(1)) throw DimensionError("cycle: affinity must be square (patch-to-patch)");
  Var forward = ops::matmul(values, a);
  Var back = ops::matmul(forward, ops::normalize_columns(ops::transpose(a)));
  return ops::mse(back, values);
}

Var orthogonal_cycle_location(const LocationMap& l11, const AffinityMatrix& a12) {
  return cycle_reconstruction_mse(l11.coords, a12);
}

Var orthogonal_cycle_feature(const Var& f1, const AffinityMatrix& a12) { return cycle_reconstruction_mse(f1, a12); }

Var reconstruction_loss(const Var& c1, const Var& c2_true, const AffinityMatrix& a) {
  Var predicted = transport(c1, a);
  if (predicted.shape() != c2_true.shape())
    throw DimensionError("reconstruction_loss: target " + shape_string(c2_true.shape()) + " vs prediction " +
                         shape_string(predicted.shape()));
  return ops::mse(predicted, c2_true);
}

std::string_view stage_name(Stage stage) { return stage == Stage::warmup ? "warmup" : "joint"; }

Stage parse_stage(std::string_view name) {
  if (name == "warmup") return Stage::warmup;
  if (name == "joint") return Stage::joint;
  throw ParameterError("unknown stage '" + std::string(name) + "'");
}

LossBreakdown total_loss(Stage stage, const LossTerms& terms, const LossWeights& weights) {
  LossBreakdown out;
  out.weights = weights;
  out.reconstruction = terms.reconstruction.item();
  out.concentration_local = terms.concentration_local.item();
  out.orthogonal_location = terms.orthogonal_location.item();
  out.orthogonal_feature = terms.orthogonal_feature.item();

  std::vector<Var> parts{ops::scale(terms.reconstruction, weights.reconstruction),
                         ops::scale(terms.concentration_local, weights.concentration_local),
                         ops::scale(terms.orthogonal_location, weights.orthogonal_location),
                         ops::scale(terms.orthogonal_feature, weights.orthogonal_feature)};
  if (stage == Stage::joint && terms.concentration_region) {
    out.concentration_region = terms.concentration_region->item();
    parts.push_back(ops::scale(*terms.concentration_region, weights.concentration_region));
  }
  out.total = ops::sum(ops::concat_rows([&] {
    std::vector<Var> rows;
    for (auto& p : parts) rows.push_back(ops::reshape(p, {1, 1}));
    return rows;
  }()));
  out.total_value = out.total.item();
  return out;
}

}  // namespace aftk
