// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. All losses are differentiable scalars (shape [1]).
#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

#include "aftk/affinity.hpp"

namespace aftk {

/// Mean over points of |l_j - c|_2 for points outside the (w, h) window
/// around the center; points inside contribute 0.
Var concentration_truncated(const LocationMap& traced, const Var& center, const Var& half);

/// Traced entries are laid out on `traced.grid` (the source layout). Source
/// cells are split into non-overlapping grid x grid blocks; each block
/// contributes the mean distance of its traced points to their own centroid.
/// Trailing rows/columns that do not fill a block are dropped; a grid larger
/// than the map shrinks to the map.
Var concentration_local(const LocationMap& traced, std::size_t grid = 8);

/// Spread of the canonical grid under concentration_local (the value of an
/// undistorted identity trace).
double concentration_local_baseline(Grid layout, std::size_t grid = 8);

/// values (D x N1) * A, then back through normalize_columns(A^T); MSE against values.
Var cycle_reconstruction_mse(const Var& values, const AffinityMatrix& a12);
Var orthogonal_cycle_location(const LocationMap& l11, const AffinityMatrix& a12);
Var orthogonal_cycle_feature(const Var& f1, const AffinityMatrix& a12);

/// MSE(c1 * A, c2_true).
Var reconstruction_loss(const Var& c1, const Var& c2_true, const AffinityMatrix& a);

enum class Stage { warmup, joint };
std::string_view stage_name(Stage stage);
Stage parse_stage(std::string_view name);

struct LossWeights {
  double reconstruction = 1.0;
  double concentration_region = 1.0;
  double concentration_local = 1.0;
  double orthogonal_location = 1.0;
  double orthogonal_feature = 1.0;
};

struct LossTerms {
  Var reconstruction;
  std::optional<Var> concentration_region;
  Var concentration_local;
  Var orthogonal_location;
  Var orthogonal_feature;
};

struct LossBreakdown {
  double reconstruction = 0.0;
  double concentration_region = 0.0;
  double concentration_local = 0.0;
  double orthogonal_location = 0.0;
  double orthogonal_feature = 0.0;
  double total_value = 0.0;
  LossWeights weights;
  Var total;
};

/// Weighted sum of the terms. Warm-up drops the region term even when supplied.
LossBreakdown total_loss(Stage stage, const LossTerms& terms, const LossWeights& weights = {});

}  // namespace aftk
