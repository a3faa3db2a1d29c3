// SPDX-License-Identifier: Apache-2.0
//
// Inter-frame affinity: a column-stochastic N1 x N2 matrix whose column j
// holds the weights with which target cell j draws from every source cell.
// The same matrix transports features/labels (c2 = c1 * A) and traces
// coordinates (l12 = l11 * A).
#pragma once

#include <cstddef>

#include "aftk/autodiff.hpp"

namespace aftk {

/// Feature-grid geometry. Cell j sits at (x, y) = (j mod width, j div width).
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t cells() const { return height * width; }
  std::size_t index(std::size_t x, std::size_t y) const { return y * width + x; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

/// C x N features with explicit geometry, N = H * W.
struct FeatureMap {
  Var values;
  Grid grid;

  std::size_t channels() const { return values.dim(0); }
  /// C x H x W view of the same values (differentiable).
  Var to_chw() const;
};

FeatureMap make_feature_map(Var values, Grid grid);
/// Vectorizes a C x H x W tensor (differentiable).
FeatureMap feature_map_from_chw(const Var& chw);

struct AffinityMatrix {
  Var values;  // N1 x N2
  Grid source;
  Grid target;
  std::size_t topk = 0;  // 0 = dense

  bool sparse() const { return topk != 0; }
};

/// 2 x N coordinates (row 0 = x, row 1 = y) in feature-grid units. `grid`
/// is the layout of the entries; the coordinates may refer to another frame.
struct LocationMap {
  Var coords;
  Grid grid;

  std::size_t size() const { return coords.dim(1); }
};

LocationMap canonical_grid(Grid grid);

/// f1^T f2, N1 x N2.
Var affinity_logits(const FeatureMap& f1, const FeatureMap& f2);
AffinityMatrix affinity_from_logits(const Var& logits, Grid source, Grid target, double temperature = 1.0);
AffinityMatrix compute_affinity(const FeatureMap& f1, const FeatureMap& f2, double temperature = 1.0);

/// c (D x N1) * A -> D x N2.
Var transport(const Var& c, const AffinityMatrix& a);
/// l12_j = sum_k l11_k A_kj. The result is laid out on A's target grid.
LocationMap trace_locations(const LocationMap& source, const AffinityMatrix& a);
/// Keeps the k largest entries of every column (ties to the lower row),
/// zeroes the rest and renormalizes.
AffinityMatrix topk_sparsify(const AffinityMatrix& a, std::size_t k);
/// f * f^T, C x C.
Var gram_energy(const FeatureMap& f);

}  // namespace aftk
