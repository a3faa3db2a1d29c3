// SPDX-License-Identifier: Apache-2.0
#include "aftk/affinity.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "aftk/errors.hpp"
#include "aftk/ops.hpp"

namespace aftk {

FeatureMap make_feature_map(Var values, Grid grid) {
  if (values.value().rank() != 2) throw DimensionError("feature map values must be C x N");
  if (values.dim(1) != grid.cells())
    throw DimensionError("feature map has " + std::to_string(values.dim(1)) + " cells, geometry " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width) + " needs " +
                         std::to_string(grid.cells()));
  return FeatureMap{std::move(values), grid};
}

FeatureMap feature_map_from_chw(const Var& chw) {
  if (chw.value().rank() != 3) throw DimensionError("expected C x H x W, got " + shape_string(chw.shape()));
  const Grid grid{chw.dim(1), chw.dim(2)};
  return FeatureMap{ops::reshape(chw, {chw.dim(0), grid.cells()}), grid};
}

Var FeatureMap::to_chw() const { return ops::reshape(values, {channels(), grid.height, grid.width}); }

LocationMap canonical_grid(Grid grid) {
  Tensor coords({2, grid.cells()});
  for (std::size_t j = 0; j < grid.cells(); ++j) {
    coords.at(0, j) = static_cast<double>(j % grid.width);
    coords.at(1, j) = static_cast<double>(j / grid.width);
  }
  return LocationMap{Var::constant(std::move(coords)), grid};
}

Var affinity_logits(const FeatureMap& f1, const FeatureMap& f2) {
  if (f1.channels() != f2.channels())
    throw DimensionError("affinity: channel mismatch " + std::to_string(f1.channels()) + " vs " +
                         std::to_string(f2.channels()));
  return ops::matmul(ops::transpose(f1.values), f2.values);
}

AffinityMatrix affinity_from_logits(const Var& logits, Grid source, Grid target, double temperature) {
  if (logits.dim(0) != source.cells() || logits.dim(1) != target.cells())
    throw DimensionError("affinity logits do not match the source/target geometry");
  return AffinityMatrix{ops::softmax_columns(logits, temperature), source, target, 0};
}

AffinityMatrix compute_affinity(const FeatureMap& f1, const FeatureMap& f2, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("affinity temperature must be positive");
  return affinity_from_logits(affinity_logits(f1, f2), f1.grid, f2.grid, temperature);
}

Var transport(const Var& c, const AffinityMatrix& a) {
  if (c.value().rank() != 2 || c.dim(1) != a.values.dim(0))
    throw DimensionError("transport: " + shape_string(c.shape()) + " does not match affinity " +
                         shape_string(a.values.shape()));
  return ops::matmul(c, a.values);
}

LocationMap trace_locations(const LocationMap& source, const AffinityMatrix& a) {
  if (source.coords.dim(0) != 2) throw DimensionError("trace_locations: coordinates must be 2 x N");
  return LocationMap{transport(source.coords, a), a.target};
}

AffinityMatrix topk_sparsify(const AffinityMatrix& a, std::size_t k) {
  const std::size_t n1 = a.values.dim(0), n2 = a.values.dim(1);
  if (k < 1 || k > n1) throw ParameterError("topk_sparsify: k=" + std::to_string(k) + " outside [1, " +
                                            std::to_string(n1) + "]");
  const Tensor& v = a.values.value();
  Tensor mask({n1, n2});
  std::vector<std::size_t> order(n1);
  for (std::size_t j = 0; j < n2; ++j) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t x, std::size_t y) {
                        const double vx = v.at(x, j), vy = v.at(y, j);
                        return vx > vy || (vx == vy && x < y);
                      });
    for (std::size_t r = 0; r < k; ++r) mask.at(order[r], j) = 1.0;
  }
  Var kept = ops::normalize_columns(ops::mul(a.values, Var::constant(std::move(mask))));
  return AffinityMatrix{std::move(kept), a.source, a.target, k};
}

Var gram_energy(const FeatureMap& f) { return ops::matmul(f.values, ops::transpose(f.values)); }

}  // namespace aftk
