// SPDX-License-Identifier: Apache-2.0
#include "aftk/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <json.hpp>
#include <sstream>

#include "aftk/checkpoint.hpp"
#include "aftk/errors.hpp"
#include "aftk/ops.hpp"
#include "aftk/synthetic.hpp"

namespace aftk {

LabelMap mask_labels(const std::vector<std::size_t>& cell_labels, std::size_t num_objects, Grid grid) {
  if (cell_labels.size() != grid.cells()) throw DimensionError("mask_labels: label count does not match the grid");
  LabelMap m{LabelKind::mask, Tensor({num_objects + 1, grid.cells()}), grid};
  for (std::size_t j = 0; j < cell_labels.size(); ++j) {
    if (cell_labels[j] > num_objects) throw ParameterError("mask_labels: label exceeds the object count");
    m.values.at(cell_labels[j], j) = 1.0;
  }
  return m;
}

std::vector<std::size_t> hard_labels(const LabelMap& labels) {
  const Tensor& v = labels.values;
  std::vector<std::size_t> out(v.cols(), 0);
  for (std::size_t j = 0; j < v.cols(); ++j)
    for (std::size_t l = 1; l < v.rows(); ++l)
      if (v.at(l, j) > v.at(out[j], j)) out[j] = l;
  return out;
}

LabelMap keypoint_heatmaps(const std::vector<Point2>& joints, Grid grid, double sigma) {
  if (joints.empty()) throw ParameterError("keypoint_heatmaps: no joints");
  if (!(sigma > 0.0)) throw ParameterError("keypoint_heatmaps: sigma must be positive");
  LabelMap m{LabelKind::keypoint, Tensor({joints.size(), grid.cells()}), grid};
  for (std::size_t k = 0; k < joints.size(); ++k) {
    const double jx = (joints[k].x - 3.5) / kFeatureStride, jy = (joints[k].y - 3.5) / kFeatureStride;
    for (std::size_t y = 0; y < grid.height; ++y)
      for (std::size_t x = 0; x < grid.width; ++x) {
        const double dx = static_cast<double>(x) - jx, dy = static_cast<double>(y) - jy;
        m.values.at(k, grid.index(x, y)) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
  }
  return m;
}

void PropagationConfig::validate() const {
  if (k_nn == 0) throw ConfigError("k_nn must be at least 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(track_margin >= 0.0)) throw ConfigError("track margin must be nonnegative");
  if (!(bandwidth > 0.0)) throw ConfigError("bandwidth must be positive");
}

std::vector<std::size_t> CellBox::cells(Grid grid) const {
  std::vector<std::size_t> out;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) out.push_back(grid.index(x, y));
  return out;
}

Tensor knn_transport(const Tensor& source_features, const Tensor& source_labels,
                     std::span<const std::size_t> source_cells, const Tensor& target_features,
                     std::span<const std::size_t> target_cells, std::size_t k_nn, double temperature) {
  const std::size_t c = source_features.rows();
  if (target_features.rows() != c) throw DimensionError("knn_transport: feature channels differ");
  if (source_labels.cols() != source_features.cols())
    throw DimensionError("knn_transport: labels and features disagree on the cell count");
  if (source_cells.empty() || target_cells.empty()) throw ParameterError("knn_transport: empty cell set");
  if (k_nn == 0) throw ParameterError("knn_transport: k_nn must be positive");
  if (!(temperature > 0.0)) throw ParameterError("knn_transport: temperature must be positive");
  const std::size_t n1 = source_features.cols(), n2 = target_features.cols(), l = source_labels.rows();
  for (auto i : source_cells)
    if (i >= n1) throw DimensionError("knn_transport: source cell out of range");
  for (auto j : target_cells)
    if (j >= n2) throw DimensionError("knn_transport: target cell out of range");

  // Source cells gathered channel-major, so the dot products of one target
  // cell accumulate channel by channel over a contiguous row. Every dot still
  // sums its channels in order 0..C-1, whatever the cell subset.
  const std::size_t ns = source_cells.size();
  std::vector<double> src(c * ns);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ii = 0; ii < ns; ++ii) src[ch * ns + ii] = source_features.at(ch, source_cells[ii]);
  const std::size_t k = std::min(k_nn, ns);
  Tensor out({l, target_cells.size()});
  std::vector<std::pair<double, std::size_t>> scored(ns);
  std::vector<double> dots(ns), w(k);
  for (std::size_t jj = 0; jj < target_cells.size(); ++jj) {
    std::fill(dots.begin(), dots.end(), 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double tv = target_features.at(ch, target_cells[jj]);
      const double* row = src.data() + ch * ns;
      for (std::size_t ii = 0; ii < ns; ++ii) dots[ii] += row[ii] * tv;
    }
    for (std::size_t ii = 0; ii < ns; ++ii) scored[ii] = {dots[ii], source_cells[ii]};
    const auto better = [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); };
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), better);
    std::sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    double top = scored[0].first;
    for (std::size_t q = 1; q < k; ++q) top = std::max(top, scored[q].first);
    double z = 0.0;
    for (std::size_t q = 0; q < k; ++q) {
      w[q] = std::exp((scored[q].first - top) / temperature);
      z += w[q];
    }
    for (std::size_t q = 0; q < k; ++q) w[q] /= z;
    for (std::size_t ch = 0; ch < l; ++ch) {
      const double* row = source_labels.data() + ch * n1;
      double acc = 0.0;
      for (std::size_t q = 0; q < k; ++q) acc += w[q] * row[scored[q].second];
      out.at(ch, jj) = acc;
    }
  }
  return out;
}

LabelMap propagate_step(const std::vector<PropagationSource>& sources, const Tensor& target_features, Grid grid,
                        const PropagationConfig& config) {
  if (sources.empty()) throw ParameterError("propagate_step: no sources");
  const LabelMap& first = *sources.front().labels;
  std::vector<std::size_t> all(grid.cells());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Tensor acc({first.channels(), grid.cells()});
  for (const PropagationSource& src : sources) {
    if (src.labels->channels() != first.channels() || src.labels->kind != first.kind)
      throw DimensionError("propagate_step: sources disagree on label channels");
    if (src.features->cols() != grid.cells() || src.labels->values.cols() != grid.cells())
      throw DimensionError("propagate_step: source does not match the grid");
    const Tensor m = knn_transport(*src.features, src.labels->values, all, target_features, all, config.k_nn,
                                   config.temperature);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m[i];
  }
  const double n = static_cast<double>(sources.size());
  for (double& v : acc.values()) v /= n;
  return LabelMap{first.kind, std::move(acc), grid};
}

std::optional<CellBox> label_box(const std::vector<std::size_t>& labels, Grid grid, std::size_t id) {
  CellBox b{grid.width, grid.height, 0, 0};
  bool any = false;
  for (std::size_t y = 0; y < grid.height; ++y)
    for (std::size_t x = 0; x < grid.width; ++x)
      if (labels[grid.index(x, y)] == id) {
        any = true;
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x + 1);
        b.y1 = std::max(b.y1, y + 1);
      }
  if (!any) return std::nullopt;
  return b;
}

namespace {

CellBox expand(const CellBox& b, double margin, Grid grid) {
  const auto m = static_cast<std::size_t>(std::ceil(margin));
  return CellBox{b.x0 > m ? b.x0 - m : 0, b.y0 > m ? b.y0 - m : 0, std::min(grid.width, b.x1 + m),
                 std::min(grid.height, b.y1 + m)};
}

// Cells whose centers fall in [c - half - margin, c + half + margin] per axis.
std::optional<CellBox> box_around(Point2 c, double hw, double hh, double margin, Grid grid) {
  const double lo_x = std::ceil(c.x - hw - margin), hi_x = std::floor(c.x + hw + margin);
  const double lo_y = std::ceil(c.y - hh - margin), hi_y = std::floor(c.y + hh + margin);
  if (!std::isfinite(lo_x) || !std::isfinite(hi_x) || !std::isfinite(lo_y) || !std::isfinite(hi_y)) return std::nullopt;
  const double gw = static_cast<double>(grid.width) - 1.0, gh = static_cast<double>(grid.height) - 1.0;
  const double x0 = std::max(lo_x, 0.0), x1 = std::min(hi_x, gw), y0 = std::max(lo_y, 0.0), y1 = std::min(hi_y, gh);
  if (x1 < x0 || y1 < y0) return std::nullopt;
  return CellBox{static_cast<std::size_t>(x0), static_cast<std::size_t>(y0), static_cast<std::size_t>(x1) + 1,
                 static_cast<std::size_t>(y1) + 1};
}

// Target box of instance `id` located from the previous frame; nullopt when the track is lost.
// The instance's cells are traced into the target frame, mean-shift refines
// their center starting from the previous centroid, and the scale comes from
// the traced points near that center (points that jumped onto a look-alike
// far away are ignored).
std::optional<CellBox> track_box(const Tensor& prev_features, const std::vector<std::size_t>& prev_hard,
                                 const Tensor& features, Grid grid, std::size_t id, const PropagationConfig& config) {
  const auto prev = label_box(prev_hard, grid, id);
  if (!prev) return std::nullopt;
  std::vector<std::size_t> cells;
  Point2 centroid;
  for (std::size_t j = 0; j < prev_hard.size(); ++j)
    if (prev_hard[j] == id) {
      cells.push_back(j);
      centroid.x += static_cast<double>(j % grid.width);
      centroid.y += static_cast<double>(j / grid.width);
    }
  centroid.x /= static_cast<double>(cells.size());
  centroid.y /= static_cast<double>(cells.size());

  LocalizeConfig lc;
  lc.temperature = config.temperature;
  const FeatureMap patch =
      make_feature_map(ops::select_columns(Var::constant(prev_features), cells), Grid{1, cells.size()});
  const Localization loc = localize_patch(patch, make_feature_map(Var::constant(features), grid), lc);
  const Tensor& traced = loc.traced.coords.value();
  const MeanShiftResult ms = mean_shift_refine(traced, centroid, config.bandwidth);
  if (ms.fell_back) return std::nullopt;

  const double reach = static_cast<double>(std::max(prev->x1 - prev->x0, prev->y1 - prev->y0)) + config.track_margin;
  std::vector<double> near_x, near_y;
  for (std::size_t i = 0; i < traced.cols(); ++i)
    if (std::hypot(traced.at(0, i) - ms.center.x, traced.at(1, i) - ms.center.y) <= reach) {
      near_x.push_back(traced.at(0, i));
      near_y.push_back(traced.at(1, i));
    }
  if (near_x.empty()) return std::nullopt;
  std::vector<double> coords(near_x);
  coords.insert(coords.end(), near_y.begin(), near_y.end());
  const LocationMap near{Var::constant(Tensor({2, near_x.size()}, std::move(coords))), Grid{1, near_x.size()}};
  const Tensor half = estimate_scale(near, Var::constant(Tensor({2, 1}, {ms.center.x, ms.center.y}))).value();
  return box_around(ms.center, half[0], half[1], config.track_margin, grid);
}

}  // namespace

PropagationResult propagate_video(const std::vector<Tensor>& features, Grid grid, const LabelMap& first,
                                  const PropagationConfig& config) {
  config.validate();
  if (features.size() < 2) throw ParameterError("propagate_video: need at least two frames");
  if (first.values.empty() || first.channels() == 0) throw ParameterError("propagate_video: empty labels");
  if (first.grid != grid) throw DimensionError("propagate_video: labels and features disagree on the grid");
  const bool track = config.mode == PropagationMode::track;
  if (track && first.kind != LabelKind::mask) throw ConfigError("track mode needs mask labels");

  PropagationResult r;
  r.labels.push_back(first);
  std::deque<std::size_t> ring;  // frames 1.. of recent predictions
  for (std::size_t t = 1; t < features.size(); ++t) {
    std::vector<std::size_t> src_frames{0};
    src_frames.insert(src_frames.end(), ring.begin(), ring.end());
    std::vector<PropagationSource> sources;
    for (auto s : src_frames) sources.push_back({&features[s], &r.labels[s]});
    LabelMap out = propagate_step(sources, features[t], grid, config);

    if (track) {
      std::vector<std::vector<std::size_t>> hard;
      for (auto s : src_frames) hard.push_back(hard_labels(r.labels[s]));
      const auto prev_hard = hard_labels(r.labels[t - 1]);
      for (std::size_t id = 1; id < first.channels(); ++id) {
        const auto target = track_box(features[t - 1], prev_hard, features[t], grid, id, config);
        if (!target) {
          r.events.push_back("frame " + std::to_string(t) + " object " + std::to_string(id) +
                             ": track lost, using global propagation");
          continue;
        }
        const auto tcells = target->cells(grid);
        Tensor acc({1, tcells.size()});
        std::size_t used = 0;
        for (std::size_t q = 0; q < src_frames.size(); ++q) {
          const auto sbox = label_box(hard[q], grid, id);
          if (!sbox) continue;
          const auto scells = expand(*sbox, config.track_margin, grid).cells(grid);
          const LabelMap& lm = r.labels[src_frames[q]];
          Tensor row({1, grid.cells()});
          std::copy_n(lm.values.data() + id * grid.cells(), grid.cells(), row.data());
          const Tensor m = knn_transport(features[src_frames[q]], row, scells, features[t], tcells, config.k_nn,
                                         config.temperature);
          for (std::size_t i = 0; i < m.size(); ++i) acc[i] += m[i];
          ++used;
        }
        if (used == 0) {
          r.events.push_back("frame " + std::to_string(t) + " object " + std::to_string(id) +
                             ": no source instance, using global propagation");
          continue;
        }
        // Average over the sources that were propagated.
        const double n = static_cast<double>(used);
        for (std::size_t j = 0; j < grid.cells(); ++j) out.values.at(id, j) = 0.0;
        for (std::size_t i = 0; i < tcells.size(); ++i) out.values.at(id, tcells[i]) = acc[i] / n;
      }
    }
    r.labels.push_back(std::move(out));
    if (config.k_frames > 0) {
      ring.push_back(t);
      if (ring.size() > config.k_frames) ring.pop_front();
    }
  }
  return r;
}

Tensor frame_features(const Image& frame, const ConvEncoder& encoder) {
  return encoder.encode(Var::constant(gray_from_lab(lab_from_rgb(frame)))).values.value();
}

PropagationResult propagate_video(const std::vector<Image>& frames, const LabelMap& first,
                                  const PropagationConfig& config, const ConvEncoder& encoder) {
  if (frames.empty()) throw ParameterError("propagate_video: no frames");
  std::vector<Tensor> features;
  for (const Image& f : frames) features.push_back(frame_features(f, encoder));
  return propagate_video(features, Grid{frames[0].height / kFeatureStride, frames[0].width / kFeatureStride}, first,
                         config);
}

// ---- metrics ----

double jaccard(const std::vector<bool>& pred, const std::vector<bool>& truth) {
  if (pred.size() != truth.size()) throw DimensionError("jaccard: mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] && truth[i];
    uni += pred[i] || truth[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

std::vector<bool> binary(const std::vector<std::size_t>& labels, std::size_t id) {
  std::vector<bool> m(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == id;
  return m;
}

void check_sequences(const std::vector<std::vector<std::size_t>>& pred,
                     const std::vector<std::vector<std::size_t>>& truth, std::size_t num_objects,
                     std::size_t first_frame) {
  if (pred.size() != truth.size()) throw DimensionError("metric: frame counts differ");
  if (num_objects == 0) throw ParameterError("metric: no objects");
  if (first_frame >= pred.size()) throw ParameterError("metric: no frames to score");
}

}  // namespace

JaccardResult metric_jaccard(const std::vector<std::vector<std::size_t>>& pred,
                             const std::vector<std::vector<std::size_t>>& truth, std::size_t num_objects,
                             std::size_t first_frame) {
  check_sequences(pred, truth, num_objects, first_frame);
  double sum = 0.0;
  std::size_t hits = 0, count = 0;
  for (std::size_t k = 1; k <= num_objects; ++k)
    for (std::size_t t = first_frame; t < pred.size(); ++t) {
      const double j = jaccard(binary(pred[t], k), binary(truth[t], k));
      sum += j;
      hits += j > 0.5;
      ++count;
    }
  return {sum / static_cast<double>(count), static_cast<double>(hits) / static_cast<double>(count)};
}

std::vector<bool> boundary_cells(const std::vector<bool>& mask, Grid grid) {
  if (mask.size() != grid.cells()) throw DimensionError("boundary_cells: mask does not match the grid");
  std::vector<bool> b(mask.size(), false);
  const auto inside = [&](long x, long y) {
    return x >= 0 && y >= 0 && x < static_cast<long>(grid.width) && y < static_cast<long>(grid.height) &&
           mask[grid.index(static_cast<std::size_t>(x), static_cast<std::size_t>(y))];
  };
  for (std::size_t y = 0; y < grid.height; ++y)
    for (std::size_t x = 0; x < grid.width; ++x) {
      if (!mask[grid.index(x, y)]) continue;
      const long lx = static_cast<long>(x), ly = static_cast<long>(y);
      b[grid.index(x, y)] = !inside(lx - 1, ly) || !inside(lx + 1, ly) || !inside(lx, ly - 1) || !inside(lx, ly + 1);
    }
  return b;
}

namespace {

// Fraction of `from` boundary cells with a `to` boundary cell within tol.
double matched_fraction(const std::vector<bool>& from, const std::vector<bool>& to, Grid grid, std::size_t tol) {
  std::size_t n = 0, hit = 0;
  const long r = static_cast<long>(tol);
  for (std::size_t y = 0; y < grid.height; ++y)
    for (std::size_t x = 0; x < grid.width; ++x) {
      if (!from[grid.index(x, y)]) continue;
      ++n;
      bool found = false;
      for (long dy = -r; dy <= r && !found; ++dy)
        for (long dx = -r; dx <= r && !found; ++dx) {
          const long xx = static_cast<long>(x) + dx, yy = static_cast<long>(y) + dy;
          if (xx < 0 || yy < 0 || xx >= static_cast<long>(grid.width) || yy >= static_cast<long>(grid.height)) continue;
          found = to[grid.index(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy))];
        }
      hit += found;
    }
  return static_cast<double>(hit) / static_cast<double>(n);
}

}  // namespace

double metric_boundary_f(const std::vector<bool>& pred, const std::vector<bool>& truth, Grid grid,
                         std::size_t tol_cells) {
  const auto bp = boundary_cells(pred, grid), bt = boundary_cells(truth, grid);
  const bool ep = std::none_of(bp.begin(), bp.end(), [](bool v) { return v; });
  const bool et = std::none_of(bt.begin(), bt.end(), [](bool v) { return v; });
  if (ep && et) return 1.0;
  if (ep || et) return 0.0;
  const double precision = matched_fraction(bp, bt, grid, tol_cells);
  const double recall = matched_fraction(bt, bp, grid, tol_cells);
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

double mean_boundary_f(const std::vector<std::vector<std::size_t>>& pred,
                       const std::vector<std::vector<std::size_t>>& truth, std::size_t num_objects, Grid grid,
                       std::size_t first_frame) {
  check_sequences(pred, truth, num_objects, first_frame);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 1; k <= num_objects; ++k)
    for (std::size_t t = first_frame; t < pred.size(); ++t) {
      sum += metric_boundary_f(binary(pred[t], k), binary(truth[t], k), grid);
      ++count;
    }
  return sum / static_cast<double>(count);
}

std::vector<double> metric_pck(const std::vector<std::optional<Point2>>& pred, const std::vector<Point2>& truth,
                               const std::vector<double>& thresholds, double norm) {
  if (pred.size() != truth.size()) throw DimensionError("metric_pck: joint counts differ");
  if (truth.empty()) throw ParameterError("metric_pck: no joints");
  if (!(norm > 0.0)) throw ParameterError("metric_pck: normalizer must be positive");
  std::vector<double> out;
  for (double th : thresholds) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
      if (pred[i] && std::hypot(pred[i]->x - truth[i].x, pred[i]->y - truth[i].y) <= th * norm) ++ok;
    out.push_back(static_cast<double>(ok) / static_cast<double>(truth.size()));
  }
  return out;
}

double pck_norm(const std::vector<Point2>& joints) {
  if (joints.empty()) throw ParameterError("pck_norm: no joints");
  double x0 = joints[0].x, x1 = x0, y0 = joints[0].y, y1 = y0;
  for (const Point2& p : joints) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return std::max(x1 - x0, y1 - y0);
}

std::optional<Point2> heatmap_to_joint(std::span<const double> channel, Grid grid) {
  if (channel.size() != grid.cells()) throw DimensionError("heatmap_to_joint: channel does not match the grid");
  std::size_t best = 0;
  for (std::size_t i = 1; i < channel.size(); ++i)
    if (channel[i] > channel[best]) best = i;
  if (!(channel[best] > 0.0)) return std::nullopt;
  return Point2{static_cast<double>(best % grid.width) * kFeatureStride + 3.5,
                static_cast<double>(best / grid.width) * kFeatureStride + 3.5};
}

std::vector<std::optional<Point2>> heatmaps_to_joints(const LabelMap& heatmaps) {
  std::vector<std::optional<Point2>> out;
  const std::size_t n = heatmaps.grid.cells();
  for (std::size_t k = 0; k < heatmaps.channels(); ++k)
    out.push_back(heatmap_to_joint(std::span<const double>(heatmaps.values.data() + k * n, n), heatmaps.grid));
  return out;
}

// ---- label I/O ----

Image mask_image(const std::vector<std::size_t>& cell_labels, Grid grid) {
  if (cell_labels.size() != grid.cells()) throw DimensionError("mask_image: labels do not match the grid");
  Image img(grid.height * kFeatureStride, grid.width * kFeatureStride, 1);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t v = cell_labels[grid.index(x / kFeatureStride, y / kFeatureStride)];
      if (v > 255) throw ParameterError("mask_image: label exceeds the palette");
      img.at(y, x) = static_cast<std::uint8_t>(v);
    }
  return img;
}

std::vector<std::size_t> cell_labels_of(const Image& mask) { return cell_labels(mask, kFeatureStride); }

void write_mask_predictions(const std::filesystem::path& dir, const std::vector<std::vector<std::size_t>>& labels,
                            Grid grid, const std::vector<FrameMetrics>& metrics) {
  if (!metrics.empty() && metrics.size() != labels.size())
    throw DimensionError("write_mask_predictions: one metrics entry per frame expected");
  std::filesystem::create_directories(dir);
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t t = 0; t < labels.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "pred_%03zu.png", t);
    write_png(dir / name, mask_image(labels[t], grid), PngKind::indexed);
    nlohmann::json f{{"index", t}, {"file", name}};
    if (!metrics.empty()) {
      f["j"] = metrics[t].j;
      f["f"] = metrics[t].f;
    }
    frames.push_back(f);
  }
  nlohmann::json manifest{{"format", "aftk-predictions-1"}, {"frames", frames}};
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

void write_keypoint_predictions(const std::filesystem::path& path,
                                const std::vector<std::vector<std::optional<Point2>>>& joints) {
  std::ostringstream out;
  out << "# frame joint x y\n";
  char line[96];
  for (std::size_t t = 0; t < joints.size(); ++t)
    for (std::size_t k = 0; k < joints[t].size(); ++k)
      if (joints[t][k]) {
        std::snprintf(line, sizeof line, "%zu %zu %.6f %.6f\n", t, k, joints[t][k]->x, joints[t][k]->y);
        out << line;
      }
  write_file_atomic(path, out.str());
}

}  // namespace aftk
