// SPDX-License-Identifier: Apache-2.0
//
// Recurrent label propagation over a video: every frame's labels are the
// mean of the labels transported from the first frame and from the most
// recent predictions, each through a top-k sparsified affinity.
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aftk/encoder.hpp"
#include "aftk/image.hpp"
#include "aftk/localization.hpp"

namespace aftk {

enum class LabelKind { mask, keypoint, texture };

/// L x N label values on a feature grid. Masks carry the background in
/// channel 0 and object k in channel k.
struct LabelMap {
  LabelKind kind = LabelKind::mask;
  Tensor values;
  Grid grid;

  std::size_t channels() const { return values.rows(); }
};

/// One-hot cell labels, (num_objects + 1) x N.
LabelMap mask_labels(const std::vector<std::size_t>& cell_labels, std::size_t num_objects, Grid grid);
/// Per-cell argmax over channels, ties to the lower channel.
std::vector<std::size_t> hard_labels(const LabelMap& labels);
/// One Gaussian channel per joint (pixel coordinates), sigma in cells.
LabelMap keypoint_heatmaps(const std::vector<Point2>& joints, Grid grid, double sigma = 1.0);

enum class PropagationMode { global, track };

struct PropagationConfig {
  std::size_t k_frames = 7;
  std::size_t k_nn = 5;
  double temperature = 1.0;
  PropagationMode mode = PropagationMode::global;
  /// Track mode: cells added around every instance box.
  double track_margin = 1.0;
  /// Track mode: mean-shift bandwidth in cells.
  double bandwidth = 1.5;

  /// Throws ConfigError.
  void validate() const;
};

/// Cells [x0, x1) x [y0, y1).
struct CellBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool empty() const { return x1 <= x0 || y1 <= y0; }
  std::vector<std::size_t> cells(Grid grid) const;
  static CellBox full(Grid grid) { return {0, 0, grid.width, grid.height}; }
  friend bool operator==(const CellBox&, const CellBox&) = default;
};

/// Labels of `source_cells` transported onto `target_cells`: every target
/// cell averages the labels of its k_nn highest-scoring source cells with
/// softmax weights. Summation orders are fixed, so equal inputs give
/// bit-equal outputs regardless of the cell subsets around them.
/// features: C x N; labels: L x N1. Returns L x |target_cells|.
Tensor knn_transport(const Tensor& source_features, const Tensor& source_labels,
                     std::span<const std::size_t> source_cells, const Tensor& target_features,
                     std::span<const std::size_t> target_cells, std::size_t k_nn, double temperature);

struct PropagationSource {
  const Tensor* features;  // C x N
  const LabelMap* labels;
};

/// Mean of the sources' transported label maps (global mode).
LabelMap propagate_step(const std::vector<PropagationSource>& sources, const Tensor& target_features, Grid grid,
                        const PropagationConfig& config);

struct PropagationResult {
  /// One map per frame; frame 0 holds the given labels.
  std::vector<LabelMap> labels;
  /// Track-mode fallbacks, one line each.
  std::vector<std::string> events;
};

/// features: C x N per frame on `grid`.
PropagationResult propagate_video(const std::vector<Tensor>& features, Grid grid, const LabelMap& first,
                                  const PropagationConfig& config);
PropagationResult propagate_video(const std::vector<Image>& frames, const LabelMap& first,
                                  const PropagationConfig& config, const ConvEncoder& encoder);

/// Encoder features (C x N) of an RGB frame.
Tensor frame_features(const Image& frame, const ConvEncoder& encoder);

/// Tight box of the cells labeled `id`; nullopt when there are none.
std::optional<CellBox> label_box(const std::vector<std::size_t>& labels, Grid grid, std::size_t id);

// ---- metrics ----

struct JaccardResult {
  double mean = 0.0;
  double recall = 0.0;  // fraction of (object, frame) scores above 0.5
};

/// Intersection over union of two binary masks; 1 when both are empty.
double jaccard(const std::vector<bool>& pred, const std::vector<bool>& truth);

/// Per-object J averaged over objects 1..K and frames [first_frame, T).
JaccardResult metric_jaccard(const std::vector<std::vector<std::size_t>>& pred,
                             const std::vector<std::vector<std::size_t>>& truth, std::size_t num_objects,
                             std::size_t first_frame = 1);

/// Cells inside the mask with a 4-neighbor outside it (the frame border counts as outside).
std::vector<bool> boundary_cells(const std::vector<bool>& mask, Grid grid);
/// Boundary F-measure: a boundary cell counts as matched when the other
/// boundary has a cell within Chebyshev distance tol_cells.
double metric_boundary_f(const std::vector<bool>& pred, const std::vector<bool>& truth, Grid grid,
                         std::size_t tol_cells = 1);
/// Mean boundary F over objects 1..K and frames [first_frame, T).
double mean_boundary_f(const std::vector<std::vector<std::size_t>>& pred,
                       const std::vector<std::vector<std::size_t>>& truth, std::size_t num_objects, Grid grid,
                       std::size_t first_frame = 1);

/// Fraction of joints within threshold * norm of the truth, per threshold.
/// Undefined predictions count as misses.
std::vector<double> metric_pck(const std::vector<std::optional<Point2>>& pred, const std::vector<Point2>& truth,
                               const std::vector<double>& thresholds, double norm);
/// max(width, height) of the joints' bounding box.
double pck_norm(const std::vector<Point2>& joints);

/// Argmax cell center in pixels (ties to the lowest cell); nullopt for an all-zero channel.
std::optional<Point2> heatmap_to_joint(std::span<const double> channel, Grid grid);
std::vector<std::optional<Point2>> heatmaps_to_joints(const LabelMap& heatmaps);

// ---- label I/O ----

/// Cell labels upsampled to pixels as an indexed image.
Image mask_image(const std::vector<std::size_t>& cell_labels, Grid grid);
/// Majority cell labels of an indexed mask image.
std::vector<std::size_t> cell_labels_of(const Image& mask);

struct FrameMetrics {
  double j = 0.0;
  double f = 0.0;
};

/// pred_NNN.png per frame and manifest.json with the frame order and metrics.
void write_mask_predictions(const std::filesystem::path& dir, const std::vector<std::vector<std::size_t>>& labels,
                            Grid grid, const std::vector<FrameMetrics>& metrics);
/// Text records "frame joint x y"; undefined joints are skipped.
void write_keypoint_predictions(const std::filesystem::path& path,
                                const std::vector<std::vector<std::optional<Point2>>>& joints);

}  // namespace aftk
