// SPDX-License-Identifier: Apache-2.0
//
// Deterministic sprite videos with exact ground truth: textured elliptical
// sprites move over a static textured background under per-frame
// translation + isotropic scale. Every rendered pixel knows which sprite
// (or the background) it came from and where in that sprite's own frame.
//
// Pixel (x, y) has integer coordinates; feature cell (cx, cy) covers pixels
// [8cx, 8cx+7] and its center sits at pixel 8cx + 3.5.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "aftk/affinity.hpp"
#include "aftk/image.hpp"
#include "aftk/localization.hpp"

namespace aftk {

struct SceneSpec {
  std::size_t height = 128;
  std::size_t width = 128;
  std::size_t frames = 16;
  std::size_t min_sprites = 1;
  std::size_t max_sprites = 3;
  double min_radius = 12.0;  // ellipse half-axes at scale 1, pixels
  double max_radius = 20.0;
  double min_speed = 1.0;  // pixels per frame
  double max_speed = 3.0;
  double min_scale = 0.7;
  double max_scale = 1.4;
  bool scale_motion = true;
  /// All sprites share one texture and shape (the ambiguous-instances preset).
  bool same_color = false;
  std::size_t keypoints_per_sprite = 4;

  void validate() const;
};

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const nlohmann::json& j);

/// Maps sprite-local pixel coordinates u to the canvas: p = t + s * u.
struct Placement {
  double tx = 0.0;
  double ty = 0.0;
  double s = 1.0;
};

struct Sprite {
  std::size_t id = 1;  // object id (mask value), 1-based
  double radius_x = 16.0;
  double radius_y = 16.0;
  /// 3 x S x S sRGB in [0, 1], covering sprite-local [-S/2, S/2).
  Tensor texture;
  std::vector<Placement> trajectory;  // one per frame
  std::vector<Point2> keypoints;      // sprite-local pixels
};

struct Scene {
  SceneSpec spec;
  std::uint64_t seed = 0;
  Tensor background;  // 3 x H x W sRGB
  std::vector<Sprite> sprites;
  std::vector<Image> frames;  // RGB
  std::vector<Image> masks;   // object ids

  std::size_t num_objects() const { return sprites.size(); }
  Grid grid() const { return Grid{spec.height / 8, spec.width / 8}; }
};

Scene generate_scene(const SceneSpec& spec, std::uint64_t seed);

/// Renders frames and masks for explicitly given sprites (fixtures). Sprites
/// are drawn in order, later ones on top; every sprite needs spec.frames placements.
Scene render_scene(const SceneSpec& spec, std::uint64_t seed, Tensor background, std::vector<Sprite> sprites);

/// Seeded multi-octave value-noise texture, 3 x size x size, mixing the palette colors.
Tensor value_noise_texture(std::size_t height, std::size_t width, const std::vector<std::array<double, 3>>& palette,
                           std::uint64_t seed);

/// Canvas position at frame t1 of the sprite point found at `p` in frame t0.
Point2 map_point(const Sprite& sprite, std::size_t t0, std::size_t t1, Point2 p);

/// Keypoint k of sprite s in frame t (canvas pixels).
Point2 keypoint_position(const Sprite& sprite, std::size_t k, std::size_t t);

/// Per-cell object id by majority over the cell's pixels (ties to the lower id).
std::vector<std::size_t> cell_labels(const Image& mask, std::size_t stride = 8);
/// (num_objects + 1) x N per-cell area fractions of every id.
Tensor cell_label_fractions(const Image& mask, std::size_t num_objects, std::size_t stride = 8);

/// Forward cell-level flow from frame t to t + 1 in cell units, 2 x N.
Tensor cell_flow(const Scene& scene, std::size_t t);

/// Oracle embeddings for frame t: corresponding cells share embeddings and
/// all others are well separated, so dot-product affinities are near-permutations.
FeatureMap oracle_features(const Scene& scene, std::size_t t);

/// Ground-truth source cell (frame t0) of every cell of frame t1: the nearest
/// same-id cell center to the back-mapped target center. SIZE_MAX when the id
/// does not exist in t0.
std::vector<std::size_t> ground_truth_source_cells(const Scene& scene, std::size_t t0, std::size_t t1);

// On-disk layout: one directory per video with frame_NNN.png (RGB),
// mask_NNN.png (indexed), keypoints.txt, flow.bin and manifest.json.
void write_video(const std::filesystem::path& dir, const Scene& scene);

struct LoadedVideo {
  std::vector<Image> frames;
  std::vector<Image> masks;
  std::size_t num_objects = 0;
  /// keypoints[t][joint] in canvas pixels.
  std::vector<std::vector<Point2>> keypoints;
  SceneSpec spec;
  std::uint64_t seed = 0;
};

LoadedVideo read_video(const std::filesystem::path& dir);
/// Regenerates the scene recorded in a video directory's manifest.
Scene regenerate_scene(const std::filesystem::path& dir);

/// 2 x N flow blocks, little-endian float32, one block per consecutive frame pair.
std::string encode_flow(const std::vector<Tensor>& flows);
std::vector<Tensor> decode_flow(const std::string& bytes, std::size_t cells);

}  // namespace aftk
