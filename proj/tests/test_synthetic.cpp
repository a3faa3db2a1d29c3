// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "aftk/errors.hpp"
#include "aftk/ops.hpp"
#include "aftk/synthetic.hpp"

using namespace aftk;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("aftk_test_synth_" + name);
  fs::remove_all(p);
  return p;
}

Sprite square_sprite(std::size_t id, double r, std::vector<Placement> traj, std::uint64_t seed) {
  Sprite s;
  s.id = id;
  s.radius_x = s.radius_y = r;
  const auto size = static_cast<std::size_t>(2 * std::ceil(r) + 4);
  s.texture = value_noise_texture(size, size, {{0.9, 0.2, 0.1}, {0.2, 0.8, 0.3}, {0.1, 0.3, 0.9}}, seed);
  s.trajectory = std::move(traj);
  return s;
}

Tensor flat_background(const SceneSpec& spec) { return Tensor({3, spec.height, spec.width}, 0.4); }

}  // namespace

TEST_CASE("spec validation") {
  SceneSpec s;
  s.height = 60;
  CHECK_THROWS_AS(generate_scene(s, 1), ConfigError);
  SceneSpec big;
  big.max_radius = 60;
  CHECK_THROWS_AS(generate_scene(big, 1), ConfigError);
  CHECK(scene_spec_from_json(to_json(SceneSpec{})).frames == 16);
}

TEST_CASE("same seed gives identical scenes, different seeds differ") {
  const SceneSpec spec;
  const Scene a = generate_scene(spec, 5), b = generate_scene(spec, 5), c = generate_scene(spec, 6);
  CHECK(a.frames == b.frames);
  CHECK(a.masks == b.masks);
  CHECK_FALSE(a.frames == c.frames);
  CHECK(a.frames.size() == spec.frames);
  CHECK(a.num_objects() >= spec.min_sprites);
  CHECK(a.num_objects() <= spec.max_sprites);
}

TEST_CASE("written videos are byte-identical across runs") {
  const Scene s = generate_scene(SceneSpec{}, 9);
  const fs::path d1 = scratch("bytes1"), d2 = scratch("bytes2");
  write_video(d1, s);
  write_video(d2, generate_scene(SceneSpec{}, 9));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(d1)) {
    CHECK(slurp(e.path()) == slurp(d2 / e.path().filename()));
    ++files;
  }
  CHECK(files == 2 * 16 + 3);
}

TEST_CASE("sprites stay inside the canvas and apart") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Scene s = generate_scene(SceneSpec{}, seed);
    for (const Sprite& sp : s.sprites) {
      for (std::size_t t = 0; t < s.spec.frames; ++t) {
        const Placement& p = sp.trajectory[t];
        CHECK(p.tx - p.s * sp.radius_x >= 0);
        CHECK(p.tx + p.s * sp.radius_x <= 127);
        CHECK(p.s >= 0.7);
        CHECK(p.s <= 1.4);
      }
    }
    // Every sprite is visible in every frame.
    for (std::size_t t = 0; t < s.spec.frames; ++t) {
      std::vector<std::size_t> count(s.num_objects() + 1, 0);
      for (auto v : s.masks[t].pixels) ++count[v];
      for (std::size_t k = 1; k <= s.num_objects(); ++k) CHECK(count[k] > 0);
    }
  }
}

TEST_CASE("zero velocity gives identical frames and zero flow") {
  SceneSpec spec;
  spec.frames = 4;
  std::vector<Placement> still(4, Placement{40, 50, 1.0});
  const Scene s = render_scene(spec, 0, flat_background(spec), {square_sprite(1, 14, still, 3)});
  for (std::size_t t = 1; t < 4; ++t) {
    CHECK(s.frames[t] == s.frames[0]);
    CHECK(s.masks[t] == s.masks[0]);
    for (double v : cell_flow(s, t - 1).values()) CHECK(v == 0.0);
  }
}

TEST_CASE("translation by 2 px per frame shifts the mask by exactly 2 px") {
  SceneSpec spec;
  spec.frames = 6;
  std::vector<Placement> traj;
  for (std::size_t t = 0; t < 6; ++t) traj.push_back({30.0 + 2.0 * static_cast<double>(t), 60.0, 1.0});
  const Scene s = render_scene(spec, 0, flat_background(spec), {square_sprite(1, 15, traj, 4)});
  for (std::size_t t = 1; t < 6; ++t) {
    for (std::size_t y = 0; y < 128; ++y)
      for (std::size_t x = 2; x < 128; ++x) REQUIRE(s.masks[t].at(y, x) == s.masks[t - 1].at(y, x - 2));
    // Sprite pixels move with the mask; the texture rides along.
    for (std::size_t y = 0; y < 128; ++y)
      for (std::size_t x = 2; x < 128; ++x)
        if (s.masks[t].at(y, x) == 1)
          for (std::size_t c = 0; c < 3; ++c) REQUIRE(s.frames[t].at(y, x, c) == s.frames[t - 1].at(y, x - 2, c));
  }
  // Flow on sprite cells is 2 px = 0.25 cells.
  const Tensor f = cell_flow(s, 0);
  const auto labels = cell_labels(s.masks[0]);
  for (std::size_t j = 0; j < labels.size(); ++j)
    if (labels[j] == 1) {
      CHECK(f[j] == Approx(0.25).epsilon(1e-12));
      CHECK(f[labels.size() + j] == 0.0);
    }
}

TEST_CASE("composed frame-to-frame maps equal the direct map") {
  const Scene s = generate_scene(SceneSpec{}, 17);
  for (const Sprite& sp : s.sprites) {
    Point2 p{sp.trajectory[0].tx + 3.3, sp.trajectory[0].ty - 2.1};
    Point2 chained = p;
    for (std::size_t t = 1; t < s.spec.frames; ++t) {
      chained = map_point(sp, t - 1, t, chained);
      const Point2 direct = map_point(sp, 0, t, p);
      CHECK(std::abs(chained.x - direct.x) < 1e-9);
      CHECK(std::abs(chained.y - direct.y) < 1e-9);
    }
    // The inverse map undoes the forward map.
    const Point2 there = map_point(sp, 0, 9, p), back = map_point(sp, 9, 0, there);
    CHECK(std::abs(back.x - p.x) < 1e-12);
  }
}

TEST_CASE("every keypoint lies inside its sprite's mask") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = generate_scene(SceneSpec{}, seed);
    for (const Sprite& sp : s.sprites)
      for (std::size_t k = 0; k < sp.keypoints.size(); ++k)
        for (std::size_t t = 0; t < s.spec.frames; ++t) {
          const Point2 p = keypoint_position(sp, k, t);
          const auto x = static_cast<std::size_t>(std::lround(p.x)), y = static_cast<std::size_t>(std::lround(p.y));
          CHECK(s.masks[t].at(y, x) == sp.id);
        }
  }
}

TEST_CASE("cell labels and fractions") {
  Image mask(16, 16, 1, 0);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 5; ++x) mask.at(y, x) = 1;  // 40 of 64 pixels of cell 0
  for (std::size_t y = 8; y < 12; ++y)
    for (std::size_t x = 8; x < 16; ++x) mask.at(y, x) = 2;  // exactly half of cell 3: tie -> 0
  const auto labels = cell_labels(mask);
  CHECK(labels == std::vector<std::size_t>{1, 0, 0, 0});
  const Tensor f = cell_label_fractions(mask, 2);
  CHECK(f.at(1, 0) == 40.0 / 64.0);
  CHECK(f.at(0, 0) == 24.0 / 64.0);
  CHECK(f.at(2, 3) == 0.5);
  CHECK_THROWS_AS(cell_label_fractions(mask, 1), ParameterError);
}

TEST_CASE("flow and video files round trip") {
  const Scene s = generate_scene(SceneSpec{}, 23);
  std::vector<Tensor> flows;
  for (std::size_t t = 0; t + 1 < s.spec.frames; ++t) flows.push_back(cell_flow(s, t));
  const auto decoded = decode_flow(encode_flow(flows), 256);
  REQUIRE(decoded.size() == 15);
  for (std::size_t t = 0; t < 15; ++t) CHECK(max_abs_diff(decoded[t], flows[t]) < 1e-6);

  const fs::path dir = scratch("video");
  write_video(dir, s);
  const LoadedVideo v = read_video(dir);
  CHECK(v.frames == s.frames);
  CHECK(v.masks == s.masks);
  CHECK(v.num_objects == s.num_objects());
  CHECK(v.seed == 23);
  REQUIRE(v.keypoints.size() == 16);
  CHECK(v.keypoints[5].size() == 4 * s.num_objects());
  const Point2 k = keypoint_position(s.sprites[0], 1, 5);
  CHECK(v.keypoints[5][1].x == Approx(k.x).margin(1e-6));
  CHECK(decode_flow(slurp(dir / "flow.bin"), 256).size() == 15);
  CHECK(regenerate_scene(dir).frames == s.frames);
}

TEST_CASE("oracle features give near-permutation affinities") {
  SceneSpec spec;
  spec.scale_motion = false;
  std::size_t total = 0, hits = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = generate_scene(spec, seed);
    const AffinityMatrix a = compute_affinity(oracle_features(s, 0), oracle_features(s, 3));
    const auto truth = ground_truth_source_cells(s, 0, 3);
    const auto labels = cell_labels(s.masks[3]);
    const Tensor& v = a.values.value();
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] == 0 || truth[j] == SIZE_MAX) continue;
      std::size_t best = 0;
      for (std::size_t i = 1; i < v.rows(); ++i)
        if (v.at(i, j) > v.at(best, j)) best = i;
      ++total;
      hits += best == truth[j];
    }
  }
  INFO(hits << " of " << total);
  CHECK(static_cast<double>(hits) > 0.99 * static_cast<double>(total));
}

TEST_CASE("oracle features of a static scene give an identity affinity") {
  SceneSpec spec;
  spec.frames = 2;
  std::vector<Placement> still(2, Placement{64, 64, 1.0});
  const Scene s = render_scene(spec, 0, flat_background(spec), {square_sprite(1, 18, still, 8)});
  const Tensor a = compute_affinity(oracle_features(s, 0), oracle_features(s, 1)).values.value();
  for (std::size_t j = 0; j < a.cols(); ++j) CHECK(a.at(j, j) > 0.95);
}

TEST_CASE("localization on oracle features lands on the planted patch") {
  SceneSpec spec;
  spec.scale_motion = false;
  const Scene s = generate_scene(spec, 31);
  const Sprite& sp = s.sprites[0];
  // Patch: 4 x 4 cells around the sprite center at frame 0.
  const FeatureMap f0 = oracle_features(s, 0), f5 = oracle_features(s, 5);
  const auto cx = static_cast<std::size_t>(std::floor(sp.trajectory[0].tx / 8.0));
  const auto cy = static_cast<std::size_t>(std::floor(sp.trajectory[0].ty / 8.0));
  std::vector<std::size_t> idx;
  for (std::size_t y = cy - 1; y <= cy + 2; ++y)
    for (std::size_t x = cx - 1; x <= cx + 2; ++x) idx.push_back(f0.grid.index(x, y));
  const FeatureMap patch = make_feature_map(ops::select_columns(f0.values, idx), Grid{4, 4});
  const Localization loc = localize_patch(patch, f5);
  // Ground truth: the patch cell centers mapped to frame 5, averaged.
  double gx = 0, gy = 0;
  for (std::size_t y = cy - 1; y <= cy + 2; ++y)
    for (std::size_t x = cx - 1; x <= cx + 2; ++x) {
      const Point2 p = map_point(sp, 0, 5, {8.0 * static_cast<double>(x) + 3.5, 8.0 * static_cast<double>(y) + 3.5});
      gx += (p.x - 3.5) / 8.0;
      gy += (p.y - 3.5) / 8.0;
    }
  gx /= 16.0;
  gy /= 16.0;
  CHECK(std::abs(loc.box.cx() - gx) < 0.5);
  CHECK(std::abs(loc.box.cy() - gy) < 0.5);
}
