// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "aftk/errors.hpp"
#include "aftk/localization.hpp"
#include "aftk/ops.hpp"

using namespace aftk;
using Catch::Approx;

namespace {

LocationMap points(const std::vector<Point2>& pts) {
  Tensor t({2, pts.size()});
  for (std::size_t i = 0; i < pts.size(); ++i) {
    t.at(0, i) = pts[i].x;
    t.at(1, i) = pts[i].y;
  }
  return LocationMap{Var::constant(std::move(t)), Grid{1, pts.size()}};
}

Tensor cell_centered_box(double w, std::size_t n) {
  // n x n cell-centered samples of the square [-w, w]^2.
  Tensor t({2, n * n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      t.at(0, i * n + j) = -w + 2.0 * w * (static_cast<double>(j) + 0.5) / static_cast<double>(n);
      t.at(1, i * n + j) = -w + 2.0 * w * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    }
  return t;
}

// Distinctive per-cell features: random Gaussian vectors in high dimension.
Tensor distinctive(std::mt19937_64& rng, std::size_t c, std::size_t n, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor t({c, n});
  for (double& v : t.values()) v = d(rng);
  return t;
}

}  // namespace

TEST_CASE("locate_center examples") {
  CHECK(locate_center(points({{3, 4}})).value() == Tensor({2, 1}, {3, 4}));
  const Tensor sq = locate_center(points({{1, 1}, {3, 1}, {1, 3}, {3, 3}})).value();
  CHECK(sq == Tensor({2, 1}, {2, 2}));
  const Tensor c = locate_center(points({{0, 0}, {1, 0}, {2, 3}})).value();
  CHECK(c[0] == Approx(1.0).epsilon(1e-15));
  CHECK(c[1] == Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(locate_center(LocationMap{}), ParameterError);
}

TEST_CASE("estimate_scale examples") {
  const LocationMap l = points({{-1.5, 0}, {-0.5, 0}, {0.5, 0}, {1.5, 0}});
  const Tensor s = estimate_scale(l, Var::constant(Tensor({2, 1}, {0, 0}))).value();
  CHECK(s[0] == 2.0);
  CHECK(s[1] == 0.0);

  const LocationMap same = points({{2, 2}, {2, 2}, {2, 2}});
  const Var zero = estimate_scale(same, locate_center(same));
  CHECK(zero.value() == Tensor({2, 1}, {0, 0}));
  const Tensor clamped = clamp_half_extent(zero, Grid{8, 8}).value();
  CHECK(clamped == Tensor({2, 1}, {2, 2}));
  CHECK(clamp_half_extent(Var::constant(Tensor({2, 1}, {9, 3})), Grid{8, 6}).value() == Tensor({2, 1}, {3, 3}));
}

TEST_CASE("scale estimate converges to the box half-width") {
  for (double w : {2.0, 4.0, 8.0}) {
    for (std::size_t n : {16u, 32u, 64u}) {
      const LocationMap l{Var::constant(cell_centered_box(w, n)), Grid{n, n}};
      const Tensor s = estimate_scale(l, locate_center(l)).value();
      // Cell-centered samples of |x| average exactly w/2, so 2 * mean = w.
      CHECK(std::abs(s[0] - w) / w < 0.05);
      CHECK(std::abs(s[1] - w) / w < 0.05);
    }
  }
}

TEST_CASE("estimate_scale is translation invariant and scale equivariant") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Point2> pts(10), shifted(10), scaled(10);
    for (std::size_t i = 0; i < 10; ++i) {
      pts[i] = {u(rng), u(rng)};
      shifted[i] = {pts[i].x + 0.75, pts[i].y - 2.25};
      scaled[i] = {pts[i].x * 4.0, pts[i].y * 4.0};
    }
    const LocationMap a = points(pts), b = points(shifted), c = points(scaled);
    const Tensor sa = estimate_scale(a, locate_center(a)).value();
    const Tensor sb = estimate_scale(b, locate_center(b)).value();
    const Tensor sc = estimate_scale(c, locate_center(c)).value();
    CHECK(max_abs_diff(sa, sb) < 1e-13);
    CHECK(sc[0] == Approx(4.0 * sa[0]).epsilon(1e-14));
    CHECK(sc[1] == Approx(4.0 * sa[1]).epsilon(1e-14));
  }
}

TEST_CASE("roi_crop examples") {
  // Feature value = 10 * x + y on a 6 x 8 grid (one channel): affine signal.
  Tensor ramp({1, 6, 8});
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 8; ++x) ramp[y * 8 + x] = 10.0 * static_cast<double>(x) + static_cast<double>(y);
  const FeatureMap f = feature_map_from_chw(Var::constant(ramp));

  // Cells 2..4 x 1..3: center (3, 2), half-extent 1.5 covers three cells.
  const FeatureMap sub = roi_crop(f, BBox::from_values(3, 2, 1.5, 1.5), 3, 3);
  for (std::size_t qy = 0; qy < 3; ++qy)
    for (std::size_t qx = 0; qx < 3; ++qx)
      CHECK(sub.values.value()[qy * 3 + qx] == ramp[(qy + 1) * 8 + qx + 2]);

  const FeatureMap shifted = roi_crop(f, BBox::from_values(3.5, 2, 1.5, 1.5), 3, 3);
  for (std::size_t q = 0; q < 9; ++q) CHECK(shifted.values.value()[q] == Approx(sub.values.value()[q] + 5.0).epsilon(1e-14));

  const FeatureMap whole = roi_crop(f, BBox::from_values(3.5, 2.5, 4, 3), 6, 8);
  CHECK(max_abs_diff(whole.values.value(), f.values.value()) < 1e-12);

  CHECK_THROWS_AS(roi_crop(f, BBox::from_values(30, 2, 1.5, 1.5), 3, 3), LocalizationError);
  CHECK_THROWS_AS(roi_crop(f, BBox::from_values(3, 2, 0, 1.5), 3, 3), LocalizationError);
  CHECK_THROWS_AS(roi_crop(f, BBox::from_values(3, 2, 1, 1), 0, 3), ParameterError);
}

TEST_CASE("roi_crop clamps out-of-frame samples to the edge") {
  Tensor ramp({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<double>(i % 4);
  const FeatureMap f = feature_map_from_chw(Var::constant(ramp));
  const Tensor v = roi_crop(f, BBox::from_values(0, 1.5, 2, 1), 1, 4).values.value();
  // Samples at x = -1.5, -0.5, 0.5, 1.5 read 0, 0, 0.5, 1.5.
  CHECK(v == Tensor({1, 4}, {0, 0, 0.5, 1.5}));
}

TEST_CASE("mean_shift_refine examples") {
  const MeanShiftResult one = mean_shift_refine(Tensor({2, 1}, {3, -1}), {0, 0}, 1.5);
  CHECK(one.center.x == Approx(3.0).epsilon(1e-15));
  CHECK(one.center.y == Approx(-1.0).epsilon(1e-15));

  const Tensor sym({2, 4}, {1, -1, 0, 0, 0, 0, 1, -1});
  const MeanShiftResult fixed = mean_shift_refine(sym, {0, 0}, 1.0);
  CHECK(fixed.center.x == 0.0);
  CHECK(fixed.center.y == 0.0);
  CHECK(fixed.converged);
  CHECK(fixed.iterations == 1);

  Tensor cluster({2, 10});
  const double xs[9] = {-0.2, 0.0, 0.2, -0.2, 0.0, 0.2, -0.2, 0.0, 0.2};
  const double ys[9] = {-0.2, -0.2, -0.2, 0.0, 0.0, 0.0, 0.2, 0.2, 0.2};
  for (int i = 0; i < 9; ++i) {
    cluster.at(0, i) = xs[i];
    cluster.at(1, i) = ys[i];
  }
  cluster.at(0, 9) = 10;
  cluster.at(1, 9) = 10;
  const MeanShiftResult ms = mean_shift_refine(cluster, {1.0, 1.0}, 1.0, 50);
  CHECK(std::hypot(ms.center.x, ms.center.y) < 1e-3);
  CHECK(ms.iterations <= 50);
  CHECK_THROWS_AS(mean_shift_refine(cluster, {0, 0}, 0.0), ParameterError);
}

TEST_CASE("mean_shift density never decreases") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor pts({2, 25});
    for (double& v : pts.values()) v = n(rng);
    const MeanShiftResult r = mean_shift_refine(pts, {n(rng), n(rng)}, 1.5);
    for (std::size_t i = 1; i < r.density.size(); ++i) CHECK(r.density[i] >= r.density[i - 1] * (1 - 1e-12));
  }
}

TEST_CASE("mean_shift falls back to the plain mean when every weight underflows") {
  const MeanShiftResult r = mean_shift_refine(Tensor({2, 2}, {1000, 1002, 0, 0}), {0, 0}, 0.1);
  CHECK(r.fell_back);
  CHECK(r.center.x == Approx(1001.0));
}

TEST_CASE("localize_patch finds a planted patch") {
  std::mt19937_64 rng(41);
  const Grid frame{12, 12};
  const Tensor f2v = distinctive(rng, 64, frame.cells(), 1.0);
  // Patch p1 = the 4 x 4 block of f2 starting at cell (5, 3): center (6.5, 4.5).
  Tensor p1v({64, 16});
  for (std::size_t c = 0; c < 64; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) p1v.at(c, y * 4 + x) = f2v.at(c, frame.index(x + 5, y + 3));
  const FeatureMap p1 = make_feature_map(Var::constant(p1v), Grid{4, 4});
  const FeatureMap f2 = make_feature_map(Var::constant(f2v), frame);
  const Localization loc = localize_patch(p1, f2);
  CHECK(std::abs(loc.box.cx() - 6.5) < 0.5);
  CHECK(std::abs(loc.box.cy() - 4.5) < 0.5);
  // A 4-cell block has half-extent 2.
  CHECK(loc.box.w() == Approx(2.0).margin(0.1));
  CHECK(loc.patch_to_frame.values.shape() == Shape{16, 144});
}

TEST_CASE("localize_patch estimates the scale of an upsampled copy") {
  std::mt19937_64 rng(43);
  // Patch 4 x 4 cells; frame holds its 2x nearest-upsampled copy (8 x 8) at (2, 3).
  const Tensor p1v = distinctive(rng, 64, 16, 1.0);
  const Tensor up = ops::upsample_nearest(Var::constant(p1v.reshaped({64, 4, 4})), 2).value();
  const Grid frame{14, 14};
  Tensor f2v = distinctive(rng, 64, frame.cells(), 1.0);
  for (std::size_t c = 0; c < 64; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) f2v.at(c, frame.index(x + 2, y + 3)) = up[c * 64 + y * 8 + x];
  const Localization loc =
      localize_patch(make_feature_map(Var::constant(p1v), Grid{4, 4}), make_feature_map(Var::constant(f2v), frame));
  // Original half-width 2 cells; the copy spans 8 cells, half-width 4.
  CHECK(std::abs(loc.box.w() - 4.0) / 4.0 < 0.15);
  CHECK(std::abs(loc.box.h() - 4.0) / 4.0 < 0.15);
  CHECK(std::abs(loc.box.cx() - 5.5) < 0.5);
  CHECK(std::abs(loc.box.cy() - 6.5) < 0.5);
}
