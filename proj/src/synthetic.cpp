// SPDX-License-Identifier: Apache-2.0
#include "aftk/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "aftk/checkpoint.hpp"
#include "aftk/errors.hpp"

namespace aftk {

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

std::array<double, 3> hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  for (double& ch : rgb) ch += m;
  return rgb;
}

std::vector<std::array<double, 3>> sprite_palette(double hue) {
  return {hsv(hue, 0.85, 0.95), hsv(hue + 0.07, 0.6, 0.45), hsv(hue - 0.07, 0.95, 0.7)};
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Texture pixel i sits at sprite-local coordinate i - size / 2.
double texture_origin(const Tensor& texture) { return static_cast<double>(texture.dim(1) / 2); }

std::array<double, 3> sample_texture(const Tensor& texture, double ux, double uy) {
  const std::size_t s = texture.dim(1);
  const double o = texture_origin(texture);
  const double fx = std::clamp(ux + o, 0.0, static_cast<double>(s - 1));
  const double fy = std::clamp(uy + o, 0.0, static_cast<double>(s - 1));
  const auto x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
  const std::size_t x1 = std::min(x0 + 1, s - 1), y1 = std::min(y0 + 1, s - 1);
  const double ax = fx - static_cast<double>(x0), ay = fy - static_cast<double>(y0);
  std::array<double, 3> out{};
  for (std::size_t c = 0; c < 3; ++c) {
    const double* p = texture.data() + c * s * s;
    const double top = p[y0 * s + x0] * (1 - ax) + p[y0 * s + x1] * ax;
    const double bot = p[y1 * s + x0] * (1 - ax) + p[y1 * s + x1] * ax;
    out[c] = top * (1 - ay) + bot * ay;
  }
  return out;
}

bool inside_ellipse(const Sprite& sp, double ux, double uy) {
  const double a = ux / sp.radius_x, b = uy / sp.radius_y;
  return a * a + b * b <= 1.0;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

Point2 cell_center_px(std::size_t cx, std::size_t cy, std::size_t stride) {
  const double half = (static_cast<double>(stride) - 1.0) / 2.0;
  return {static_cast<double>(cx * stride) + half, static_cast<double>(cy * stride) + half};
}

Point2 to_local(const Placement& pl, Point2 p) { return {(p.x - pl.tx) / pl.s, (p.y - pl.ty) / pl.s}; }
Point2 to_canvas(const Placement& pl, Point2 u) { return {pl.tx + pl.s * u.x, pl.ty + pl.s * u.y}; }

// Tensor-product Fourier features of a 2-D coordinate. Their dot product is a
// shift-invariant, Gaussian-tapered kernel of the coordinate difference with
// value 1 at zero offset.
constexpr int kFourierTerms = 6;
constexpr double kFourierPeriod = 32.0;  // cells
constexpr double kFourierSigma = 1.5;    // cells
constexpr double kOracleScale = 60.0;    // logit scale

std::vector<double> fourier_1d(double x) {
  std::vector<double> w(kFourierTerms + 1);
  double total = 0.0;
  for (int m = 0; m <= kFourierTerms; ++m) {
    const double om = 2.0 * kPi * m / kFourierPeriod;
    w[m] = std::exp(-0.5 * om * om * kFourierSigma * kFourierSigma) * (m == 0 ? 1.0 : 2.0);
    total += w[m];
  }
  std::vector<double> f;
  f.reserve(2 * kFourierTerms + 1);
  f.push_back(std::sqrt(w[0] / total));
  for (int m = 1; m <= kFourierTerms; ++m) {
    const double om = 2.0 * kPi * m / kFourierPeriod;
    const double a = std::sqrt(w[m] / total);
    f.push_back(a * std::cos(om * x));
    f.push_back(a * std::sin(om * x));
  }
  return f;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

std::string frame_name(const char* prefix, std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03zu.png", prefix, t);
  return buf;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void SceneSpec::validate() const {
  if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0)
    throw ConfigError("canvas " + std::to_string(height) + "x" + std::to_string(width) + " must be a positive multiple of 8");
  if (frames < 1) throw ConfigError("scene needs at least one frame");
  if (min_sprites < 1 || min_sprites > max_sprites) throw ConfigError("sprite count range is invalid");
  if (max_sprites > 32) throw ConfigError("at most 32 sprites are supported");
  if (!(min_radius > 0 && min_radius <= max_radius)) throw ConfigError("sprite radius range is invalid");
  if (!(min_speed >= 0 && min_speed <= max_speed)) throw ConfigError("sprite speed range is invalid");
  if (!(min_scale > 0 && min_scale <= max_scale)) throw ConfigError("sprite scale range is invalid");
  const double extent = 2.0 * max_radius * (scale_motion ? max_scale : 1.0);
  if (extent >= static_cast<double>(std::min(height, width)))
    throw ConfigError("sprite larger than canvas: diameter " + std::to_string(extent));
}

nlohmann::json to_json(const SceneSpec& s) {
  return {{"height", s.height},         {"width", s.width},         {"frames", s.frames},
          {"min_sprites", s.min_sprites}, {"max_sprites", s.max_sprites}, {"min_radius", s.min_radius},
          {"max_radius", s.max_radius}, {"min_speed", s.min_speed}, {"max_speed", s.max_speed},
          {"min_scale", s.min_scale},   {"max_scale", s.max_scale}, {"scale_motion", s.scale_motion},
          {"same_color", s.same_color}, {"keypoints_per_sprite", s.keypoints_per_sprite}};
}

SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  try {
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.frames = j.value("frames", s.frames);
    s.min_sprites = j.value("min_sprites", s.min_sprites);
    s.max_sprites = j.value("max_sprites", s.max_sprites);
    s.min_radius = j.value("min_radius", s.min_radius);
    s.max_radius = j.value("max_radius", s.max_radius);
    s.min_speed = j.value("min_speed", s.min_speed);
    s.max_speed = j.value("max_speed", s.max_speed);
    s.min_scale = j.value("min_scale", s.min_scale);
    s.max_scale = j.value("max_scale", s.max_scale);
    s.scale_motion = j.value("scale_motion", s.scale_motion);
    s.same_color = j.value("same_color", s.same_color);
    s.keypoints_per_sprite = j.value("keypoints_per_sprite", s.keypoints_per_sprite);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scene spec: ") + e.what());
  }
  return s;
}

Tensor value_noise_texture(std::size_t height, std::size_t width, const std::vector<std::array<double, 3>>& palette,
                           std::uint64_t seed) {
  if (palette.empty()) throw ParameterError("texture palette is empty");
  std::mt19937_64 rng(seed);
  const std::array<std::size_t, 3> spacing{32, 16, 8};
  const std::array<double, 3> weight{0.5, 0.3, 0.2};
  std::vector<double> t(height * width, 0.0);
  for (std::size_t o = 0; o < spacing.size(); ++o) {
    const std::size_t sp = spacing[o];
    const std::size_t gh = height / sp + 2, gw = width / sp + 2;
    std::vector<double> lattice(gh * gw);
    for (double& v : lattice) v = uniform(rng, 0.0, 1.0);
    for (std::size_t y = 0; y < height; ++y) {
      const std::size_t ly = y / sp;
      const double fy = smoothstep(static_cast<double>(y % sp) / static_cast<double>(sp));
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t lx = x / sp;
        const double fx = smoothstep(static_cast<double>(x % sp) / static_cast<double>(sp));
        const double top = lattice[ly * gw + lx] * (1 - fx) + lattice[ly * gw + lx + 1] * fx;
        const double bot = lattice[(ly + 1) * gw + lx] * (1 - fx) + lattice[(ly + 1) * gw + lx + 1] * fx;
        t[y * width + x] += weight[o] * (top * (1 - fy) + bot * fy);
      }
    }
  }
  Tensor out({3, height, width});
  const double last = static_cast<double>(palette.size() - 1);
  for (std::size_t i = 0; i < height * width; ++i) {
    const double pos = std::clamp(t[i], 0.0, 1.0) * last;
    const auto k = std::min(static_cast<std::size_t>(pos), palette.size() - 1);
    const std::size_t k1 = std::min(k + 1, palette.size() - 1);
    const double a = pos - static_cast<double>(k);
    for (std::size_t c = 0; c < 3; ++c) out[c * height * width + i] = palette[k][c] * (1 - a) + palette[k1][c] * a;
  }
  return out;
}

Point2 map_point(const Sprite& sprite, std::size_t t0, std::size_t t1, Point2 p) {
  if (t0 >= sprite.trajectory.size() || t1 >= sprite.trajectory.size()) throw ParameterError("frame index out of range");
  return to_canvas(sprite.trajectory[t1], to_local(sprite.trajectory[t0], p));
}

Point2 keypoint_position(const Sprite& sprite, std::size_t k, std::size_t t) {
  if (k >= sprite.keypoints.size() || t >= sprite.trajectory.size()) throw ParameterError("keypoint index out of range");
  return to_canvas(sprite.trajectory[t], sprite.keypoints[k]);
}

Scene render_scene(const SceneSpec& spec, std::uint64_t seed, Tensor background, std::vector<Sprite> sprites) {
  if (spec.height % 8 != 0 || spec.width % 8 != 0) throw ConfigError("canvas must be a multiple of 8");
  if (background.shape() != Shape{3, spec.height, spec.width}) throw DimensionError("background must be 3 x H x W");
  Scene scene;
  scene.spec = spec;
  scene.seed = seed;
  scene.background = std::move(background);
  scene.sprites = std::move(sprites);
  const std::size_t H = spec.height, W = spec.width, HW = H * W;
  for (std::size_t k = 0; k < scene.sprites.size(); ++k) {
    const Sprite& sp = scene.sprites[k];
    if (sp.trajectory.size() != spec.frames) throw DimensionError("sprite trajectory length differs from frame count");
    if (sp.id == 0 || sp.id > 255) throw ParameterError("sprite ids must lie in [1, 255]");
    for (const Placement& pl : sp.trajectory)
      if (!(pl.s > 0)) throw ParameterError("sprite scale must be positive");
  }
  for (std::size_t t = 0; t < spec.frames; ++t) {
    Image frame(H, W, 3);
    Image mask(H, W, 1, 0);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < 3; ++c) frame.at(y, x, c) = to_byte(scene.background[c * HW + y * W + x]);
    for (const Sprite& sp : scene.sprites) {
      const Placement& pl = sp.trajectory[t];
      const double ex = pl.s * sp.radius_x, ey = pl.s * sp.radius_y;
      const long x0 = std::max(0L, static_cast<long>(std::floor(pl.tx - ex)));
      const long x1 = std::min(static_cast<long>(W) - 1, static_cast<long>(std::ceil(pl.tx + ex)));
      const long y0 = std::max(0L, static_cast<long>(std::floor(pl.ty - ey)));
      const long y1 = std::min(static_cast<long>(H) - 1, static_cast<long>(std::ceil(pl.ty + ey)));
      for (long y = y0; y <= y1; ++y) {
        for (long x = x0; x <= x1; ++x) {
          const Point2 u = to_local(pl, {static_cast<double>(x), static_cast<double>(y)});
          if (!inside_ellipse(sp, u.x, u.y)) continue;
          const auto rgb = sample_texture(sp.texture, u.x, u.y);
          for (std::size_t c = 0; c < 3; ++c) frame.at(y, x, c) = to_byte(rgb[c]);
          mask.at(y, x) = static_cast<std::uint8_t>(sp.id);
        }
      }
    }
    scene.frames.push_back(std::move(frame));
    scene.masks.push_back(std::move(mask));
  }
  return scene;
}

Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const double H = static_cast<double>(spec.height), W = static_cast<double>(spec.width);
  const std::size_t T = spec.frames;
  const double tlast = T > 1 ? static_cast<double>(T - 1) : 1.0;

  const double bg_hue = uniform(rng, 0.0, 1.0);
  std::vector<std::array<double, 3>> bg_palette{hsv(bg_hue, 0.25, 0.35), hsv(bg_hue + 0.1, 0.15, 0.6),
                                                hsv(bg_hue - 0.1, 0.3, 0.45)};
  Tensor background = value_noise_texture(spec.height, spec.width, bg_palette, rng());

  std::uniform_int_distribution<std::size_t> count_dist(spec.min_sprites, spec.max_sprites);
  const std::size_t wanted = count_dist(rng);
  const double hue0 = uniform(rng, 0.0, 1.0);
  const auto tex_size = static_cast<std::size_t>(2.0 * std::ceil(spec.max_radius) + 4.0);

  std::vector<Sprite> sprites;
  Sprite shared;  // appearance reused by every sprite in the same-color preset
  for (std::size_t k = 0; k < wanted; ++k) {
    Sprite sp;
    if (spec.same_color && k > 0) {
      sp.radius_x = shared.radius_x;
      sp.radius_y = shared.radius_y;
      sp.texture = shared.texture;
    } else {
      sp.radius_x = uniform(rng, spec.min_radius, spec.max_radius);
      sp.radius_y = uniform(rng, spec.min_radius, spec.max_radius);
      const double hue = hue0 + static_cast<double>(k) / static_cast<double>(wanted) + uniform(rng, -0.05, 0.05);
      sp.texture = value_noise_texture(tex_size, tex_size, sprite_palette(hue), rng());
      if (k == 0) shared = sp;
    }
    const std::uint64_t motion_seed = rng();
    std::mt19937_64 mrng(motion_seed);
    bool placed = false;
    for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
      const double s0 = spec.scale_motion ? uniform(mrng, spec.min_scale, spec.max_scale) : 1.0;
      const double s1 = spec.scale_motion ? uniform(mrng, spec.min_scale, spec.max_scale) : 1.0;
      const double speed = uniform(mrng, spec.min_speed, spec.max_speed);
      const double dir = uniform(mrng, 0.0, 2.0 * kPi);
      const double px = uniform(mrng, 0.0, W - 1), py = uniform(mrng, 0.0, H - 1);
      std::vector<Placement> traj(T);
      for (std::size_t t = 0; t < T; ++t) {
        const double a = static_cast<double>(t) / tlast;
        traj[t] = {px + speed * std::cos(dir) * static_cast<double>(t), py + speed * std::sin(dir) * static_cast<double>(t),
                   s0 + (s1 - s0) * a};
      }
      // Fully inside the canvas at every frame (the constraint is linear in t,
      // but checking every frame keeps this obviously right).
      bool ok = true;
      for (const Placement& pl : traj) {
        const double ex = pl.s * sp.radius_x, ey = pl.s * sp.radius_y;
        if (pl.tx - ex < 0 || pl.tx + ex > W - 1 || pl.ty - ey < 0 || pl.ty + ey > H - 1) ok = false;
      }
      // Bounding circles of distinct sprites never touch.
      for (const Sprite& other : sprites) {
        for (std::size_t t = 0; t < T && ok; ++t) {
          const Placement& a = traj[t];
          const Placement& b = other.trajectory[t];
          const double ra = a.s * std::max(sp.radius_x, sp.radius_y);
          const double rb = b.s * std::max(other.radius_x, other.radius_y);
          if (std::hypot(a.tx - b.tx, a.ty - b.ty) < ra + rb + 4.0) ok = false;
        }
      }
      if (ok) {
        sp.trajectory = std::move(traj);
        placed = true;
      }
    }
    if (!placed) continue;  // crowded canvas: fewer sprites
    sp.id = sprites.size() + 1;
    for (std::size_t j = 0; j < spec.keypoints_per_sprite; ++j) {
      const double r = 0.6 * std::sqrt(uniform(mrng, 0.0, 1.0));
      const double th = uniform(mrng, 0.0, 2.0 * kPi);
      sp.keypoints.push_back({r * sp.radius_x * std::cos(th), r * sp.radius_y * std::sin(th)});
    }
    sprites.push_back(std::move(sp));
  }
  if (sprites.empty()) throw SamplingError("could not place any sprite on the canvas");
  return render_scene(spec, seed, std::move(background), std::move(sprites));
}

std::vector<std::size_t> cell_labels(const Image& mask, std::size_t stride) {
  if (mask.channels != 1 || mask.height % stride != 0 || mask.width % stride != 0)
    throw DimensionError("mask must be 1-channel with sides divisible by the stride");
  const std::size_t gh = mask.height / stride, gw = mask.width / stride;
  std::vector<std::size_t> out(gh * gw);
  std::array<std::size_t, 256> counts{};
  for (std::size_t cy = 0; cy < gh; ++cy) {
    for (std::size_t cx = 0; cx < gw; ++cx) {
      counts.fill(0);
      for (std::size_t y = cy * stride; y < (cy + 1) * stride; ++y)
        for (std::size_t x = cx * stride; x < (cx + 1) * stride; ++x) ++counts[mask.at(y, x)];
      out[cy * gw + cx] = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
  }
  return out;
}

Tensor cell_label_fractions(const Image& mask, std::size_t num_objects, std::size_t stride) {
  if (mask.channels != 1 || mask.height % stride != 0 || mask.width % stride != 0)
    throw DimensionError("mask must be 1-channel with sides divisible by the stride");
  const std::size_t gh = mask.height / stride, gw = mask.width / stride, n = gh * gw;
  Tensor out({num_objects + 1, n});
  const double inv = 1.0 / static_cast<double>(stride * stride);
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      const std::size_t id = mask.at(y, x);
      if (id > num_objects) throw ParameterError("mask id " + std::to_string(id) + " exceeds object count");
      out[id * n + (y / stride) * gw + x / stride] += inv;
    }
  }
  return out;
}

Tensor cell_flow(const Scene& scene, std::size_t t) {
  if (t + 1 >= scene.spec.frames) throw ParameterError("flow needs a following frame");
  const Grid g = scene.grid();
  const auto labels = cell_labels(scene.masks[t]);
  Tensor flow({2, g.cells()});
  for (std::size_t cy = 0; cy < g.height; ++cy) {
    for (std::size_t cx = 0; cx < g.width; ++cx) {
      const std::size_t j = g.index(cx, cy);
      if (labels[j] == 0) continue;
      const Sprite& sp = scene.sprites[labels[j] - 1];
      const Point2 c = cell_center_px(cx, cy, 8);
      const Point2 n = map_point(sp, t, t + 1, c);
      flow[j] = (n.x - c.x) / 8.0;
      flow[g.cells() + j] = (n.y - c.y) / 8.0;
    }
  }
  return flow;
}

FeatureMap oracle_features(const Scene& scene, std::size_t t) {
  if (t >= scene.spec.frames) throw ParameterError("frame index out of range");
  const Grid g = scene.grid();
  const auto labels = cell_labels(scene.masks[t]);
  const std::size_t ids = scene.num_objects() + 1;
  const std::size_t fd = 2 * kFourierTerms + 1;
  const std::size_t channels = ids + fd * fd;
  const std::size_t n = g.cells();
  const double root = std::sqrt(kOracleScale);
  Tensor v({channels, n});
  for (std::size_t cy = 0; cy < g.height; ++cy) {
    for (std::size_t cx = 0; cx < g.width; ++cx) {
      const std::size_t j = g.index(cx, cy);
      const std::size_t id = labels[j];
      Point2 world{static_cast<double>(cx), static_cast<double>(cy)};
      if (id != 0) {
        const Point2 u = to_local(scene.sprites[id - 1].trajectory[t], cell_center_px(cx, cy, 8));
        world = {u.x / 8.0, u.y / 8.0};
      }
      v[id * n + j] = root;
      const auto fx = fourier_1d(world.x), fy = fourier_1d(world.y);
      for (std::size_t a = 0; a < fd; ++a)
        for (std::size_t b = 0; b < fd; ++b) v[(ids + a * fd + b) * n + j] = root * fx[a] * fy[b];
    }
  }
  return make_feature_map(Var::constant(std::move(v)), g);
}

std::vector<std::size_t> ground_truth_source_cells(const Scene& scene, std::size_t t0, std::size_t t1) {
  const Grid g = scene.grid();
  const auto l0 = cell_labels(scene.masks[t0]);
  const auto l1 = cell_labels(scene.masks[t1]);
  std::vector<std::size_t> out(g.cells(), std::numeric_limits<std::size_t>::max());
  for (std::size_t cy = 0; cy < g.height; ++cy) {
    for (std::size_t cx = 0; cx < g.width; ++cx) {
      const std::size_t j = g.index(cx, cy);
      const std::size_t id = l1[j];
      Point2 src = cell_center_px(cx, cy, 8);
      if (id != 0) src = map_point(scene.sprites[id - 1], t1, t0, src);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < g.cells(); ++i) {
        if (l0[i] != id) continue;
        const Point2 c = cell_center_px(i % g.width, i / g.width, 8);
        const double d = std::hypot(c.x - src.x, c.y - src.y);
        if (d < best) {
          best = d;
          out[j] = i;
        }
      }
    }
  }
  return out;
}

std::string encode_flow(const std::vector<Tensor>& flows) {
  std::string out;
  for (const Tensor& f : flows) {
    if (f.rank() != 2 || f.dim(0) != 2) throw DimensionError("flow blocks must be 2 x N");
    for (double v : f.values()) {
      const auto x = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &x, 4);
      put_u32(out, bits);
    }
  }
  return out;
}

std::vector<Tensor> decode_flow(const std::string& bytes, std::size_t cells) {
  const std::size_t block = 2 * cells * 4;
  if (cells == 0 || bytes.size() % block != 0) throw IoError("flow file size is not a multiple of the block size");
  std::vector<Tensor> out;
  for (std::size_t pos = 0; pos < bytes.size(); pos += block) {
    Tensor f({2, cells});
    for (std::size_t i = 0; i < 2 * cells; ++i) {
      const std::uint32_t bits = get_u32(bytes, pos + 4 * i);
      float x;
      std::memcpy(&x, &bits, 4);
      f[i] = x;
    }
    out.push_back(std::move(f));
  }
  return out;
}

void write_video(const std::filesystem::path& dir, const Scene& scene) {
  std::filesystem::create_directories(dir);
  const std::size_t T = scene.frames.size();
  for (std::size_t t = 0; t < T; ++t) {
    write_png(dir / frame_name("frame", t), scene.frames[t], PngKind::rgb);
    write_png(dir / frame_name("mask", t), scene.masks[t], PngKind::indexed);
  }
  std::ostringstream kp;
  kp << "# frame joint x y\n";
  char line[96];
  for (std::size_t t = 0; t < T; ++t) {
    std::size_t joint = 0;
    for (const Sprite& sp : scene.sprites) {
      for (std::size_t k = 0; k < sp.keypoints.size(); ++k, ++joint) {
        const Point2 p = keypoint_position(sp, k, t);
        std::snprintf(line, sizeof(line), "%zu %zu %.6f %.6f\n", t, joint, p.x, p.y);
        kp << line;
      }
    }
  }
  write_file_atomic(dir / "keypoints.txt", kp.str());
  std::vector<Tensor> flows;
  for (std::size_t t = 0; t + 1 < T; ++t) flows.push_back(cell_flow(scene, t));
  write_file_atomic(dir / "flow.bin", encode_flow(flows));
  const nlohmann::json manifest{{"format", "aftk-video-1"},
                                {"seed", scene.seed},
                                {"spec", to_json(scene.spec)},
                                {"frames", T},
                                {"num_objects", scene.num_objects()},
                                {"grid", {scene.grid().height, scene.grid().width}}};
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

LoadedVideo read_video(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad manifest in " + dir.string() + ": " + e.what());
  }
  LoadedVideo v;
  v.spec = scene_spec_from_json(manifest.at("spec"));
  v.seed = manifest.at("seed").get<std::uint64_t>();
  v.num_objects = manifest.at("num_objects").get<std::size_t>();
  const auto T = manifest.at("frames").get<std::size_t>();
  for (std::size_t t = 0; t < T; ++t) {
    v.frames.push_back(read_png(dir / frame_name("frame", t)));
    v.masks.push_back(read_png(dir / frame_name("mask", t)));
  }
  v.keypoints.assign(T, {});
  std::istringstream kp(read_text(dir / "keypoints.txt"));
  std::string line;
  while (std::getline(kp, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::size_t t = 0, joint = 0;
    Point2 p;
    if (!(ls >> t >> joint >> p.x >> p.y) || t >= T) throw IoError("bad keypoint record: " + line);
    auto& row = v.keypoints[t];
    if (row.size() <= joint) row.resize(joint + 1);
    row[joint] = p;
  }
  return v;
}

Scene regenerate_scene(const std::filesystem::path& dir) {
  const LoadedVideo v = read_video(dir);
  Scene s = generate_scene(v.spec, v.seed);
  if (s.frames != v.frames) throw IoError("video in " + dir.string() + " does not match its manifest seed");
  return s;
}

}  // namespace aftk
