// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset. Exit status is nonzero when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "aftk/cli.hpp"
#include "aftk/gradcheck.hpp"
#include "aftk/localization.hpp"
#include "aftk/objectives.hpp"
#include "aftk/propagation.hpp"
#include "aftk/synthetic.hpp"
#include "aftk/trainer.hpp"

using namespace aftk;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1 ----
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto reports = run_gradcheck(gradcheck_registry(), 100, 2024);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name, failed;
  for (const auto& r : reports) {
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
    if (!r.passed || r.points != 100) failed += " " + r.name;
  }
  Outcome o;
  o.pass = failed.empty() && worst < 1e-4 && secs < 120.0;
  o.detail = fmt("%zu ops x 100 points, worst rel error %.2e (%s), %.1f s", reports.size(), worst,
                 worst_name.c_str(), secs);
  if (!failed.empty()) o.detail += "; failed:" + failed;
  return o;
}

// ---- 2 ----
Outcome affinity_stochasticity() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> side(3, 9), chans(1, 16);
  std::normal_distribution<double> n(0.0, 3.0);
  double worst_dense = 0.0, worst_topk = 0.0;
  bool nonneg = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const Grid g1{side(rng), side(rng)}, g2{side(rng), side(rng)};
    const std::size_t c = chans(rng);
    Tensor a({c, g1.cells()}), b({c, g2.cells()});
    for (double& v : a.values()) v = n(rng);
    for (double& v : b.values()) v = n(rng);
    const AffinityMatrix dense =
        compute_affinity(make_feature_map(Var::constant(a), g1), make_feature_map(Var::constant(b), g2));
    const AffinityMatrix sparse = topk_sparsify(dense, 5);
    for (const AffinityMatrix* m : {&dense, &sparse}) {
      const Tensor& v = m->values.value();
      for (std::size_t j = 0; j < v.cols(); ++j) {
        double s = 0.0;
        std::size_t nonzero = 0;
        for (std::size_t i = 0; i < v.rows(); ++i) {
          s += v.at(i, j);
          nonneg = nonneg && v.at(i, j) >= 0.0;
          nonzero += v.at(i, j) != 0.0;
        }
        double& worst = m == &dense ? worst_dense : worst_topk;
        worst = std::max(worst, std::abs(s - 1.0));
        if (m == &sparse && nonzero > 5) nonneg = false;
      }
    }
  }
  Outcome o;
  o.pass = worst_dense < 1e-6 && worst_topk < 1e-6 && nonneg;
  o.detail = fmt("1000 affinities, max |colsum - 1| dense %.1e, top-5 %.1e", worst_dense, worst_topk);
  return o;
}

// ---- 3 ----
Outcome scale_estimator() {
  double worst = 0.0;
  for (double w : {2.0, 4.0, 8.0}) {
    const std::size_t n = 16;
    const double cx = 5.0, cy = -3.0;
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) {
        xs.push_back(cx - w + (static_cast<double>(k) + 0.5) * 2.0 * w / n);
        ys.push_back(cy - w + (static_cast<double>(i) + 0.5) * 2.0 * w / n);
      }
    std::vector<double> coords(xs);
    coords.insert(coords.end(), ys.begin(), ys.end());
    const LocationMap pts{Var::constant(Tensor({2, n * n}, coords)), Grid{n, n}};
    const Tensor half = estimate_scale(pts, locate_center(pts)).value();
    worst = std::max({worst, std::abs(half[0] - w) / w, std::abs(half[1] - w) / w});
  }
  const LocationMap four{Var::constant(Tensor({2, 4}, {-1.5, -0.5, 0.5, 1.5, 0, 0, 0, 0})), Grid{1, 4}};
  const double w4 = estimate_scale(four, Var::constant(Tensor({2, 1}, {0.0, 0.0}))).value()[0];
  Outcome o;
  o.pass = worst < 0.05 && w4 == 2.0;
  o.detail = fmt("w in {2,4,8}, 16 per axis: max relative error %.2e; 4-point example %.17g", worst, w4);
  return o;
}

// ---- 4 ----
Outcome cycle_orthogonality() {
  std::mt19937_64 rng(3);
  bool zero = true;
  for (int trial = 0; trial < 20; ++trial) {
    const Grid g{3, 4};
    std::vector<std::size_t> perm(g.cells());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor p({g.cells(), g.cells()});
    for (std::size_t j = 0; j < perm.size(); ++j) p.at(perm[j], j) = 1.0;
    const AffinityMatrix a{Var::constant(p), g, g};
    Tensor f({5, g.cells()});
    std::normal_distribution<double> n;
    for (double& v : f.values()) v = n(rng);
    zero = zero && orthogonal_cycle_location(canonical_grid(g), a).item() == 0.0 &&
           orthogonal_cycle_feature(Var::constant(f), a).item() == 0.0;
  }
  const AffinityMatrix uniform{Var::constant(Tensor({2, 2}, 0.5)), Grid{1, 2}, Grid{1, 2}};
  const LocationMap l{Var::constant(Tensor({1, 2}, {0.0, 1.0})), Grid{1, 2}};  // 1-D positions (0, 1)
  const double loc = orthogonal_cycle_location(l, uniform).item();
  const double feat = orthogonal_cycle_feature(Var::constant(Tensor({1, 2}, {0.0, 1.0})), uniform).item();
  Outcome o;
  o.pass = zero && std::abs(feat - 0.25) <= 1e-12 && std::abs(loc - 0.25) <= 1e-12;
  o.detail = fmt("permutations give exact zeros: %s; uniform 2x2 location MSE %.17g, feature MSE %.17g",
                 zero ? "yes" : "no", loc, feat);
  return o;
}

// ---- 5 ----
Outcome oracle_propagation() {
  const auto t0 = Clock::now();
  // Both sprites move one whole cell per frame around a square loop and
  // never meet; keypoints sit on cell centers.
  SceneSpec spec;
  spec.frames = 16;
  std::vector<Sprite> sprites;
  const Point2 starts[2] = {{27.5, 27.5}, {99.5, 75.5}};
  const int moves[2][4][2] = {{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}, {{-1, 0}, {0, 1}, {1, 0}, {0, -1}}};
  for (std::size_t s = 0; s < 2; ++s) {
    Sprite sp;
    sp.id = s + 1;
    sp.radius_x = sp.radius_y = 12.0;
    sp.texture = value_noise_texture(28, 28, {{0.9, 0.3, 0.2}, {0.3, 0.8, 0.4}, {0.2, 0.3, 0.9}}, 40 + s);
    Point2 p = starts[s];
    for (std::size_t t = 0; t < spec.frames; ++t) {
      sp.trajectory.push_back({p.x, p.y, 1.0});
      const int* m = moves[s][std::min<std::size_t>(t / 4, 3)];
      p.x += 8.0 * m[0];
      p.y += 8.0 * m[1];
    }
    sp.keypoints = {{0.0, 0.0}, {8.0, 0.0}, {0.0, -8.0}};
    sprites.push_back(std::move(sp));
  }
  const Scene scene = render_scene(spec, 0, value_noise_texture(128, 128, {{0.5, 0.5, 0.5}, {0.3, 0.4, 0.2}}, 9), sprites);
  const Grid grid = scene.grid();
  std::vector<Tensor> feats;
  for (std::size_t t = 0; t < spec.frames; ++t) feats.push_back(oracle_features(scene, t).values.value());

  std::vector<std::vector<std::size_t>> truth, pred;
  for (const Image& m : scene.masks) truth.push_back(cell_labels(m));
  const PropagationResult r = propagate_video(feats, grid, mask_labels(truth[0], 2, grid), PropagationConfig{});
  for (const LabelMap& l : r.labels) pred.push_back(hard_labels(l));
  const double j = metric_jaccard(pred, truth, 2).mean;

  std::vector<std::vector<Point2>> joints(spec.frames);
  for (std::size_t t = 0; t < spec.frames; ++t)
    for (const Sprite& s : scene.sprites)
      for (std::size_t k = 0; k < s.keypoints.size(); ++k) joints[t].push_back(keypoint_position(s, k, t));
  const PropagationResult kp = propagate_video(feats, grid, keypoint_heatmaps(joints[0], grid), PropagationConfig{});
  double pck = 0.0;
  for (std::size_t t = 1; t < spec.frames; ++t)
    pck += metric_pck(heatmaps_to_joints(kp.labels[t]), joints[t], {0.1}, pck_norm(joints[t]))[0];
  pck /= static_cast<double>(spec.frames - 1);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = j >= 0.99 && pck == 1.0 && secs < 30.0;
  o.detail = fmt("16 frames: J mean %.4f, PCK@.1 %.4f, %.1f s", j, pck, secs);
  return o;
}

// ---- 6-8: desk training ----

struct DeskData {
  RunConfig config;
  std::vector<TrainingVideo> corpus;
  std::vector<Scene> eval;
  std::vector<Scene> same_color;
  double prepare_seconds = 0.0;
};

double mean_j(const std::vector<Scene>& scenes, const ConvEncoder* encoder, PropagationMode mode) {
  double s = 0.0;
  for (const Scene& sc : scenes) {
    std::vector<std::vector<std::size_t>> truth, pred;
    for (const Image& m : sc.masks) truth.push_back(cell_labels(m));
    if (!encoder) {
      pred.assign(truth.size(), truth[0]);
    } else {
      PropagationConfig pc;
      pc.mode = mode;
      const PropagationResult r = propagate_video(sc.frames, mask_labels(truth[0], sc.num_objects(), sc.grid()), pc, *encoder);
      for (const LabelMap& l : r.labels) pred.push_back(hard_labels(l));
    }
    s += metric_jaccard(pred, truth, sc.num_objects()).mean;
  }
  return s / static_cast<double>(scenes.size());
}

const DeskData& desk_data() {
  static const DeskData data = [] {
    const auto t0 = Clock::now();
    DeskData d;
    d.config = profile_config("full");
    const RunConfig& c = d.config;
    std::vector<Tensor> images;
    std::vector<Scene> train;
    for (std::size_t i = 0; i < c.corpus.train_videos; ++i) {
      train.push_back(generate_scene(c.corpus.scene, video_seed(c.seed, "train", i)));
      for (std::size_t t = 0; t < train.back().frames.size(); t += c.color.frame_stride)
        images.push_back(lab_from_rgb(train.back().frames[t]));
    }
    PretrainConfig p = c.color.pretrain;
    p.seed = c.seed;
    const ColorAutoencoder ae = pretrain_color_autoencoder(images, p).model;
    for (const Scene& s : train) d.corpus.push_back(prepare_video(s.frames, ae));
    standardize_color(d.corpus, color_statistics(d.corpus));
    for (std::size_t i = 0; i < c.corpus.eval_videos; ++i)
      d.eval.push_back(generate_scene(c.corpus.scene, video_seed(c.seed, "eval", i)));
    const SceneSpec same = same_color_spec(c.corpus.scene);
    for (std::size_t i = 0; i < c.corpus.same_color_videos; ++i)
      d.same_color.push_back(generate_scene(same, video_seed(c.seed, "same_color", i)));
    d.prepare_seconds = seconds_since(t0);
    return d;
  }();
  return data;
}

struct Trained {
  ConvEncoder encoder;
  double seconds = 0.0;
  double j = 0.0;
};

Trained train_variant(const std::string& variant) {
  const DeskData& d = desk_data();
  TrainConfig cfg = d.config.train;
  cfg.seed = d.config.seed;
  if (variant == "-all") {
    cfg.weights.concentration_region = cfg.weights.concentration_local = 0.0;
    cfg.weights.orthogonal_location = cfg.weights.orthogonal_feature = 0.0;
  } else if (variant == "-L") {
    cfg.use_localization = false;
  }
  const auto t0 = Clock::now();
  TrainResult r = run_training(d.corpus, cfg);
  const double secs = seconds_since(t0);
  Trained t{std::move(r.encoder), secs, 0.0};
  t.j = mean_j(d.eval, &t.encoder, PropagationMode::global);
  std::printf("  [%s] trained in %.0f s, held-out J %.4f\n", variant.c_str(), secs, t.j);
  std::fflush(stdout);
  return t;
}

const Trained& full_model() {
  static const Trained t = train_variant("full");
  return t;
}

Outcome training_efficacy() {
  const DeskData& d = desk_data();
  const Trained& full = full_model();
  ConvEncoder untrained(d.config.train.encoder, d.config.seed);
  const double j_untrained = mean_j(d.eval, &untrained, PropagationMode::global);
  const double j_static = mean_j(d.eval, nullptr, PropagationMode::global);
  const double budget = d.prepare_seconds + full.seconds;
  Outcome o;
  o.pass = full.j - j_untrained >= 0.15 && full.j > j_static && budget <= 3600.0;
  o.detail = fmt("held-out J trained %.4f, untrained %.4f (+%.4f), static copy %.4f; %zu videos, %zu+%zu epochs in %.0f s",
                 full.j, j_untrained, full.j - j_untrained, j_static, d.corpus.size(), d.config.train.warmup_epochs,
                 d.config.train.joint_epochs, budget);
  return o;
}

Outcome ablation_direction() {
  const Trained& full = full_model();
  const Trained no_aux = train_variant("-all");
  const Trained no_loc = train_variant("-L");
  Outcome o;
  o.pass = no_aux.j < full.j && no_loc.j <= full.j;
  o.detail = fmt("held-out J full %.4f, -all %.4f, -L %.4f", full.j, no_aux.j, no_loc.j);
  return o;
}

Outcome track_vs_global() {
  const DeskData& d = desk_data();
  const Trained& full = full_model();
  const double g = mean_j(d.same_color, &full.encoder, PropagationMode::global);
  const double t = mean_j(d.same_color, &full.encoder, PropagationMode::track);
  Outcome o;
  o.pass = t >= g;
  o.detail = fmt("two-sprite same-color preset (%zu videos): track J %.4f, global J %.4f", d.same_color.size(), t, g);
  return o;
}

// ---- 9 ----
Outcome mean_shift() {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 2.0);
  std::size_t violations = 0, iterations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor pts({2, 30});
    for (double& v : pts.values()) v = n(rng);
    const MeanShiftResult r = mean_shift_refine(pts, {n(rng), n(rng)}, 1.5);
    for (std::size_t i = 1; i < r.density.size(); ++i) {
      ++iterations;
      if (r.density[i] < r.density[i - 1]) ++violations;
    }
  }
  Tensor cluster({2, 10});
  for (int i = 0; i < 9; ++i) {
    cluster.at(0, i) = 0.2 * (i % 3 - 1);
    cluster.at(1, i) = 0.2 * (i / 3 - 1);
  }
  cluster.at(0, 9) = cluster.at(1, 9) = 10.0;
  const MeanShiftResult ms = mean_shift_refine(cluster, {1.0, 1.0}, 1.0, 50);
  const double err = std::hypot(ms.center.x, ms.center.y);
  Outcome o;
  o.pass = violations == 0 && err < 1e-3 && ms.iterations <= 50;
  o.detail = fmt("%zu ascent violations over %zu iterations; cluster+outlier error %.2e after %d iterations", violations,
                 iterations, err, ms.iterations);
  return o;
}

// ---- 10 ----
std::vector<std::pair<std::string, std::string>> tree_bytes(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out.emplace_back(fs::relative(e.path(), root).string(), std::string(std::istreambuf_iterator<char>(in), {}));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Outcome determinism() {
  std::vector<fs::path> dirs;
  for (const char* name : {"aftk_accept_det_a", "aftk_accept_det_b"}) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    std::ostringstream log;
    for (const char* cmd : {"gen", "pretrain-color", "train"}) {
      const int code = run_cli({cmd, "--profile", "smoke", "--seed", "11", "--out", dir.string()}, log, log);
      if (code != 0) return {false, fmt("`%s` exited with %d: %s", cmd, code, log.str().c_str())};
    }
    dirs.push_back(dir);
  }
  const auto corpus_a = tree_bytes(dirs[0] / "corpus"), corpus_b = tree_bytes(dirs[1] / "corpus");
  const auto train_a = tree_bytes(dirs[0] / "train"), train_b = tree_bytes(dirs[1] / "train");
  std::size_t ckpts = 0;
  for (const auto& [name, bytes] : train_a) ckpts += name.ends_with(".ckpt");
  // A gen rerun into an existing corpus leaves every byte in place.
  std::ostringstream log;
  run_cli({"gen", "--profile", "smoke", "--seed", "11", "--out", dirs[0].string()}, log, log);
  const bool gen_rerun = tree_bytes(dirs[0] / "corpus") == corpus_a;
  Outcome o;
  o.pass = corpus_a == corpus_b && gen_rerun && train_a == train_b && ckpts >= 3;
  o.detail = fmt("gen: %zu files identical across runs: %s, rerun unchanged: %s; train: %zu checkpoints identical: %s",
                 corpus_a.size(), corpus_a == corpus_b ? "yes" : "no", gen_rerun ? "yes" : "no", ckpts,
                 train_a == train_b ? "yes" : "no");
  for (const fs::path& d : dirs) fs::remove_all(d);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"affinity stochasticity", affinity_stochasticity},
      {"scale estimator oracle", scale_estimator},
      {"cycle/orthogonality", cycle_orthogonality},
      {"oracle propagation", oracle_propagation},
      {"end-to-end training efficacy", training_efficacy},
      {"ablation direction", ablation_direction},
      {"track vs global direction", track_vs_global},
      {"mean-shift", mean_shift},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
