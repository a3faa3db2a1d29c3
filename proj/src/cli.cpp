// SPDX-License-Identifier: Apache-2.0
#include "aftk/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include "aftk/gradcheck.hpp"
#include "aftk/image.hpp"

namespace aftk {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- config ----

void RunConfig::validate() const {
  if (corpus.train_videos == 0) throw ConfigError("corpus.train_videos must be positive");
  corpus.scene.validate();
  if (color.frame_stride == 0) throw ConfigError("color.frame_stride must be positive");
  if (color.pretrain.epochs == 0 || color.pretrain.batch_size == 0) throw ConfigError("color: epochs and batch_size must be positive");
  if (!(color.pretrain.lr > 0.0)) throw ConfigError("color.lr must be positive");
  if (color.pretrain.crop % kFeatureStride != 0) throw ConfigError("color.crop must be a multiple of 8");
  train.validate();
  propagate.propagation.validate();
  if (propagate.features != "encoder" && propagate.features != "oracle")
    throw ConfigError("propagate.features must be encoder or oracle");
  if (propagate.kind != "mask" && propagate.kind != "keypoint" && propagate.kind != "texture")
    throw ConfigError("propagate.kind must be mask, keypoint or texture");
  if (propagate.split != "eval" && propagate.split != "same_color" && propagate.split != "train")
    throw ConfigError("propagate.split must be eval, same_color or train");
}

RunConfig profile_config(const std::string& profile) {
  RunConfig c;
  if (profile == "full") return c;
  if (profile != "smoke") throw ConfigError("unknown profile '" + profile + "' (smoke|full)");
  c.corpus.train_videos = 4;
  c.corpus.eval_videos = 2;
  c.corpus.same_color_videos = 2;
  c.color.pretrain.epochs = 2;
  c.train.warmup_epochs = 1;
  c.train.joint_epochs = 1;
  c.train.pairs_per_video = 4;
  return c;
}

namespace {

const char* mode_name(PropagationMode m) { return m == PropagationMode::track ? "track" : "global"; }

void check_keys(const json& j, const std::string& where, const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

void read(const json& j, const std::string& where, const char* key, std::size_t& dst) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_unsigned()) throw ConfigError(where + "." + key + ": expected a nonnegative integer");
  dst = v.get<std::size_t>();
}

void read(const json& j, const std::string& where, const char* key, double& dst) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
  dst = v.get<double>();
}

void read(const json& j, const std::string& where, const char* key, bool& dst) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_boolean()) throw ConfigError(where + "." + key + ": expected true or false");
  dst = v.get<bool>();
}

void read(const json& j, const std::string& where, const char* key, std::string& dst) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_string()) throw ConfigError(where + "." + key + ": expected a string");
  dst = v.get<std::string>();
}

PropagationMode parse_mode(const std::string& s) {
  if (s == "global") return PropagationMode::global;
  if (s == "track") return PropagationMode::track;
  throw ConfigError("mode must be global or track, got '" + s + "'");
}

}  // namespace

json to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  const PretrainConfig& p = c.color.pretrain;
  const PropagationConfig& g = c.propagate.propagation;
  return {
      {"seed", c.seed},
      {"corpus",
       {{"train_videos", c.corpus.train_videos},
        {"eval_videos", c.corpus.eval_videos},
        {"same_color_videos", c.corpus.same_color_videos},
        {"scene", to_json(c.corpus.scene)}}},
      {"color",
       {{"epochs", p.epochs},
        {"lr", p.lr},
        {"batch_size", p.batch_size},
        {"crop", p.crop},
        {"latent_channels", p.model.latent_channels},
        {"hidden_channels", p.model.hidden_channels},
        {"negative_slope", p.model.negative_slope},
        {"frame_stride", c.color.frame_stride}}},
      {"train",
       {{"warmup_epochs", t.warmup_epochs},
        {"joint_epochs", t.joint_epochs},
        {"lr_warmup", t.lr_warmup},
        {"lr_joint", t.lr_joint},
        {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
        {"batch_size", t.batch_size},
        {"patch", t.patch},
        {"max_gap", t.max_gap},
        {"pairs_per_video", t.pairs_per_video},
        {"weights",
         {{"reconstruction", t.weights.reconstruction},
          {"concentration_region", t.weights.concentration_region},
          {"concentration_local", t.weights.concentration_local},
          {"orthogonal_location", t.weights.orthogonal_location},
          {"orthogonal_feature", t.weights.orthogonal_feature}}},
        {"local_grid", t.local_grid},
        {"temperature", t.temperature},
        {"clip_norm", t.clip_norm},
        {"use_localization", t.use_localization},
        {"encoder",
         {{"out_channels", t.encoder.out_channels},
          {"negative_slope", t.encoder.negative_slope},
          {"feature_scale", t.encoder.feature_scale}}}}},
      {"propagate",
       {{"k_frames", g.k_frames},
        {"k_nn", g.k_nn},
        {"temperature", g.temperature},
        {"mode", mode_name(g.mode)},
        {"track_margin", g.track_margin},
        {"bandwidth", g.bandwidth},
        {"features", c.propagate.features},
        {"kind", c.propagate.kind},
        {"split", c.propagate.split}}},
  };
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  check_keys(j, "config", {"seed", "corpus", "color", "train", "propagate"});
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ConfigError("config.seed: expected a nonnegative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("corpus")) {
    const json& s = j["corpus"];
    check_keys(s, "corpus", {"train_videos", "eval_videos", "same_color_videos", "scene"});
    read(s, "corpus", "train_videos", c.corpus.train_videos);
    read(s, "corpus", "eval_videos", c.corpus.eval_videos);
    read(s, "corpus", "same_color_videos", c.corpus.same_color_videos);
    if (s.contains("scene")) {
      const json defaults = to_json(SceneSpec{});
      std::set<std::string> known;
      for (const auto& [k, v] : defaults.items()) known.insert(k);
      check_keys(s["scene"], "corpus.scene", known);
      json merged = to_json(c.corpus.scene);
      merged.update(s["scene"]);
      c.corpus.scene = scene_spec_from_json(merged);
    }
  }
  if (j.contains("color")) {
    const json& s = j["color"];
    const std::string w = "color";
    check_keys(s, w, {"epochs", "lr", "batch_size", "crop", "latent_channels", "hidden_channels", "negative_slope",
                      "frame_stride"});
    PretrainConfig& p = c.color.pretrain;
    read(s, w, "epochs", p.epochs);
    read(s, w, "lr", p.lr);
    read(s, w, "batch_size", p.batch_size);
    read(s, w, "crop", p.crop);
    read(s, w, "latent_channels", p.model.latent_channels);
    read(s, w, "hidden_channels", p.model.hidden_channels);
    read(s, w, "negative_slope", p.model.negative_slope);
    read(s, w, "frame_stride", c.color.frame_stride);
  }
  if (j.contains("train")) {
    const json& s = j["train"];
    const std::string w = "train";
    check_keys(s, w, {"warmup_epochs", "joint_epochs", "lr_warmup", "lr_joint", "adam", "batch_size", "patch",
                      "max_gap", "pairs_per_video", "weights", "local_grid", "temperature", "clip_norm",
                      "use_localization", "encoder"});
    TrainConfig& t = c.train;
    read(s, w, "warmup_epochs", t.warmup_epochs);
    read(s, w, "joint_epochs", t.joint_epochs);
    read(s, w, "lr_warmup", t.lr_warmup);
    read(s, w, "lr_joint", t.lr_joint);
    read(s, w, "batch_size", t.batch_size);
    read(s, w, "patch", t.patch);
    read(s, w, "max_gap", t.max_gap);
    read(s, w, "pairs_per_video", t.pairs_per_video);
    read(s, w, "local_grid", t.local_grid);
    read(s, w, "temperature", t.temperature);
    read(s, w, "clip_norm", t.clip_norm);
    read(s, w, "use_localization", t.use_localization);
    if (s.contains("adam")) {
      const json& a = s["adam"];
      check_keys(a, "train.adam", {"beta1", "beta2", "eps"});
      read(a, "train.adam", "beta1", t.adam.beta1);
      read(a, "train.adam", "beta2", t.adam.beta2);
      read(a, "train.adam", "eps", t.adam.eps);
    }
    if (s.contains("weights")) {
      const json& a = s["weights"];
      const std::string ww = "train.weights";
      check_keys(a, ww, {"reconstruction", "concentration_region", "concentration_local", "orthogonal_location",
                         "orthogonal_feature"});
      read(a, ww, "reconstruction", t.weights.reconstruction);
      read(a, ww, "concentration_region", t.weights.concentration_region);
      read(a, ww, "concentration_local", t.weights.concentration_local);
      read(a, ww, "orthogonal_location", t.weights.orthogonal_location);
      read(a, ww, "orthogonal_feature", t.weights.orthogonal_feature);
    }
    if (s.contains("encoder")) {
      const json& a = s["encoder"];
      check_keys(a, "train.encoder", {"out_channels", "negative_slope", "feature_scale"});
      read(a, "train.encoder", "out_channels", t.encoder.out_channels);
      read(a, "train.encoder", "negative_slope", t.encoder.negative_slope);
      read(a, "train.encoder", "feature_scale", t.encoder.feature_scale);
    }
  }
  if (j.contains("propagate")) {
    const json& s = j["propagate"];
    const std::string w = "propagate";
    check_keys(s, w, {"k_frames", "k_nn", "temperature", "mode", "track_margin", "bandwidth", "features", "kind",
                      "split"});
    PropagationConfig& g = c.propagate.propagation;
    read(s, w, "k_frames", g.k_frames);
    read(s, w, "k_nn", g.k_nn);
    read(s, w, "temperature", g.temperature);
    std::string mode = mode_name(g.mode);
    read(s, w, "mode", mode);
    g.mode = parse_mode(mode);
    read(s, w, "track_margin", g.track_margin);
    read(s, w, "bandwidth", g.bandwidth);
    read(s, w, "features", c.propagate.features);
    read(s, w, "kind", c.propagate.kind);
    read(s, w, "split", c.propagate.split);
  }
  return c;
}

SceneSpec same_color_spec(const SceneSpec& base) {
  SceneSpec s = base;
  s.min_sprites = s.max_sprites = 2;
  s.same_color = true;
  return s;
}

std::uint64_t video_seed(std::uint64_t seed, const std::string& split, std::size_t index) {
  std::uint64_t offset = 0;
  if (split == "eval")
    offset = 100000;
  else if (split == "same_color")
    offset = 200000;
  else if (split != "train")
    throw ParameterError("unknown split '" + split + "'");
  return seed * 1000000 + offset + index;
}

fs::path video_dir(const fs::path& out, const std::string& split, std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "video_%03zu", index);
  return out / "corpus" / split / name;
}

fs::path propagation_dir(const fs::path& out, const PropagateOptions& o) {
  return out / "propagate" /
         (o.split + "_" + o.features + "_" + mode_name(o.propagation.mode) + "_" + o.kind);
}

Checkpoint color_checkpoint(const ColorAutoencoder& ae) {
  Checkpoint c = params_to_checkpoint(ae.parameters());
  c.add("meta.latent_channels", Tensor::scalar(static_cast<double>(ae.config().latent_channels)));
  c.add("meta.hidden_channels", Tensor::scalar(static_cast<double>(ae.config().hidden_channels)));
  c.add("meta.negative_slope", Tensor::scalar(ae.config().negative_slope));
  return c;
}

ColorAutoencoder load_color_autoencoder(const fs::path& path) {
  const Checkpoint c = load_checkpoint(path);
  ColorAutoencoderConfig cfg;
  cfg.latent_channels = static_cast<std::size_t>(c.get("meta.latent_channels").item());
  cfg.hidden_channels = static_cast<std::size_t>(c.get("meta.hidden_channels").item());
  cfg.negative_slope = c.get("meta.negative_slope").item();
  ColorAutoencoder ae(cfg);
  load_params(ae.parameters(), c);
  ae.freeze();
  return ae;
}

// ---- commands ----

namespace {

struct Context {
  RunConfig config;
  fs::path out;
  std::ostream& log;
};

void write_text_atomic(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

void echo_config(Context& ctx, const std::string& command) {
  const std::string text = to_json(ctx.config).dump(2) + "\n";
  ctx.log << "effective config (" << command << "):\n" << text;
  write_text_atomic(ctx.out / (command + ".config.json"), text);
}

std::size_t split_size(const RunConfig& c, const std::string& split) {
  if (split == "train") return c.corpus.train_videos;
  if (split == "eval") return c.corpus.eval_videos;
  return c.corpus.same_color_videos;
}

void require_video(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json"))
    throw MissingDependency("missing video " + dir.string() + "; run `aftk gen` first");
}

int cmd_gen(Context& ctx) {
  const RunConfig& c = ctx.config;
  const SceneSpec same = same_color_spec(c.corpus.scene);
  same.validate();
  std::size_t written = 0;
  for (const std::string split : {"train", "eval", "same_color"}) {
    const SceneSpec& spec = split == "same_color" ? same : c.corpus.scene;
    for (std::size_t i = 0; i < split_size(c, split); ++i) {
      write_video(video_dir(ctx.out, split, i), generate_scene(spec, video_seed(c.seed, split, i)));
      ++written;
    }
  }
  ctx.log << "wrote " << written << " videos to " << (ctx.out / "corpus").string() << "\n";
  return kExitOk;
}

int cmd_pretrain_color(Context& ctx) {
  const RunConfig& c = ctx.config;
  std::vector<Tensor> images;
  for (std::size_t i = 0; i < c.corpus.train_videos; ++i) {
    const fs::path dir = video_dir(ctx.out, "train", i);
    require_video(dir);
    const LoadedVideo v = read_video(dir);
    for (std::size_t t = 0; t < v.frames.size(); t += c.color.frame_stride) images.push_back(lab_from_rgb(v.frames[t]));
  }
  PretrainConfig p = c.color.pretrain;
  p.seed = c.seed;
  const PretrainResult r = pretrain_color_autoencoder(images, p);
  double mse = 0.0;
  for (const Tensor& im : images) mse += reconstruction_mse(r.model, im);
  mse /= static_cast<double>(images.size());
  save_checkpoint(ctx.out / "color" / "color_ae.ckpt", color_checkpoint(r.model));
  const json report{{"images", images.size()}, {"epoch_loss", r.epoch_loss}, {"reconstruction_mse", mse}};
  write_text_atomic(ctx.out / "color" / "pretrain.json", report.dump(2) + "\n");
  ctx.log << "color model: " << images.size() << " images, reconstruction MSE " << mse << "\n";
  return kExitOk;
}

std::vector<TrainingVideo> training_corpus(const Context& ctx) {
  const fs::path ae_path = ctx.out / "color" / "color_ae.ckpt";
  if (!fs::exists(ae_path))
    throw MissingDependency("missing color model " + ae_path.string() + "; run `aftk pretrain-color` first");
  const ColorAutoencoder ae = load_color_autoencoder(ae_path);
  std::vector<TrainingVideo> corpus;
  for (std::size_t i = 0; i < ctx.config.corpus.train_videos; ++i) {
    const fs::path dir = video_dir(ctx.out, "train", i);
    require_video(dir);
    corpus.push_back(prepare_video(read_video(dir).frames, ae));
  }
  standardize_color(corpus, color_statistics(corpus));
  return corpus;
}

int cmd_train(Context& ctx, bool resume) {
  const std::vector<TrainingVideo> corpus = training_corpus(ctx);
  TrainConfig t = ctx.config.train;
  t.seed = ctx.config.seed;
  const auto start = std::chrono::steady_clock::now();
  std::size_t last_epoch = SIZE_MAX;
  const TrainResult r = run_training(corpus, t, TrainOutputs{ctx.out / "train", resume}, [&](const StepRecord& s) {
    if (s.epoch == last_epoch) return;
    last_epoch = s.epoch;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ctx.log << "epoch " << s.epoch << " (" << stage_name(s.stage) << ") step " << s.step << " loss " << s.total
            << " [" << secs << " s]\n";
  });
  ctx.log << "trained " << r.epochs_completed << " epochs, " << r.log.size() << " steps; encoder at "
          << (ctx.out / "train" / "encoder.ckpt").string() << "\n";
  return kExitOk;
}

Tensor cell_mean_rgb(const Image& frame) {
  const Grid g{frame.height / kFeatureStride, frame.width / kFeatureStride};
  Tensor out({3, g.cells()});
  const double norm = 255.0 * static_cast<double>(kFeatureStride * kFeatureStride);
  for (std::size_t y = 0; y < frame.height; ++y)
    for (std::size_t x = 0; x < frame.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.at(c, g.index(x / kFeatureStride, y / kFeatureStride)) += frame.at(y, x, c) / norm;
  return out;
}

Image texture_image(const Tensor& rgb, Grid g) {
  Tensor pixels({3, g.height * kFeatureStride, g.width * kFeatureStride});
  const std::size_t w = g.width * kFeatureStride, n = pixels.size() / 3;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < n; ++i)
      pixels[c * n + i] = std::clamp(rgb.at(c, g.index((i % w) / kFeatureStride, (i / w) / kFeatureStride)), 0.0, 1.0);
  return rgb_from_tensor(pixels);
}

json propagate_video_dir(const Context& ctx, const fs::path& dir, const fs::path& dest, const ConvEncoder* encoder) {
  const PropagateOptions& o = ctx.config.propagate;
  const LoadedVideo v = read_video(dir);
  if (v.frames.empty()) throw IoError("video without frames: " + dir.string());
  const Grid grid{v.frames[0].height / kFeatureStride, v.frames[0].width / kFeatureStride};
  std::vector<Tensor> features;
  if (encoder) {
    for (const Image& f : v.frames) features.push_back(frame_features(f, *encoder));
  } else {
    const Scene s = regenerate_scene(dir);
    for (std::size_t t = 0; t < s.frames.size(); ++t) features.push_back(oracle_features(s, t).values.value());
  }
  json rec{{"video", dir.filename().string()}};
  fs::create_directories(dest);

  if (o.kind == "mask") {
    std::vector<std::vector<std::size_t>> truth;
    for (const Image& m : v.masks) truth.push_back(cell_labels(m));
    const PropagationResult r = propagate_video(features, grid, mask_labels(truth[0], v.num_objects, grid), o.propagation);
    std::vector<std::vector<std::size_t>> pred;
    for (const LabelMap& l : r.labels) pred.push_back(hard_labels(l));
    std::vector<FrameMetrics> per_frame;
    for (std::size_t t = 0; t < pred.size(); ++t) {
      const std::vector<std::vector<std::size_t>> p{pred[t]}, q{truth[t]};
      per_frame.push_back({metric_jaccard(p, q, v.num_objects, 0).mean, mean_boundary_f(p, q, v.num_objects, grid, 0)});
    }
    write_mask_predictions(dest, pred, grid, per_frame);
    const JaccardResult j = metric_jaccard(pred, truth, v.num_objects);
    rec["j_mean"] = j.mean;
    rec["j_recall"] = j.recall;
    rec["f_mean"] = mean_boundary_f(pred, truth, v.num_objects, grid);
    rec["events"] = r.events;
  } else if (o.kind == "keypoint") {
    if (v.keypoints.empty() || v.keypoints[0].empty()) throw IoError("video without keypoints: " + dir.string());
    const PropagationResult r = propagate_video(features, grid, keypoint_heatmaps(v.keypoints[0], grid), o.propagation);
    std::vector<std::vector<std::optional<Point2>>> joints;
    double pck1 = 0.0, pck2 = 0.0;
    for (std::size_t t = 0; t < r.labels.size(); ++t) {
      joints.push_back(heatmaps_to_joints(r.labels[t]));
      if (t == 0) continue;
      const auto p = metric_pck(joints.back(), v.keypoints[t], {0.1, 0.2}, pck_norm(v.keypoints[t]));
      pck1 += p[0];
      pck2 += p[1];
    }
    write_keypoint_predictions(dest / "keypoints.txt", joints);
    const double n = static_cast<double>(r.labels.size() - 1);
    rec["pck_0.1"] = pck1 / n;
    rec["pck_0.2"] = pck2 / n;
  } else {
    LabelMap first{LabelKind::texture, cell_mean_rgb(v.frames[0]), grid};
    const PropagationResult r = propagate_video(features, grid, first, o.propagation);
    double mae = 0.0;
    for (std::size_t t = 0; t < r.labels.size(); ++t) {
      char name[32];
      std::snprintf(name, sizeof name, "pred_%03zu.png", t);
      write_png(dest / name, texture_image(r.labels[t].values, grid), PngKind::rgb);
      if (t == 0) continue;
      const Tensor truth = cell_mean_rgb(v.frames[t]);
      double e = 0.0;
      for (std::size_t i = 0; i < truth.size(); ++i) e += std::abs(truth[i] - r.labels[t].values[i]);
      mae += e / static_cast<double>(truth.size());
    }
    rec["rgb_mae"] = mae / static_cast<double>(r.labels.size() - 1);
  }
  return rec;
}

int cmd_propagate(Context& ctx) {
  const PropagateOptions& o = ctx.config.propagate;
  std::optional<ConvEncoder> encoder;
  if (o.features == "encoder") {
    const fs::path p = ctx.out / "train" / "encoder.ckpt";
    if (!fs::exists(p)) throw MissingDependency("missing encoder " + p.string() + "; run `aftk train` first");
    encoder = load_encoder(p, ctx.config.train.encoder);
  }
  const fs::path dest = propagation_dir(ctx.out, o);
  json videos = json::array();
  std::map<std::string, double> sums;
  const std::size_t n = split_size(ctx.config, o.split);
  for (std::size_t i = 0; i < n; ++i) {
    const fs::path dir = video_dir(ctx.out, o.split, i);
    require_video(dir);
    json rec = propagate_video_dir(ctx, dir, dest / dir.filename(), encoder ? &*encoder : nullptr);
    for (const auto& [k, v] : rec.items())
      if (v.is_number()) sums[k] += v.get<double>();
    videos.push_back(std::move(rec));
  }
  json mean = json::object();
  for (const auto& [k, s] : sums) mean[k] = n ? s / static_cast<double>(n) : 0.0;
  const json manifest{{"format", "aftk-propagation-1"}, {"config", to_json(ctx.config)}, {"videos", videos},
                      {"mean", mean}};
  write_text_atomic(dest / "metrics.json", manifest.dump(2) + "\n");
  ctx.log << "propagated " << n << " videos (" << o.kind << ", " << o.features << ", "
          << mode_name(o.propagation.mode) << "): mean " << mean.dump() << "\n";
  return kExitOk;
}

// Re-scores every mask propagation run on disk from its prediction images.
int cmd_evaluate(Context& ctx) {
  const fs::path root = ctx.out / "propagate";
  if (!fs::exists(root)) throw MissingDependency("no propagation results in " + root.string() + "; run `aftk propagate` first");
  std::vector<fs::path> runs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "metrics.json")) runs.push_back(e.path());
  std::sort(runs.begin(), runs.end());
  json report = json::object();
  for (const fs::path& run : runs) {
    std::ifstream in(run / "metrics.json");
    const json m = json::parse(in);
    const RunConfig rc = run_config_from_json(m.at("config"));
    if (rc.propagate.kind != "mask") continue;
    double j = 0.0, f = 0.0, js = 0.0;
    std::size_t n = 0;
    for (const json& v : m.at("videos")) {
      const std::string name = v.at("video").get<std::string>();
      const LoadedVideo video = read_video(ctx.out / "corpus" / rc.propagate.split / name);
      const Grid grid{video.frames[0].height / kFeatureStride, video.frames[0].width / kFeatureStride};
      std::vector<std::vector<std::size_t>> truth, pred;
      for (std::size_t t = 0; t < video.masks.size(); ++t) {
        truth.push_back(cell_labels(video.masks[t]));
        char file[32];
        std::snprintf(file, sizeof file, "pred_%03zu.png", t);
        pred.push_back(cell_labels_of(read_png(run / name / file)));
      }
      const std::vector<std::vector<std::size_t>> copy(truth.size(), truth[0]);
      j += metric_jaccard(pred, truth, video.num_objects).mean;
      f += mean_boundary_f(pred, truth, video.num_objects, grid);
      js += metric_jaccard(copy, truth, video.num_objects).mean;
      ++n;
    }
    if (n == 0) continue;
    const double d = static_cast<double>(n);
    report[run.filename().string()] = {{"videos", n}, {"j_mean", j / d}, {"f_mean", f / d}, {"static_j_mean", js / d}};
    ctx.log << run.filename().string() << ": J " << j / d << " F " << f / d << " (static copy J " << js / d << ")\n";
  }
  write_text_atomic(ctx.out / "evaluation.json", report.dump(2) + "\n");
  return kExitOk;
}

int cmd_gradcheck(Context& ctx, std::size_t points, bool inject_faulty) {
  std::vector<GradCheckCase> cases = gradcheck_registry();
  if (inject_faulty) cases.push_back(faulty_gradcheck_case());
  const auto reports = run_gradcheck(cases, points, ctx.config.seed);
  json j = json::array();
  std::vector<std::string> failed;
  for (const GradCheckReport& r : reports) {
    char line[160];
    std::snprintf(line, sizeof line, "%-36s max_rel_error %.3e  points %zu  %s\n", r.name.c_str(), r.max_rel_error,
                  r.points, r.passed ? "ok" : "FAILED");
    ctx.log << line;
    j.push_back({{"name", r.name}, {"max_rel_error", r.max_rel_error}, {"points", r.points}, {"passed", r.passed}});
    if (!r.passed) failed.push_back(r.name);
  }
  write_text_atomic(ctx.out / "gradcheck.json", j.dump(2) + "\n");
  if (failed.empty()) return kExitOk;
  std::string names;
  for (const auto& n : failed) names += (names.empty() ? "" : ", ") + n;
  throw NumericError("gradient check failed for: " + names);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"aftk: self-supervised dense correspondence on synthetic sprite videos"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  std::string config_path, out_dir = "aftk_run", profile = "full", mode, features, kind, split;
  std::optional<std::uint64_t> seed;
  bool resume = false, inject_faulty = false;
  std::size_t points = 100;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Seed for every random choice of the run");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--profile", profile, "smoke|full")->check(CLI::IsMember({"smoke", "full"}));
  app.add_option("--mode", mode, "Propagation mode")->check(CLI::IsMember({"global", "track"}));
  auto* gen = app.add_subcommand("gen", "Render the synthetic corpus");
  auto* pre = app.add_subcommand("pretrain-color", "Train the frozen color autoencoder");
  auto* train = app.add_subcommand("train", "Train the feature encoder");
  train->add_flag("--resume", resume, "Continue from the newest epoch checkpoint");
  auto* prop = app.add_subcommand("propagate", "Propagate first-frame labels through a split");
  prop->add_option("--features", features, "encoder|oracle")->check(CLI::IsMember({"encoder", "oracle"}));
  prop->add_option("--kind", kind, "mask|keypoint|texture")->check(CLI::IsMember({"mask", "keypoint", "texture"}));
  prop->add_option("--split", split, "eval|same_color|train")->check(CLI::IsMember({"eval", "same_color", "train"}));
  auto* eval = app.add_subcommand("evaluate", "Score the propagation results in --out");
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  grad->add_option("--points", points, "Random points per op");
  grad->add_flag("--inject-faulty", inject_faulty, "Add an op with a deliberately wrong gradient");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    RunConfig config = profile_config(profile);
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError(config_path + ": " + e.what());
      }
      config = run_config_from_json(j, config);
    }
    if (seed) config.seed = *seed;
    if (!mode.empty()) config.propagate.propagation.mode = parse_mode(mode);
    if (!features.empty()) config.propagate.features = features;
    if (!kind.empty()) config.propagate.kind = kind;
    if (!split.empty()) config.propagate.split = split;
    config.validate();

    Context ctx{config, fs::path(out_dir), out};
    const std::string name = app.get_subcommands().front()->get_name();
    echo_config(ctx, name);
    if (gen->parsed()) return cmd_gen(ctx);
    if (pre->parsed()) return cmd_pretrain_color(ctx);
    if (train->parsed()) return cmd_train(ctx, resume);
    if (prop->parsed()) return cmd_propagate(ctx);
    if (eval->parsed()) return cmd_evaluate(ctx);
    if (grad->parsed()) return cmd_gradcheck(ctx, points, inject_faulty);
    return kExitFailure;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingDependency& e) {
    err << "missing dependency: " << e.what() << "\n";
    return kExitMissing;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace aftk
