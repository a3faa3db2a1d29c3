// SPDX-License-Identifier: Apache-2.0
#include "aftk/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "aftk/errors.hpp"
#include "aftk/localization.hpp"
#include "aftk/ops.hpp"

namespace aftk {

namespace {

using json = nlohmann::json;

std::size_t cells_of(std::size_t px) { return px / kFeatureStride; }

std::vector<std::size_t> box_cells(const PixelBox& box, Grid grid) {
  const std::size_t cx0 = cells_of(box.x0), cy0 = cells_of(box.y0), n = cells_of(box.size);
  std::vector<std::size_t> idx;
  idx.reserve(n * n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) idx.push_back(grid.index(cx0 + x, cy0 + y));
  return idx;
}

std::string epoch_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03zu.ckpt", epoch);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (patch == 0 || patch % kFeatureStride != 0) throw ConfigError("patch size must be a positive multiple of 8");
  if (!(lr_warmup > 0.0) || !(lr_joint > 0.0)) throw ConfigError("learning rates must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (max_gap == 0) throw ConfigError("max frame gap must be at least 1");
  if (pairs_per_video == 0) throw ConfigError("pairs per video must be positive");
  if (local_grid == 0) throw ConfigError("local concentration grid must be positive");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0))
    throw ConfigError("invalid Adam hyperparameters");
  for (double w : {weights.reconstruction, weights.concentration_region, weights.concentration_local,
                   weights.orthogonal_location, weights.orthogonal_feature})
    if (!(w >= 0.0)) throw ConfigError("loss weights must be nonnegative");
}

TrainingVideo prepare_video(const std::vector<Image>& frames, const ColorAutoencoder& ae) {
  if (frames.empty()) throw ParameterError("prepare_video: no frames");
  TrainingVideo v;
  for (const Image& img : frames) {
    if (img.height % kFeatureStride != 0 || img.width % kFeatureStride != 0)
      throw DimensionError("prepare_video: frame size must be divisible by 8");
    if (img.height != frames.front().height || img.width != frames.front().width)
      throw DimensionError("prepare_video: frames differ in size");
    const Tensor lab = lab_from_rgb(img);
    v.gray.push_back(gray_from_lab(lab));
    v.color.push_back(encode_color(lab, ae));
  }
  v.grid = Grid{frames.front().height / kFeatureStride, frames.front().width / kFeatureStride};
  return v;
}

ColorStats color_statistics(const std::vector<TrainingVideo>& corpus) {
  if (corpus.empty() || corpus.front().color.empty()) throw ParameterError("color_statistics: empty corpus");
  const std::size_t c = corpus.front().color.front().rows();
  ColorStats st{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  std::vector<double> sq(c, 0.0);
  double count = 0.0;
  for (const TrainingVideo& v : corpus)
    for (const Tensor& t : v.color) {
      if (t.rows() != c) throw DimensionError("color_statistics: latent channel counts differ");
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t j = 0; j < t.cols(); ++j) {
          st.mean[ch] += t.at(ch, j);
          sq[ch] += t.at(ch, j) * t.at(ch, j);
        }
      count += static_cast<double>(t.cols());
    }
  for (std::size_t ch = 0; ch < c; ++ch) {
    st.mean[ch] /= count;
    st.stddev[ch] = std::sqrt(std::max(0.0, sq[ch] / count - st.mean[ch] * st.mean[ch]));
  }
  return st;
}

void standardize_color(std::vector<TrainingVideo>& corpus, const ColorStats& stats) {
  for (TrainingVideo& v : corpus)
    for (Tensor& t : v.color) {
      if (t.rows() != stats.mean.size()) throw DimensionError("standardize_color: latent channel counts differ");
      for (std::size_t ch = 0; ch < t.rows(); ++ch) {
        const double sd = stats.stddev[ch] > 0.0 ? stats.stddev[ch] : 1.0;
        for (std::size_t j = 0; j < t.cols(); ++j) t.at(ch, j) = (t.at(ch, j) - stats.mean[ch]) / sd;
      }
    }
}

PairSample sample_pair(const TrainingVideo& video, std::size_t video_index, Stage stage, const TrainConfig& config,
                       std::mt19937_64& rng) {
  const std::size_t t = video.frames();
  if (t < 2) throw SamplingError("sample_pair: video needs at least two frames");
  if (config.patch > video.height() || config.patch > video.width())
    throw SamplingError("sample_pair: patch larger than the frame");
  const std::size_t max_gap = std::min(config.max_gap, t - 1);
  const std::size_t gap = std::uniform_int_distribution<std::size_t>(1, max_gap)(rng);
  const std::size_t ref = std::uniform_int_distribution<std::size_t>(0, t - 1 - gap)(rng);
  const std::size_t pc = cells_of(config.patch);
  const std::size_t cx = std::uniform_int_distribution<std::size_t>(0, video.grid.width - pc)(rng);
  const std::size_t cy = std::uniform_int_distribution<std::size_t>(0, video.grid.height - pc)(rng);
  PairSample s;
  s.video = video_index;
  s.reference = ref;
  s.target = ref + gap;
  s.box = PixelBox{cx * kFeatureStride, cy * kFeatureStride, config.patch};
  s.stage = stage;
  return s;
}

Tensor crop_pixels(const Tensor& gray, const PixelBox& box) {
  const std::size_t h = gray.dim(1), w = gray.dim(2);
  if (box.size == 0 || box.x0 + box.size > w || box.y0 + box.size > h)
    throw DimensionError("crop_pixels: box outside the image");
  Tensor out({1, box.size, box.size});
  for (std::size_t y = 0; y < box.size; ++y)
    std::copy_n(gray.data() + (box.y0 + y) * w + box.x0, box.size, out.data() + y * box.size);
  return out;
}

LossTerms sample_losses(const ConvEncoder& encoder, const TrainingVideo& video, const PairSample& sample,
                        const TrainConfig& config) {
  const std::size_t pc = cells_of(sample.box.size);
  const auto idx = box_cells(sample.box, video.grid);
  const FeatureMap p1 = encoder.encode(Var::constant(crop_pixels(video.gray[sample.reference], sample.box)));
  const Var c1 = Var::constant(video.color[sample.reference]);
  const Var c1p = ops::select_columns(c1, idx);

  FeatureMap p2;
  Var c2p;
  std::optional<Var> region;
  const bool localize = sample.stage == Stage::joint && config.use_localization;
  if (localize) {
    const FeatureMap f2 = encoder.encode(Var::constant(video.gray[sample.target]));
    LocalizeConfig lc;
    lc.temperature = config.temperature;
    const Localization loc = localize_patch(p1, f2, lc);
    p2 = roi_crop(f2, loc.box, pc, pc);
    const FeatureMap color2 = make_feature_map(Var::constant(video.color[sample.target]), video.grid);
    c2p = roi_crop(color2, loc.box, pc, pc).values;
    region = concentration_truncated(loc.traced, loc.box.center, loc.box.half);
  } else {
    p2 = encoder.encode(Var::constant(crop_pixels(video.gray[sample.target], sample.box)));
    c2p = ops::select_columns(Var::constant(video.color[sample.target]), idx);
  }

  const AffinityMatrix a12 = compute_affinity(p1, p2, config.temperature);
  const AffinityMatrix a21 = compute_affinity(p2, p1, config.temperature);
  LossTerms t;
  t.reconstruction = reconstruction_loss(c1p, c2p, a12);
  t.concentration_region = region;
  t.concentration_local = concentration_local(trace_locations(canonical_grid(p2.grid), a21), config.local_grid);
  t.orthogonal_location = orthogonal_cycle_location(canonical_grid(p1.grid), a12);
  t.orthogonal_feature = orthogonal_cycle_feature(c1p, a12);
  return t;
}

StepResult train_step(ConvEncoder& encoder, Adam& adam, const std::vector<TrainingVideo>& corpus,
                      const std::vector<PairSample>& batch, double lr, const TrainConfig& config) {
  if (batch.empty()) throw ParameterError("train_step: empty batch");
  if (!(lr >= 0.0)) throw ParameterError("train_step: negative learning rate");
  std::vector<Var> totals;
  LossBreakdown mean;
  mean.weights = config.weights;
  for (const PairSample& s : batch) {
    if (s.video >= corpus.size()) throw ParameterError("train_step: sample refers to a missing video");
    const LossBreakdown b = total_loss(s.stage, sample_losses(encoder, corpus[s.video], s, config), config.weights);
    totals.push_back(ops::reshape(b.total, {1, 1}));
    mean.reconstruction += b.reconstruction;
    mean.concentration_region += b.concentration_region;
    mean.concentration_local += b.concentration_local;
    mean.orthogonal_location += b.orthogonal_location;
    mean.orthogonal_feature += b.orthogonal_feature;
  }
  const double n = static_cast<double>(batch.size());
  mean.reconstruction /= n;
  mean.concentration_region /= n;
  mean.concentration_local /= n;
  mean.orthogonal_location /= n;
  mean.orthogonal_feature /= n;
  mean.total = ops::mean(ops::concat_rows(totals));
  mean.total_value = mean.total.item();

  const auto params = param_vars(encoder.parameters());
  zero_grads(params);
  backward(mean.total);
  StepResult r;
  r.grad_norm = clip_grad_norm(params, config.clip_norm);
  if (!std::isfinite(r.grad_norm)) throw NumericError("train_step: non-finite gradient");
  adam.step(lr);
  r.losses = std::move(mean);
  return r;
}

std::string to_json_line(const StepRecord& rec) {
  json j;
  j["step"] = rec.step;
  j["epoch"] = rec.epoch;
  j["stage"] = std::string(stage_name(rec.stage));
  j["reconstruction"] = rec.reconstruction;
  j["concentration_region"] = rec.concentration_region;
  j["concentration_local"] = rec.concentration_local;
  j["orthogonal_location"] = rec.orthogonal_location;
  j["orthogonal_feature"] = rec.orthogonal_feature;
  j["total"] = rec.total;
  j["grad_norm"] = rec.grad_norm;
  return j.dump();
}

StepRecord step_record_from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    StepRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.epoch = j.at("epoch").get<std::size_t>();
    r.stage = parse_stage(j.at("stage").get<std::string>());
    r.reconstruction = j.at("reconstruction").get<double>();
    r.concentration_region = j.at("concentration_region").get<double>();
    r.concentration_local = j.at("concentration_local").get<double>();
    r.orthogonal_location = j.at("orthogonal_location").get<double>();
    r.orthogonal_feature = j.at("orthogonal_feature").get<double>();
    r.total = j.at("total").get<double>();
    r.grad_norm = j.at("grad_norm").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed training log record: ") + e.what());
  }
}

std::vector<StepRecord> read_training_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<StepRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(step_record_from_json(line));
  return out;
}

Checkpoint training_checkpoint(const ConvEncoder& encoder, const Adam& adam, std::size_t epoch, std::size_t step) {
  Checkpoint c = params_to_checkpoint(encoder.parameters());
  c.merge(adam.state(), "adam.");
  c.add("meta.epoch", Tensor::scalar(static_cast<double>(epoch)));
  c.add("meta.step", Tensor::scalar(static_cast<double>(step)));
  c.add("meta.feature_scale", Tensor::scalar(encoder.config().feature_scale));
  c.add("meta.negative_slope", Tensor::scalar(encoder.config().negative_slope));
  return c;
}

ConvEncoder load_encoder(const std::filesystem::path& path, EncoderConfig config) {
  const Checkpoint c = load_checkpoint(path);
  config.out_channels = c.get("encoder.conv2.weight").dim(0);
  if (const Tensor* t = c.find("meta.feature_scale")) config.feature_scale = t->item();
  if (const Tensor* t = c.find("meta.negative_slope")) config.negative_slope = t->item();
  ConvEncoder enc(config, 0);
  load_params(enc.parameters(), c);
  return enc;
}

TrainResult run_training(const std::vector<TrainingVideo>& corpus, const TrainConfig& config,
                         const std::optional<TrainOutputs>& outputs,
                         const std::function<void(const StepRecord&)>& on_step) {
  config.validate();
  const std::size_t total_epochs = config.warmup_epochs + config.joint_epochs;
  if (total_epochs > 0 && corpus.empty()) throw ParameterError("run_training: empty corpus");

  TrainResult result{ConvEncoder(config.encoder, config.seed), {}, 0};
  const auto params = param_vars(result.encoder.parameters());
  Adam adam(params, config.adam);
  std::size_t step = 0, first_epoch = 0;

  std::ofstream log;
  std::filesystem::path last_good;
  if (outputs) {
    std::filesystem::create_directories(outputs->dir);
    const auto log_path = outputs->dir / "train_log.jsonl";
    if (outputs->resume) {
      for (std::size_t e = total_epochs; e > 0; --e) {
        const auto p = outputs->dir / epoch_name(e);
        if (!std::filesystem::exists(p)) continue;
        const Checkpoint c = load_checkpoint(p);
        load_params(result.encoder.parameters(), c);
        adam.load_state(c.extract("adam."));
        first_epoch = static_cast<std::size_t>(c.get("meta.epoch").item());
        step = static_cast<std::size_t>(c.get("meta.step").item());
        last_good = p;
        result.epochs_completed = first_epoch;
        break;
      }
      // Keep the records of completed steps only.
      std::vector<StepRecord> kept;
      if (std::filesystem::exists(log_path))
        for (const StepRecord& r : read_training_log(log_path))
          if (r.step < step) kept.push_back(r);
      std::string text;
      for (const StepRecord& r : kept) text += to_json_line(r) + "\n";
      write_file_atomic(log_path, text);
      result.log = std::move(kept);
      log.open(log_path, std::ios::app);
    } else {
      log.open(log_path, std::ios::trunc);
    }
    if (!log) throw IoError("cannot write " + log_path.string());
  }

  for (std::size_t epoch = first_epoch; epoch < total_epochs; ++epoch) {
    const Stage stage = epoch < config.warmup_epochs ? Stage::warmup : Stage::joint;
    const double lr = stage == Stage::warmup ? config.lr_warmup : config.lr_joint;
    std::seed_seq seq{config.seed, static_cast<std::uint64_t>(epoch)};
    std::mt19937_64 rng(seq);

    std::vector<PairSample> pairs;
    for (std::size_t v = 0; v < corpus.size(); ++v)
      for (std::size_t k = 0; k < config.pairs_per_video; ++k)
        pairs.push_back(sample_pair(corpus[v], v, stage, config, rng));
    std::shuffle(pairs.begin(), pairs.end(), rng);

    for (std::size_t start = 0; start < pairs.size(); start += config.batch_size) {
      const std::vector<PairSample> batch(pairs.begin() + static_cast<std::ptrdiff_t>(start),
                                          pairs.begin() + static_cast<std::ptrdiff_t>(
                                                              std::min(pairs.size(), start + config.batch_size)));
      StepResult r;
      try {
        r = train_step(result.encoder, adam, corpus, batch, lr, config);
      } catch (const NumericError& e) {
        if (log) log.flush();
        throw NumericError(std::string(e.what()) + " at step " + std::to_string(step) + "; last good checkpoint: " +
                           (last_good.empty() ? std::string("none") : last_good.string()));
      }
      StepRecord rec;
      rec.step = step++;
      rec.epoch = epoch;
      rec.stage = stage;
      rec.reconstruction = r.losses.reconstruction;
      rec.concentration_region = r.losses.concentration_region;
      rec.concentration_local = r.losses.concentration_local;
      rec.orthogonal_location = r.losses.orthogonal_location;
      rec.orthogonal_feature = r.losses.orthogonal_feature;
      rec.total = r.losses.total_value;
      rec.grad_norm = r.grad_norm;
      if (log) log << to_json_line(rec) << '\n';
      if (on_step) on_step(rec);
      result.log.push_back(rec);
    }
    if (log) log.flush();
    if (outputs) {
      last_good = outputs->dir / epoch_name(epoch + 1);
      save_checkpoint(last_good, training_checkpoint(result.encoder, adam, epoch + 1, step));
    }
    result.epochs_completed = epoch + 1;
  }
  if (outputs) save_checkpoint(outputs->dir / "encoder.ckpt", training_checkpoint(result.encoder, adam, total_epochs, step));
  return result;
}

}  // namespace aftk
