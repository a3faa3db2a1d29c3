// SPDX-License-Identifier: Apache-2.0
//
// Two-stage self-supervised training of the feature encoder. Warm-up matches
// identically placed patches of two frames; the joint stage localizes the
// reference patch in the full target frame and matches against the crop.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "aftk/encoder.hpp"
#include "aftk/image.hpp"
#include "aftk/objectives.hpp"
#include "aftk/optim.hpp"

namespace aftk {

struct TrainConfig {
  std::size_t warmup_epochs = 10;
  std::size_t joint_epochs = 10;
  double lr_warmup = 1e-4;
  double lr_joint = 0.5e-4;
  AdamConfig adam;
  std::size_t batch_size = 4;
  /// Square patch side in pixels.
  std::size_t patch = 64;
  /// Frame gaps are drawn uniformly from [1, max_gap].
  std::size_t max_gap = 4;
  /// Pairs drawn from every video per epoch.
  std::size_t pairs_per_video = 16;
  LossWeights weights;
  /// Block size of the local concentration term, in cells.
  std::size_t local_grid = 4;
  double temperature = 1.0;
  double clip_norm = 10.0;
  /// false trains the joint stage on aligned crops as well (no localization).
  bool use_localization = true;
  std::uint64_t seed = 0;
  EncoderConfig encoder;

  /// Throws ConfigError.
  void validate() const;
};

/// A video prepared for training: encoder inputs and frozen color latents.
struct TrainingVideo {
  std::vector<Tensor> gray;   // 1 x H x W per frame
  std::vector<Tensor> color;  // Dc x N per frame
  Grid grid;

  std::size_t frames() const { return gray.size(); }
  std::size_t height() const { return grid.height * kFeatureStride; }
  std::size_t width() const { return grid.width * kFeatureStride; }
};

TrainingVideo prepare_video(const std::vector<Image>& frames, const ColorAutoencoder& ae);

struct ColorStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Per-channel statistics of the color latents over all frames of the corpus.
ColorStats color_statistics(const std::vector<TrainingVideo>& corpus);
/// Shifts and scales the latents to zero mean and unit variance per channel
/// (constant channels are only centered). The raw latents are tiny, which
/// would leave the reconstruction term negligible next to the cycle terms.
void standardize_color(std::vector<TrainingVideo>& corpus, const ColorStats& stats);

/// Square pixel box with cell-aligned corner.
struct PixelBox {
  std::size_t x0 = 0;
  std::size_t y0 = 0;
  std::size_t size = 0;
};

struct PairSample {
  std::size_t video = 0;
  std::size_t reference = 0;
  std::size_t target = 0;
  PixelBox box;  // reference patch; warm-up applies it to the target too
  Stage stage = Stage::warmup;
};

/// Throws SamplingError for videos shorter than two frames or smaller than the patch.
PairSample sample_pair(const TrainingVideo& video, std::size_t video_index, Stage stage, const TrainConfig& config,
                       std::mt19937_64& rng);

/// Gray pixels inside `box`, 1 x size x size.
Tensor crop_pixels(const Tensor& gray, const PixelBox& box);

/// Loss terms of one sample; exposes the graph for tests.
LossTerms sample_losses(const ConvEncoder& encoder, const TrainingVideo& video, const PairSample& sample,
                        const TrainConfig& config);

struct StepResult {
  LossBreakdown losses;  // batch means; `total` is the differentiated batch loss
  double grad_norm = 0.0;
};

/// Mean loss over the batch, one clipped Adam update of the encoder.
StepResult train_step(ConvEncoder& encoder, Adam& adam, const std::vector<TrainingVideo>& corpus,
                      const std::vector<PairSample>& batch, double lr, const TrainConfig& config);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  Stage stage = Stage::warmup;
  double reconstruction = 0.0;
  double concentration_region = 0.0;
  double concentration_local = 0.0;
  double orthogonal_location = 0.0;
  double orthogonal_feature = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
};

std::string to_json_line(const StepRecord& rec);
StepRecord step_record_from_json(const std::string& line);
std::vector<StepRecord> read_training_log(const std::filesystem::path& path);

struct TrainOutputs {
  /// Per-epoch checkpoints "epoch_NNN.ckpt", the final "encoder.ckpt" and "train_log.jsonl".
  std::filesystem::path dir;
  /// Continue from the newest epoch checkpoint in `dir` if one exists.
  bool resume = false;
};

struct TrainResult {
  ConvEncoder encoder;
  std::vector<StepRecord> log;
  std::size_t epochs_completed = 0;
};

/// Warm-up epochs followed by joint epochs. Each epoch draws its pairs from
/// an RNG seeded by (seed, epoch), so resumed runs replay the same batches.
TrainResult run_training(const std::vector<TrainingVideo>& corpus, const TrainConfig& config,
                         const std::optional<TrainOutputs>& outputs = std::nullopt,
                         const std::function<void(const StepRecord&)>& on_step = {});

/// Encoder parameters, Adam state and progress counters in one container.
Checkpoint training_checkpoint(const ConvEncoder& encoder, const Adam& adam, std::size_t epoch, std::size_t step);
/// Encoder of a checkpoint file; the architecture comes from the stored
/// shapes and "meta.*" entries, falling back to `config`.
ConvEncoder load_encoder(const std::filesystem::path& path, EncoderConfig config = {});

}  // namespace aftk
