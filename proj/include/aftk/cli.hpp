// SPDX-License-Identifier: Apache-2.0
//
// Command-line runs: one JSON run configuration drives corpus generation,
// color pretraining, encoder training, propagation and evaluation inside a
// single output directory.
//
//   DIR/corpus/{train,eval,same_color}/video_NNN/
//   DIR/color/color_ae.ckpt
//   DIR/train/{epoch_NNN.ckpt,encoder.ckpt,train_log.jsonl}
//   DIR/propagate/<split>_<features>_<mode>_<kind>/
//   DIR/<command>.config.json   effective configuration of the last run
#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <ostream>
#include <string>
#include <vector>

#include "aftk/encoder.hpp"
#include "aftk/errors.hpp"
#include "aftk/propagation.hpp"
#include "aftk/synthetic.hpp"
#include "aftk/trainer.hpp"

namespace aftk {

/// A prerequisite artifact (corpus, color model, encoder) is missing.
struct MissingDependency : Error {
  using Error::Error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissing = 3;
inline constexpr int kExitNumeric = 4;

struct CorpusConfig {
  std::size_t train_videos = 64;
  std::size_t eval_videos = 16;
  /// Two-sprite scenes whose sprites share texture and shape.
  std::size_t same_color_videos = 8;
  SceneSpec scene;
};

struct ColorConfig {
  PretrainConfig pretrain;
  /// Every k-th frame of every training video joins the color corpus.
  std::size_t frame_stride = 8;
};

struct PropagateOptions {
  PropagationConfig propagation;
  std::string features = "encoder";  // encoder | oracle
  std::string kind = "mask";         // mask | keypoint | texture
  std::string split = "eval";        // eval | same_color | train
};

struct RunConfig {
  std::uint64_t seed = 0;
  CorpusConfig corpus;
  ColorConfig color;
  TrainConfig train;
  PropagateOptions propagate;

  /// Throws ConfigError.
  void validate() const;
};

/// "full" (the defaults) or "smoke" (tiny corpus, 1 + 1 epochs).
RunConfig profile_config(const std::string& profile);

nlohmann::json to_json(const RunConfig& config);
/// Overlays the keys present in `j` onto `base`. Unknown keys and wrong
/// types throw ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

SceneSpec same_color_spec(const SceneSpec& base);
std::uint64_t video_seed(std::uint64_t seed, const std::string& split, std::size_t index);
std::filesystem::path video_dir(const std::filesystem::path& out, const std::string& split, std::size_t index);
std::filesystem::path propagation_dir(const std::filesystem::path& out, const PropagateOptions& options);

/// Color model checkpoint with its architecture in "meta.*" blocks.
Checkpoint color_checkpoint(const ColorAutoencoder& ae);
ColorAutoencoder load_color_autoencoder(const std::filesystem::path& path);

/// Runs `aftk <args...>` (args excludes the program name) and returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace aftk
