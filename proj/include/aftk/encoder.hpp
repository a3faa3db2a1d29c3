// SPDX-License-Identifier: Apache-2.0
//
// Small convolutional models: a trainable gray-scale feature encoder with
// total stride 8, and a color autoencoder over Lab images whose latent sits
// on the same 1/8 grid.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "aftk/affinity.hpp"
#include "aftk/checkpoint.hpp"

namespace aftk {

inline constexpr std::size_t kFeatureStride = 8;

struct ConvLayer {
  Var weight;  // Cout x Cin x k x k
  Var bias;    // Cout
  std::size_t stride = 1;
  std::size_t pad = 1;
};

/// Uniform weights in [-a, a], a = sqrt(1 / fan_in); zero biases.
ConvLayer make_conv_layer(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, std::size_t pad,
                          std::uint64_t seed);

using NamedParams = std::vector<std::pair<std::string, Var>>;

Checkpoint params_to_checkpoint(const NamedParams& params);
/// Copies matching blocks into the parameters' values; throws on missing or mis-shaped blocks.
void load_params(const NamedParams& params, const Checkpoint& ckpt);
std::vector<Var> param_vars(const NamedParams& params);
void zero_grads(const std::vector<Var>& params);

struct EncoderConfig {
  std::size_t out_channels = 32;
  double negative_slope = 0.1;
  /// Output cells are L2-normalized to this length; 0 keeps the raw conv output.
  double feature_scale = 16.0;
};

/// conv3x3/s2 (1->16) - leaky - conv3x3/s2 (16->32) - leaky - conv3x3/s2 (32->C),
/// then per-cell L2 normalization scaled by feature_scale.
class ConvEncoder {
 public:
  explicit ConvEncoder(EncoderConfig config = {}, std::uint64_t seed = 0);

  /// gray: 1 x H x W with H, W divisible by 8. Returns C x (H/8 * W/8).
  FeatureMap encode(const Var& gray) const;

  NamedParams parameters() const;
  const EncoderConfig& config() const { return config_; }
  /// Deep copy with independent parameter storage.
  ConvEncoder clone() const;

 private:
  EncoderConfig config_;
  std::vector<ConvLayer> layers_;
};

/// Gray-scale input for the encoder: the Lab L channel scaled to [0, 1].
Tensor gray_from_lab(const Tensor& lab);

struct ColorAutoencoderConfig {
  std::size_t latent_channels = 8;
  std::size_t hidden_channels = 16;
  double negative_slope = 0.1;
};

class ColorAutoencoder {
 public:
  explicit ColorAutoencoder(ColorAutoencoderConfig config = {}, std::uint64_t seed = 0);

  /// lab: 3 x H x W in Lab units. Returns latent_channels x H/8 x W/8.
  Var encode(const Var& lab) const;
  /// Latent (Dc x h x w) -> Lab image (3 x 8h x 8w).
  Var decode(const Var& latent) const;

  void freeze();
  bool frozen() const { return frozen_; }

  NamedParams parameters() const;
  const ColorAutoencoderConfig& config() const { return config_; }

 private:
  Var conv(const Var& x, const ConvLayer& layer) const;

  ColorAutoencoderConfig config_;
  std::vector<ConvLayer> encoder_;
  std::vector<ConvLayer> decoder_;
  bool frozen_ = false;
};

/// Latent color features (Dc x N) on the 1/8 grid. The model must be frozen.
Tensor encode_color(const Tensor& lab, const ColorAutoencoder& ae);

/// Per-pixel mean squared Lab error of decode(encode(lab)).
double reconstruction_mse(const ColorAutoencoder& ae, const Tensor& lab);

struct PretrainConfig {
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t batch_size = 4;
  /// Square training crops (pixels, divisible by 8); 0 trains on whole images.
  std::size_t crop = 64;
  std::uint64_t seed = 0;
  ColorAutoencoderConfig model;
};

struct PretrainResult {
  ColorAutoencoder model;
  /// Mean training loss (per-pixel Lab MSE) of every epoch.
  std::vector<double> epoch_loss;
};

/// Trains on Lab images (3 x H x W) and returns the frozen model.
PretrainResult pretrain_color_autoencoder(const std::vector<Tensor>& corpus, const PretrainConfig& config);

}  // namespace aftk
