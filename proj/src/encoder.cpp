// SPDX-License-Identifier: Apache-2.0
#include "aftk/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "aftk/errors.hpp"
#include "aftk/ops.hpp"
#include "aftk/optim.hpp"

namespace aftk {

ConvLayer make_conv_layer(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, std::size_t pad,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double a = std::sqrt(1.0 / static_cast<double>(cin * k * k));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor w({cout, cin, k, k});
  for (double& v : w.values()) v = dist(rng);
  return ConvLayer{Var::parameter(std::move(w)), Var::parameter(Tensor({cout}, 0.0)), stride, pad};
}

Checkpoint params_to_checkpoint(const NamedParams& params) {
  Checkpoint c;
  for (const auto& [name, v] : params) c.add(name, v.value());
  return c;
}

void load_params(const NamedParams& params, const Checkpoint& ckpt) {
  for (auto [name, v] : params) {
    const Tensor& t = ckpt.get(name);
    if (t.shape() != v.shape())
      throw IoError("parameter '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                    shape_string(v.shape()));
    v.mutable_value() = t;
  }
}

std::vector<Var> param_vars(const NamedParams& params) {
  std::vector<Var> out;
  for (const auto& p : params) out.push_back(p.second);
  return out;
}

void zero_grads(const std::vector<Var>& params) {
  for (const auto& p : params) p.node()->grad = Tensor(p.shape(), 0.0);
}

ConvEncoder::ConvEncoder(EncoderConfig config, std::uint64_t seed) : config_(config) {
  if (config_.out_channels == 0) throw ParameterError("encoder needs at least one output channel");
  layers_.push_back(make_conv_layer(1, 16, 3, 2, 1, seed * 3 + 1));
  layers_.push_back(make_conv_layer(16, 32, 3, 2, 1, seed * 3 + 2));
  layers_.push_back(make_conv_layer(32, config_.out_channels, 3, 2, 1, seed * 3 + 3));
}

FeatureMap ConvEncoder::encode(const Var& gray) const {
  if (gray.value().rank() != 3 || gray.dim(0) != 1)
    throw DimensionError("encode_gray: expected 1 x H x W, got " + shape_string(gray.shape()));
  if (gray.dim(1) % kFeatureStride != 0 || gray.dim(2) % kFeatureStride != 0)
    throw DimensionError("encode_gray: image " + shape_string(gray.shape()) + " not divisible by 8; pad first");
  Var x = gray;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    x = ops::conv2d(x, l.weight, l.bias, l.stride, l.pad);
    if (i + 1 < layers_.size()) x = ops::leaky_relu(x, config_.negative_slope);
  }
  FeatureMap f = feature_map_from_chw(x);
  if (config_.feature_scale > 0.0) f.values = ops::l2_normalize_columns(f.values, config_.feature_scale);
  return f;
}

NamedParams ConvEncoder::parameters() const {
  NamedParams out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out.emplace_back("encoder.conv" + std::to_string(i) + ".weight", layers_[i].weight);
    out.emplace_back("encoder.conv" + std::to_string(i) + ".bias", layers_[i].bias);
  }
  return out;
}

ConvEncoder ConvEncoder::clone() const {
  ConvEncoder copy(config_, 0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    copy.layers_[i].weight = Var::parameter(layers_[i].weight.value());
    copy.layers_[i].bias = Var::parameter(layers_[i].bias.value());
  }
  return copy;
}

Tensor gray_from_lab(const Tensor& lab) {
  if (lab.rank() != 3 || lab.dim(0) != 3) throw DimensionError("gray_from_lab: expected 3 x H x W");
  const std::size_t n = lab.dim(1) * lab.dim(2);
  Tensor gray({1, lab.dim(1), lab.dim(2)});
  for (std::size_t i = 0; i < n; ++i) gray[i] = lab[i] / 100.0;
  return gray;
}

namespace {

constexpr double kLabScale = 50.0;

Tensor lab_normalization_offset(std::size_t h, std::size_t w) {
  Tensor t({3, h, w}, 0.0);
  std::fill(t.data(), t.data() + h * w, -50.0);
  return t;
}

}  // namespace

ColorAutoencoder::ColorAutoencoder(ColorAutoencoderConfig config, std::uint64_t seed) : config_(config) {
  const std::size_t hid = config_.hidden_channels, lat = config_.latent_channels;
  if (hid == 0 || lat == 0) throw ParameterError("color autoencoder channel counts must be positive");
  encoder_.push_back(make_conv_layer(3, hid, 3, 2, 1, seed * 7 + 1));
  encoder_.push_back(make_conv_layer(hid, hid, 3, 2, 1, seed * 7 + 2));
  encoder_.push_back(make_conv_layer(hid, lat, 3, 2, 1, seed * 7 + 3));
  decoder_.push_back(make_conv_layer(lat, hid, 3, 1, 1, seed * 7 + 4));
  decoder_.push_back(make_conv_layer(hid, hid, 3, 1, 1, seed * 7 + 5));
  decoder_.push_back(make_conv_layer(hid, 3, 3, 1, 1, seed * 7 + 6));
}

Var ColorAutoencoder::conv(const Var& x, const ConvLayer& layer) const {
  if (frozen_) {
    return ops::conv2d(x, layer.weight.detach(), layer.bias.detach(), layer.stride, layer.pad);
  }
  return ops::conv2d(x, layer.weight, layer.bias, layer.stride, layer.pad);
}

Var ColorAutoencoder::encode(const Var& lab) const {
  if (lab.value().rank() != 3 || lab.dim(0) != 3)
    throw DimensionError("color encoder: expected 3 x H x W, got " + shape_string(lab.shape()));
  if (lab.dim(1) % kFeatureStride != 0 || lab.dim(2) % kFeatureStride != 0)
    throw DimensionError("color encoder: image not divisible by 8");
  Var x = ops::scale(ops::add(lab, Var::constant(lab_normalization_offset(lab.dim(1), lab.dim(2)))),
                     1.0 / kLabScale);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    x = conv(x, encoder_[i]);
    if (i + 1 < encoder_.size()) x = ops::leaky_relu(x, config_.negative_slope);
  }
  return x;
}

Var ColorAutoencoder::decode(const Var& latent) const {
  if (latent.value().rank() != 3 || latent.dim(0) != config_.latent_channels)
    throw DimensionError("color decoder: latent shape " + shape_string(latent.shape()));
  Var x = latent;
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    x = conv(ops::upsample_nearest(x, 2), decoder_[i]);
    if (i + 1 < decoder_.size()) x = ops::leaky_relu(x, config_.negative_slope);
  }
  x = ops::scale(x, kLabScale);
  Tensor offset = lab_normalization_offset(x.dim(1), x.dim(2));
  for (double& v : offset.values()) v = -v;
  return ops::add(x, Var::constant(std::move(offset)));
}

void ColorAutoencoder::freeze() {
  frozen_ = true;
  for (auto* group : {&encoder_, &decoder_})
    for (auto& l : *group) {
      l.weight = Var::constant(l.weight.value());
      l.bias = Var::constant(l.bias.value());
    }
}

NamedParams ColorAutoencoder::parameters() const {
  NamedParams out;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    out.emplace_back("color.enc" + std::to_string(i) + ".weight", encoder_[i].weight);
    out.emplace_back("color.enc" + std::to_string(i) + ".bias", encoder_[i].bias);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    out.emplace_back("color.dec" + std::to_string(i) + ".weight", decoder_[i].weight);
    out.emplace_back("color.dec" + std::to_string(i) + ".bias", decoder_[i].bias);
  }
  return out;
}

Tensor encode_color(const Tensor& lab, const ColorAutoencoder& ae) {
  if (!ae.frozen()) throw StateError("encode_color: the color autoencoder must be pretrained and frozen");
  Var latent = ae.encode(Var::constant(lab));
  return latent.value().reshaped({latent.dim(0), latent.dim(1) * latent.dim(2)});
}

double reconstruction_mse(const ColorAutoencoder& ae, const Tensor& lab) {
  Var in = Var::constant(lab);
  Var out = ae.decode(ae.encode(in).detach());
  return ops::mse(out, in).item();
}

PretrainResult pretrain_color_autoencoder(const std::vector<Tensor>& corpus, const PretrainConfig& config) {
  if (corpus.empty()) throw ParameterError("pretrain_color_autoencoder: empty corpus");
  if (config.crop % kFeatureStride != 0) throw ParameterError("pretrain crop must be divisible by 8");
  if (config.batch_size == 0) throw ParameterError("pretrain batch size must be positive");
  ColorAutoencoder model(config.model, config.seed);
  auto named = model.parameters();
  auto params = param_vars(named);
  Adam adam(params);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<double> epoch_loss;
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Var> losses;
      for (std::size_t b = start; b < end; ++b) {
        const Tensor& img = corpus[order[b]];
        const std::size_t h = img.dim(1), w = img.dim(2);
        Tensor crop = img;
        if (config.crop > 0 && config.crop <= h && config.crop <= w && (config.crop < h || config.crop < w)) {
          std::uniform_int_distribution<std::size_t> oy(0, h - config.crop), ox(0, w - config.crop);
          const std::size_t y0 = oy(rng), x0 = ox(rng);
          crop = Tensor({3, config.crop, config.crop});
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < config.crop; ++y)
              for (std::size_t x = 0; x < config.crop; ++x)
                crop[(c * config.crop + y) * config.crop + x] = img[(c * h + y0 + y) * w + x0 + x];
        }
        Var in = Var::constant(crop);
        losses.push_back(ops::reshape(ops::mse(model.decode(model.encode(in)), in), {1, 1}));
      }
      Var loss = ops::mean(ops::concat_rows(losses));
      zero_grads(params);
      backward(loss);
      adam.step(config.lr);
      loss_sum += loss.item();
      ++batches;
    }
    epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  model.freeze();
  return PretrainResult{std::move(model), std::move(epoch_loss)};
}

}  // namespace aftk
