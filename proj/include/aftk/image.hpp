// SPDX-License-Identifier: Apache-2.0
//
// 8-bit images and PNG I/O (gray, RGB, palette-indexed).
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "aftk/tensor.hpp"

namespace aftk {

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;  // 1 (gray or palette index) or 3 (RGB)
  std::vector<std::uint8_t> pixels;  // interleaved, row-major

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

enum class PngKind { gray, rgb, indexed };

/// Indexed images store palette indices in a 1-channel Image.
void write_png(const std::filesystem::path& path, const Image& image, PngKind kind);
/// Palette PNGs come back as indices; gray as 1 channel; RGB as 3 channels.
Image read_png(const std::filesystem::path& path);

/// Object-id palette: 0 black, then distinct saturated colors.
std::vector<std::uint8_t> mask_palette();

/// RGB image -> 3 x H x W Lab tensor.
Tensor lab_from_rgb(const Image& rgb);
/// 3 x H x W sRGB tensor in [0, 1] -> RGB image (rounded, clamped).
Image rgb_from_tensor(const Tensor& rgb);

}  // namespace aftk
