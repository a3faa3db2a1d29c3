// SPDX-License-Identifier: Apache-2.0
#include "aftk/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "aftk/checkpoint.hpp"
#include "aftk/color.hpp"
#include "aftk/errors.hpp"

namespace aftk {

std::vector<std::uint8_t> mask_palette() {
  // Bit-interleaved palette: index i spreads its bits over R, G, B.
  std::vector<std::uint8_t> pal(256 * 3);
  for (unsigned i = 0; i < 256; ++i) {
    unsigned r = 0, g = 0, b = 0, c = i;
    for (int j = 0; j < 8; ++j) {
      r |= ((c >> 0) & 1u) << (7 - j);
      g |= ((c >> 1) & 1u) << (7 - j);
      b |= ((c >> 2) & 1u) << (7 - j);
      c >>= 3;
    }
    pal[i * 3 + 0] = static_cast<std::uint8_t>(r);
    pal[i * 3 + 1] = static_cast<std::uint8_t>(g);
    pal[i * 3 + 2] = static_cast<std::uint8_t>(b);
  }
  return pal;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image, PngKind kind) {
  const std::size_t want = kind == PngKind::rgb ? 3 : 1;
  if (image.channels != want) throw DimensionError("write_png: channel count does not match PNG kind");
  if (image.height == 0 || image.width == 0) throw IoError("write_png: empty image");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(tmp.c_str(), "wb"));
    if (!fp) throw IoError("cannot write " + tmp.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) throw IoError("libpng initialization failed");
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw IoError("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    const int color_type =
        kind == PngKind::rgb ? PNG_COLOR_TYPE_RGB : (kind == PngKind::gray ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_PALETTE);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_color> palette;
    if (kind == PngKind::indexed) {
      const auto pal = mask_palette();
      palette.resize(256);
      for (std::size_t i = 0; i < 256; ++i) palette[i] = {pal[i * 3], pal[i * 3 + 1], pal[i * 3 + 2]};
      png_set_PLTE(png, info, palette.data(), 256);
    }
    png_write_info(png, info);
    const std::size_t stride = image.width * image.channels;
    for (std::size_t y = 0; y < image.height; ++y)
      png_write_row(png, const_cast<png_bytep>(image.pixels.data() + y * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::filesystem::rename(tmp, path);
}

Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw IoError("libpng initialization failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (depth < 8 && color_type != PNG_COLOR_TYPE_PALETTE) png_set_expand_gray_1_2_4_to_8(png);
  if (depth < 8 && color_type == PNG_COLOR_TYPE_PALETTE) png_set_packing(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const std::size_t channels = png_get_channels(png, info);
  Image image(height, width, channels);
  const std::size_t stride = width * channels;
  for (std::size_t y = 0; y < height; ++y) png_read_row(png, image.pixels.data() + y * stride, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

Tensor lab_from_rgb(const Image& rgb) {
  if (rgb.channels != 3) throw DimensionError("lab_from_rgb: expected an RGB image");
  const std::size_t h = rgb.height, w = rgb.width, n = h * w;
  Tensor lab({3, h, w});
  for (std::size_t i = 0; i < n; ++i) {
    const Lab v = rgb_to_lab({rgb.pixels[i * 3] / 255.0, rgb.pixels[i * 3 + 1] / 255.0, rgb.pixels[i * 3 + 2] / 255.0});
    for (std::size_t c = 0; c < 3; ++c) lab[c * n + i] = v[c];
  }
  return lab;
}

Image rgb_from_tensor(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw DimensionError("rgb_from_tensor: expected 3 x H x W");
  const std::size_t h = rgb.dim(1), w = rgb.dim(2), n = h * w;
  Image img(h, w, 3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[c * n + i], 0.0, 1.0) * 255.0));
  return img;
}

}  // namespace aftk
