#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace thinsec {

/// 8-bit raster, channels interleaved row-major (RGB = 3, mask/gray = 1).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::uint8_t& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

/// Float raster with the same layout; pixel values nominally in [0, 1].
struct FloatImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;

  FloatImage() = default;
  FloatImage(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c = 0) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

// PNG I/O. Images must be 8-bit RGB; masks 8-bit grayscale where any
// non-zero value counts as inside.
Image read_png_rgb(const std::string& path);
Image read_png_mask(const std::string& path);
void write_png(const std::string& path, const Image& image);

// Masks are stored 0/1 in memory and written as 0/255.
Image mask_to_gray(const Image& mask);

FloatImage to_float(const Image& image);  // v / 255
Image to_u8(const FloatImage& image);     // round(255 v), clamped

// Sub-window in source pixel units. The output pixel (x, y) samples the source
// at left + (x + 0.5) * w / out_w - 0.5 (half-pixel centers), same for y.
struct Window {
  double left = 0.0;
  double top = 0.0;
  double width = 0.0;
  double height = 0.0;
};

// Bilinear resampling with edge clamping.
FloatImage resize_bilinear(const FloatImage& src, int out_w, int out_h);
FloatImage resample_bilinear(const FloatImage& src, const Window& window, int out_w, int out_h);
// Nearest neighbour: source index floor(left + (x + 0.5) * w / out_w).
Image resample_nearest(const Image& src, const Window& window, int out_w, int out_h);
Image resize_nearest(const Image& src, int out_w, int out_h);

template <typename Raster>
Raster flip_horizontal(const Raster& src) {
  Raster out = src;
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) out.at(x, y, c) = src.at(src.width - 1 - x, y, c);
  return out;
}

template <typename Raster>
Raster flip_vertical(const Raster& src) {
  Raster out = src;
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) out.at(x, y, c) = src.at(x, src.height - 1 - y, c);
  return out;
}

enum class Border { reflect, zero };

// Rotation by `degrees` counter-clockwise about the image center, output the
// same size as the input. Samples falling outside are mirrored back across the
// image border or read as zero.
FloatImage rotate_bilinear(const FloatImage& src, double degrees, Border border);
Image rotate_nearest(const Image& src, double degrees, Border border);

// Largest centered square crop resized to size x size; returns src when it is
// already that size.
FloatImage center_square(const FloatImage& src, int size);

}  // namespace thinsec
