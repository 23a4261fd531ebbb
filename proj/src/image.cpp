#include "thinsec/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "thinsec/errors.hpp"

namespace thinsec {

namespace {

Image read_png(const std::string& path, bool mask) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw FormatError("cannot read PNG '" + path + "': " + img.message);
  }
  const auto format = img.format;
  const bool linear = (format & PNG_FORMAT_FLAG_LINEAR) != 0;
  const bool color = (format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (format & PNG_FORMAT_FLAG_ALPHA) != 0;
  if (linear || alpha || color == mask) {
    png_image_free(&img);
    throw FormatError("'" + path + "' must be an 8-bit " + (mask ? "grayscale" : "RGB") + " PNG without alpha");
  }
  img.format = mask ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image out(static_cast<int>(img.width), static_cast<int>(img.height), mask ? 1 : 3);
  if (!png_image_finish_read(&img, nullptr, out.data.data(), 0, nullptr)) {
    throw FormatError("cannot decode PNG '" + path + "': " + img.message);
  }
  if (mask) {
    for (auto& v : out.data) v = v ? 1 : 0;
  }
  return out;
}

// Mirror a continuous coordinate (pixel k covers [k, k+1)) about the image
// edges, so the edge pixel is repeated once.
double reflect_coord(double u, int n) {
  const double period = 2.0 * n;
  u = std::fmod(u, period);
  if (u < 0) u += period;
  return u < n ? u : period - u;
}

float sample_bilinear(const FloatImage& src, double sx, double sy, int c) {
  sx = std::clamp(sx, 0.0, static_cast<double>(src.width - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(src.height - 1));
  const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
  const int x1 = std::min(x0 + 1, src.width - 1), y1 = std::min(y0 + 1, src.height - 1);
  const double fx = sx - x0, fy = sy - y0;
  const double top = src.at(x0, y0, c) * (1 - fx) + src.at(x1, y0, c) * fx;
  const double bottom = src.at(x0, y1, c) * (1 - fx) + src.at(x1, y1, c) * fx;
  return static_cast<float>(top * (1 - fy) + bottom * fy);
}

}  // namespace

Image read_png_rgb(const std::string& path) { return read_png(path, false); }
Image read_png_mask(const std::string& path) { return read_png(path, true); }

Image mask_to_gray(const Image& mask) {
  Image out = mask;
  for (auto& v : out.data) v = v ? 255 : 0;
  return out;
}

void write_png(const std::string& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw FormatError("write_png: unsupported channel count");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.data.data(), 0, nullptr)) {
    throw DataError("cannot write PNG '" + path + "': " + img.message);
  }
}

FloatImage to_float(const Image& image) {
  FloatImage out(image.width, image.height, image.channels);
  for (std::size_t i = 0; i < image.data.size(); ++i) out.data[i] = static_cast<float>(image.data[i]) / 255.0f;
  return out;
}

Image to_u8(const FloatImage& image) {
  Image out(image.width, image.height, image.channels);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    const float v = std::clamp(image.data[i], 0.0f, 1.0f);
    out.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

FloatImage resample_bilinear(const FloatImage& src, const Window& w, int out_w, int out_h) {
  FloatImage out(out_w, out_h, src.channels);
  const double kx = w.width / out_w, ky = w.height / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double sy = w.top + (y + 0.5) * ky - 0.5;
    for (int x = 0; x < out_w; ++x) {
      const double sx = w.left + (x + 0.5) * kx - 0.5;
      for (int c = 0; c < src.channels; ++c) out.at(x, y, c) = sample_bilinear(src, sx, sy, c);
    }
  }
  return out;
}

FloatImage resize_bilinear(const FloatImage& src, int out_w, int out_h) {
  if (src.width == out_w && src.height == out_h) return src;
  return resample_bilinear(src, {0.0, 0.0, static_cast<double>(src.width), static_cast<double>(src.height)}, out_w,
                           out_h);
}

Image resample_nearest(const Image& src, const Window& w, int out_w, int out_h) {
  Image out(out_w, out_h, src.channels);
  const double kx = w.width / out_w, ky = w.height / out_h;
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::clamp(static_cast<int>(std::floor(w.top + (y + 0.5) * ky)), 0, src.height - 1);
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::clamp(static_cast<int>(std::floor(w.left + (x + 0.5) * kx)), 0, src.width - 1);
      for (int c = 0; c < src.channels; ++c) out.at(x, y, c) = src.at(sx, sy, c);
    }
  }
  return out;
}

Image resize_nearest(const Image& src, int out_w, int out_h) {
  if (src.width == out_w && src.height == out_h) return src;
  return resample_nearest(src, {0.0, 0.0, static_cast<double>(src.width), static_cast<double>(src.height)}, out_w,
                          out_h);
}

namespace {

// Source position (continuous, pixel k covers [k, k+1)) of the output pixel
// center (x, y) under a counter-clockwise rotation by `degrees`.
struct Rotation {
  double cx, cy, c, s;
  Rotation(int w, int h, double degrees) : cx(w / 2.0), cy(h / 2.0) {
    const double r = degrees * std::numbers::pi / 180.0;
    c = std::cos(r);
    s = std::sin(r);
    // exact values at right angles so quarter turns are lossless
    const double q = std::remainder(degrees, 90.0);
    if (q == 0.0) {
      const long long k = std::llround(degrees / 90.0);
      const int m = static_cast<int>(((k % 4) + 4) % 4);
      c = m == 0 ? 1.0 : m == 2 ? -1.0 : 0.0;
      s = m == 1 ? 1.0 : m == 3 ? -1.0 : 0.0;
    }
  }
  // Image y grows downward, so a visual counter-clockwise turn maps the
  // output offset (dx, dy) back through the inverse rotation.
  void source(int x, int y, double& u, double& v) const {
    const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
    u = cx + c * dx - s * dy;
    v = cy + s * dx + c * dy;
  }
};

}  // namespace

FloatImage rotate_bilinear(const FloatImage& src, double degrees, Border border) {
  const Rotation rot(src.width, src.height, degrees);
  FloatImage out(src.width, src.height, src.channels);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      double u, v;
      rot.source(x, y, u, v);
      if (border == Border::zero && (u < 0 || v < 0 || u > src.width || v > src.height)) continue;
      if (border == Border::reflect) {
        u = reflect_coord(u, src.width);
        v = reflect_coord(v, src.height);
      }
      for (int c = 0; c < src.channels; ++c) out.at(x, y, c) = sample_bilinear(src, u - 0.5, v - 0.5, c);
    }
  }
  return out;
}

Image rotate_nearest(const Image& src, double degrees, Border border) {
  const Rotation rot(src.width, src.height, degrees);
  Image out(src.width, src.height, src.channels);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      double u, v;
      rot.source(x, y, u, v);
      if (border == Border::reflect) {
        u = reflect_coord(u, src.width);
        v = reflect_coord(v, src.height);
      } else if (u < 0 || v < 0 || u >= src.width || v >= src.height) {
        continue;
      }
      const int sx = std::min(static_cast<int>(std::floor(u)), src.width - 1);
      const int sy = std::min(static_cast<int>(std::floor(v)), src.height - 1);
      for (int c = 0; c < src.channels; ++c) out.at(x, y, c) = src.at(sx, sy, c);
    }
  }
  return out;
}

FloatImage center_square(const FloatImage& src, int size) {
  if (src.width == size && src.height == size) return src;
  const int side = std::min(src.width, src.height);
  const Window w{(src.width - side) / 2.0, (src.height - side) / 2.0, static_cast<double>(side),
                 static_cast<double>(side)};
  return resample_bilinear(src, w, size, size);
}

}  // namespace thinsec
