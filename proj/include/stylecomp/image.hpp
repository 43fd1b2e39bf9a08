// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// 8-bit interleaved images, PNG I/O and conversion to model tensors.

#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "stylecomp/tensor.hpp"

namespace stylecomp {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;  // row-major, channels interleaved

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  bool empty() const { return pixels.empty(); }
  std::size_t size() const { return width * height; }
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool same_size(const Image& o) const { return width == o.width && height == o.height; }
  bool operator==(const Image&) const = default;
};

/// Single-channel 0/255 mask.
using Mask = Image;

inline bool mask_on(const Mask& m, std::size_t x, std::size_t y) { return m.at(x, y) != 0; }

inline std::size_t mask_count(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.pixels.begin(), m.pixels.end(), [](auto v) { return v != 0; }));
}

inline bool mask_is_binary(const Mask& m) {
  return m.channels == 1 && std::all_of(m.pixels.begin(), m.pixels.end(), [](auto v) { return v == 0 || v == 255; });
}

inline Mask invert_mask(const Mask& m) {
  Mask out = m;
  for (auto& v : out.pixels) v = v ? 0 : 255;
  return out;
}

struct Box {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
  std::size_t width() const { return x1 - x0; }
  std::size_t height() const { return y1 - y0; }
  bool operator==(const Box&) const = default;
};

/// Tight bounding box of the mask support; throws on an empty mask.
inline Box mask_bbox(const Mask& m) {
  Box b{m.width, m.height, 0, 0};
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x)
      if (mask_on(m, x, y)) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x + 1);
        b.y1 = std::max(b.y1, y + 1);
      }
  if (b.x1 == 0) throw ImageError("mask is empty");
  return b;
}

inline Image crop(const Image& img, const Box& b) {
  if (b.x1 > img.width || b.y1 > img.height || b.x0 >= b.x1 || b.y0 >= b.y1) throw ImageError("crop box out of range");
  Image out(b.width(), b.height(), img.channels);
  for (std::size_t y = 0; y < out.height; ++y)
    std::copy_n(img.pixels.begin() + static_cast<long>(((b.y0 + y) * img.width + b.x0) * img.channels),
                out.width * img.channels, out.pixels.begin() + static_cast<long>(y * out.width * img.channels));
  return out;
}

/// Bilinear resize (pixel-center aligned). Used by embedders.
inline Image resize_bilinear(const Image& img, std::size_t w, std::size_t h) {
  Image out(w, h, img.channels);
  const double sx = static_cast<double>(img.width) / static_cast<double>(w);
  const double sy = static_cast<double>(img.height) / static_cast<double>(h);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const auto y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const auto x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double v = (1 - wy) * ((1 - wx) * img.at(x0, y0, c) + wx * img.at(x1, y0, c)) +
                         wy * ((1 - wx) * img.at(x0, y1, c) + wx * img.at(x1, y1, c));
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

/// Nearest-neighbour resize; keeps hard edges and exact colours.
inline Image resize_nearest(const Image& img, std::size_t w, std::size_t h) {
  Image out(w, h, img.channels);
  for (std::size_t y = 0; y < h; ++y) {
    const auto sy = y * img.height / h;
    for (std::size_t x = 0; x < w; ++x) {
      const auto sx = x * img.width / w;
      for (std::size_t c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  }
  return out;
}

/// out = mask ? a : b, pixelwise.
inline Image select(const Mask& m, const Image& a, const Image& b) {
  if (!m.same_size(a) || !a.same_size(b) || a.channels != b.channels) throw ImageError("select: size mismatch");
  Image out = b;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.pixels[i])
      for (std::size_t c = 0; c < a.channels; ++c) out.pixels[i * a.channels + c] = a.pixels[i * a.channels + c];
  return out;
}

// ---------------------------------------------------------------------------
// Tensors
// ---------------------------------------------------------------------------

/// [H x W x C] tensor with values in [-1, 1].
template <typename T>
Tensor<T> to_tensor(const Image& img) {
  std::vector<T> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(img.pixels[i]) / T(127.5) - T(1);
  return Tensor<T>(Shape{img.height, img.width, img.channels}, std::move(v));
}

template <typename T>
Image from_tensor(const Tensor<T>& t) {
  if (t.rank() != 3) throw ShapeError("from_tensor: expected [H x W x C], got " + shape_str(t.shape()));
  Image img(t.dim(1), t.dim(0), t.dim(2));
  auto v = t.values();
  for (std::size_t i = 0; i < v.size(); ++i)
    img.pixels[i] =
        static_cast<std::uint8_t>(std::lround(std::clamp((static_cast<double>(v[i]) + 1.0) * 127.5, 0.0, 255.0)));
  return img;
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

/// Writes 8-bit gray (1 channel) or RGB (3 channels). Output bytes depend
/// only on pixel content.
inline void write_png(const std::string& path, const Image& img) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  if (img.channels == 1) {
    pi.format = PNG_FORMAT_GRAY;
  } else if (img.channels == 3) {
    pi.format = PNG_FORMAT_RGB;
  } else {
    throw ImageError("write_png: unsupported channel count " + std::to_string(img.channels));
  }
  if (!png_image_write_to_file(&pi, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw ImageError("cannot write '" + path + "': " + pi.message);
}

/// Reads a PNG as `channels` channels (1 = gray, 3 = RGB), converting as
/// libpng does.
inline Image read_png(const std::string& path, std::size_t channels = 3) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) throw ImageError("cannot read '" + path + "': " + pi.message);
  pi.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image img(pi.width, pi.height, channels);
  if (!png_image_finish_read(&pi, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw ImageError("cannot decode '" + path + "': " + pi.message);
  }
  return img;
}

inline Mask read_mask(const std::string& path) {
  auto m = read_png(path, 1);
  for (auto& v : m.pixels) v = v >= 128 ? 255 : 0;
  return m;
}

}  // namespace stylecomp
