// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic image embedders and an aesthetic proxy.
//
//   clip_embedder      coarse structure: colour-edge orientation histograms
//                      over a cell grid of a smoothed 32x32 rendition, plus a
//                      low-weight hue histogram.
//   dino_embedder      a finer orientation grid with a luminance layout term.
//   csd_embedder       global colour histograms plus a style signature:
//                      channel percentiles, fine-texture step fraction and
//                      posterization lattice occupancy.
//   aes_score          0.5 * sharpness + 0.5 * colourfulness, each in [0, 1).

#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "stylecomp/image.hpp"

namespace stylecomp {

using Embedding = std::vector<double>;

struct Embedder {
  std::string name;
  std::function<Embedding(const Image&)> embed;

  Embedding operator()(const Image& img) const { return embed(img); }
};

/// Cosine similarity mapped to [0, 1] as (1 + cos) / 2. Identical vectors
/// give exactly 1; a zero vector against a non-zero one gives 0.5.
inline double similarity(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) throw std::invalid_argument("similarity: dimension mismatch");
  if (a == b) return 1.0;
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.5;
  const double c = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
  return (1.0 + c) / 2.0;
}

namespace detail {

/// Float planes, one per channel, values in [0, 1].
struct Planes {
  std::size_t w = 0, h = 0, c = 0;
  std::vector<double> v;  // [c][h][w]
  double& at(std::size_t ch, std::size_t x, std::size_t y) { return v[(ch * h + y) * w + x]; }
  double at(std::size_t ch, std::size_t x, std::size_t y) const { return v[(ch * h + y) * w + x]; }
  double clamped(std::size_t ch, long x, long y) const {
    x = std::clamp(x, 0L, static_cast<long>(w) - 1);
    y = std::clamp(y, 0L, static_cast<long>(h) - 1);
    return at(ch, static_cast<std::size_t>(x), static_cast<std::size_t>(y));
  }
};

/// Box-filter resample: each output pixel averages the source footprint it
/// covers (fractional coverage weighted).
inline Planes resample_area(const Image& img, std::size_t w, std::size_t h) {
  Planes p{w, h, img.channels, std::vector<double>(w * h * img.channels, 0.0)};
  const double sx = static_cast<double>(img.width) / static_cast<double>(w);
  const double sy = static_cast<double>(img.height) / static_cast<double>(h);
  for (std::size_t y = 0; y < h; ++y) {
    const double ya = static_cast<double>(y) * sy, yb = ya + sy;
    for (std::size_t x = 0; x < w; ++x) {
      const double xa = static_cast<double>(x) * sx, xb = xa + sx;
      std::vector<double> acc(img.channels, 0.0);
      double wsum = 0;
      for (auto iy = static_cast<std::size_t>(ya); iy < img.height && static_cast<double>(iy) < yb; ++iy) {
        const double wy = std::min(yb, static_cast<double>(iy + 1)) - std::max(ya, static_cast<double>(iy));
        for (auto ix = static_cast<std::size_t>(xa); ix < img.width && static_cast<double>(ix) < xb; ++ix) {
          const double wx = std::min(xb, static_cast<double>(ix + 1)) - std::max(xa, static_cast<double>(ix));
          const double wt = wx * wy;
          if (wt <= 0) continue;
          wsum += wt;
          for (std::size_t c = 0; c < img.channels; ++c) acc[c] += wt * img.at(ix, iy, c);
        }
      }
      for (std::size_t c = 0; c < img.channels; ++c) p.at(c, x, y) = acc[c] / wsum / 255.0;
    }
  }
  return p;
}

inline Planes to_planes(const Image& img) {
  Planes p{img.width, img.height, img.channels, std::vector<double>(img.pixels.size())};
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) p.at(c, x, y) = img.at(x, y, c) / 255.0;
  return p;
}

/// Separable Gaussian blur, clamped borders, radius ceil(3 sigma).
inline Planes gaussian_blur(const Planes& in, double sigma) {
  const long r = static_cast<long>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double ks = 0;
  for (long i = -r; i <= r; ++i) ks += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& x : k) x /= ks;
  Planes tmp = in, out = in;
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t y = 0; y < in.h; ++y)
      for (std::size_t x = 0; x < in.w; ++x) {
        double s = 0;
        for (long i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * in.clamped(c, static_cast<long>(x) + i, static_cast<long>(y));
        tmp.at(c, x, y) = s;
      }
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t y = 0; y < in.h; ++y)
      for (std::size_t x = 0; x < in.w; ++x) {
        double s = 0;
        for (long i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * tmp.clamped(c, static_cast<long>(x), static_cast<long>(y) + i);
        out.at(c, x, y) = s;
      }
  return out;
}

struct Gradient {
  double gx = 0, gy = 0;
  double mag() const { return std::hypot(gx, gy); }
};

/// Sobel gradient of the channel with the largest response.
inline Gradient color_sobel(const Planes& p, std::size_t x, std::size_t y) {
  Gradient best;
  double best_mag = -1;
  const long X = static_cast<long>(x), Y = static_cast<long>(y);
  for (std::size_t c = 0; c < p.c; ++c) {
    auto v = [&](long dx, long dy) { return p.clamped(c, X + dx, Y + dy); };
    const double gx = (v(1, -1) + 2 * v(1, 0) + v(1, 1)) - (v(-1, -1) + 2 * v(-1, 0) + v(-1, 1));
    const double gy = (v(-1, 1) + 2 * v(0, 1) + v(1, 1)) - (v(-1, -1) + 2 * v(0, -1) + v(1, -1));
    const double m = gx * gx + gy * gy;
    if (m > best_mag) {
      best_mag = m;
      best = {gx, gy};
    }
  }
  return best;
}

/// Magnitude-weighted unsigned orientation histograms on a cells x cells grid.
inline Embedding orientation_cells(const Planes& p, std::size_t cells, std::size_t bins) {
  Embedding h(cells * cells * bins, 0.0);
  for (std::size_t y = 0; y < p.h; ++y)
    for (std::size_t x = 0; x < p.w; ++x) {
      const auto g = color_sobel(p, x, y);
      const double m = g.mag();
      if (m <= 1e-9) continue;
      double th = std::atan2(g.gy, g.gx);
      if (th < 0) th += std::numbers::pi;
      // Linear interpolation between the two nearest orientation bins.
      const double f = th / std::numbers::pi * static_cast<double>(bins) - 0.5;
      const double fl = std::floor(f);
      const auto b0 = static_cast<std::size_t>((static_cast<long>(fl) + static_cast<long>(bins)) % static_cast<long>(bins));
      const auto b1 = (b0 + 1) % bins;
      const double w1 = f - fl;
      const std::size_t cell = (y * cells / p.h) * cells + x * cells / p.w;
      h[cell * bins + b0] += m * (1 - w1);
      h[cell * bins + b1] += m * w1;
    }
  return h;
}

inline void rgb_to_hsv(double r, double g, double b, double& hue, double& sat, double& val) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  val = mx;
  sat = mx > 0 ? d / mx : 0;
  if (d <= 0) {
    hue = 0;
    return;
  }
  if (mx == r) hue = std::fmod((g - b) / d + 6.0, 6.0);
  else if (mx == g) hue = (b - r) / d + 2.0;
  else hue = (r - g) / d + 4.0;
  hue /= 6.0;
}

/// Saturation-weighted hue histogram (soft, circular).
inline Embedding hue_histogram(const Planes& p, std::size_t bins) {
  Embedding h(bins, 0.0);
  for (std::size_t y = 0; y < p.h; ++y)
    for (std::size_t x = 0; x < p.w; ++x) {
      double hue, sat, val;
      rgb_to_hsv(p.at(0, x, y), p.at(1, x, y), p.at(2, x, y), hue, sat, val);
      const double f = hue * static_cast<double>(bins) - 0.5;
      const double fl = std::floor(f);
      const auto b0 = static_cast<std::size_t>((static_cast<long>(fl) + static_cast<long>(bins)) % static_cast<long>(bins));
      const double w1 = f - fl;
      h[b0] += sat * (1 - w1);
      h[(b0 + 1) % bins] += sat * w1;
    }
  return h;
}

/// Soft histogram of values in [0, 1] into `bins` bins.
inline void value_histogram(double v, std::size_t bins, double* h) {
  const double f = std::clamp(v, 0.0, 1.0) * static_cast<double>(bins - 1);
  const auto b0 = static_cast<std::size_t>(std::floor(f));
  const double w1 = f - static_cast<double>(b0);
  h[b0] += 1 - w1;
  if (b0 + 1 < bins) h[b0 + 1] += w1;
}

inline void l2_normalize(Embedding& v) {
  double n = 0;
  for (auto x : v) n += x * x;
  if (n <= 0) return;
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
}

/// Concatenation of L2-normalized parts, each scaled by its weight.
inline Embedding weighted_concat(std::initializer_list<std::pair<Embedding, double>> parts) {
  Embedding out;
  for (auto [v, w] : parts) {
    l2_normalize(v);
    for (auto x : v) out.push_back(w * x);
  }
  return out;
}

inline void require_rgb(const Image& img, const char* who) {
  if (img.channels != 3 || img.empty()) throw ImageError(std::string(who) + ": expected a non-empty RGB image");
}

}  // namespace detail

/// "clip": 2x2 cells of 8 orientation bins on a blurred 32x32 rendition,
/// plus a 12-bin hue histogram at weight 0.35.
inline Embedder clip_embedder() {
  return {"clip", [](const Image& img) {
            detail::require_rgb(img, "clip");
            const auto p = detail::gaussian_blur(detail::resample_area(img, 32, 32), 1.2);
            return detail::weighted_concat({{detail::orientation_cells(p, 2, 8), 1.0}, {detail::hue_histogram(p, 12), 0.35}});
          }};
}

/// "dino": 4x4 cells of 8 orientation bins plus a 4x4 luminance layout
/// (mean-centered) at weight 0.5.
inline Embedder dino_embedder() {
  return {"dino", [](const Image& img) {
            detail::require_rgb(img, "dino");
            const auto p = detail::gaussian_blur(detail::resample_area(img, 32, 32), 1.2);
            Embedding layout(16, 0.0);
            double mean = 0;
            for (std::size_t y = 0; y < p.h; ++y)
              for (std::size_t x = 0; x < p.w; ++x) {
                const double l = 0.299 * p.at(0, x, y) + 0.587 * p.at(1, x, y) + 0.114 * p.at(2, x, y);
                layout[(y * 4 / p.h) * 4 + x * 4 / p.w] += l;
                mean += l;
              }
            mean /= 16.0;
            for (auto& v : layout) v -= mean;
            // Shift to non-negative so the vector never vanishes on flat images.
            for (auto& v : layout) v = v / static_cast<double>(p.w * p.h / 16) + 1.0;
            return detail::weighted_concat({{detail::orientation_cells(p, 4, 8), 1.0}, {layout, 0.5}});
          }};
}

/// "csd": global colour histograms (content-sensitive, low weight) plus a
/// style signature: per-channel 2nd/98th percentiles, the fraction of
/// neighbour steps in the fine-texture band, and occupancy of posterization
/// lattices. Each signature scalar is soft-binned into 8 bins.
inline Embedder csd_embedder() {
  return {"csd", [](const Image& img) {
            detail::require_rgb(img, "csd");
            const std::size_t vb = 16, n = img.width * img.height;
            Embedding chan(3 * vb, 0.0), sig;
            std::array<std::vector<std::uint8_t>, 3> vals;
            for (std::size_t c = 0; c < 3; ++c) vals[c].reserve(n);
            std::array<double, 3> band{};
            std::array<double, 3> lattice{};
            std::size_t steps = 0;
            auto in_band = [](int a, int b) {
              const int d = std::abs(a - b);
              return d >= 10 && d <= 90;
            };
            for (std::size_t y = 0; y < img.height; ++y)
              for (std::size_t x = 0; x < img.width; ++x) {
                for (std::size_t c = 0; c < 3; ++c) {
                  const int v = img.at(x, y, c);
                  vals[c].push_back(static_cast<std::uint8_t>(v));
                  detail::value_histogram(v / 255.0, vb, chan.data() + c * vb);
                  for (int levels = 3; levels <= 5; ++levels)
                    for (int k = 1; k < levels - 1; ++k) {
                      const int l = static_cast<int>(std::lround(k * 255.0 / (levels - 1)));
                      if (std::abs(v - l) <= 1) lattice[static_cast<std::size_t>(levels - 3)] += 1;
                    }
                }
                if (x + 1 < img.width && y + 1 < img.height) {
                  ++steps;
                  for (std::size_t c = 0; c < 3; ++c) {
                    const int v = img.at(x, y, c);
                    band[0] += in_band(v, img.at(x + 1, y, c)) / 3.0;
                    band[1] += in_band(v, img.at(x, y + 1, c)) / 3.0;
                    band[2] += in_band(v, img.at(x + 1, y + 1, c)) / 3.0;
                  }
                }
              }
            auto push = [&](double f) {
              const auto at = sig.size();
              sig.resize(at + 8, 0.0);
              detail::value_histogram(f, 8, sig.data() + at);
            };
            for (std::size_t c = 0; c < 3; ++c) {
              auto& v = vals[c];
              const auto lo = v.begin() + static_cast<long>(n * 2 / 100);
              std::nth_element(v.begin(), lo, v.end());
              push(*lo / 255.0);
              const auto hi = v.begin() + static_cast<long>(std::min(n - 1, n * 98 / 100));
              std::nth_element(v.begin(), hi, v.end());
              push(*hi / 255.0);
            }
            for (auto b : band) push(steps ? b / static_cast<double>(steps) : 0.0);
            for (auto l : lattice) push(l / static_cast<double>(3 * n));
            return detail::weighted_concat({{chan, 0.5}, {sig, 1.0}});
          }};
}

/// Sharpness (mean colour-gradient magnitude) and colourfulness
/// (Hasler-Suesstrunk), each mapped through 1 - exp(-x / k).
inline double aes_score(const Image& img) {
  detail::require_rgb(img, "aes");
  const auto p = detail::to_planes(img);
  double grad = 0;
  std::vector<double> rg, yb;
  rg.reserve(p.w * p.h);
  yb.reserve(p.w * p.h);
  for (std::size_t y = 0; y < p.h; ++y)
    for (std::size_t x = 0; x < p.w; ++x) {
      grad += detail::color_sobel(p, x, y).mag();
      const double r = p.at(0, x, y) * 255, g = p.at(1, x, y) * 255, b = p.at(2, x, y) * 255;
      rg.push_back(r - g);
      yb.push_back(0.5 * (r + g) - b);
    }
  grad /= static_cast<double>(p.w * p.h);
  auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0;
    for (auto x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0;
    for (auto x : v) var += (x - mean) * (x - mean);
    sd = std::sqrt(var / static_cast<double>(v.size()));
  };
  double mrg, srg, myb, syb;
  stats(rg, mrg, srg);
  stats(yb, myb, syb);
  const double colorful = std::hypot(srg, syb) + 0.3 * std::hypot(mrg, myb);
  const double sharp = 1 - std::exp(-grad / 0.5);
  const double color = 1 - std::exp(-colorful / 60.0);
  return 0.5 * sharp + 0.5 * color;
}

/// Embedder lookup by name: clip, dino, csd.
inline Embedder embedder_by_name(const std::string& name) {
  if (name == "clip") return clip_embedder();
  if (name == "dino") return dino_embedder();
  if (name == "csd") return csd_embedder();
  throw std::invalid_argument("unknown embedder '" + name + "'");
}

}  // namespace stylecomp
