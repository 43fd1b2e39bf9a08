// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural composition data: parametric objects (I_f), scenes, placements
// (I_c, I_m), closed-form styles (I_s) and labeled corruptions.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stylecomp/hash.hpp"
#include "stylecomp/image.hpp"
#include "stylecomp/random.hpp"

namespace stylecomp {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kNeutral = {128, 128, 128};

// ---------------------------------------------------------------------------
// Styles
// ---------------------------------------------------------------------------

enum class Texture : std::uint8_t { none = 0, stripes = 1, checker = 2, posterize = 3 };

inline const char* texture_name(Texture t) {
  switch (t) {
    case Texture::none: return "none";
    case Texture::stripes: return "stripes";
    case Texture::checker: return "checker";
    case Texture::posterize: return "posterize";
  }
  return "none";
}

/// Palette map out[c] = lut[c][in[perm[c]]] followed by a texture op.
/// Every step is a function of (pixel value, pixel position) only.
struct StyleSpec {
  std::string id = "identity";
  std::array<std::uint8_t, 3> perm = {0, 1, 2};
  std::array<std::array<std::uint8_t, 256>, 3> lut{};
  Texture texture = Texture::none;
  int period = 6;     // stripes / checker cell size in pixels
  int amplitude = 0;  // stripes / checker +- offset
  int levels = 4;     // posterize levels per channel

  static StyleSpec identity() {
    StyleSpec s;
    for (auto& l : s.lut)
      for (int v = 0; v < 256; ++v) l[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(v);
    return s;
  }
};

/// Style `index` of the catalog drawn from `seed`. Textures cycle through
/// none, stripes, checker, posterize.
inline StyleSpec make_style(std::uint64_t seed, std::size_t index) {
  Rng rng(sub_seed(seed, "style:" + std::to_string(index)));
  StyleSpec s;
  s.id = "style" + std::to_string(index);
  std::array<std::uint8_t, 3> p = {0, 1, 2};
  for (int i = 2; i > 0; --i) std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(uniform_int(rng, 0, i))]);
  if (p == std::array<std::uint8_t, 3>{0, 1, 2}) p = {1, 2, 0};
  s.perm = p;
  for (auto& l : s.lut) {
    const double lo = uniform(rng, 20, 100), hi = std::min(255.0, lo + uniform(rng, 90, 150));
    const double gamma = std::exp(uniform(rng, -0.7, 0.7));
    for (int v = 0; v < 256; ++v)
      l[static_cast<std::size_t>(v)] =
          static_cast<std::uint8_t>(std::lround(lo + (hi - lo) * std::pow(static_cast<double>(v) / 255.0, gamma)));
  }
  s.texture = static_cast<Texture>(index % 4);
  s.period = static_cast<int>(uniform_int(rng, 2, 3));
  s.amplitude = static_cast<int>(uniform_int(rng, 20, 36));
  s.levels = static_cast<int>(uniform_int(rng, 3, 5));
  return s;
}

namespace detail {
inline std::uint8_t clamp_u8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

inline std::uint8_t posterize_value(std::uint8_t v, int levels) {
  const int q = static_cast<int>(std::lround(v * (levels - 1) / 255.0));
  return static_cast<std::uint8_t>(std::lround(q * 255.0 / (levels - 1)));
}

inline Rgb style_pixel(const StyleSpec& s, Rgb in, std::size_t x, std::size_t y) {
  Rgb out;
  for (std::size_t c = 0; c < 3; ++c) out[c] = s.lut[c][in[s.perm[c]]];
  switch (s.texture) {
    case Texture::none: break;
    case Texture::stripes: {
      const int sign = ((x + y) / static_cast<std::size_t>(s.period)) % 2 ? 1 : -1;
      for (auto& v : out) v = clamp_u8(v + sign * s.amplitude);
      break;
    }
    case Texture::checker: {
      const auto p = static_cast<std::size_t>(s.period);
      const int sign = (x / p + y / p) % 2 ? 1 : -1;
      for (auto& v : out) v = clamp_u8(v + sign * s.amplitude);
      break;
    }
    case Texture::posterize:
      for (auto& v : out) v = posterize_value(v, s.levels);
      break;
  }
  return out;
}
}  // namespace detail

/// Applies the style uniformly to every pixel.
inline Image stylize(const Image& img, const StyleSpec& s) {
  if (img.channels != 3) throw ImageError("stylize: expected RGB");
  Image out = img;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const Rgb px = detail::style_pixel(s, {img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)}, x, y);
      for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = px[c];
    }
  return out;
}

// ---------------------------------------------------------------------------
// Objects and scenes
// ---------------------------------------------------------------------------

enum class Primitive : std::uint8_t { ellipse = 0, rect = 1, triangle = 2, diamond = 3 };

inline const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::ellipse: return "ellipse";
    case Primitive::rect: return "rect";
    case Primitive::triangle: return "triangle";
    case Primitive::diamond: return "diamond";
  }
  return "ellipse";
}

struct Part {
  Primitive kind = Primitive::ellipse;
  double cx = 0, cy = 0, rx = 0, ry = 0;  // center and half-extents, pixels
  Rgb color{};
};

/// Ground-truth geometry of a generated object.
struct ShapeDescriptor {
  std::vector<Part> parts;  // painted in order
  std::size_t area = 0;     // object pixels
  Box bbox;
};

struct Foreground {
  Image image;  // object on kNeutral
  Mask support;
  ShapeDescriptor shape;
};

namespace detail {
inline bool inside(const Part& p, double x, double y) {
  const double u = (x - p.cx) / p.rx, v = (y - p.cy) / p.ry;
  switch (p.kind) {
    case Primitive::ellipse: return u * u + v * v <= 1.0;
    case Primitive::rect: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
    case Primitive::triangle: return v <= 1.0 && std::abs(u) <= (v + 1.0) / 2.0;
    case Primitive::diamond: return std::abs(u) + std::abs(v) <= 1.0;
  }
  return false;
}

/// Saturated colour well away from neutral grey.
inline Rgb vivid_color(Rng& rng) {
  const double h = uniform01(rng) * 6.0, s = uniform(rng, 0.65, 1.0), v = uniform(rng, 0.6, 1.0);
  const double c = v * s, x = c * (1 - std::abs(std::fmod(h, 2.0) - 1)), m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {static_cast<std::uint8_t>(std::lround((r + m) * 255)), static_cast<std::uint8_t>(std::lround((g + m) * 255)),
          static_cast<std::uint8_t>(std::lround((b + m) * 255))};
}

inline bool far_from_neutral(Rgb c) {
  int d = 0;
  for (std::size_t i = 0; i < 3; ++i) d = std::max(d, std::abs(static_cast<int>(c[i]) - kNeutral[i]));
  return d >= 40;
}
}  // namespace detail

/// A composite of a large base primitive and 1-3 detail primitives in
/// distinct colours, tightly framed on a neutral background.
inline Foreground gen_foreground(std::uint64_t seed, std::size_t size = 32) {
  Rng rng(sub_seed(seed, "foreground"));
  const double s = static_cast<double>(size), half = s / 2.0;
  ShapeDescriptor d;
  auto color = [&] {
    for (;;) {
      auto c = detail::vivid_color(rng);
      bool ok = detail::far_from_neutral(c);
      for (const auto& p : d.parts) {
        int diff = 0;
        for (std::size_t i = 0; i < 3; ++i) diff += std::abs(static_cast<int>(c[i]) - p.color[i]);
        ok = ok && diff >= 90;
      }
      if (ok) return c;
    }
  };
  Part base;
  base.kind = static_cast<Primitive>(uniform_int(rng, 0, 3));
  base.cx = half;
  base.cy = half;
  base.rx = half - 0.5;
  base.ry = half - 0.5;
  if (base.kind == Primitive::rect) {
    // Keep rectangles from being the full frame.
    if (uniform01(rng) < 0.5) base.rx *= uniform(rng, 0.6, 0.85);
    else base.ry *= uniform(rng, 0.6, 0.85);
  }
  base.color = color();
  d.parts.push_back(base);
  const auto details = static_cast<std::size_t>(uniform_int(rng, 1, 3));
  for (std::size_t i = 0; i < details; ++i) {
    Part p;
    p.kind = static_cast<Primitive>(uniform_int(rng, 0, 3));
    p.rx = uniform(rng, 0.12, 0.3) * s;
    p.ry = uniform(rng, 0.12, 0.3) * s;
    p.cx = uniform(rng, 0.3, 0.7) * s;
    p.cy = uniform(rng, 0.3, 0.7) * s;
    p.color = color();
    d.parts.push_back(p);
  }
  Foreground fg{Image(size, size, 3), Mask(size, size, 1), {}};
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      Rgb px = kNeutral;
      bool on = false;
      for (const auto& p : d.parts)
        if (detail::inside(p, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
          px = p.color;
          on = true;
        }
      for (std::size_t c = 0; c < 3; ++c) fg.image.at(x, y, c) = px[c];
      fg.support.at(x, y) = on ? 255 : 0;
    }
  d.area = mask_count(fg.support);
  d.bbox = mask_bbox(fg.support);
  fg.shape = std::move(d);
  return fg;
}

/// Vertical two-colour gradient with a few muted blobs.
inline Image gen_background(std::uint64_t seed, std::size_t size = 64) {
  Rng rng(sub_seed(seed, "background"));
  Rgb top, bottom;
  for (std::size_t c = 0; c < 3; ++c) {
    top[c] = static_cast<std::uint8_t>(uniform_int(rng, 40, 215));
    bottom[c] = static_cast<std::uint8_t>(uniform_int(rng, 40, 215));
  }
  Image img(size, size, 3);
  for (std::size_t y = 0; y < size; ++y) {
    const double a = static_cast<double>(y) / static_cast<double>(size - 1);
    for (std::size_t x = 0; x < size; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround((1 - a) * top[c] + a * bottom[c]));
  }
  const auto blobs = uniform_int(rng, 3, 6);
  for (std::int64_t b = 0; b < blobs; ++b) {
    Part p;
    p.kind = uniform01(rng) < 0.5 ? Primitive::ellipse : Primitive::rect;
    p.cx = uniform(rng, 0, 1) * static_cast<double>(size);
    p.cy = uniform(rng, 0, 1) * static_cast<double>(size);
    p.rx = uniform(rng, 0.08, 0.25) * static_cast<double>(size);
    p.ry = uniform(rng, 0.08, 0.25) * static_cast<double>(size);
    for (std::size_t c = 0; c < 3; ++c) p.color[c] = static_cast<std::uint8_t>(uniform_int(rng, 50, 205));
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        if (detail::inside(p, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5))
          for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = p.color[c];
  }
  return img;
}

struct Composite {
  Image image;  // I_c
  Mask mask;    // I_m
};

/// Pastes the object support scaled (nearest) into `box`. The mask is the
/// exact pasted support.
inline Composite compose(const Foreground& fg, const Image& background, const Box& box) {
  if (box.x1 > background.width || box.y1 > background.height || box.x0 >= box.x1 || box.y0 >= box.y1)
    throw ImageError("compose: placement is out of frame");
  const auto obj = resize_nearest(fg.image, box.width(), box.height());
  const auto sup = resize_nearest(fg.support, box.width(), box.height());
  Composite out{background, Mask(background.width, background.height, 1)};
  for (std::size_t y = 0; y < box.height(); ++y)
    for (std::size_t x = 0; x < box.width(); ++x) {
      if (!mask_on(sup, x, y)) continue;
      for (std::size_t c = 0; c < 3; ++c) out.image.at(box.x0 + x, box.y0 + y, c) = obj.at(x, y, c);
      out.mask.at(box.x0 + x, box.y0 + y) = 255;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Corruptions
// ---------------------------------------------------------------------------

enum class Corruption : std::uint8_t { identity_drift = 0, style_incoherence = 1 };

inline const char* corruption_name(Corruption m) {
  return m == Corruption::identity_drift ? "identity_drift" : "style_incoherence";
}

inline Corruption parse_corruption(const std::string& s) {
  if (s == "identity_drift") return Corruption::identity_drift;
  if (s == "style_incoherence") return Corruption::style_incoherence;
  throw std::invalid_argument("unknown corruption mode '" + s + "'");
}

/// identity_drift: the masked region shows a different object (`other`,
/// stylized, at the same placement). style_incoherence: the masked region
/// keeps the unstylized composite.
inline Image gen_corrupted(const Image& composite, const Mask& mask, const StyleSpec& style, Corruption mode,
                           const Foreground* other = nullptr, const Box* box = nullptr) {
  const auto styled = stylize(composite, style);
  if (mode == Corruption::style_incoherence) return select(mask, composite, styled);
  if (other == nullptr || box == nullptr) throw std::invalid_argument("identity_drift needs a replacement object");
  auto obj = resize_nearest(other->image, box->width(), box->height());
  Image swapped = composite;
  for (std::size_t y = 0; y < box->height(); ++y)
    for (std::size_t x = 0; x < box->width(); ++x)
      for (std::size_t c = 0; c < 3; ++c) swapped.at(box->x0 + x, box->y0 + y, c) = obj.at(x, y, c);
  return select(mask, stylize(swapped, style), styled);
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct SampleRecord {
  std::string id;
  std::string f, c, m, s, b;  // file paths relative to the manifest
  std::string style;
  std::string split;
  std::string label = "good";  // good | bad
  std::string mode;            // corruption mode of bad samples
  Box box;
  std::map<std::string, double> scores;
  std::string verdict;

  bool operator==(const SampleRecord&) const = default;
};

inline void to_json(nlohmann::ordered_json& j, const SampleRecord& r) {
  j = nlohmann::ordered_json{{"id", r.id},       {"f", r.f},         {"c", r.c},         {"m", r.m},
                             {"s", r.s},         {"b", r.b},         {"style", r.style}, {"split", r.split},
                             {"label", r.label}, {"mode", r.mode},
                             {"box", {r.box.x0, r.box.y0, r.box.x1, r.box.y1}}};
  if (!r.scores.empty()) j["scores"] = r.scores;
  if (!r.verdict.empty()) j["verdict"] = r.verdict;
}

inline void from_json(const nlohmann::ordered_json& j, SampleRecord& r) {
  r.id = j.at("id").get<std::string>();
  for (auto [k, dst] : {std::pair{"f", &r.f}, {"c", &r.c}, {"m", &r.m}, {"s", &r.s}, {"b", &r.b}})
    *dst = j.value(k, std::string());
  r.style = j.value("style", std::string());
  r.split = j.value("split", std::string());
  r.label = j.value("label", std::string("good"));
  r.mode = j.value("mode", std::string());
  if (j.contains("box")) {
    const auto& b = j.at("box");
    r.box = {b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>(), b.at(2).get<std::size_t>(),
             b.at(3).get<std::size_t>()};
  }
  if (j.contains("scores")) r.scores = j.at("scores").get<std::map<std::string, double>>();
  r.verdict = j.value("verdict", std::string());
}

/// Manifest with its base directory (image paths resolve against it).
struct Manifest {
  std::filesystem::path dir;
  std::vector<SampleRecord> records;

  std::filesystem::path resolve(const std::string& rel) const { return dir / rel; }

  std::string serialize() const {
    std::string out;
    for (const auto& r : records) {
      nlohmann::ordered_json j = r;
      out += j.dump();
      out += '\n';
    }
    return out;
  }

  std::uint64_t hash() const { return fnv1a(serialize()); }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
    os << serialize();
  }

  static Manifest load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest '" + path.string() + "'");
    Manifest m;
    m.dir = path.parent_path();
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
      ++n;
      if (line.empty()) continue;
      try {
        m.records.push_back(nlohmann::ordered_json::parse(line).get<SampleRecord>());
      } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": bad record: " + e.what());
      }
    }
    return m;
  }
};

struct DataConfig {
  std::size_t count = 400;
  std::size_t image_size = 64;
  std::size_t object_size = 32;
  std::size_t min_place = 44;  // placement side range, pixels
  std::size_t max_place = 56;
  std::size_t n_styles = 8;
  std::uint64_t seed = 7;
  double corruption_rate = 0.0;
};

/// Split by id hash: 80% train, 10% val, 10% test.
inline std::string split_of(const std::string& id) {
  const auto h = fnv1a(id) % 10;
  return h < 8 ? "train" : h == 8 ? "val" : "test";
}

/// Whether sample i is a planted negative: exactly floor(count * rate)
/// negatives, spread evenly.
inline bool is_corrupted(std::size_t i, double rate) {
  return std::floor(static_cast<double>(i + 1) * rate) > std::floor(static_cast<double>(i) * rate);
}

/// In-memory sample: every image plus its record. `background` is the
/// stylized scene without the object.
struct Sample {
  SampleRecord record;
  Foreground fg;
  Image composite, stylized, background;
  Mask mask;
  StyleSpec style;
};

inline std::string sample_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%05zu", i);
  return buf;
}

/// Sample i of the dataset; a pure function of (config, i).
inline Sample generate_sample(const DataConfig& cfg, std::size_t i) {
  const auto seed = sub_seed(cfg.seed, "sample:" + std::to_string(i));
  Rng rng(sub_seed(seed, "layout"));
  Sample s;
  s.record.id = sample_id(i);
  s.record.split = split_of(s.record.id);
  s.fg = gen_foreground(sub_seed(seed, "object"), cfg.object_size);
  const auto scene = gen_background(sub_seed(seed, "scene"), cfg.image_size);
  const auto side = static_cast<std::size_t>(
      uniform_int(rng, static_cast<std::int64_t>(cfg.min_place), static_cast<std::int64_t>(cfg.max_place)));
  const auto x0 = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(cfg.image_size - side)));
  const auto y0 = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(cfg.image_size - side)));
  s.record.box = {x0, y0, x0 + side, y0 + side};
  const auto style_index = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(cfg.n_styles - 1)));
  s.style = make_style(cfg.seed, style_index);
  s.record.style = s.style.id;
  auto comp = compose(s.fg, scene, s.record.box);
  s.composite = std::move(comp.image);
  s.mask = std::move(comp.mask);
  s.background = stylize(scene, s.style);
  if (is_corrupted(i, cfg.corruption_rate)) {
    // Alternate modes over the sequence of negatives.
    const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(i) * cfg.corruption_rate));
    const auto mode = k % 2 == 0 ? Corruption::identity_drift : Corruption::style_incoherence;
    s.record.label = "bad";
    s.record.mode = corruption_name(mode);
    if (mode == Corruption::identity_drift) {
      const auto other = gen_foreground(sub_seed(seed, "other"), cfg.object_size);
      s.stylized = gen_corrupted(s.composite, s.mask, s.style, mode, &other, &s.record.box);
    } else {
      s.stylized = gen_corrupted(s.composite, s.mask, s.style, mode);
    }
  } else {
    s.stylized = stylize(s.composite, s.style);
  }
  const auto& id = s.record.id;
  s.record.f = "images/" + id + "_f.png";
  s.record.c = "images/" + id + "_c.png";
  s.record.m = "images/" + id + "_m.png";
  s.record.s = "images/" + id + "_s.png";
  s.record.b = "images/" + id + "_b.png";
  return s;
}

/// Writes images and manifest.jsonl under `dir`; returns the manifest.
inline Manifest build_dataset(const DataConfig& cfg, const std::filesystem::path& dir) {
  if (cfg.count == 0) throw std::invalid_argument("gen-data: count must be >= 1");
  if (cfg.max_place > cfg.image_size || cfg.min_place > cfg.max_place || cfg.min_place == 0)
    throw std::invalid_argument("gen-data: placement range does not fit the image");
  std::filesystem::create_directories(dir / "images");
  Manifest m;
  m.dir = dir;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    auto s = generate_sample(cfg, i);
    write_png((dir / s.record.f).string(), s.fg.image);
    write_png((dir / s.record.c).string(), s.composite);
    write_png((dir / s.record.m).string(), s.mask);
    write_png((dir / s.record.s).string(), s.stylized);
    write_png((dir / s.record.b).string(), s.background);
    m.records.push_back(std::move(s.record));
  }
  m.save(dir / "manifest.jsonl");
  return m;
}

/// Images of one record loaded from disk.
struct LoadedSample {
  Image f, c, s, b;
  Mask m;
};

inline LoadedSample load_sample(const Manifest& man, const SampleRecord& r) {
  auto need = [&](const std::string& rel, const char* what) {
    if (rel.empty()) throw std::runtime_error("record " + r.id + " has no " + what + " image");
    return man.resolve(rel).string();
  };
  LoadedSample l;
  l.f = read_png(need(r.f, "reference"));
  l.c = read_png(need(r.c, "composite"));
  l.m = read_mask(need(r.m, "mask"));
  l.s = read_png(need(r.s, "stylized"));
  if (!r.b.empty()) l.b = read_png(man.resolve(r.b).string());
  return l;
}

}  // namespace stylecomp
