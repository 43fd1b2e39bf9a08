// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-stage filtering: identity consistency (semantic crops), then style
// coherence (subject crop vs patch-filled background), with thresholds
// calibrated on a labeled set.

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stylecomp/embed.hpp"
#include "stylecomp/image.hpp"
#include "stylecomp/synth.hpp"

namespace stylecomp {

class CurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Crop operator: tight bounding box of the mask support.
inline Image crop_masked(const Image& img, const Mask& mask) {
  if (!img.same_size(mask)) throw CurationError("crop_masked: image and mask differ in size");
  if (mask_count(mask) == 0) throw CurationError("crop_masked: mask is empty");
  return crop(img, mask_bbox(mask));
}

struct IdentityScores {
  double clip = 0;
  double dino = 0;
};

/// Similarities of the masked crops of I_s and I_c under both semantic
/// embedders.
inline IdentityScores identity_scores(const Image& stylized, const Image& composite, const Mask& mask,
                                      const Embedder& clip, const Embedder& dino) {
  if (!stylized.same_size(composite)) throw CurationError("identity_scores: image sizes differ");
  const auto a = crop_masked(stylized, mask);
  const auto b = crop_masked(composite, mask);
  return {similarity(clip(a), clip(b)), similarity(dino(a), dino(b))};
}

/// Side of the square patches used to fill masked-out regions: the nominal
/// size, capped at a quarter of the shorter image side.
inline std::size_t fill_patch_size(std::size_t width, std::size_t height, std::size_t nominal = 64) {
  return std::min(nominal, std::max<std::size_t>(1, std::min(width, height) / 4));
}

/// Patch-copy operator. Pixels where `fill` is set are overwritten from
/// p x p windows lying entirely in the retained region (raster scan, stride
/// max(1, p/4)); the image is tiled by p x p cells and the k-th cell that
/// needs filling takes source window k mod (number of windows). When no
/// window of side p fits in the retained region, p is halved until one does.
inline Image patch_fill(const Image& img, const Mask& fill, std::size_t nominal = 64) {
  if (!img.same_size(fill)) throw CurationError("patch_fill: image and mask differ in size");
  if (mask_count(fill) == 0) return img;
  // Summed-area table of the fill mask for O(1) window tests.
  std::vector<std::size_t> sat((img.width + 1) * (img.height + 1), 0);
  const auto W = img.width + 1;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      sat[(y + 1) * W + x + 1] = (mask_on(fill, x, y) ? 1 : 0) + sat[y * W + x + 1] + sat[(y + 1) * W + x] - sat[y * W + x];
  auto p = fill_patch_size(img.width, img.height, nominal);
  std::vector<std::pair<std::size_t, std::size_t>> sources;
  for (;;) {
    const auto stride = std::max<std::size_t>(1, p / 4);
    for (std::size_t y = 0; y + p <= img.height; y += stride)
      for (std::size_t x = 0; x + p <= img.width; x += stride)
        if (sat[(y + p) * W + x + p] - sat[y * W + x + p] - sat[(y + p) * W + x] + sat[y * W + x] == 0)
          sources.emplace_back(x, y);
    if (!sources.empty() || p == 1) break;
    p /= 2;
  }
  if (sources.empty()) throw CurationError("patch_fill: nothing is retained to copy from");
  Image out = img;
  std::size_t k = 0;
  for (std::size_t ty = 0; ty < img.height; ty += p)
    for (std::size_t tx = 0; tx < img.width; tx += p) {
      bool needs = false;
      for (std::size_t y = ty; y < std::min(ty + p, img.height) && !needs; ++y)
        for (std::size_t x = tx; x < std::min(tx + p, img.width) && !needs; ++x) needs = mask_on(fill, x, y);
      if (!needs) continue;
      const auto [sx, sy] = sources[k++ % sources.size()];
      for (std::size_t y = ty; y < std::min(ty + p, img.height); ++y)
        for (std::size_t x = tx; x < std::min(tx + p, img.width); ++x)
          if (mask_on(fill, x, y))
            for (std::size_t c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(sx + x - tx, sy + y - ty, c);
    }
  return out;
}

/// Style coherence: subject crop against the patch-filled background crop.
inline double style_score(const Image& stylized, const Mask& mask, const Embedder& csd, std::size_t patch = 64) {
  if (!stylized.same_size(mask)) throw CurationError("style_score: image and mask differ in size");
  const auto n_on = mask_count(mask);
  if (n_on == 0 || n_on == mask.size()) throw CurationError("style_score: mask must be neither empty nor full");
  const auto subject = crop_masked(stylized, mask);
  const auto keep = invert_mask(mask);
  const auto box = mask_bbox(keep);
  const auto background = crop(stylized, box);
  const auto filled = patch_fill(background, crop(mask, box), patch);
  return similarity(csd(subject), csd(filled));
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

struct LabeledScore {
  double score = 0;
  bool good = false;
};

/// Outcome of threshold calibration. Every threshold in [interval_lo,
/// interval_hi) yields the same accepted set; `threshold` is its
/// representative (midpoint, or below the minimum for accept-all).
struct Calibration {
  double threshold = 0;
  double interval_lo = 0;  // -inf when everything is accepted
  double interval_hi = 0;
  std::size_t accepted = 0, accepted_good = 0, rejected = 0, total = 0;
  double precision = 0;
  double rejection = 0;
  double cap = 0;
  std::vector<double> grid;  // sorted unique scores and midpoints
};

namespace detail {
/// a_good / a <=> b_good / b, exactly.
inline int compare_ratio(std::size_t an, std::size_t ad, std::size_t bn, std::size_t bd) {
  const auto l = static_cast<unsigned __int128>(an) * bd, r = static_cast<unsigned __int128>(bn) * ad;
  return l < r ? -1 : l > r ? 1 : 0;
}
}  // namespace detail

/// Maximizes precision of {score > threshold} subject to
/// rejected / total <= cap; ties go to fewer rejections, then the lower
/// threshold.
inline Calibration calibrate(const std::vector<LabeledScore>& data, double cap) {
  if (!(cap >= 0.0 && cap <= 1.0)) throw CurationError("calibrate: rejection cap must lie in [0, 1]");
  std::size_t n_good = 0;
  for (const auto& d : data) {
    if (!std::isfinite(d.score)) throw CurationError("calibrate: non-finite score");
    n_good += d.good;
  }
  if (n_good == 0 || n_good == data.size()) throw CurationError("calibrate: need both good and bad labels");
  std::vector<LabeledScore> sorted = data;
  std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.score < b.score; });
  std::vector<double> uniq;
  std::vector<std::size_t> rej_all, rej_good;  // counts with score <= uniq[k]
  std::size_t ra = 0, rg = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    ++ra;
    rg += sorted[i].good;
    if (i + 1 == sorted.size() || sorted[i + 1].score != sorted[i].score) {
      uniq.push_back(sorted[i].score);
      rej_all.push_back(ra);
      rej_good.push_back(rg);
    }
  }
  const auto n = data.size();
  Calibration best;
  best.total = n;
  best.cap = cap;
  bool have = false;
  // Option k rejects every score <= uniq[k-1]; k = 0 rejects nothing. The
  // last unique value would reject everything and is not a candidate.
  for (std::size_t k = 0; k < uniq.size(); ++k) {
    const std::size_t rej = k == 0 ? 0 : rej_all[k - 1];
    const std::size_t rej_g = k == 0 ? 0 : rej_good[k - 1];
    if (static_cast<double>(rej) > cap * static_cast<double>(n)) break;
    const std::size_t acc = n - rej, acc_g = n_good - rej_g;
    bool better = !have;
    if (have) {
      const int c = detail::compare_ratio(acc_g, acc, best.accepted_good, best.accepted);
      better = c > 0;  // equal precision keeps the earlier option: fewer rejections, lower threshold
    }
    if (better) {
      have = true;
      best.accepted = acc;
      best.accepted_good = acc_g;
      best.rejected = rej;
      if (k == 0) {
        const double gap = uniq.size() > 1 ? uniq[1] - uniq[0] : 1e-3;
        best.threshold = uniq[0] - gap / 2;
        best.interval_lo = -std::numeric_limits<double>::infinity();
        best.interval_hi = uniq[0];
      } else {
        best.threshold = (uniq[k - 1] + uniq[k]) / 2;
        best.interval_lo = uniq[k - 1];
        best.interval_hi = uniq[k];
      }
    }
  }
  best.precision = static_cast<double>(best.accepted_good) / static_cast<double>(best.accepted);
  best.rejection = static_cast<double>(best.rejected) / static_cast<double>(n);
  for (std::size_t k = 0; k < uniq.size(); ++k) {
    best.grid.push_back(uniq[k]);
    if (k + 1 < uniq.size()) best.grid.push_back((uniq[k] + uniq[k + 1]) / 2);
  }
  return best;
}

inline nlohmann::ordered_json calibration_json(const Calibration& c) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json("-inf"); };
  return {{"threshold", c.threshold}, {"interval", {num(c.interval_lo), num(c.interval_hi)}},
          {"precision", c.precision}, {"rejection_rate", c.rejection},
          {"rejection_cap", c.cap},   {"accepted", c.accepted},
          {"accepted_good", c.accepted_good}, {"rejected", c.rejected},
          {"total", c.total},         {"grid", c.grid}};
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

struct FilterThresholds {
  double clip = 0, dino = 0, csd = 0;
  std::optional<Calibration> clip_report, dino_report, csd_report;
  std::string validation_set;  // manifest hash of the calibration set
};

inline nlohmann::ordered_json thresholds_json(const FilterThresholds& t) {
  nlohmann::ordered_json j{{"clip", t.clip}, {"dino", t.dino}, {"csd", t.csd}, {"validation_set", t.validation_set}};
  nlohmann::ordered_json rep;
  if (t.clip_report) rep["clip"] = calibration_json(*t.clip_report);
  if (t.dino_report) rep["dino"] = calibration_json(*t.dino_report);
  if (t.csd_report) rep["csd"] = calibration_json(*t.csd_report);
  if (!rep.empty()) j["report"] = rep;
  return j;
}

inline FilterThresholds thresholds_from_json(const nlohmann::ordered_json& j) {
  FilterThresholds t;
  t.clip = j.at("clip").get<double>();
  t.dino = j.at("dino").get<double>();
  t.csd = j.at("csd").get<double>();
  t.validation_set = j.value("validation_set", std::string());
  return t;
}

struct Embedders {
  Embedder clip = clip_embedder();
  Embedder dino = dino_embedder();
  Embedder csd = csd_embedder();
};

struct RecordScores {
  double clip = 0, dino = 0, csd = 0;
};

inline RecordScores score_images(const Image& stylized, const Image& composite, const Mask& mask,
                                 const Embedders& e) {
  const auto id = identity_scores(stylized, composite, mask, e.clip, e.dino);
  return {id.clip, id.dino, style_score(stylized, mask, e.csd)};
}

inline void attach_scores(SampleRecord& r, const RecordScores& s) {
  r.scores["clip"] = s.clip;
  r.scores["dino"] = s.dino;
  r.scores["csd"] = s.csd;
}

/// Cascade verdict: identity filter (both scores strictly above), then style.
inline std::string verdict(const RecordScores& s, const FilterThresholds& t) {
  if (!(s.clip > t.clip && s.dino > t.dino)) return "rejected:identity";
  if (!(s.csd > t.csd)) return "rejected:style";
  return "accepted";
}

struct FilterResult {
  Manifest accepted, rejected;
};

/// Scores records that lack scores (loading their images), annotates every
/// record with scores and verdict, and splits the manifest.
inline FilterResult filter_dataset(const Manifest& in, const FilterThresholds& t, const Embedders& e = {}) {
  FilterResult out;
  out.accepted.dir = out.rejected.dir = in.dir;
  for (auto r : in.records) {
    RecordScores s;
    if (r.scores.count("clip") && r.scores.count("dino") && r.scores.count("csd")) {
      s = {r.scores.at("clip"), r.scores.at("dino"), r.scores.at("csd")};
    } else {
      const auto l = load_sample(in, r);
      s = score_images(l.s, l.c, l.m, e);
      attach_scores(r, s);
    }
    r.verdict = verdict(s, t);
    (r.verdict == "accepted" ? out.accepted : out.rejected).records.push_back(std::move(r));
  }
  return out;
}

/// Scores every record of a labeled manifest and calibrates each score
/// independently at the same rejection cap.
inline FilterThresholds calibrate_manifest(Manifest& m, double cap, const Embedders& e = {}) {
  const auto set_id = hex64(m.hash());
  std::vector<LabeledScore> clip, dino, csd;
  for (auto& r : m.records) {
    if (r.label != "good" && r.label != "bad") throw CurationError("record " + r.id + " has no good/bad label");
    const auto l = load_sample(m, r);
    const auto s = score_images(l.s, l.c, l.m, e);
    attach_scores(r, s);
    const bool good = r.label == "good";
    clip.push_back({s.clip, good});
    dino.push_back({s.dino, good});
    csd.push_back({s.csd, good});
  }
  FilterThresholds t;
  t.clip_report = calibrate(clip, cap);
  t.dino_report = calibrate(dino, cap);
  t.csd_report = calibrate(csd, cap);
  t.clip = t.clip_report->threshold;
  t.dino = t.dino_report->threshold;
  t.csd = t.csd_report->threshold;
  t.validation_set = set_id;
  return t;
}

}  // namespace stylecomp
