// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Benchmark protocol: identity against the reference, style against the
// background and aesthetics of the output, with style and aesthetics only
// scored when the detected edit is large enough.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stylecomp/compose.hpp"
#include "stylecomp/curation.hpp"
#include "stylecomp/embed.hpp"
#include "stylecomp/image.hpp"
#include "stylecomp/synth.hpp"

namespace stylecomp {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalOptions {
  double pixel_threshold = 8.0 / 255.0;
  double gate = 0.20;  // minimum edit fraction for style and aesthetics
};

struct EditMask {
  Mask mask;
  double fraction = 0;
};

/// Pixels whose max-channel absolute difference exceeds the threshold
/// (a fraction of 255).
inline EditMask edit_mask(const Image& background, const Image& output, double pixel_threshold = 8.0 / 255.0) {
  if (!background.same_size(output) || background.channels != output.channels)
    throw EvalError("edit_mask: background and output differ in size");
  EditMask e{Mask(background.width, background.height, 1), 0.0};
  std::size_t on = 0;
  const double thr = pixel_threshold * 255.0;
  for (std::size_t i = 0; i < e.mask.size(); ++i) {
    int d = 0;
    for (std::size_t c = 0; c < output.channels; ++c)
      d = std::max(d, std::abs(int(output.pixels[i * output.channels + c]) - int(background.pixels[i * output.channels + c])));
    if (d > thr) {
      e.mask.pixels[i] = 255;
      ++on;
    }
  }
  e.fraction = static_cast<double>(on) / static_cast<double>(e.mask.size());
  return e;
}

inline double overall_mean(double clip_i, double csd, double aes) { return (clip_i + csd + aes) / 3.0; }

struct EvalRecord {
  std::string method;
  std::string id;
  std::optional<double> clip_i, csd, aes;  // nullopt = gated out
  double edit_fraction = 0;
  std::string error;  // method failure or failure to edit

  bool gated() const { return !csd.has_value(); }
  /// Mean of the metrics this sample contributes.
  std::optional<double> contribution() const {
    double s = 0;
    int n = 0;
    for (const auto& v : {clip_i, csd, aes})
      if (v) s += *v, ++n;
    if (n == 0) return std::nullopt;
    return s / n;
  }
};

inline EvalRecord score_sample(const std::string& method, const std::string& id, const Image& reference,
                               const Image& background, const Image& output, const Embedders& e,
                               const EvalOptions& opt = {}) {
  EvalRecord r{method, id, {}, {}, {}, 0, {}};
  const auto em = edit_mask(background, output, opt.pixel_threshold);
  r.edit_fraction = em.fraction;
  if (em.fraction == 0) {
    r.error = "failure-to-edit";
    return r;
  }
  const auto region = crop(output, mask_bbox(em.mask));
  r.clip_i = similarity(e.clip(reference), e.clip(region));
  if (em.fraction > opt.gate) {
    r.csd = similarity(e.csd(region), e.csd(background));
    r.aes = aes_score(output);
  }
  return r;
}

struct MethodSummary {
  std::string method;
  std::optional<double> clip_i, csd, aes, overall;
  std::size_t samples = 0;
  std::size_t gated = 0;   // samples without csd/aes
  std::size_t failed = 0;  // method errors and failures to edit
};

struct Method {
  std::string name;
  Compositor fn;
};

struct BenchSample {
  std::string id;
  Image reference, background, oracle;
  Mask mask;
};

struct BenchReport {
  EvalOptions options;
  std::vector<EvalRecord> records;  // sorted by (method order, id)
  std::vector<MethodSummary> methods;

  const MethodSummary& summary(const std::string& name) const {
    for (const auto& m : methods)
      if (m.method == name) return m;
    throw EvalError("no method named '" + name + "' in report");
  }

  std::string table() const {
    auto fmt = [](const std::optional<double>& v) {
      char buf[16];
      if (!v) return std::string("    -");
      std::snprintf(buf, sizeof buf, "%.3f", *v);
      return std::string(buf);
    };
    std::size_t w = 6;
    for (const auto& m : methods) w = std::max(w, m.method.size());
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "# pixel_threshold=%.6f gate=%.2f\n", options.pixel_threshold, options.gate);
    out += buf;
    std::snprintf(buf, sizeof buf, "%-*s  %6s  %6s  %6s  %7s  %5s  %5s  %5s\n", int(w), "method", "CLIP-I", "CSD",
                  "AES", "Overall", "n", "gated", "fail");
    out += buf;
    for (const auto& m : methods) {
      std::snprintf(buf, sizeof buf, "%-*s  %6s  %6s  %6s  %7s  %5zu  %5zu  %5zu\n", int(w), m.method.c_str(),
                    fmt(m.clip_i).c_str(), fmt(m.csd).c_str(), fmt(m.aes).c_str(), fmt(m.overall).c_str(), m.samples,
                    m.gated, m.failed);
      out += buf;
    }
    return out;
  }

  /// One JSON object per record, then one per method summary.
  std::string jsonl() const {
    auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
      return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json("gated-out");
    };
    std::string out;
    nlohmann::ordered_json h;
    h["kind"] = "header";
    h["pixel_threshold"] = options.pixel_threshold;
    h["gate"] = options.gate;
    out += h.dump() + "\n";
    for (const auto& r : records) {
      nlohmann::ordered_json j;
      j["kind"] = "record";
      j["method"] = r.method;
      j["id"] = r.id;
      j["clip_i"] = opt(r.clip_i);
      j["csd"] = opt(r.csd);
      j["aes"] = opt(r.aes);
      j["edit_fraction"] = r.edit_fraction;
      const auto c = r.contribution();
      j["overall"] = c ? nlohmann::ordered_json(*c) : nlohmann::ordered_json(nullptr);
      if (!r.error.empty()) j["error"] = r.error;
      out += j.dump() + "\n";
    }
    for (const auto& m : methods) {
      nlohmann::ordered_json j;
      j["kind"] = "summary";
      j["method"] = m.method;
      j["clip_i"] = m.clip_i ? nlohmann::ordered_json(*m.clip_i) : nlohmann::ordered_json(nullptr);
      j["csd"] = m.csd ? nlohmann::ordered_json(*m.csd) : nlohmann::ordered_json(nullptr);
      j["aes"] = m.aes ? nlohmann::ordered_json(*m.aes) : nlohmann::ordered_json(nullptr);
      j["overall"] = m.overall ? nlohmann::ordered_json(*m.overall) : nlohmann::ordered_json(nullptr);
      j["samples"] = m.samples;
      j["gated"] = m.gated;
      j["failed"] = m.failed;
      out += j.dump() + "\n";
    }
    return out;
  }
};

inline MethodSummary summarize(const std::string& method, const std::vector<EvalRecord>& records) {
  MethodSummary s;
  s.method = method;
  double sums[3] = {0, 0, 0};
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& r : records) {
    if (r.method != method) continue;
    ++s.samples;
    if (r.gated()) ++s.gated;
    if (!r.error.empty()) ++s.failed;
    const std::optional<double>* v[3] = {&r.clip_i, &r.csd, &r.aes};
    for (int k = 0; k < 3; ++k)
      if (*v[k]) sums[k] += **v[k], ++counts[k];
  }
  auto mean = [&](int k) -> std::optional<double> {
    if (counts[k] == 0) return std::nullopt;
    return sums[k] / static_cast<double>(counts[k]);
  };
  s.clip_i = mean(0);
  s.csd = mean(1);
  s.aes = mean(2);
  if (s.clip_i && s.csd && s.aes) s.overall = overall_mean(*s.clip_i, *s.csd, *s.aes);
  return s;
}

/// Runs every method on every sample. A method that throws on a sample is
/// recorded as failed and gated out for that sample.
inline BenchReport run_benchmark(const std::vector<BenchSample>& samples, const std::vector<Method>& methods,
                                 const EvalOptions& opt = {}, const Embedders& e = {}) {
  BenchReport rep;
  rep.options = opt;
  auto sorted = samples;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (const auto& m : methods) {
    for (const auto& s : sorted) {
      CompositionInput in{s.id, s.reference, s.background, s.mask, s.oracle.size() ? &s.oracle : nullptr};
      try {
        const auto out = m.fn(in);
        rep.records.push_back(score_sample(m.name, s.id, s.reference, s.background, out, e, opt));
      } catch (const std::exception& ex) {
        rep.records.push_back(EvalRecord{m.name, s.id, {}, {}, {}, 0, ex.what()});
      }
    }
    rep.methods.push_back(summarize(m.name, rep.records));
  }
  return rep;
}

/// Benchmark inputs from a manifest: reference, stylized background,
/// placement mask and the stylized composite as oracle.
inline std::vector<BenchSample> load_bench_samples(const Manifest& m) {
  std::vector<BenchSample> out;
  for (const auto& r : m.records) {
    if (r.b.empty()) throw EvalError("record " + r.id + " has no background image");
    auto l = load_sample(m, r);
    out.push_back({r.id, std::move(l.f), std::move(l.b), std::move(l.s), std::move(l.m)});
  }
  return out;
}

}  // namespace stylecomp
