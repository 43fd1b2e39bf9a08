// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "stylecomp/curation.hpp"
#include "stylecomp/reference.hpp"

using namespace stylecomp;

namespace {

std::vector<LabeledScore> random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(2, 60), level(0, 12);
  std::bernoulli_distribution good(0.6);
  for (;;) {
    std::vector<LabeledScore> d(static_cast<std::size_t>(size(rng)));
    std::size_t n_good = 0;
    for (auto& x : d) {
      x.score = level(rng) / 12.0;  // coarse levels force ties
      x.good = good(rng);
      n_good += x.good;
    }
    if (n_good > 0 && n_good < d.size()) return d;
  }
}

}  // namespace

TEST(Calibration, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(31337);
  std::uniform_real_distribution<double> cap(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto data = random_instance(rng);
    const double c = trial % 10 == 0 ? 0.0 : cap(rng);
    const auto got = calibrate(data, c);
    const auto want = reference::exhaustive_calibration(data, c);
    ASSERT_EQ(got.interval_lo, want.interval_lo) << "trial " << trial;
    ASSERT_EQ(got.interval_hi, want.interval_hi) << "trial " << trial;
    ASSERT_EQ(got.accepted, want.accepted) << "trial " << trial;
    ASSERT_EQ(got.accepted_good, want.accepted_good) << "trial " << trial;
    ASSERT_EQ(got.precision, want.precision) << "trial " << trial;
    ASSERT_EQ(got.rejection, want.rejection) << "trial " << trial;
    ASSERT_LE(got.rejection, c);
    // The representative threshold reproduces the interval's accepted set.
    ASSERT_GE(got.threshold, got.interval_lo);
    ASSERT_LT(got.threshold, got.interval_hi);
    std::size_t acc = 0;
    for (const auto& d : data) acc += d.score > got.threshold;
    ASSERT_EQ(acc, got.accepted);
  }
}

TEST(Calibration, PerfectSeparationWithinCap) {
  const std::vector<LabeledScore> d = {{0.1, false}, {0.2, false}, {0.5, true}, {0.6, true}, {0.9, true}};
  const auto c = calibrate(d, 0.4);
  EXPECT_EQ(c.precision, 1.0);
  EXPECT_EQ(c.rejected, 2u);
  EXPECT_EQ(c.interval_lo, 0.2);
  EXPECT_EQ(c.interval_hi, 0.5);
  EXPECT_DOUBLE_EQ(c.threshold, 0.35);
}

TEST(Calibration, TightCapAcceptsEverything) {
  const std::vector<LabeledScore> d = {{0.1, false}, {0.2, false}, {0.5, true}};
  const auto c = calibrate(d, 0.0);
  EXPECT_EQ(c.rejected, 0u);
  EXPECT_TRUE(std::isinf(c.interval_lo));
  EXPECT_LT(c.threshold, 0.1);
}

TEST(Calibration, BadInputsThrow) {
  const std::vector<LabeledScore> one_label = {{0.1, true}, {0.2, true}};
  EXPECT_THROW(calibrate(one_label, 0.5), CurationError);
  const std::vector<LabeledScore> ok = {{0.1, false}, {0.2, true}};
  EXPECT_THROW(calibrate(ok, 1.5), CurationError);
  const std::vector<LabeledScore> nan = {{std::nan(""), false}, {0.2, true}};
  EXPECT_THROW(calibrate(nan, 0.5), CurationError);
}

TEST(Curation, VerdictIsACascade) {
  const FilterThresholds t{0.5, 0.5, 0.5, {}, {}, {}, ""};
  EXPECT_EQ(verdict({0.9, 0.9, 0.9}, t), "accepted");
  EXPECT_EQ(verdict({0.4, 0.9, 0.1}, t), "rejected:identity");
  EXPECT_EQ(verdict({0.9, 0.5, 0.9}, t), "rejected:identity");
  EXPECT_EQ(verdict({0.9, 0.9, 0.5}, t), "rejected:style");
}

TEST(Curation, PatchFillTouchesOnlyMaskedPixels) {
  const auto s = generate_sample(DataConfig{}, 1);
  const auto out = patch_fill(s.stylized, s.mask, 16);
  for (std::size_t y = 0; y < s.mask.height; ++y)
    for (std::size_t x = 0; x < s.mask.width; ++x)
      if (!mask_on(s.mask, x, y)) {
        for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(out.at(x, y, c), s.stylized.at(x, y, c));
      }
  EXPECT_EQ(out, patch_fill(s.stylized, s.mask, 16));
}

TEST(Curation, PatchFillShrinksWhenNoWindowFits) {
  Image img(8, 8, 3, 10);
  Mask m(8, 8, 1, 255);
  m.at(0, 0) = 0;  // a single retained pixel
  img.at(0, 0, 0) = 200;
  const auto out = patch_fill(img, m, 64);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) EXPECT_EQ(out.at(x, y, 0), 200);
  Mask all(8, 8, 1, 255);
  EXPECT_THROW(patch_fill(img, all, 64), CurationError);
}

TEST(Curation, GoodSamplesScoreHigherThanCorruptedOnes) {
  DataConfig dc;
  dc.count = 40;
  dc.corruption_rate = 0.5;
  const Embedders e;
  double good_id = 0, drift_id = 0, good_style = 0, incoherent_style = 0;
  int ng = 0, nd = 0, ni = 0;
  for (std::size_t i = 0; i < dc.count; ++i) {
    const auto s = generate_sample(dc, i);
    const auto r = score_images(s.stylized, s.composite, s.mask, e);
    if (s.record.label == "good") {
      good_id += r.dino, good_style += r.csd, ++ng;
    } else if (s.record.mode == "identity_drift") {
      drift_id += r.dino, ++nd;
    } else {
      incoherent_style += r.csd, ++ni;
    }
  }
  EXPECT_GT(good_id / ng, drift_id / nd);
  EXPECT_GT(good_style / ng, incoherent_style / ni);
}

TEST(Curation, ThresholdsJsonRoundTrip) {
  FilterThresholds t{0.25, 0.5, 0.75, {}, {}, {}, "abc"};
  const auto back = thresholds_from_json(thresholds_json(t));
  EXPECT_EQ(back.clip, 0.25);
  EXPECT_EQ(back.dino, 0.5);
  EXPECT_EQ(back.csd, 0.75);
  EXPECT_EQ(back.validation_set, "abc");
}

// Reference run: thresholds from an independent labeled set, applied to the
// 200 good / 100 identity_drift / 100 style_incoherence set at cap 0.3.
TEST(Curation, FilterEfficacyOnPlantedCorruptions) {
  namespace fs = std::filesystem;
  const auto root = fs::temp_directory_path() / "stylecomp_filter_efficacy";
  fs::remove_all(root);
  DataConfig cal;
  cal.count = 400;
  cal.corruption_rate = 0.5;
  cal.seed = 1007;
  DataConfig ev = cal;
  ev.seed = 7;
  auto mc = build_dataset(cal, root / "cal");
  const auto me = build_dataset(ev, root / "eval");
  const auto t = calibrate_manifest(mc, 0.3);
  const auto r = filter_dataset(me, t);
  std::size_t bad = 0, bad_rejected = 0, drift_rejected = 0, good_rejected = 0;
  for (const auto& x : me.records) bad += x.label == "bad";
  for (const auto& x : r.rejected.records) {
    if (x.label == "bad") {
      ++bad_rejected;
      drift_rejected += x.mode == "identity_drift";
    } else {
      ++good_rejected;
    }
  }
  EXPECT_EQ(bad, 200u);
  EXPECT_GE(static_cast<double>(bad_rejected) / bad, 0.9);
  EXPECT_EQ(bad_rejected, 187u);
  EXPECT_EQ(drift_rejected, 99u);
  EXPECT_EQ(good_rejected, 25u);
  fs::remove_all(root);
}
