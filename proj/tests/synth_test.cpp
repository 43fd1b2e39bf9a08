// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "stylecomp/synth.hpp"

using namespace stylecomp;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("stylecomp_synth_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Synth, SampleIsAPureFunctionOfConfigAndIndex) {
  DataConfig dc;
  const auto a = generate_sample(dc, 3), b = generate_sample(dc, 3);
  EXPECT_EQ(a.record, b.record);
  EXPECT_EQ(a.stylized, b.stylized);
  EXPECT_EQ(a.mask, b.mask);
  dc.seed = 8;
  EXPECT_NE(generate_sample(dc, 3).composite, a.composite);
}

TEST(Synth, MaskMatchesPastedObject) {
  const auto s = generate_sample(DataConfig{}, 0);
  ASSERT_GT(mask_count(s.mask), 0u);
  EXPECT_TRUE(mask_is_binary(s.mask));
  const auto box = mask_bbox(s.mask);
  EXPECT_GE(box.x0, s.record.box.x0);
  EXPECT_LE(box.x1, s.record.box.x1);
  // Outside the mask the stylized composite equals the stylized background.
  for (std::size_t y = 0; y < s.mask.height; ++y)
    for (std::size_t x = 0; x < s.mask.width; ++x)
      if (!mask_on(s.mask, x, y)) {
        for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(s.stylized.at(x, y, c), s.background.at(x, y, c));
      }
}

TEST(Synth, CorruptionCountsAndModes) {
  DataConfig dc;
  dc.count = 400;
  dc.corruption_rate = 0.5;
  std::size_t drift = 0, incoherent = 0, good = 0;
  for (std::size_t i = 0; i < dc.count; ++i) {
    if (!is_corrupted(i, dc.corruption_rate)) {
      ++good;
      continue;
    }
    const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(i) * dc.corruption_rate));
    (k % 2 == 0 ? drift : incoherent)++;
  }
  EXPECT_EQ(good, 200u);
  EXPECT_EQ(drift, 100u);
  EXPECT_EQ(incoherent, 100u);
}

TEST(Synth, CorruptedSamplesDifferInsideTheMaskOnly) {
  DataConfig dc;
  dc.count = 4;
  dc.corruption_rate = 0.5;
  for (std::size_t i = 0; i < dc.count; ++i) {
    const auto s = generate_sample(dc, i);
    if (s.record.label != "bad") continue;
    const auto clean = stylize(s.composite, s.style);
    std::size_t inside = 0;
    for (std::size_t y = 0; y < s.mask.height; ++y)
      for (std::size_t x = 0; x < s.mask.width; ++x) {
        bool diff = false;
        for (std::size_t c = 0; c < 3; ++c) diff |= s.stylized.at(x, y, c) != clean.at(x, y, c);
        if (mask_on(s.mask, x, y))
          inside += diff;
        else
          ASSERT_FALSE(diff);
      }
    EXPECT_GT(inside, 0u) << s.record.mode;
  }
}

TEST(Synth, StylesAreDistinct) {
  const auto a = make_style(7, 0), b = make_style(7, 1);
  EXPECT_NE(a.id, b.id);
  const auto s = generate_sample(DataConfig{}, 0);
  EXPECT_NE(stylize(s.composite, a), stylize(s.composite, b));
}

TEST(Synth, SplitIsStableAndRoughlyEightyTenTen) {
  std::map<std::string, int> n;
  for (std::size_t i = 0; i < 2000; ++i) n[split_of(sample_id(i))]++;
  EXPECT_NEAR(n["train"] / 2000.0, 0.8, 0.05);
  EXPECT_NEAR(n["val"] / 2000.0, 0.1, 0.03);
  EXPECT_NEAR(n["test"] / 2000.0, 0.1, 0.03);
  EXPECT_EQ(split_of("s00042"), split_of("s00042"));
}

TEST(Synth, DatasetOnDiskIsByteReproducible) {
  DataConfig dc;
  dc.count = 5;
  dc.corruption_rate = 0.4;
  const auto a = scratch("a"), b = scratch("b");
  const auto ma = build_dataset(dc, a);
  build_dataset(dc, b);
  EXPECT_EQ(slurp(a / "manifest.jsonl"), slurp(b / "manifest.jsonl"));
  for (const auto& r : ma.records)
    for (const auto* f : {&r.f, &r.c, &r.m, &r.s, &r.b}) EXPECT_EQ(slurp(a / *f), slurp(b / *f)) << *f;
  const auto back = Manifest::load(a / "manifest.jsonl");
  EXPECT_EQ(back.records, ma.records);
  const auto l = load_sample(back, back.records[0]);
  EXPECT_EQ(l.s, generate_sample(dc, 0).stylized);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Synth, BadManifestLineIsReported) {
  const auto dir = scratch("bad");
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.jsonl") << "{\"id\":\"a\"}\nnot json\n";
  try {
    Manifest::load(dir / "manifest.jsonl");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Synth, InvalidConfigsAreRejected) {
  DataConfig dc;
  dc.count = 0;
  EXPECT_THROW(build_dataset(dc, scratch("x")), std::invalid_argument);
  dc.count = 1;
  dc.max_place = 100;
  EXPECT_THROW(build_dataset(dc, scratch("x")), std::invalid_argument);
}
